#include "divens/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "divens/attacks.hpp"
#include "divens/error.hpp"
#include "divens/evaluation.hpp"
#include "divens/io.hpp"
#include "divens/theory.hpp"
#include "divens/training.hpp"

#ifndef DIVENS_DEFAULT_DATA_DIR
#define DIVENS_DEFAULT_DATA_DIR "data"
#endif

namespace divens {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 7;
  std::string config;
  std::string out;
  bool quiet = false;
  std::string data;
  std::string dataset;
};

/// Attack flags shared by attack/transfer/detect; unset values keep the
/// subcommand's defaults.
struct AttackFlags {
  std::string method = "pgd";
  double eps = 0.1;
  std::size_t steps = 10;
  std::optional<double> step_size;
  double momentum = 1.0;
  bool no_random_init = false;
  double jsma_theta = 0.2;
  double jsma_gamma = 0.1;
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double ead_beta = 0.01;
  double opt_lr = 0.01;
  std::size_t opt_steps = 1000;
  bool targeted = false;
  std::optional<std::size_t> target;
  std::string victim = "ensemble";
  std::string loss = "ensemble_ce";

  AttackConfig build() const {
    AttackConfig a;
    a.method = parse_attack_method(method);
    a.eps = eps;
    a.steps = steps;
    a.step_size = step_size;
    a.momentum = momentum;
    a.random_init = !no_random_init;
    a.jsma_theta = jsma_theta;
    a.jsma_gamma = jsma_gamma;
    a.cw_c = cw_c;
    a.cw_kappa = cw_kappa;
    a.ead_beta = ead_beta;
    a.opt_lr = opt_lr;
    a.opt_steps = opt_steps;
    a.targeted = targeted;
    a.target_label = target;
    if (victim != "ensemble") {
      if (victim.rfind("member:", 0) != 0) {
        fail(ErrorCode::kInvalidArgument, "--victim must be ensemble or member:<k>", victim);
      }
      try {
        a.victim = Victim::single(std::stoul(victim.substr(7)));
      } catch (const std::logic_error&) {
        fail(ErrorCode::kInvalidArgument, "--victim has a bad member index", victim);
      }
    }
    a.loss = parse_attack_loss(loss);
    a.validate();
    return a;
  }
};

void add_attack_flags(CLI::App* app, AttackFlags& f) {
  app->add_option("--method", f.method, "fgsm, bim, pgd, mim, jsma, cw or ead")->capture_default_str();
  app->add_option("--eps", f.eps, "L-inf budget")->capture_default_str();
  app->add_option("--steps", f.steps, "iterations r")->capture_default_str();
  app->add_option("--step-size", f.step_size, "per-step size (default eps/steps)");
  app->add_option("--momentum", f.momentum, "mim decay")->capture_default_str();
  app->add_flag("--no-random-init", f.no_random_init, "pgd starts at x");
  app->add_option("--theta", f.jsma_theta, "jsma per-feature change")->capture_default_str();
  app->add_option("--gamma", f.jsma_gamma, "jsma feature budget fraction")->capture_default_str();
  app->add_option("--c", f.cw_c, "cw/ead loss weight")->capture_default_str();
  app->add_option("--kappa", f.cw_kappa, "cw/ead confidence")->capture_default_str();
  app->add_option("--ead-beta", f.ead_beta, "ead L1 weight")->capture_default_str();
  app->add_option("--opt-lr", f.opt_lr, "cw/ead Adam rate")->capture_default_str();
  app->add_option("--opt-steps", f.opt_steps, "cw/ead iterations")->capture_default_str();
  app->add_flag("--targeted", f.targeted, "targeted mode");
  app->add_option("--target", f.target, "fixed target class (random per example otherwise)");
  app->add_option("--victim", f.victim, "ensemble or member:<k>")->capture_default_str();
  app->add_option("--loss", f.loss, "ensemble_ce or member_sum")->capture_default_str();
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kIo: return kExitUsage;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kNumeric: return kExitRuntime;
    case ErrorCode::kFormat:
    case ErrorCode::kVersion:
    case ErrorCode::kCheckpointShape: return kExitFormat;
    case ErrorCode::kTheory: return kExitTheory;
  }
  return kExitRuntime;
}

void report_error(std::ostream& err, std::string_view code, std::string_view message, std::string_view context) {
  nlohmann::ordered_json j;
  j["code"] = code;
  j["message"] = message;
  j["context"] = context;
  err << j.dump() << '\n';
}

class Runner {
 public:
  Runner(const Globals& g, std::ostream& out) : g_(g), out_(out) {
    if (!g_.config.empty()) cfg_ = load_experiment_config(g_.config);
    if (!g_.data.empty()) cfg_.dataset.path = g_.data;
    if (!g_.dataset.empty()) cfg_.dataset.kind = g_.dataset;
  }

  ExperimentConfig& config() { return cfg_; }

  fs::path out_dir() const {
    if (!g_.out.empty()) return g_.out;
    if (!cfg_.output_dir.empty()) return cfg_.output_dir;
    return "divens_out";
  }

  LoadedData data() const { return load_dataset(cfg_.dataset, fs::path(DIVENS_DEFAULT_DATA_DIR) / "mnist"); }

  Dataset eval_split(std::size_t limit) const {
    Dataset test = data().test;
    return limit && limit < test.size() ? test.head(limit) : test;
  }

  void say(const std::string& line) const {
    if (!g_.quiet) out_ << line << '\n';
  }

  void write(const std::string& name, const std::string& contents) const { write_file(out_dir() / name, contents); }

  std::uint64_t seed() const { return g_.seed; }

 private:
  const Globals& g_;
  std::ostream& out_;
  ExperimentConfig cfg_;
};

std::string join_numbers(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_number(v[i]);
  return s;
}

template <class T>
double mean_of(const std::vector<T>& v) {
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (const T& x : v) total += static_cast<double>(x);
  return total / static_cast<double>(v.size());
}

struct TrainFlags {
  std::optional<std::size_t> members;
  std::optional<std::size_t> epochs;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<double> temperature;
  std::optional<std::string> advt;
};

int run_train(Runner& r, const TrainFlags& f) {
  ExperimentConfig& cfg = r.config();
  if (f.members) cfg.members = *f.members;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.alpha) cfg.train.adp.alpha = *f.alpha;
  if (f.beta) cfg.train.adp.beta = *f.beta;
  if (f.lr) cfg.train.learning_rate = *f.lr;
  if (f.batch) cfg.train.batch_size = *f.batch;
  if (f.temperature) cfg.model.temperature = *f.temperature;
  if (f.advt) {
    AdvTConfig advt;
    advt.attack = parse_attack_method(*f.advt);
    cfg.train.advt = advt;
  }
  if (cfg.members < 1) fail(ErrorCode::kInvalidArgument, "--members must be >= 1");
  cfg.train.seed = r.seed();
  const LoadedData data = r.data();
  MlpConfig model = cfg.model;
  model.input_dim = data.train.dim();
  model.num_classes = data.train.num_classes;
  Ensemble ens = Ensemble::initialize(model, cfg.members, r.seed());
  const TrainReport report = adp_train(ens, data.train, cfg.train);
  const std::string report_json = report_to_json(report);

  Checkpoint ckpt;
  ckpt.adp = cfg.train.adp;
  ckpt.ensemble = ens;
  ckpt.seed = r.seed();
  ckpt.report_digest = digest_hex(report_json);
  ckpt.dataset = data.train.name;
  r.write("train_report.json", report_json);
  r.write("checkpoint.json", checkpoint_to_json(ckpt));

  const AccuracyReport acc = accuracy(ens, data.test);
  r.say("trained K=" + std::to_string(cfg.members) + " for " + std::to_string(report.epochs.size()) +
        " epochs; test accuracy " + format_number(acc.ensemble) + " (members " + join_numbers(acc.members) + ")");
  r.say("wrote " + (r.out_dir() / "checkpoint.json").string());
  return kExitOk;
}

int run_attack_cmd(Runner& r, const std::string& checkpoint, const AttackFlags& flags, std::size_t limit,
                   std::size_t workers) {
  const AttackConfig attack = flags.build();
  const Ensemble ens = load_checkpoint(checkpoint).ensemble;
  const Dataset test = r.eval_split(limit);
  const AdvBatch adv = attack_dataset(ens, test, attack, r.seed(), 250, workers);
  const double clean = accuracy(ens, test).ensemble;
  const double robust = accuracy_of(ens.predict_ensemble(adv.adversarials), test.labels);

  std::ostringstream rows;
  rows << "index,label,goal,prediction,success,linf,l2,l1,l0\n";
  for (std::size_t i = 0; i < adv.size(); ++i) {
    rows << i << ',' << adv.labels[i] << ',' << adv.goals[i] << ',' << adv.predictions[i] << ','
         << (adv.success[i] ? 1 : 0) << ',' << format_number(adv.linf[i]) << ',' << format_number(adv.l2[i]) << ','
         << format_number(adv.l1[i]) << ',' << adv.l0[i] << '\n';
  }
  std::ostringstream summary;
  summary << "method,victim,targeted,eps,examples,clean_accuracy,robust_accuracy,success_rate,mean_linf,mean_l2,mean_l1,"
             "mean_l0\n";
  summary << to_string(attack.method) << ',' << attack.victim.name() << ',' << (attack.targeted ? 1 : 0) << ','
          << format_number(attack.eps) << ',' << adv.size() << ',' << format_number(clean) << ','
          << format_number(robust) << ',' << format_number(adv.success_rate()) << ',' << format_number(mean_of(adv.linf))
          << ',' << format_number(mean_of(adv.l2)) << ',' << format_number(mean_of(adv.l1)) << ','
          << format_number(mean_of(adv.l0)) << '\n';
  r.write("attack_examples.csv", rows.str());
  r.write("attack_summary.csv", summary.str());
  r.say(std::string(to_string(attack.method)) + " on " + std::to_string(adv.size()) + " examples: clean " +
        format_number(clean) + ", robust " + format_number(robust) + ", success rate " +
        format_number(adv.success_rate()));
  return kExitOk;
}

int run_eval(Runner& r, const std::string& checkpoint) {
  const ExperimentConfig& cfg = r.config();
  const Ensemble ens = load_checkpoint(checkpoint).ensemble;
  const Dataset full = r.data().test;
  const Dataset test = cfg.evaluation.limit && cfg.evaluation.limit < full.size() ? full.head(cfg.evaluation.limit) : full;

  std::ostringstream acc_csv;
  acc_csv << "model,accuracy\n";
  const AccuracyReport acc = accuracy(ens, full);
  acc_csv << "ensemble," << format_number(acc.ensemble) << '\n';
  for (std::size_t k = 0; k < acc.members.size(); ++k) acc_csv << "member" << k << ',' << format_number(acc.members[k]) << '\n';
  if (cfg.evaluation.clean) r.write("accuracy.csv", acc_csv.str());
  r.say("clean accuracy " + format_number(acc.ensemble));

  if (cfg.evaluation.robust) {
    std::vector<AttackConfig> attacks = cfg.attacks;
    if (attacks.empty()) {
      for (double eps : {0.0, 0.05, 0.1, 0.2}) {
        AttackConfig a;
        a.method = AttackMethod::kPgd;
        a.eps = eps;
        attacks.push_back(a);
      }
    }
    std::ostringstream rob;
    rob << "method,victim,targeted,eps,steps,examples,robust_accuracy\n";
    for (const AttackConfig& a : attacks) {
      const double ra = robust_accuracy(ens, test, a, r.seed(), cfg.evaluation.workers);
      rob << to_string(a.method) << ',' << a.victim.name() << ',' << (a.targeted ? 1 : 0) << ',' << format_number(a.eps)
          << ',' << a.steps << ',' << test.size() << ',' << format_number(ra) << '\n';
      r.say(std::string(to_string(a.method)) + " eps=" + format_number(a.eps) + ": robust accuracy " + format_number(ra));
    }
    r.write("robust.csv", rob.str());
  }
  return kExitOk;
}

int run_transfer(Runner& r, const std::string& checkpoint, const AttackFlags& flags, std::size_t limit,
                 std::size_t workers);
int run_detect(Runner& r, const std::string& checkpoint, const AttackFlags& flags, std::size_t count,
               std::size_t workers);
int run_hist(Runner& r, const std::string& checkpoint, std::size_t bins, const std::string& split);

/// eval plus the optional analyses switched on in the config's evaluation block.
int run_eval_all(Runner& r, const std::string& checkpoint) {
  run_eval(r, checkpoint);
  const EvalToggles& t = r.config().evaluation;
  if (t.transfer) {
    AttackFlags f;
    f.eps = 0.15;
    run_transfer(r, checkpoint, f, t.limit, t.workers);
  }
  if (t.detect) {
    AttackFlags f;
    f.eps = 0.3;
    run_detect(r, checkpoint, f, std::min<std::size_t>(t.limit ? t.limit : 500, 500), t.workers);
  }
  if (t.histogram) run_hist(r, checkpoint, t.histogram_bins, "test");
  return kExitOk;
}

int run_transfer(Runner& r, const std::string& checkpoint, const AttackFlags& flags, std::size_t limit,
                 std::size_t workers) {
  const AttackConfig attack = flags.build();
  const Ensemble ens = load_checkpoint(checkpoint).ensemble;
  const Dataset test = r.eval_split(limit);
  for (TransferMode mode : {TransferMode::kUntargetedAccuracy, TransferMode::kTargetedSuccess}) {
    const TransferMatrix m = transfer_matrix(ens, test, attack, mode, r.seed(), workers);
    std::ostringstream csv;
    write_transfer_csv(csv, m);
    const std::string name = mode == TransferMode::kUntargetedAccuracy ? "transfer_untargeted.csv" : "transfer_targeted.csv";
    r.write(name, csv.str());
    r.say(std::string(to_string(mode)) + ":\n" + csv.str());
  }
  return kExitOk;
}

int run_detect(Runner& r, const std::string& checkpoint, const AttackFlags& flags, std::size_t count,
               std::size_t workers) {
  const AttackConfig attack = flags.build();
  const Ensemble ens = load_checkpoint(checkpoint).ensemble;
  const Dataset test = r.eval_split(count);
  const AdvBatch adv = attack_dataset(ens, test, attack, r.seed(), 250, workers);
  const auto clean = detection_scores(ens, test.features);
  const auto attacked = detection_scores(ens, adv.adversarials);
  const RocCurve roc = roc_auc(clean, attacked);

  std::ostringstream scores;
  scores << "index,kind,score\n";
  for (std::size_t i = 0; i < clean.size(); ++i) scores << i << ",clean," << format_number(clean[i]) << '\n';
  for (std::size_t i = 0; i < attacked.size(); ++i) scores << i << ",adversarial," << format_number(attacked[i]) << '\n';
  std::ostringstream roc_csv;
  write_roc_csv(roc_csv, roc);
  std::ostringstream summary;
  summary << "method,eps,examples,auc,median_clean,median_adversarial\n"
          << to_string(attack.method) << ',' << format_number(attack.eps) << ',' << clean.size() << ','
          << format_number(roc.auc) << ',' << format_number(median_of(clean)) << ','
          << format_number(median_of(attacked)) << '\n';
  r.write("detect_scores.csv", scores.str());
  r.write("roc.csv", roc_csv.str());
  r.write("detect_summary.csv", summary.str());
  r.say("detection AUC " + format_number(roc.auc));
  return kExitOk;
}

int run_theory(Runner& r, const TheoryOptions& opt, bool write_csv) {
  const auto checks = run_theory_suite(opt);
  std::ostringstream table;
  bool ok = true;
  table << "check,result,detail\n";
  for (const TheoryCheck& c : checks) {
    ok = ok && c.passed;
    table << c.name << ',' << (c.passed ? "pass" : "FAIL") << ",\"" << c.detail << "\"\n";
  }
  r.say(table.str());
  if (write_csv) r.write("theory.csv", table.str());
  if (!ok) fail(ErrorCode::kTheory, "theory suite failed");
  return kExitOk;
}

int run_hist(Runner& r, const std::string& checkpoint, std::size_t bins, const std::string& split) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const LoadedData data = r.data();
  if (split != "test" && split != "train") fail(ErrorCode::kInvalidArgument, "--split must be test or train", split);
  const Dataset& d = split == "test" ? data.test : data.train;
  const DiversityHistogram h = diversity_histogram(ckpt.ensemble, d, bins, ckpt.adp.det_offset);
  std::ostringstream csv;
  write_histogram_csv(csv, h);
  r.write("histogram.csv", csv.str());
  r.say("median ln ED on " + split + ": " + format_number(h.median));
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"divens: diversity-promoting ensembles, attacks and evaluation", "divens"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "global seed")->capture_default_str();
  app.add_option("--config", g.config, "experiment config JSON");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--quiet", g.quiet, "suppress progress output");
  app.add_option("--data", g.data, "IDX directory (default: bundled MNIST subset)");
  app.add_option("--dataset", g.dataset, "auto, mnist or blobs");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "train an ensemble and write checkpoint.json + train_report.json");
  train->add_option("--members", tf.members, "ensemble size K");
  train->add_option("--epochs", tf.epochs);
  train->add_option("--alpha", tf.alpha, "entropy weight");
  train->add_option("--beta", tf.beta, "log-diversity weight");
  train->add_option("--lr", tf.lr, "learning rate");
  train->add_option("--batch", tf.batch, "batch size");
  train->add_option("--temperature", tf.temperature, "training temperature");
  train->add_option("--advt", tf.advt, "adversarial training attack: fgsm or pgd");

  std::string checkpoint;
  std::size_t limit = 1000, workers = 1, count = 500, bins = 30;
  std::string split = "test";

  AttackFlags attack_flags;
  auto* attack = app.add_subcommand("attack", "attack a checkpoint; writes attack_examples.csv + attack_summary.csv");
  attack->add_option("--checkpoint", checkpoint)->required();
  attack->add_option("--limit", limit, "test examples")->capture_default_str();
  attack->add_option("--workers", workers)->capture_default_str();
  add_attack_flags(attack, attack_flags);

  auto* eval = app.add_subcommand("eval", "clean and robust accuracy tables");
  eval->add_option("--checkpoint", checkpoint)->required();

  AttackFlags transfer_flags;
  transfer_flags.eps = 0.15;
  auto* transfer = app.add_subcommand("transfer", "member-to-member transfer matrices");
  transfer->add_option("--checkpoint", checkpoint)->required();
  transfer->add_option("--limit", limit, "test examples")->capture_default_str();
  transfer->add_option("--workers", workers)->capture_default_str();
  add_attack_flags(transfer, transfer_flags);

  AttackFlags detect_flags;
  detect_flags.eps = 0.3;
  auto* detect = app.add_subcommand("detect", "diversity-based detection scores, ROC and AUC");
  detect->add_option("--checkpoint", checkpoint)->required();
  detect->add_option("--count", count, "clean examples (and as many adversarial)")->capture_default_str();
  detect->add_option("--workers", workers)->capture_default_str();
  add_attack_flags(detect, detect_flags);

  TheoryOptions topt;
  auto* theory = app.add_subcommand("theory", "prediction-space optimum checks");
  theory->add_option("--seeds", topt.seeds, "starts for the all-seeds checks")->capture_default_str();
  theory->add_option("--restarts", topt.restarts, "starts for the orthogonal optimum")->capture_default_str();

  auto* hist = app.add_subcommand("hist", "histogram of ln ED");
  hist->add_option("--checkpoint", checkpoint)->required();
  hist->add_option("--bins", bins)->capture_default_str();
  hist->add_option("--split", split, "test or train")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what(), e.get_name());
    return kExitUsage;
  }

  try {
    topt.seed = g.seed;
    Runner r(g, out);
    if (train->parsed()) return run_train(r, tf);
    if (attack->parsed()) return run_attack_cmd(r, checkpoint, attack_flags, limit, workers);
    if (eval->parsed()) return run_eval_all(r, checkpoint);
    if (transfer->parsed()) return run_transfer(r, checkpoint, transfer_flags, limit, workers);
    if (detect->parsed()) return run_detect(r, checkpoint, detect_flags, count, workers);
    if (theory->parsed()) return run_theory(r, topt, !g.out.empty());
    if (hist->parsed()) return run_hist(r, checkpoint, bins, split);
  } catch (const Error& e) {
    report_error(err, to_string(e.code()), e.what(), e.context());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    report_error(err, "runtime", e.what(), "");
    return kExitRuntime;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace divens
