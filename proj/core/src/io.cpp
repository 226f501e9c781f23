#include "divens/io.hpp"

#include <cmath>
#include <concepts>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "divens/error.hpp"
#include "divens/rng.hpp"

namespace divens {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

/// Reads one JSON object strictly: every key must be consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, ErrorCode code) : j_(j), path_(std::move(path)), code_(code) {
    if (!j.is_object()) fail(code_, path_ + " must be an object", path_);
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& required(const char* key) {
    const json* v = child(key);
    if (!v) fail(code_, "missing key " + where(key), where(key));
    return *v;
  }

  void read(const char* key, double& out) {
    if (const json* v = child(key)) out = number(*v, key);
  }
  void read(const char* key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }
  template <std::unsigned_integral T>
  void read(const char* key, T& out) {
    if (const json* v = child(key)) out = static_cast<T>(unsigned_number(*v, key));
  }
  void read(const char* key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) type_error(key, "a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) type_error(key, "an array");
      out.clear();
      for (const json& e : *v) out.push_back(static_cast<std::size_t>(unsigned_number(e, key)));
    }
  }
  void read(const char* key, std::vector<double>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) type_error(key, "an array");
      out.clear();
      for (const json& e : *v) out.push_back(number(e, key));
    }
  }

  std::string where(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(code_, "unknown key " + path_ + "." + it.key(), path_ + "." + it.key());
    }
  }

 private:
  [[noreturn]] void type_error(const char* key, const char* expected) const {
    fail(code_, where(key) + " must be " + expected, where(key));
  }
  double number(const json& v, const char* key) const {
    if (!v.is_number()) type_error(key, "a number");
    return v.get<double>();
  }
  std::uint64_t unsigned_number(const json& v, const char* key) const {
    if (!v.is_number_unsigned()) type_error(key, "a non-negative integer");
    return v.get<std::uint64_t>();
  }

  const json& j_;
  std::string path_;
  ErrorCode code_;
  std::set<std::string> seen_;
};

ordered_json adp_json(const AdpConfig& a) {
  ordered_json j;
  j["alpha"] = a.alpha;
  j["beta"] = a.beta;
  j["det_offset"] = a.det_offset;
  return j;
}

AdpConfig read_adp(const json& j, const std::string& path, ErrorCode code) {
  AdpConfig a;
  ObjectReader r(j, path, code);
  r.read("alpha", a.alpha);
  r.read("beta", a.beta);
  r.read("det_offset", a.det_offset);
  r.finish();
  return a;
}

MlpConfig read_mlp(const json& j, const std::string& path, ErrorCode code) {
  MlpConfig m;
  ObjectReader r(j, path, code);
  r.read("input_dim", m.input_dim);
  r.read("hidden_layers", m.hidden_layers);
  r.read("num_classes", m.num_classes);
  r.read("temperature", m.temperature);
  r.finish();
  return m;
}

[[noreturn]] void shape_error(std::size_t member, std::size_t layer, const std::string& what) {
  const std::string where = "member " + std::to_string(member) + " layer " + std::to_string(layer);
  fail(ErrorCode::kCheckpointShape, "checkpoint shape error at " + where + ": " + what, where);
}

std::vector<double> read_doubles(const json& j, const std::string& path) {
  if (!j.is_array()) fail(ErrorCode::kFormat, path + " must be an array", path);
  std::vector<double> out;
  out.reserve(j.size());
  for (const json& e : j) {
    if (!e.is_number()) fail(ErrorCode::kFormat, path + " must contain numbers", path);
    out.push_back(e.get<double>());
  }
  return out;
}

AttackConfig read_attack(const json& j, const std::string& path) {
  AttackConfig a;
  ObjectReader r(j, path, ErrorCode::kInvalidArgument);
  std::string method = std::string(to_string(a.method));
  r.read("method", method);
  a.method = parse_attack_method(method);
  r.read("eps", a.eps);
  r.read("steps", a.steps);
  if (r.has("step_size")) {
    double s = 0.0;
    r.read("step_size", s);
    a.step_size = s;
  }
  r.read("momentum", a.momentum);
  r.read("random_init", a.random_init);
  r.read("jsma_theta", a.jsma_theta);
  r.read("jsma_gamma", a.jsma_gamma);
  r.read("cw_c", a.cw_c);
  r.read("cw_kappa", a.cw_kappa);
  r.read("ead_beta", a.ead_beta);
  r.read("opt_lr", a.opt_lr);
  r.read("opt_steps", a.opt_steps);
  r.read("targeted", a.targeted);
  if (r.has("target_label")) {
    std::size_t t = 0;
    r.read("target_label", t);
    a.target_label = t;
  }
  std::string victim = "ensemble";
  r.read("victim", victim);
  if (victim != "ensemble") {
    if (victim.rfind("member:", 0) != 0) {
      fail(ErrorCode::kInvalidArgument, r.where("victim") + " must be \"ensemble\" or \"member:<k>\"", victim);
    }
    try {
      a.victim = Victim::single(std::stoul(victim.substr(7)));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, r.where("victim") + " has a bad member index", victim);
    }
  }
  std::string loss = std::string(to_string(a.loss));
  r.read("loss", loss);
  a.loss = parse_attack_loss(loss);
  r.finish();
  a.validate();
  return a;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  ordered_json j;
  j["format_version"] = ckpt.format_version;
  j["adp"] = adp_json(ckpt.adp);
  ordered_json members = ordered_json::array();
  for (const Mlp& m : ckpt.ensemble.members()) {
    ordered_json member;
    const MlpConfig& c = m.config();
    member["config"] = {{"input_dim", c.input_dim},
                        {"hidden_layers", c.hidden_layers},
                        {"num_classes", c.num_classes},
                        {"temperature", c.temperature}};
    ordered_json layers = ordered_json::array();
    for (const Layer& l : m.params().layers) {
      ordered_json layer;
      layer["weight"] = {{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"data", l.weight.storage()}};
      layer["bias"] = l.bias.storage();
      layers.push_back(std::move(layer));
    }
    member["layers"] = std::move(layers);
    members.push_back(std::move(member));
  }
  j["members"] = std::move(members);
  j["seed"] = ckpt.seed;
  j["report_digest"] = ckpt.report_digest;
  j["dataset"] = ckpt.dataset;
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kFormat, "malformed checkpoint JSON", e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kFormat, "checkpoint must be a JSON object");
  auto version = j.find("format_version");
  if (version == j.end() || !version->is_number_integer()) {
    fail(ErrorCode::kFormat, "checkpoint has no integer format_version");
  }
  if (version->get<long long>() != kCheckpointFormatVersion) {
    fail(ErrorCode::kVersion, "unsupported checkpoint format_version",
         "found=" + std::to_string(version->get<long long>()) + " supported=" + std::to_string(kCheckpointFormatVersion));
  }

  Checkpoint ckpt;
  ObjectReader r(j, "checkpoint", ErrorCode::kFormat);
  r.child("format_version");
  ckpt.adp = read_adp(r.required("adp"), "checkpoint.adp", ErrorCode::kFormat);
  r.read("seed", ckpt.seed);
  r.read("report_digest", ckpt.report_digest);
  r.read("dataset", ckpt.dataset);
  const json& members = r.required("members");
  r.finish();
  if (!members.is_array() || members.empty()) fail(ErrorCode::kFormat, "checkpoint.members must be a non-empty array");

  std::vector<Mlp> mlps;
  for (std::size_t m = 0; m < members.size(); ++m) {
    const std::string path = "checkpoint.members[" + std::to_string(m) + "]";
    ObjectReader mr(members[m], path, ErrorCode::kFormat);
    MlpConfig cfg = read_mlp(mr.required("config"), path + ".config", ErrorCode::kFormat);
    const json& layers = mr.required("layers");
    mr.finish();
    try {
      cfg.validate();
    } catch (const Error& e) {
      fail(ErrorCode::kCheckpointShape, "member " + std::to_string(m) + ": " + e.what(), "member " + std::to_string(m));
    }
    std::vector<std::size_t> dims{cfg.input_dim};
    dims.insert(dims.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
    dims.push_back(cfg.num_classes);
    if (!layers.is_array()) fail(ErrorCode::kFormat, path + ".layers must be an array");
    if (layers.size() != dims.size() - 1) {
      shape_error(m, layers.size(), "expected " + std::to_string(dims.size() - 1) + " layers, found " +
                                        std::to_string(layers.size()));
    }
    ModelParams params;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lpath = path + ".layers[" + std::to_string(l) + "]";
      ObjectReader lr(layers[l], lpath, ErrorCode::kFormat);
      ObjectReader wr(lr.required("weight"), lpath + ".weight", ErrorCode::kFormat);
      std::size_t rows = 0, cols = 0;
      wr.read("rows", rows);
      wr.read("cols", cols);
      std::vector<double> wdata = read_doubles(wr.required("data"), lpath + ".weight.data");
      wr.finish();
      std::vector<double> bias = read_doubles(lr.required("bias"), lpath + ".bias");
      lr.finish();
      if (rows != dims[l] || cols != dims[l + 1]) {
        shape_error(m, l, "weight is " + std::to_string(rows) + "x" + std::to_string(cols) + ", config needs " +
                              std::to_string(dims[l]) + "x" + std::to_string(dims[l + 1]));
      }
      if (wdata.size() != rows * cols) {
        shape_error(m, l, "weight data has " + std::to_string(wdata.size()) + " values, expected " +
                              std::to_string(rows * cols));
      }
      if (bias.size() != cols) {
        shape_error(m, l, "bias has " + std::to_string(bias.size()) + " values, expected " + std::to_string(cols));
      }
      params.layers.push_back(Layer{Tensor::matrix(rows, cols, std::move(wdata)), Tensor::vector(std::move(bias))});
    }
    mlps.emplace_back(std::move(cfg), std::move(params));
  }
  try {
    ckpt.ensemble = Ensemble(std::move(mlps));
  } catch (const Error& e) {
    fail(ErrorCode::kCheckpointShape, std::string("checkpoint members disagree: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_file(path)); }

std::string report_to_json(const TrainReport& report) {
  auto number = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
  ordered_json j;
  j["initial_objective"] = number(report.initial_objective);
  ordered_json epochs = ordered_json::array();
  for (const EpochRecord& e : report.epochs) {
    ordered_json r;
    r["epoch"] = e.epoch;
    r["mean_objective"] = number(e.mean_objective);
    r["member_accuracy"] = e.member_accuracy;
    r["ensemble_accuracy"] = e.ensemble_accuracy;
    r["median_log_diversity"] = number(e.median_log_diversity);
    r["validation_loss"] = e.validation_loss;
    r["active"] = e.active;
    r["advt_fallbacks"] = e.advt_fallbacks;
    epochs.push_back(std::move(r));
  }
  j["epochs"] = std::move(epochs);
  ordered_json frozen = ordered_json::array();
  for (const auto& f : report.frozen_at) frozen.push_back(f ? ordered_json(*f) : ordered_json(nullptr));
  j["frozen_at"] = std::move(frozen);
  return j.dump(2) + "\n";
}

std::string digest_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

LoadedData load_dataset(const DatasetSpec& spec, const std::filesystem::path& default_dir) {
  const std::filesystem::path dir = spec.path.empty() ? default_dir : std::filesystem::path(spec.path);
  std::string kind = spec.kind;
  if (kind == "auto") kind = std::filesystem::exists(dir / "train-images-idx3-ubyte") ? "mnist" : "blobs";
  LoadedData out;
  if (kind == "mnist") {
    out.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", spec.train_limit);
    out.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", spec.test_limit);
    out.train.name = out.test.name = "mnist";
  } else if (kind == "blobs") {
    const Dataset all = synth_blobs(spec.blobs);
    auto parts = split_fraction(all, spec.blobs_test_fraction, derive_seed(spec.blobs.seed, "blobs-test"));
    out.test = std::move(parts.first);
    out.train = std::move(parts.second);
    out.train.name = out.test.name = "blobs";
  } else {
    fail(ErrorCode::kInvalidArgument, "dataset kind must be auto, mnist or blobs", kind);
  }
  out.train.split = "train";
  out.test.split = "test";
  return out;
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kFormat, "malformed config JSON", e.what());
  }
  const ErrorCode code = ErrorCode::kInvalidArgument;
  ExperimentConfig cfg;
  ObjectReader r(j, "config", code);
  if (const json* d = r.child("dataset")) {
    ObjectReader dr(*d, "config.dataset", code);
    dr.read("kind", cfg.dataset.kind);
    dr.read("path", cfg.dataset.path);
    dr.read("train_limit", cfg.dataset.train_limit);
    dr.read("test_limit", cfg.dataset.test_limit);
    dr.read("blobs_test_fraction", cfg.dataset.blobs_test_fraction);
    if (const json* b = dr.child("blobs")) {
      ObjectReader br(*b, "config.dataset.blobs", code);
      br.read("seed", cfg.dataset.blobs.seed);
      br.read("num_classes", cfg.dataset.blobs.num_classes);
      br.read("dim", cfg.dataset.blobs.dim);
      br.read("per_class", cfg.dataset.blobs.per_class);
      br.read("spread", cfg.dataset.blobs.spread);
      br.finish();
    }
    dr.finish();
    if (cfg.dataset.kind != "auto" && cfg.dataset.kind != "mnist" && cfg.dataset.kind != "blobs") {
      fail(code, "config.dataset.kind must be auto, mnist or blobs", cfg.dataset.kind);
    }
    if (!(cfg.dataset.blobs_test_fraction > 0.0 && cfg.dataset.blobs_test_fraction < 1.0)) {
      fail(code, "config.dataset.blobs_test_fraction must be in (0, 1)");
    }
  }
  r.read("members", cfg.members);
  if (cfg.members < 1) fail(code, "config.members must be >= 1");
  if (const json* m = r.child("model")) {
    ObjectReader mr(*m, "config.model", code);
    mr.read("hidden_layers", cfg.model.hidden_layers);
    mr.read("temperature", cfg.model.temperature);
    mr.finish();
  }
  if (const json* t = r.child("train")) {
    ObjectReader tr(*t, "config.train", code);
    tr.read("learning_rate", cfg.train.learning_rate);
    tr.read("member_learning_rates", cfg.train.member_learning_rates);
    tr.read("batch_size", cfg.train.batch_size);
    tr.read("epochs", cfg.train.epochs);
    tr.read("freeze_patience", cfg.train.freeze_patience);
    tr.read("freeze_tolerance", cfg.train.freeze_tolerance);
    tr.read("validation_fraction", cfg.train.validation_fraction);
    if (const json* a = tr.child("adp")) cfg.train.adp = read_adp(*a, "config.train.adp", code);
    if (const json* a = tr.child("advt")) {
      AdvTConfig advt;
      ObjectReader ar(*a, "config.train.advt", code);
      std::string attack = "fgsm";
      ar.read("attack", attack);
      advt.attack = parse_attack_method(attack);
      ar.read("eps_lo", advt.eps_lo);
      ar.read("eps_hi", advt.eps_hi);
      ar.read("steps", advt.steps);
      ar.finish();
      cfg.train.advt = advt;
    }
    tr.finish();
  }
  if (const json* a = r.child("attacks")) {
    if (!a->is_array()) fail(code, "config.attacks must be an array");
    for (std::size_t i = 0; i < a->size(); ++i) {
      cfg.attacks.push_back(read_attack((*a)[i], "config.attacks[" + std::to_string(i) + "]"));
    }
  }
  if (const json* e = r.child("evaluation")) {
    ObjectReader er(*e, "config.evaluation", code);
    er.read("clean", cfg.evaluation.clean);
    er.read("robust", cfg.evaluation.robust);
    er.read("transfer", cfg.evaluation.transfer);
    er.read("detect", cfg.evaluation.detect);
    er.read("histogram", cfg.evaluation.histogram);
    er.read("histogram_bins", cfg.evaluation.histogram_bins);
    er.read("limit", cfg.evaluation.limit);
    er.read("workers", cfg.evaluation.workers);
    er.finish();
    if (cfg.evaluation.histogram_bins < 1) fail(code, "config.evaluation.histogram_bins must be >= 1");
    if (cfg.evaluation.workers < 1) fail(code, "config.evaluation.workers must be >= 1");
  }
  r.read("output_dir", cfg.output_dir);
  r.finish();

  // input_dim comes from the dataset at run time.
  MlpConfig model = cfg.model;
  model.input_dim = 1;
  model.validate();
  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open file", path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write file", path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) fail(ErrorCode::kIo, "write failed", path.string());
}

}  // namespace divens
