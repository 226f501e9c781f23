#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "divens/attacks.hpp"
#include "divens/dataset.hpp"
#include "divens/diversity.hpp"
#include "divens/model.hpp"
#include "divens/training.hpp"

namespace divens {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  AdpConfig adp;
  Ensemble ensemble;
  std::uint64_t seed = 0;
  /// FNV-1a of the serialized TrainReport; empty for untrained models.
  std::string report_digest;
  std::string dataset;
};

/// Fields in fixed order: format_version, adp, members, seed, report_digest,
/// dataset. Doubles are written in shortest round-trip form.
std::string checkpoint_to_json(const Checkpoint& ckpt);
/// Throws kFormat for malformed JSON, kVersion for an unknown
/// format_version and kCheckpointShape for inconsistent arrays.
Checkpoint checkpoint_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string report_to_json(const TrainReport& report);
std::string digest_hex(std::string_view bytes);

/// Where the examples come from: "mnist" (IDX directory), "blobs", or "auto"
/// (MNIST when the files exist, otherwise blobs).
struct DatasetSpec {
  std::string kind = "auto";
  std::string path;
  std::size_t train_limit = 4000;
  std::size_t test_limit = 1000;
  BlobSpec blobs;
  /// Share of the blob set held out as the test split.
  double blobs_test_fraction = 0.2;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct LoadedData {
  Dataset train;
  Dataset test;
};

/// `default_dir` is used when spec.path is empty.
LoadedData load_dataset(const DatasetSpec& spec, const std::filesystem::path& default_dir);

struct EvalToggles {
  bool clean = true;
  bool robust = true;
  bool transfer = false;
  bool detect = false;
  bool histogram = false;
  std::size_t histogram_bins = 30;
  /// Test examples used by attack-based evaluations (0 = all).
  std::size_t limit = 1000;
  std::size_t workers = 1;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::size_t members = 3;
  MlpConfig model;
  TrainConfig train;
  std::vector<AttackConfig> attacks;
  EvalToggles evaluation;
  std::string output_dir;
};

/// Strict parse: unknown keys, wrong types and out-of-range values are
/// rejected before anything runs. Missing keys keep their defaults.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate then write.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace divens
