#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "divens/tensor.hpp"

namespace divens {

/// n x d features in [0,1] with labels in [0, num_classes).
struct Dataset {
  Tensor features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string name;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.shape()[1] : 0; }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an IDX image/label file pair (big-endian). Pixels are scaled by
/// 1/255. `limit` keeps only the first `limit` examples when nonzero.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit = 0);
Dataset load_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t limit = 0);

struct BlobSpec {
  std::uint64_t seed = 0;
  std::size_t num_classes = 10;
  std::size_t dim = 20;
  std::size_t per_class = 200;
  double spread = 0.08;
};

/// Gaussian clusters around seeded unit-sphere means, rescaled into [0,1]
/// by the global min/max over all coordinates. Class means are exposed via
/// blob_means() with the same rescaling.
Dataset synth_blobs(const BlobSpec& spec);
Tensor blob_means(const BlobSpec& spec);

/// Seeded shuffle then split: first part gets round(fraction * n) examples.
std::pair<Dataset, Dataset> split_fraction(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace divens
