#include "divens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "divens/error.hpp"
#include "divens/rng.hpp"

namespace divens {

void Dataset::validate() const {
  require(num_classes >= 2, "Dataset: num_classes must be at least 2");
  if (features.rank() != 2 || features.shape()[0] != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "Dataset: feature rows do not match label count",
         "features=" + shape_string(features.shape()) + " labels=" + std::to_string(labels.size()));
  }
  for (double v : features.data()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kInvalidArgument, "Dataset: feature outside [0,1]");
  }
  for (auto y : labels) {
    if (y >= num_classes) fail(ErrorCode::kInvalidArgument, "Dataset: label out of range", "label=" + std::to_string(y));
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.name = name;
  out.split = split;
  const std::size_t d = dim();
  out.features = Tensor(Shape{indices.size(), d});
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < size(), "Dataset::subset: index out of range");
    auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open file", path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) {
    fail(ErrorCode::kFormat, std::string("truncated IDX ") + what + " header", "offset=" + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex(std::uint32_t v) {
  std::ostringstream out;
  out << "0x" << std::hex;
  out.width(8);
  out.fill('0');
  out << v;
  return out.str();
}

}  // namespace

Dataset load_idx_bytes(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, std::size_t limit) {
  const std::uint32_t image_magic = read_be32(images, 0, "image");
  if (image_magic != kIdxImageMagic) {
    fail(ErrorCode::kFormat, "bad IDX image magic", "expected=" + hex(kIdxImageMagic) + " found=" + hex(image_magic));
  }
  const std::uint32_t label_magic = read_be32(labels, 0, "label");
  if (label_magic != kIdxLabelMagic) {
    fail(ErrorCode::kFormat, "bad IDX label magic", "expected=" + hex(kIdxLabelMagic) + " found=" + hex(label_magic));
  }
  const std::size_t count = read_be32(images, 4, "image");
  const std::size_t rows = read_be32(images, 8, "image");
  const std::size_t cols = read_be32(images, 12, "image");
  const std::size_t label_count = read_be32(labels, 4, "label");
  if (count != label_count) {
    fail(ErrorCode::kFormat, "IDX image and label counts disagree",
         "images=" + std::to_string(count) + " labels=" + std::to_string(label_count));
  }
  const std::size_t n = limit == 0 ? count : std::min(limit, count);
  const std::size_t d = rows * cols;
  const std::size_t image_end = 16 + n * d;
  if (images.size() < image_end) {
    fail(ErrorCode::kFormat, "truncated IDX image data", "offset=" + std::to_string(images.size()) + " needed=" + std::to_string(image_end));
  }
  if (labels.size() < 8 + n) {
    fail(ErrorCode::kFormat, "truncated IDX label data", "offset=" + std::to_string(labels.size()) + " needed=" + std::to_string(8 + n));
  }
  Dataset out;
  out.name = "mnist";
  out.num_classes = 10;
  out.features = Tensor(Shape{n, d});
  auto px = out.features.data();
  for (std::size_t i = 0; i < n * d; ++i) px[i] = images[16 + i] / 255.0;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = labels[8 + i];
    if (out.labels[i] >= out.num_classes) {
      fail(ErrorCode::kFormat, "IDX label out of range", "offset=" + std::to_string(8 + i) + " label=" + std::to_string(out.labels[i]));
    }
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit) {
  const auto image_bytes = read_file(images);
  const auto label_bytes = read_file(labels);
  return load_idx_bytes(image_bytes, label_bytes, limit);
}

namespace {

struct RawBlobs {
  Tensor means;
  Tensor samples;
  std::vector<std::size_t> labels;
};

RawBlobs raw_blobs(const BlobSpec& spec) {
  require(spec.num_classes >= 2 && spec.dim >= 2, "synth_blobs: need at least 2 classes and 2 dimensions");
  require(spec.spread >= 0.0, "synth_blobs: spread must be non-negative");
  RawBlobs raw;
  raw.means = Tensor(Shape{spec.num_classes, spec.dim});
  Rng mean_rng(spec.seed, "blob-means");
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto row = raw.means.row(c);
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (double& v : row) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : row) v /= norm;
  }
  const std::size_t n = spec.num_classes * spec.per_class;
  raw.samples = Tensor(Shape{n, spec.dim});
  raw.labels.resize(n);
  Rng noise(spec.seed, "blob-samples");
  // Interleave classes so any prefix is balanced.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.num_classes;
    raw.labels[i] = c;
    auto row = raw.samples.row(i);
    for (std::size_t j = 0; j < spec.dim; ++j) row[j] = raw.means(c, j) + spec.spread * noise.normal();
  }
  return raw;
}

void rescale(Tensor& t, double lo, double hi) {
  const double span = hi - lo;
  for (double& v : t.data()) v = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.5;
}

std::pair<double, double> bounds(const Tensor& t) {
  const auto [mn, mx] = std::minmax_element(t.data().begin(), t.data().end());
  return {*mn, *mx};
}

}  // namespace

Dataset synth_blobs(const BlobSpec& spec) {
  RawBlobs raw = raw_blobs(spec);
  const auto [lo, hi] = bounds(raw.samples);
  rescale(raw.samples, lo, hi);
  Dataset out;
  out.features = std::move(raw.samples);
  out.labels = std::move(raw.labels);
  out.num_classes = spec.num_classes;
  out.name = "synth_blobs";
  return out;
}

Tensor blob_means(const BlobSpec& spec) {
  RawBlobs raw = raw_blobs(spec);
  const auto [lo, hi] = bounds(raw.samples);
  rescale(raw.means, lo, hi);
  return raw.means;
}

std::pair<Dataset, Dataset> split_fraction(const Dataset& data, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, "split_fraction: fraction must be in [0,1]");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, "split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {data.subset(first), data.subset(second)};
}

}  // namespace divens
