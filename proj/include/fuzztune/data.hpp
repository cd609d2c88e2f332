#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fuzztune/error.hpp"
#include "fuzztune/rng.hpp"
#include "fuzztune/tensor.hpp"

namespace fzt {

struct Example {
  Tensor x;
  std::size_t y = 0;
};

/// Pixels in [0, 1]; `height`/`width` are zero for flat (non-image) data.
struct Dataset {
  std::vector<Example> examples;
  std::size_t class_count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string provenance;

  std::size_t size() const noexcept { return examples.size(); }
  bool is_image() const noexcept { return height > 0 && width > 0; }
  std::size_t input_dim() const { return examples.empty() ? 0 : examples.front().x.size(); }

  void validate() const {
    require(!examples.empty(), ErrorCode::InvalidArgument, "dataset is empty");
    require(class_count >= 2, ErrorCode::InvalidArgument, "dataset needs at least two classes");
    const auto d = input_dim();
    for (const auto& ex : examples) {
      require(ex.x.size() == d, ErrorCode::ShapeMismatch, "examples differ in size");
      require(ex.y < class_count, ErrorCode::LabelOutOfRange, "label " + std::to_string(ex.y) + " out of range");
      for (double v : ex.x.values()) require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument, "pixel outside [0,1]");
    }
  }
};

struct SyntheticConfig {
  std::size_t classes = 5;
  std::size_t n_per_class = 200;
  std::size_t side = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
};

/// Class-specific prototype: an oriented Gaussian ridge whose centre sits on
/// a ring around the image centre.
inline constexpr double kProtoBase = 0.4, kProtoAmp = 0.2;
inline std::vector<double> synthetic_prototype(std::size_t c, std::size_t classes, std::size_t side) {
  const double H = static_cast<double>(side);
  const double phi = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  const double theta = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  const double cx = 0.5 * (H - 1.0) + 0.18 * H * std::cos(phi);
  const double cy = 0.5 * (H - 1.0) + 0.18 * H * std::sin(phi);
  const double s_major = 0.28 * H, s_minor = 0.09 * H;
  std::vector<double> img(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t col = 0; col < side; ++col) {
      const double dx = static_cast<double>(col) - cx, dy = static_cast<double>(r) - cy;
      const double u = dx * std::cos(theta) + dy * std::sin(theta);
      const double v = -dx * std::sin(theta) + dy * std::cos(theta);
      img[r * side + col] = kProtoBase + kProtoAmp * std::exp(-0.5 * (u * u / (s_major * s_major) + v * v / (s_minor * s_minor)));
    }
  }
  return img;
}

/// Examples are interleaved by class: index i has label i % classes.
inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  require(cfg.classes >= 2, ErrorCode::InvalidArgument, "need at least two classes");
  require(cfg.side >= 8, ErrorCode::InvalidArgument, "image side must be >= 8");
  require(cfg.n_per_class >= 1, ErrorCode::InvalidArgument, "n_per_class must be >= 1");
  require(cfg.noise_std >= 0.0 && std::isfinite(cfg.noise_std), ErrorCode::InvalidArgument, "noise_std must be >= 0");

  std::vector<std::vector<double>> protos;
  for (std::size_t c = 0; c < cfg.classes; ++c) protos.push_back(synthetic_prototype(c, cfg.classes, cfg.side));

  Dataset ds;
  ds.class_count = cfg.classes;
  ds.height = ds.width = cfg.side;
  ds.provenance = "synthetic(seed=" + std::to_string(cfg.seed) + ",classes=" + std::to_string(cfg.classes) +
                  ",n=" + std::to_string(cfg.n_per_class) + ",side=" + std::to_string(cfg.side) + ")";
  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      std::vector<double> img = protos[c];
      for (auto& v : img) v = std::clamp(v + cfg.noise_std * rng.normal(), 0.0, 1.0);
      ds.examples.push_back({Tensor({cfg.side, cfg.side}, std::move(img)), c});
    }
  }
  return ds;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
  require(off + 4 <= b.size(), ErrorCode::TruncatedPayload, what + ": header truncated");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

inline std::uint64_t fnv1a(const std::vector<unsigned char>& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (auto c : bytes) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + path + "'");
}

}  // namespace detail

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255. The class count is max label + 1 unless given.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::optional<std::size_t> class_count = std::nullopt) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  require(detail::read_be32(img, 0, "images") == 0x00000803u, ErrorCode::BadMagic, "images file magic");
  require(detail::read_be32(lab, 0, "labels") == 0x00000801u, ErrorCode::BadMagic, "labels file magic");
  const auto n = detail::read_be32(img, 4, "images");
  const auto rows = detail::read_be32(img, 8, "images");
  const auto cols = detail::read_be32(img, 12, "images");
  const auto n_labels = detail::read_be32(lab, 4, "labels");
  require(n == n_labels, ErrorCode::CountMismatch,
          std::to_string(n) + " images vs " + std::to_string(n_labels) + " labels");
  require(rows > 0 && cols > 0 && n > 0, ErrorCode::InvalidArgument, "empty IDX dimensions");
  const std::size_t px = std::size_t{rows} * cols;
  require(img.size() >= 16 + std::size_t{n} * px, ErrorCode::TruncatedPayload, "image pixels truncated");
  require(lab.size() >= 8 + std::size_t{n}, ErrorCode::TruncatedPayload, "labels truncated");

  Dataset ds;
  ds.height = rows;
  ds.width = cols;
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(px);
    for (std::size_t p = 0; p < px; ++p) v[p] = static_cast<double>(img[16 + i * px + p]) / 255.0;
    const std::size_t y = lab[8 + i];
    max_label = std::max(max_label, y);
    ds.examples.push_back({Tensor({rows, cols}, std::move(v)), y});
  }
  ds.class_count = class_count.value_or(std::max<std::size_t>(2, max_label + 1));
  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(lab, detail::fnv1a(img))));
  ds.provenance = std::string("idx(") + digest + ")";
  ds.validate();
  return ds;
}

/// Writes the dataset as an IDX pair, quantising pixels to round(255 x).
/// Flat datasets are written as 1 x d images.
inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  ds.validate();
  require(ds.class_count <= 256, ErrorCode::InvalidArgument, "IDX labels are u8");
  const auto rows = ds.is_image() ? ds.height : 1;
  const auto cols = ds.is_image() ? ds.width : ds.input_dim();
  std::vector<unsigned char> img, lab;
  detail::put_be32(img, 0x00000803u);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(rows));
  detail::put_be32(img, static_cast<std::uint32_t>(cols));
  detail::put_be32(lab, 0x00000801u);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (const auto& ex : ds.examples) {
    for (double v : ex.x.values()) img.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    lab.push_back(static_cast<unsigned char>(ex.y));
  }
  detail::write_file(images_path, img);
  detail::write_file(labels_path, lab);
}

struct CleanSelection {
  Dataset data;
  std::vector<std::size_t> source_indices;
  bool shortfall = false;
};

/// Seeded uniform sample of `n` examples that every classifier in `models`
/// labels correctly. `classify(model, x)` returns the predicted class.
template <class ModelT, class Classify>
CleanSelection select_clean(const Dataset& ds, const std::vector<const ModelT*>& models, std::size_t n,
                            std::uint64_t seed, Classify classify) {
  require(n >= 1, ErrorCode::InvalidArgument, "n must be >= 1");
  std::vector<std::size_t> qualifying;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& ex = ds.examples[i];
    bool ok = true;
    for (const auto* m : models) {
      if (classify(*m, ex.x) != ex.y) {
        ok = false;
        break;
      }
    }
    if (ok) qualifying.push_back(i);
  }
  require(!qualifying.empty(), ErrorCode::NoQualifyingExamples, "no example is classified correctly by every model");

  CleanSelection sel;
  sel.shortfall = qualifying.size() < n;
  const auto take = std::min(n, qualifying.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) std::swap(qualifying[i], qualifying[i + rng.index(qualifying.size() - i)]);
  qualifying.resize(take);
  std::sort(qualifying.begin(), qualifying.end());

  sel.data.class_count = ds.class_count;
  sel.data.height = ds.height;
  sel.data.width = ds.width;
  sel.data.provenance = ds.provenance + "|clean(n=" + std::to_string(take) + ",seed=" + std::to_string(seed) + ")";
  for (auto i : qualifying) sel.data.examples.push_back(ds.examples[i]);
  sel.source_indices = std::move(qualifying);
  return sel;
}

}  // namespace fzt
