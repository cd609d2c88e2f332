#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuzztune/error.hpp"
#include "fuzztune/rng.hpp"
#include "fuzztune/tensor.hpp"

namespace fzt {

enum class ArchKind { Plain, Residual };

inline const char* to_string(ArchKind k) { return k == ArchKind::Plain ? "plain" : "residual"; }

inline ArchKind arch_kind_from_string(std::string_view s) {
  if (s == "plain") return ArchKind::Plain;
  if (s == "residual") return ArchKind::Residual;
  throw Error(ErrorCode::InvalidArgument, "unknown arch kind '" + std::string(s) + "'");
}

/// Plain: input -> [affine+relu per hidden width] -> affine head.
/// Residual: input -> affine+relu stem of width hidden_widths[0] ->
/// `residual_blocks` blocks (x + relu(W2 relu(W1 x + b1) + b2)) -> affine head.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
  ArchKind kind = ArchKind::Plain;
  std::vector<std::size_t> hidden_widths;
  std::size_t residual_blocks = 0;
  std::uint64_t seed = 0;

  void validate() const {
    require(input_dim >= 1, ErrorCode::InvalidArgument, "input_dim must be >= 1");
    require(class_count >= 2, ErrorCode::InvalidArgument, "class_count must be >= 2");
    for (auto w : hidden_widths) require(w >= 1, ErrorCode::InvalidArgument, "hidden widths must be >= 1");
    if (kind == ArchKind::Residual) {
      require(hidden_widths.size() == 1, ErrorCode::InvalidArgument,
              "residual arch takes exactly one hidden width (the block width)");
      require(residual_blocks >= 1, ErrorCode::InvalidArgument, "residual arch needs at least one block");
    } else {
      require(residual_blocks == 0, ErrorCode::InvalidArgument, "plain arch cannot have residual blocks");
    }
  }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

inline nlohmann::json to_json(const ArchSpec& a) {
  return nlohmann::json{{"input_dim", a.input_dim},   {"class_count", a.class_count},
                        {"kind", to_string(a.kind)},  {"hidden_widths", a.hidden_widths},
                        {"residual_blocks", a.residual_blocks}, {"seed", a.seed}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  try {
    ArchSpec a;
    a.input_dim = j.at("input_dim").get<std::size_t>();
    a.class_count = j.at("class_count").get<std::size_t>();
    a.kind = arch_kind_from_string(j.at("kind").get<std::string>());
    a.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    a.residual_blocks = j.value("residual_blocks", std::size_t{0});
    a.seed = j.value("seed", std::uint64_t{0});
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("arch spec: ") + e.what());
  }
}

/// Sorted keys, no whitespace.
inline std::string canonical_json(const ArchSpec& a) { return to_json(a).dump(); }

/// y = W x + b with W stored [out, in].
struct Affine {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }

  void apply(std::span<const double> x, std::span<double> y) const {
    const auto in = in_dim();
    const auto w = weight.values();
    for (std::size_t o = 0; o < out_dim(); ++o) {
      double s = bias[o];
      const double* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
      y[o] = s;
    }
  }

  /// gx = W^T gy
  void apply_transpose(std::span<const double> gy, std::span<double> gx) const {
    const auto in = in_dim();
    const auto w = weight.values();
    std::fill(gx.begin(), gx.end(), 0.0);
    for (std::size_t o = 0; o < out_dim(); ++o) {
      const double g = gy[o];
      const double* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * g;
    }
  }
};

enum class StageKind { Linear, LinearRelu, Residual };

/// One tap-to-tap segment of the network. `second` is used only by residual
/// stages.
struct Stage {
  StageKind kind = StageKind::Linear;
  std::string name;
  Affine first;
  Affine second;

  std::size_t in_dim() const { return first.in_dim(); }
  std::size_t out_dim() const { return kind == StageKind::Residual ? second.out_dim() : first.out_dim(); }
};

struct NamedParameter {
  std::string name;
  const Tensor* tensor;
};

/// Ordered stack of stages. Tap 0 is the input; tap i (1..stage_count) is the
/// output of stage i-1; the last tap is the logits.
class Model {
 public:
  Model(ArchSpec arch, std::vector<Stage> stages) : arch_(std::move(arch)), stages_(std::move(stages)) {
    arch_.validate();
    check_consistency();
  }

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }
  std::size_t input_dim() const noexcept { return arch_.input_dim; }
  std::size_t class_count() const noexcept { return arch_.class_count; }
  std::size_t tap_count() const noexcept { return stages_.size() + 1; }
  std::size_t output_tap() const noexcept { return stages_.size(); }

  /// Tap used by feature-level attacks: the middle residual block output
  /// (or middle hidden layer of a plain net).
  std::size_t default_feature_tap() const {
    if (arch_.kind == ArchKind::Residual) return 1 + (arch_.residual_blocks + 1) / 2;
    const auto hidden = arch_.hidden_widths.size();
    return hidden == 0 ? 0 : (hidden + 1) / 2;
  }

  std::size_t tap_dim(std::size_t tap) const {
    require(tap < tap_count(), ErrorCode::InvalidArgument, "tap index " + std::to_string(tap) + " out of range");
    return tap == 0 ? arch_.input_dim : stages_[tap - 1].out_dim();
  }

  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out;
    for (const auto& s : stages_) {
      if (s.kind == StageKind::Residual) {
        out.push_back({s.name + ".fc1.weight", &s.first.weight});
        out.push_back({s.name + ".fc1.bias", &s.first.bias});
        out.push_back({s.name + ".fc2.weight", &s.second.weight});
        out.push_back({s.name + ".fc2.bias", &s.second.bias});
      } else {
        out.push_back({s.name + ".weight", &s.first.weight});
        out.push_back({s.name + ".bias", &s.first.bias});
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  const Tensor& parameter(std::string_view name) const {
    for (const auto& p : parameters())
      if (p.name == name) return *p.tensor;
    throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
  }

  /// Replaces a parameter; the new tensor must keep the old shape.
  void set_parameter(std::string_view name, Tensor value) {
    Tensor& slot = mutable_parameter(name);
    require(slot.shape() == value.shape(), ErrorCode::ArchMismatch,
            "parameter '" + std::string(name) + "' expects shape " + shape_string(slot.shape()));
    require(value.all_finite(), ErrorCode::NonFinite, "parameter '" + std::string(name) + "' is not finite");
    slot = std::move(value);
  }

  Tensor& mutable_parameter(std::string_view name) {
    for (auto& s : stages_) {
      if (s.kind == StageKind::Residual) {
        if (name == s.name + ".fc1.weight") return s.first.weight;
        if (name == s.name + ".fc1.bias") return s.first.bias;
        if (name == s.name + ".fc2.weight") return s.second.weight;
        if (name == s.name + ".fc2.bias") return s.second.bias;
      } else {
        if (name == s.name + ".weight") return s.first.weight;
        if (name == s.name + ".bias") return s.first.bias;
      }
    }
    throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
  }

  std::vector<Stage>& mutable_stages() noexcept { return stages_; }

 private:
  void check_consistency() const {
    require(!stages_.empty(), ErrorCode::ArchMismatch, "model has no stages");
    std::size_t width = arch_.input_dim;
    auto check_affine = [&](const Affine& a, std::size_t in, const std::string& where) {
      require(a.weight.rank() == 2 && a.weight.shape()[1] == in, ErrorCode::ArchMismatch,
              where + ": weight shape " + shape_string(a.weight.shape()) + " does not accept width " +
                  std::to_string(in));
      require(a.bias.rank() == 1 && a.bias.size() == a.weight.shape()[0], ErrorCode::ArchMismatch,
              where + ": bias length disagrees with weight rows");
      require(a.weight.all_finite() && a.bias.all_finite(), ErrorCode::NonFinite, where + ": non-finite parameter");
    };
    for (const auto& s : stages_) {
      check_affine(s.first, width, s.name);
      if (s.kind == StageKind::Residual) {
        check_affine(s.second, s.first.out_dim(), s.name);
        require(s.second.out_dim() == width, ErrorCode::ArchMismatch, s.name + ": residual branch changes width");
      }
      width = s.out_dim();
    }
    require(width == arch_.class_count, ErrorCode::ArchMismatch, "model output width disagrees with class_count");
    require(stages_.back().kind == StageKind::Linear, ErrorCode::ArchMismatch, "last stage must be a linear head");
  }

  ArchSpec arch_;
  std::vector<Stage> stages_;
};

namespace detail {

inline Affine make_affine(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  return Affine{Tensor({out, in}, std::move(w)), Tensor::zeros({out})};
}

}  // namespace detail

/// Glorot-uniform weights and zero biases, drawn from `arch.seed` in stage
/// order.
inline Model build_model(const ArchSpec& arch) {
  arch.validate();
  Rng rng(arch.seed);
  std::vector<Stage> stages;
  std::size_t width = arch.input_dim;
  if (arch.kind == ArchKind::Plain) {
    for (std::size_t i = 0; i < arch.hidden_widths.size(); ++i) {
      const auto w = arch.hidden_widths[i];
      stages.push_back(Stage{StageKind::LinearRelu, "fc" + std::to_string(i), detail::make_affine(width, w, rng), {}});
      width = w;
    }
  } else {
    const auto w = arch.hidden_widths.front();
    stages.push_back(Stage{StageKind::LinearRelu, "stem", detail::make_affine(width, w, rng), {}});
    width = w;
    for (std::size_t b = 0; b < arch.residual_blocks; ++b) {
      auto fc1 = detail::make_affine(w, w, rng);
      auto fc2 = detail::make_affine(w, w, rng);
      stages.push_back(Stage{StageKind::Residual, "block" + std::to_string(b), std::move(fc1), std::move(fc2)});
    }
  }
  stages.push_back(Stage{StageKind::Linear, "head", detail::make_affine(width, arch.class_count, rng), {}});
  return Model(arch, std::move(stages));
}

}  // namespace fzt
