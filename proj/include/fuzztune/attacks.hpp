#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fuzztune/objective.hpp"
#include "fuzztune/rng.hpp"

namespace fzt {

enum class AttackFamily { FGSM, IFGSM, MIFGSM, NIFGSM, SINIFGSM, VMIFGSM, DIFGSM, FIA, SGM };

inline const char* to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::FGSM: return "FGSM";
    case AttackFamily::IFGSM: return "I-FGSM";
    case AttackFamily::MIFGSM: return "MI-FGSM";
    case AttackFamily::NIFGSM: return "NI-FGSM";
    case AttackFamily::SINIFGSM: return "SINI-FGSM";
    case AttackFamily::VMIFGSM: return "VMI-FGSM";
    case AttackFamily::DIFGSM: return "DI-FGSM";
    case AttackFamily::FIA: return "FIA";
    case AttackFamily::SGM: return "SGM";
  }
  return "?";
}

inline AttackFamily attack_family_from_string(std::string_view s) {
  for (auto f : {AttackFamily::FGSM, AttackFamily::IFGSM, AttackFamily::MIFGSM, AttackFamily::NIFGSM,
                 AttackFamily::SINIFGSM, AttackFamily::VMIFGSM, AttackFamily::DIFGSM, AttackFamily::FIA,
                 AttackFamily::SGM}) {
    std::string name = to_string(f), compact;
    for (char c : name)
      if (c != '-') compact += c;
    if (s == name || s == compact) return f;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown attack family '" + std::string(s) + "'");
}

/// Hyper-parameters for every family; each family reads only its own fields.
struct AttackSpec {
  AttackFamily family = AttackFamily::MIFGSM;
  double eps = 8.0 / 255.0;
  double alpha = 0.8 / 255.0;
  std::size_t num_steps = 10;
  double mu = 1.0;
  double beta = 1.5;
  std::size_t n_vmi = 20;
  std::size_t m_scales = 5;
  double resize_rate = 0.9;
  double diversity_prob = 0.5;
  double p_d = 0.3;
  std::size_t n_fia = 30;
  double gamma = 0.2;
  std::optional<std::size_t> layer_k;
  std::uint64_t seed = 0;

  /// Defaults used throughout the experiments: eps = 8/255, ten steps of
  /// 0.8/255, momentum 1 for the momentum-based families.
  static AttackSpec defaults(AttackFamily family) {
    AttackSpec s;
    s.family = family;
    if (family == AttackFamily::DIFGSM || family == AttackFamily::IFGSM || family == AttackFamily::FGSM) s.mu = 0.0;
    return s;
  }

  void validate() const {
    require(std::isfinite(eps) && eps > 0.0, ErrorCode::InvalidArgument, "eps must be > 0");
    require(std::isfinite(alpha) && alpha > 0.0, ErrorCode::InvalidArgument, "alpha must be > 0");
    require(num_steps >= 1, ErrorCode::InvalidArgument, "num_steps must be >= 1");
    require(mu >= 0.0, ErrorCode::InvalidArgument, "mu must be >= 0");
    require(beta >= 0.0, ErrorCode::InvalidArgument, "beta must be >= 0");
    require(p_d >= 0.0 && p_d < 1.0, ErrorCode::InvalidArgument, "p_d must lie in [0, 1)");
    require(gamma > 0.0 && gamma <= 1.0, ErrorCode::InvalidArgument, "gamma must lie in (0, 1]");
    require(diversity_prob >= 0.0 && diversity_prob <= 1.0, ErrorCode::InvalidArgument,
            "diversity_prob must lie in [0, 1]");
    require(resize_rate > 0.0 && resize_rate <= 1.0, ErrorCode::InvalidArgument, "resize_rate must lie in (0, 1]");
    require(n_vmi >= 1 && m_scales >= 1 && n_fia >= 1, ErrorCode::InvalidArgument, "sample counts must be >= 1");
  }
};

struct TraceStep {
  Tensor x;
  double fuzziness = 0.0;
  double loss = 0.0;
  double linf = 0.0;
};

/// steps[0] is the clean input; steps[t] the iterate after update t.
struct AttackTrace {
  std::vector<TraceStep> steps;
  Tensor adversarial;
  std::size_t surrogate_prediction = 0;
  bool surrogate_success = false;
  bool fia_zero_norm = false;
};

/// Byte image of a trace, for exact equality checks.
inline std::string trace_bytes(const AttackTrace& t) {
  std::string out;
  auto put = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  for (const auto& s : t.steps) {
    put(s.x.values().data(), s.x.size() * sizeof(double));
    put(&s.fuzziness, sizeof(double));
    put(&s.loss, sizeof(double));
    put(&s.linf, sizeof(double));
  }
  put(t.adversarial.values().data(), t.adversarial.size() * sizeof(double));
  put(&t.surrogate_prediction, sizeof t.surrogate_prediction);
  out.push_back(t.surrogate_success ? 1 : 0);
  out.push_back(t.fia_zero_norm ? 1 : 0);
  return out;
}

/// Membership in the eps-ball as the projection below realises it:
/// origin - eps <= v <= origin + eps componentwise, in floating point.
inline bool within_ball(std::span<const double> v, std::span<const double> origin, double eps) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v[i] >= origin[i] - eps && v[i] <= origin[i] + eps)) return false;
  return true;
}

/// Clamp to [origin - eps, origin + eps], then to [0, 1].
inline Tensor clip_project(const Tensor& candidate, const Tensor& origin, double eps) {
  require_same_size(candidate, origin, "clip_project");
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = std::clamp(out[i], origin[i] - eps, origin[i] + eps);
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

/// One draw of the diverse-input transform: bilinear downscale of an
/// H x H image to s x s, pasted at (row, col) into a zero H x H canvas. Being
/// linear, it also maps gradients back through its transpose.
class DiverseInput {
 public:
  static DiverseInput draw(std::size_t side, double resize_rate, double diversity_prob, Rng& rng) {
    require(side >= 4, ErrorCode::InvalidArgument, "image side must be >= 4 for diverse inputs");
    require(resize_rate > 0.0 && resize_rate <= 1.0, ErrorCode::InvalidArgument, "resize_rate must lie in (0, 1]");
    DiverseInput t;
    t.side_ = side;
    t.resized_ = side;
    if (!rng.bernoulli(diversity_prob)) return t;
    t.fired_ = true;
    const auto lo = static_cast<std::size_t>(std::ceil(resize_rate * static_cast<double>(side)));
    const auto min_side = std::clamp<std::size_t>(lo, 1, side);
    t.resized_ = min_side + rng.index(side - min_side + 1);
    const auto slack = side - t.resized_;
    t.row_ = rng.index(slack + 1);
    t.col_ = rng.index(slack + 1);
    return t;
  }

  bool fired() const noexcept { return fired_; }
  std::size_t resized_side() const noexcept { return resized_; }
  std::size_t row_offset() const noexcept { return row_; }
  std::size_t col_offset() const noexcept { return col_; }

  Tensor apply(const Tensor& img) const {
    check(img);
    if (!fired_) return img;
    const auto taps = axis_taps();
    std::vector<double> out(side_ * side_, 0.0);
    const auto in = img.values();
    for (std::size_t r = 0; r < resized_; ++r)
      for (std::size_t c = 0; c < resized_; ++c) {
        double v = 0.0;
        for (const auto& [ri, rw] : taps[r])
          for (const auto& [ci, cw] : taps[c]) v += rw * cw * in[ri * side_ + ci];
        out[(r + row_) * side_ + (c + col_)] = v;
      }
    return Tensor(img.shape(), std::move(out));
  }

  /// Adjoint of apply().
  Tensor apply_transpose(const Tensor& grad) const {
    check(grad);
    if (!fired_) return grad;
    const auto taps = axis_taps();
    std::vector<double> out(side_ * side_, 0.0);
    const auto g = grad.values();
    for (std::size_t r = 0; r < resized_; ++r)
      for (std::size_t c = 0; c < resized_; ++c) {
        const double gv = g[(r + row_) * side_ + (c + col_)];
        for (const auto& [ri, rw] : taps[r])
          for (const auto& [ci, cw] : taps[c]) out[ri * side_ + ci] += rw * cw * gv;
      }
    return Tensor(grad.shape(), std::move(out));
  }

 private:
  using Taps = std::vector<std::pair<std::size_t, double>>;

  void check(const Tensor& img) const {
    require(img.rank() == 2 && img.shape()[0] == side_ && img.shape()[1] == side_, ErrorCode::ShapeMismatch,
            "diverse-input transform expects a " + std::to_string(side_) + "x" + std::to_string(side_) + " image");
  }

  // Half-pixel-centre bilinear sampling along one axis.
  std::vector<Taps> axis_taps() const {
    std::vector<Taps> taps(resized_);
    const double scale = static_cast<double>(side_) / static_cast<double>(resized_);
    for (std::size_t i = 0; i < resized_; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(side_ - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const auto i1 = std::min(i0 + 1, side_ - 1);
      const double w1 = src - static_cast<double>(i0);
      taps[i].push_back({i0, 1.0 - w1});
      if (w1 > 0.0) taps[i].push_back({i1, w1});
    }
    return taps;
  }

  std::size_t side_ = 0;
  std::size_t resized_ = 0;
  std::size_t row_ = 0;
  std::size_t col_ = 0;
  bool fired_ = false;
};

/// Random resize-and-pad of a square image (identity with probability
/// 1 - diversity_prob).
inline Tensor di_transform(const Tensor& img, double resize_rate, double diversity_prob, Rng& rng) {
  require(img.rank() == 2 && img.shape()[0] == img.shape()[1], ErrorCode::ShapeMismatch,
          "di_transform expects a square image");
  return DiverseInput::draw(img.shape()[0], resize_rate, diversity_prob, rng).apply(img);
}

struct FiaWeights {
  Tensor delta;
  bool zero_norm = false;
};

/// Aggregate feature weights at tap `layer_k`: the sum over `n_fia` random
/// pixel-drop masks of dL/df_k(x * M), divided by its L2 norm.
///
/// With the FIA (logit) loss this is the importance of features for z_o.
/// With any other loss the weights are the negated loss gradient, so that
/// minimising sum(delta * f_k) still ascends the loss.
inline FiaWeights fia_aggregate_gradient(const Model& surrogate, const LossSpec& loss, const Tensor& x,
                                         std::size_t y_o, std::size_t layer_k, double p_d, std::size_t n_fia,
                                         Rng& rng) {
  require(p_d >= 0.0 && p_d < 1.0, ErrorCode::InvalidArgument, "p_d must lie in [0, 1)");
  require(n_fia >= 1, ErrorCode::InvalidArgument, "n_fia must be >= 1");
  require(layer_k < surrogate.tap_count(), ErrorCode::InvalidArgument, "invalid feature tap");
  const double sign_factor = loss.family == LossFamily::FIA ? 1.0 : -1.0;
  std::vector<double> sum(surrogate.tap_dim(layer_k), 0.0);
  for (std::size_t n = 0; n < n_fia; ++n) {
    Tensor masked = x;
    for (auto& v : masked.values()) v = rng.bernoulli(1.0 - p_d) ? v : 0.0;
    const Tensor g = loss_feature_gradient(surrogate, loss, masked, y_o, layer_k);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += sign_factor * g[i];
  }
  const double norm = l2_norm(sum);
  if (!(norm > 0.0)) return {Tensor::zeros({sum.size()}), true};
  for (auto& v : sum) v /= norm;
  return {Tensor(std::move(sum)), false};
}

namespace detail {

inline void require_finite_gradient(const Tensor& g, const char* where) {
  require(g.all_finite(), ErrorCode::NumericalFailure, std::string("non-finite gradient in ") + where);
}

/// g <- mu * g + grad / ||grad||_1; a zero gradient contributes nothing.
inline void accumulate_momentum(std::vector<double>& g, const Tensor& grad, double mu) {
  const double l1 = l1_norm(grad.values());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mu * g[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);
}

inline Tensor sign_step(const Tensor& x, std::span<const double> direction, double step, const Tensor& origin,
                        double eps) {
  Tensor cand = x;
  for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += step * sign(direction[i]);
  return clip_project(cand, origin, eps);
}

}  // namespace detail

/// Runs one attack from clean input `x` with ground-truth label `y_o`.
/// Untargeted losses are ascended; a LossSpec with `target` is descended and
/// success means the surrogate predicts the target.
inline AttackTrace run_attack(const AttackSpec& atk, const LossSpec& loss, const Model& surrogate, const Tensor& x,
                              std::size_t y_o) {
  atk.validate();
  loss.validate();
  require(x.size() == surrogate.input_dim(), ErrorCode::ShapeMismatch, "input does not match surrogate");
  require(y_o < surrogate.class_count(), ErrorCode::LabelOutOfRange, "label out of range");
  for (double v : x.values()) require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument, "input outside [0,1]");
  const bool feature_attack = atk.family == AttackFamily::FIA;
  require(feature_attack || loss.family != LossFamily::FIA, ErrorCode::InvalidArgument,
          "the FIA logit loss is only meaningful for the FIA attack");
  require(!(feature_attack && loss.target), ErrorCode::InvalidArgument, "FIA supports untargeted mode only");
  if (atk.family == AttackFamily::DIFGSM)
    require(x.rank() == 2 && x.shape()[0] == x.shape()[1], ErrorCode::InvalidArgument,
            "DI-FGSM needs square image inputs");
  if (loss.target) require(*loss.target < surrogate.class_count(), ErrorCode::LabelOutOfRange, "target out of range");

  Rng rng(atk.seed);
  const double direction = loss.target ? -1.0 : 1.0;
  BackwardOptions bopts;
  if (atk.family == AttackFamily::SGM) bopts.residual_decay = atk.gamma;

  const auto tap = atk.layer_k.value_or(surrogate.default_feature_tap());
  FiaWeights fia;
  if (feature_attack) fia = fia_aggregate_gradient(surrogate, loss, x, y_o, tap, atk.p_d, atk.n_fia, rng);

  // Ascent direction of the attack objective at `point`.
  auto gradient = [&](const Tensor& point) {
    Tensor g = feature_attack ? feature_objective_gradient(surrogate, fia.delta, point, tap).input_grad
                              : loss_input_gradient(surrogate, loss, point, y_o, bopts).input_grad;
    detail::require_finite_gradient(g, to_string(atk.family));
    const double f = feature_attack ? -1.0 : direction;
    for (auto& v : g.values()) v *= f;
    return g;
  };

  AttackTrace trace;
  auto record = [&](const Tensor& point) {
    TraceStep s;
    s.x = point;
    const Tensor logits = forward(surrogate, point).output;
    s.fuzziness = fuzziness(logits.values(), y_o);
    s.loss = feature_attack ? fia_loss(fia.delta, forward_features(surrogate, point, tap).output)
                            : loss_value(loss, logits.values(), y_o);
    s.linf = linf_distance(point.values(), x.values());
    trace.steps.push_back(std::move(s));
  };

  Tensor adv = x;
  record(adv);
  std::vector<double> momentum(x.size(), 0.0);
  std::vector<double> variance(x.size(), 0.0);

  if (atk.family == AttackFamily::FGSM) {
    const Tensor g = gradient(x);
    adv = detail::sign_step(x, g.values(), atk.eps, x, atk.eps);
    record(adv);
  } else {
    for (std::size_t t = 0; t < atk.num_steps; ++t) {
      switch (atk.family) {
        case AttackFamily::IFGSM: {
          const Tensor g = gradient(adv);
          adv = detail::sign_step(adv, g.values(), atk.alpha, x, atk.eps);
          break;
        }
        case AttackFamily::MIFGSM:
        case AttackFamily::SGM:
        case AttackFamily::FIA: {
          detail::accumulate_momentum(momentum, gradient(adv), atk.mu);
          adv = detail::sign_step(adv, momentum, atk.alpha, x, atk.eps);
          break;
        }
        case AttackFamily::NIFGSM:
        case AttackFamily::SINIFGSM: {
          Tensor ahead = adv;
          for (std::size_t i = 0; i < ahead.size(); ++i) ahead[i] += atk.alpha * atk.mu * momentum[i];
          Tensor g = gradient(ahead);
          if (atk.family == AttackFamily::SINIFGSM) {
            std::vector<double> sum(x.size(), 0.0);
            double scale = 1.0;
            for (std::size_t i = 0; i < atk.m_scales; ++i, scale *= 0.5) {
              Tensor copy = ahead;
              for (auto& v : copy.values()) v *= scale;
              const Tensor gi = i == 0 ? g : gradient(copy);
              for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += gi[k];
            }
            for (std::size_t k = 0; k < sum.size(); ++k) g[k] = sum[k] / static_cast<double>(atk.m_scales);
          }
          detail::accumulate_momentum(momentum, g, atk.mu);
          adv = detail::sign_step(adv, momentum, atk.alpha, x, atk.eps);
          break;
        }
        case AttackFamily::VMIFGSM: {
          const Tensor here = gradient(adv);
          Tensor tuned = here;
          for (std::size_t i = 0; i < tuned.size(); ++i) tuned[i] += variance[i];
          detail::accumulate_momentum(momentum, tuned, atk.mu);
          // v_{t+1}: mean neighbourhood gradient minus the gradient at x_t,
          // accumulated as differences so r_i = 0 gives exactly zero.
          std::vector<double> next(x.size(), 0.0);
          const double radius = atk.beta * atk.eps;
          for (std::size_t n = 0; n < atk.n_vmi; ++n) {
            Tensor neighbour = adv;
            for (auto& v : neighbour.values()) v += rng.uniform(-radius, radius);
            const Tensor gn = gradient(neighbour);
            for (std::size_t i = 0; i < next.size(); ++i) next[i] += gn[i] - here[i];
          }
          for (std::size_t i = 0; i < next.size(); ++i) variance[i] = next[i] / static_cast<double>(atk.n_vmi);
          adv = detail::sign_step(adv, momentum, atk.alpha, x, atk.eps);
          break;
        }
        case AttackFamily::DIFGSM: {
          const auto t_in = DiverseInput::draw(x.shape()[0], atk.resize_rate, atk.diversity_prob, rng);
          const Tensor g = t_in.apply_transpose(gradient(t_in.apply(adv)));
          detail::accumulate_momentum(momentum, g, atk.mu);
          adv = detail::sign_step(adv, momentum, atk.alpha, x, atk.eps);
          break;
        }
        case AttackFamily::FGSM:
          break;
      }
      record(adv);
    }
  }

  trace.adversarial = adv;
  const auto logits = forward(surrogate, adv).output;
  trace.surrogate_prediction = argmax(logits.values());
  trace.surrogate_success = loss.target ? trace.surrogate_prediction == *loss.target : trace.surrogate_prediction != y_o;
  trace.fia_zero_norm = fia.zero_norm;
  return trace;
}

}  // namespace fzt
