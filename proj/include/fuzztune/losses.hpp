#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuzztune/error.hpp"
#include "fuzztune/tensor.hpp"

namespace fzt {

/// FIA is the logit loss L = z_o; feature-level attacks use it as the source
/// of their aggregate gradient.
enum class LossFamily { CE, CCE, TCE, FCE, RCE, FIA };

inline const char* to_string(LossFamily f) {
  switch (f) {
    case LossFamily::CE: return "CE";
    case LossFamily::CCE: return "CCE";
    case LossFamily::TCE: return "TCE";
    case LossFamily::FCE: return "FCE";
    case LossFamily::RCE: return "RCE";
    case LossFamily::FIA: return "FIA";
  }
  return "?";
}

inline LossFamily loss_family_from_string(std::string_view s) {
  for (auto f : {LossFamily::CE, LossFamily::CCE, LossFamily::TCE, LossFamily::FCE, LossFamily::RCE, LossFamily::FIA})
    if (s == to_string(f)) return f;
  throw Error(ErrorCode::InvalidArgument, "unknown loss family '" + std::string(s) + "'");
}

/// Loss selector. K is the confidence scale applied to the ground-truth
/// logit, T the temperature dividing all logits. CE ignores both, CCE ignores
/// T, TCE ignores K. With `target` set the loss is evaluated against the
/// target label instead of the ground truth.
struct LossSpec {
  LossFamily family = LossFamily::CE;
  double K = 1.0;
  double T = 1.0;
  std::optional<std::size_t> target;

  static LossSpec ce() { return {}; }
  static LossSpec cce(double k) { return {LossFamily::CCE, k, 1.0, {}}; }
  static LossSpec tce(double t) { return {LossFamily::TCE, 1.0, t, {}}; }
  static LossSpec fce(double k, double t) { return {LossFamily::FCE, k, t, {}}; }
  static LossSpec rce() { return {LossFamily::RCE, 1.0, 1.0, {}}; }
  static LossSpec fia_logit() { return {LossFamily::FIA, 1.0, 1.0, {}}; }

  LossSpec targeted(std::size_t label) const {
    LossSpec s = *this;
    s.target = label;
    return s;
  }

  void validate() const {
    require(std::isfinite(K) && K > 0.0, ErrorCode::InvalidArgument, "K must be > 0");
    require(std::isfinite(T) && T > 0.0, ErrorCode::InvalidArgument, "T must be > 0");
  }

  double confidence_scale() const {
    return (family == LossFamily::CCE || family == LossFamily::FCE) ? K : 1.0;
  }
  double temperature() const { return (family == LossFamily::TCE || family == LossFamily::FCE) ? T : 1.0; }

  /// K and T as reported in result tables.
  std::pair<double, double> reported_kt() const { return {confidence_scale(), temperature()}; }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

namespace detail {

inline void check_logits(std::span<const double> z, std::size_t o) {
  require(z.size() >= 2, ErrorCode::ShapeMismatch, "logit vector needs at least two classes");
  require(o < z.size(), ErrorCode::LabelOutOfRange, "label " + std::to_string(o) + " out of range");
  for (double v : z) require(std::isfinite(v), ErrorCode::NonFinite, "logit is not finite");
}

inline double log_sum_exp(std::span<const double> u) {
  double m = u[0];
  for (double v : u) m = std::max(m, v);
  double s = 0.0;
  for (double v : u) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> u) {
  double m = u[0];
  for (double v : u) m = std::max(m, v);
  std::vector<double> p(u.size());
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (p[i] = std::exp(u[i] - m));
  for (auto& v : p) v /= s;
  return p;
}

// 1 - p[o] without the cancellation when p[o] is close to 1.
inline double sum_except(const std::vector<double>& p, std::size_t o) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (i != o) s += p[i];
  return s;
}

inline std::size_t loss_label(const LossSpec& spec, std::size_t o, std::size_t classes) {
  if (!spec.target) return o;
  require(*spec.target < classes, ErrorCode::LabelOutOfRange, "target label out of range");
  return *spec.target;
}

}  // namespace detail

/// Confidence scaling: multiplies the logit at `o` by K.
inline std::vector<double> csm(std::span<const double> z, std::size_t o, double K) {
  require(K > 0.0, ErrorCode::InvalidArgument, "K must be > 0");
  detail::check_logits(z, o);
  std::vector<double> out(z.begin(), z.end());
  out[o] = K * z[o];
  return out;
}

/// Temperature scaling: divides every logit by T.
inline std::vector<double> tsm(std::span<const double> z, double T) {
  require(T > 0.0, ErrorCode::InvalidArgument, "T must be > 0");
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / T;
  return out;
}

inline std::vector<double> softmax(std::span<const double> z) { return detail::softmax(z); }

/// softmax(tsm(csm(z, K), T)), max-shifted.
inline std::vector<double> fsoftmax(std::span<const double> z, std::size_t o, double T, double K) {
  return detail::softmax(tsm(csm(z, o, K), T));
}

/// Cross-entropy -log softmax(z)_c, natural log.
inline double cross_entropy(std::span<const double> z, std::size_t c) {
  detail::check_logits(z, c);
  return detail::log_sum_exp(z) - z[c];
}

/// Scalar loss for label `o` (replaced by the target label in target mode).
inline double loss_value(const LossSpec& spec, std::span<const double> z, std::size_t o) {
  spec.validate();
  detail::check_logits(z, o);
  const auto label = detail::loss_label(spec, o, z.size());
  switch (spec.family) {
    case LossFamily::CE:
      return cross_entropy(z, label);
    case LossFamily::CCE:
    case LossFamily::TCE:
    case LossFamily::FCE: {
      const auto u = tsm(csm(z, label, spec.confidence_scale()), spec.temperature());
      return detail::log_sum_exp(u) - u[label];
    }
    case LossFamily::RCE: {
      double mean_ce = 0.0;
      for (std::size_t c = 0; c < z.size(); ++c) mean_ce += cross_entropy(z, c);
      return cross_entropy(z, label) - mean_ce / static_cast<double>(z.size());
    }
    case LossFamily::FIA:
      return z[label];
  }
  return 0.0;
}

/// Closed-form dL/dz.
inline std::vector<double> loss_logit_grad(const LossSpec& spec, std::span<const double> z, std::size_t o) {
  spec.validate();
  detail::check_logits(z, o);
  const auto label = detail::loss_label(spec, o, z.size());
  const auto C = z.size();
  std::vector<double> g(C);
  switch (spec.family) {
    case LossFamily::CE: {
      g = detail::softmax(z);
      g[label] = -detail::sum_except(g, label);
      break;
    }
    case LossFamily::CCE:
    case LossFamily::TCE:
    case LossFamily::FCE: {
      const double K = spec.confidence_scale();
      const double T = spec.temperature();
      const auto p = detail::softmax(tsm(csm(z, label, K), T));
      for (std::size_t i = 0; i < C; ++i) g[i] = p[i] / T;
      g[label] = -(K / T) * detail::sum_except(p, label);
      break;
    }
    case LossFamily::RCE: {
      const double inv = 1.0 / static_cast<double>(C);
      for (auto& v : g) v = inv;
      g[label] = -static_cast<double>(C - 1) * inv;
      break;
    }
    case LossFamily::FIA:
      g[label] = 1.0;
      break;
  }
  return g;
}

/// Share of the ground-truth term in the gradient's absolute weight:
/// |g_o| / (|g_o| + sum_{i != o} |g_i|). Equals K/(K+1) for CCE and FCE and
/// 1/2 for TCE regardless of z.
inline double weight_ratio(const LossSpec& spec, std::span<const double> z, std::size_t o) {
  require(spec.family == LossFamily::CCE || spec.family == LossFamily::TCE || spec.family == LossFamily::FCE,
          ErrorCode::InvalidArgument, std::string("weight_ratio undefined for ") + to_string(spec.family));
  const auto g = loss_logit_grad(spec, z, o);
  const auto label = detail::loss_label(spec, o, z.size());
  double rest = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (i != label) rest += std::abs(g[i]);
  return std::abs(g[label]) / (std::abs(g[label]) + rest);
}

/// Logit of the ground-truth class.
inline double fuzziness(std::span<const double> z, std::size_t o) {
  require(o < z.size(), ErrorCode::LabelOutOfRange, "label out of range");
  return z[o];
}

/// sum(delta * features); feature-level attacks minimise it.
inline double fia_loss(const Tensor& delta, const Tensor& features) {
  require_same_size(delta, features, "fia_loss");
  return dot(delta.values(), features.values());
}

}  // namespace fzt
