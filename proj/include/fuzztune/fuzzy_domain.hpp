#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "fuzztune/attacks.hpp"

namespace fzt {

/// z_plus bounds the overfitting region (fuzziness below it), z_minus the
/// underfitting region (fuzziness above it). No ordering between them is
/// required.
struct FuzzyDomainConfig {
  double z_plus = 0.0;
  double z_minus = 0.0;
};

enum class Membership { Overfitting, Underfitting, Outside };

inline const char* to_string(Membership m) {
  switch (m) {
    case Membership::Overfitting: return "overfitting";
    case Membership::Underfitting: return "underfitting";
    case Membership::Outside: return "outside";
  }
  return "?";
}

struct DomainVerdict {
  Membership membership = Membership::Outside;
  double fuzziness = 0.0;
  bool in_ball = false;
  /// Both conditions held (only possible when z_minus < z_plus).
  bool ambiguous = false;
};

inline DomainVerdict classify(const Tensor& x_adv, const Tensor& x, double eps, double z_o,
                              const FuzzyDomainConfig& cfg) {
  require_same_size(x_adv, x, "classify");
  DomainVerdict v;
  v.fuzziness = z_o;
  v.in_ball = within_ball(x_adv.values(), x.values(), eps);
  if (!v.in_ball) return v;
  const bool over = z_o < cfg.z_plus;
  const bool under = z_o > cfg.z_minus;
  if (over) {
    v.membership = Membership::Overfitting;
    v.ambiguous = under;
  } else if (under) {
    v.membership = Membership::Underfitting;
  }
  return v;
}

/// Per-step mean fuzziness over traces of equal length.
inline std::vector<double> average_fuzziness(std::span<const AttackTrace> traces) {
  require(!traces.empty(), ErrorCode::InvalidArgument, "no traces to average");
  const auto steps = traces.front().steps.size();
  std::vector<double> curve(steps, 0.0);
  for (const auto& t : traces) {
    require(t.steps.size() == steps, ErrorCode::ShapeMismatch, "traces have different step counts");
    for (std::size_t s = 0; s < steps; ++s) curve[s] += t.steps[s].fuzziness;
  }
  for (auto& v : curve) v /= static_cast<double>(traces.size());
  return curve;
}

/// Linear-interpolated percentile, q in [0, 1].
inline double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::InvalidArgument, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Default thresholds: z+ at the 10th and z- at the 90th percentile of the
/// final fuzziness of a calibration batch of CE-attack traces.
inline FuzzyDomainConfig calibrate_thresholds(std::span<const AttackTrace> ce_traces, double lower_q = 0.1,
                                              double upper_q = 0.9) {
  std::vector<double> finals;
  for (const auto& t : ce_traces) finals.push_back(t.steps.back().fuzziness);
  return {percentile(finals, lower_q), percentile(finals, upper_q)};
}

/// arccos of the clamped cosine similarity. Zero vectors give angle 0.
inline double gradient_angle(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return std::acos(std::clamp(dot(a, b) / (na * nb), -1.0, 1.0));
}

struct AngleStats {
  double mean_angle = 0.0;
  std::size_t pairs = 0;
  std::size_t zero_gradient_pairs = 0;
};

/// Mean angle between input gradients of `loss` at pairs of points drawn
/// uniformly from the L-infinity ball of radius eps around x.
inline AngleStats gradient_angle_stats(const Model& model, const LossSpec& loss, const Tensor& x, std::size_t y_o,
                                       double eps, std::size_t pairs, Rng& rng) {
  require(pairs >= 1, ErrorCode::InvalidArgument, "pairs must be >= 1");
  require(eps >= 0.0, ErrorCode::InvalidArgument, "eps must be >= 0");
  AngleStats st;
  st.pairs = pairs;
  double total = 0.0;
  auto sample = [&]() {
    Tensor p = x;
    for (auto& v : p.values()) v += rng.uniform(-eps, eps);
    return loss_input_gradient(model, loss, p, y_o).input_grad;
  };
  for (std::size_t i = 0; i < pairs; ++i) {
    const Tensor g1 = sample();
    const Tensor g2 = sample();
    if (!(l2_norm(g1.values()) > 0.0) || !(l2_norm(g2.values()) > 0.0)) {
      ++st.zero_gradient_pairs;
      continue;
    }
    total += gradient_angle(g1.values(), g2.values());
  }
  st.mean_angle = total / static_cast<double>(pairs);
  return st;
}

}  // namespace fzt
