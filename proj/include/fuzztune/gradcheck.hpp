#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "fuzztune/objective.hpp"

namespace fzt {

/// Central-difference check of the analytic input gradient of `loss` at
/// `input`. Returns max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8).
///
/// For the FIA family the checked scalar is sum(delta * f_k(x)) with delta
/// fixed to dz_o/df_k at `input` and k the model's default feature tap.
inline double finite_diff_check(const Model& model, const LossSpec& loss, const Tensor& input, std::size_t label,
                                double h = 1e-5, const BackwardOptions& opts = {}) {
  std::function<double(const Tensor&)> scalar;
  Tensor analytic;
  if (loss.family == LossFamily::FIA) {
    const auto tap = model.default_feature_tap();
    const Tensor delta = loss_feature_gradient(model, loss, input, label, tap);
    analytic = feature_objective_gradient(model, delta, input, tap).input_grad;
    scalar = [&model, delta, tap](const Tensor& x) {
      return fia_loss(delta, forward_features(model, x, tap).output.reshaped({delta.size()}));
    };
  } else {
    analytic = loss_input_gradient(model, loss, input, label, opts).input_grad;
    scalar = [&model, &loss, label](const Tensor& x) {
      return loss_value(loss, forward(model, x).output.values(), label);
    };
  }

  double worst = 0.0;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double orig = input[i];
    probe[i] = orig + h;
    const double up = scalar(probe);
    probe[i] = orig - h;
    const double down = scalar(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace fzt
