#pragma once

#include "fuzztune/autodiff.hpp"
#include "fuzztune/losses.hpp"

namespace fzt {

struct LossGradient {
  Tensor logits;
  double loss = 0.0;
  Tensor input_grad;
};

/// Loss at x and its input gradient in one forward/backward pair.
inline LossGradient loss_input_gradient(const Model& model, const LossSpec& loss, const Tensor& x, std::size_t label,
                                        const BackwardOptions& opts = {}) {
  auto [logits, tape] = forward(model, x);
  const double value = loss_value(loss, logits.values(), label);
  const Tensor g(loss_logit_grad(loss, logits.values(), label));
  Tensor grad = backward_to_input(tape, g, opts);
  return {std::move(logits), value, std::move(grad)};
}

/// dL/df_k: gradient of the loss with respect to the activations at `tap`.
inline Tensor loss_feature_gradient(const Model& model, const LossSpec& loss, const Tensor& x, std::size_t label,
                                    std::size_t tap) {
  auto fwd = forward_features(model, x, tap);
  const Tensor logits = continue_forward(fwd.tape);
  const Tensor g(loss_logit_grad(loss, logits.values(), label));
  BackwardOptions opts;
  opts.stop_layer = tap;
  Tensor out = backward_from_end(fwd.tape, g, opts);
  return out;
}

struct FeatureObjective {
  Tensor features;
  double value = 0.0;
  Tensor input_grad;
};

/// sum(delta * f_k(x)) and its input gradient.
inline FeatureObjective feature_objective_gradient(const Model& model, const Tensor& delta, const Tensor& x,
                                                   std::size_t tap) {
  auto fwd = forward_features(model, x, tap);
  const double value = fia_loss(delta, fwd.output);
  Tensor grad = backward_from_end(fwd.tape, delta.reshaped({delta.size()}));
  return {std::move(fwd.output), value, std::move(grad)};
}

}  // namespace fzt
