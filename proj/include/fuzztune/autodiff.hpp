#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "fuzztune/model.hpp"

namespace fzt {

/// `residual_decay` scales the gradient flowing back through every residual
/// branch F in out = x + F(x); the skip path is untouched. `stop_layer`, when
/// set, ends the backward pass at that tap and returns the gradient there.
struct BackwardOptions {
  double residual_decay = 1.0;
  std::optional<std::size_t> stop_layer;

  void validate() const {
    require(residual_decay > 0.0 && residual_decay <= 1.0, ErrorCode::InvalidArgument,
            "residual_decay must lie in (0, 1]");
  }
};

/// Cached pre-activations of one forward pass. Single use: one backward per
/// forward.
class Tape {
 public:
  const Model& model() const { return *model_; }
  std::size_t end_tap() const noexcept { return caches_.size(); }
  bool at_logits() const noexcept { return end_tap() == model_->output_tap(); }
  bool used() const noexcept { return used_; }
  const Shape& input_shape() const noexcept { return input_shape_; }

 private:
  struct StageCache {
    std::vector<double> pre1;
    std::vector<double> pre2;
  };

  explicit Tape(const Model& model, Shape input_shape) : model_(&model), input_shape_(std::move(input_shape)) {}

  const Model* model_;
  Shape input_shape_;
  std::vector<StageCache> caches_;
  std::vector<double> current_;
  bool used_ = false;

  friend struct TapeAccess;
};

struct ForwardResult {
  Tensor output;
  Tape tape;
};

struct TapeAccess {
  static Tape make(const Model& m, Shape s) { return Tape(m, std::move(s)); }

  static void run_stage(Tape& tape, const Stage& stage) {
    Tape::StageCache cache;
    const auto& x = tape.current_;
    std::vector<double> y;
    switch (stage.kind) {
      case StageKind::Linear:
        y.resize(stage.first.out_dim());
        stage.first.apply(x, y);
        break;
      case StageKind::LinearRelu:
        cache.pre1.resize(stage.first.out_dim());
        stage.first.apply(x, cache.pre1);
        y.resize(cache.pre1.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = cache.pre1[i] > 0.0 ? cache.pre1[i] : 0.0;
        break;
      case StageKind::Residual: {
        cache.pre1.resize(stage.first.out_dim());
        stage.first.apply(x, cache.pre1);
        std::vector<double> h(cache.pre1.size());
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = cache.pre1[i] > 0.0 ? cache.pre1[i] : 0.0;
        cache.pre2.resize(stage.second.out_dim());
        stage.second.apply(h, cache.pre2);
        y.resize(x.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + (cache.pre2[i] > 0.0 ? cache.pre2[i] : 0.0);
        break;
      }
    }
    tape.caches_.push_back(std::move(cache));
    tape.current_ = std::move(y);
  }

  static void advance_to(Tape& tape, std::size_t tap) {
    const auto& stages = tape.model_->stages();
    while (tape.caches_.size() < tap) run_stage(tape, stages[tape.caches_.size()]);
  }

  static std::vector<double>& current(Tape& tape) { return tape.current_; }

  static std::vector<double> backward(Tape& tape, std::vector<double> grad, std::size_t stop, double decay) {
    require(!tape.used_, ErrorCode::TapeReused, "backward already ran on this tape");
    tape.used_ = true;
    const auto& stages = tape.model_->stages();
    for (std::size_t s = tape.caches_.size(); s-- > stop;) {
      const Stage& stage = stages[s];
      const auto& cache = tape.caches_[s];
      std::vector<double> gx(stage.in_dim());
      switch (stage.kind) {
        case StageKind::Linear:
          stage.first.apply_transpose(grad, gx);
          break;
        case StageKind::LinearRelu:
          for (std::size_t i = 0; i < grad.size(); ++i)
            if (!(cache.pre1[i] > 0.0)) grad[i] = 0.0;
          stage.first.apply_transpose(grad, gx);
          break;
        case StageKind::Residual: {
          std::vector<double> g2(grad.size());
          for (std::size_t i = 0; i < grad.size(); ++i) {
            double g = decay == 1.0 ? grad[i] : decay * grad[i];
            g2[i] = cache.pre2[i] > 0.0 ? g : 0.0;
          }
          std::vector<double> g1(stage.second.in_dim());
          stage.second.apply_transpose(g2, g1);
          for (std::size_t i = 0; i < g1.size(); ++i)
            if (!(cache.pre1[i] > 0.0)) g1[i] = 0.0;
          stage.first.apply_transpose(g1, gx);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[i];
          break;
        }
      }
      grad = std::move(gx);
    }
    return grad;
  }
};

namespace detail {

inline Tape start_tape(const Model& model, const Tensor& input) {
  require(input.size() == model.input_dim(), ErrorCode::ShapeMismatch,
          "input " + shape_string(input.shape()) + " does not match model input_dim " +
              std::to_string(model.input_dim()));
  require(input.all_finite(), ErrorCode::NonFinite, "input contains NaN or Inf");
  Tape tape = TapeAccess::make(model, input.shape());
  TapeAccess::current(tape) = input.vec();
  return tape;
}

}  // namespace detail

/// Runs the full network; the returned tape supports one backward pass.
inline ForwardResult forward(const Model& model, const Tensor& input) {
  Tape tape = detail::start_tape(model, input);
  TapeAccess::advance_to(tape, model.output_tap());
  Tensor logits(TapeAccess::current(tape));
  return {std::move(logits), std::move(tape)};
}

/// Runs the network up to tap `layer_k` and returns the activations there.
inline ForwardResult forward_features(const Model& model, const Tensor& input, std::size_t layer_k) {
  require(layer_k < model.tap_count(), ErrorCode::InvalidArgument,
          "layer index " + std::to_string(layer_k) + " is not a tap point (model has " +
              std::to_string(model.tap_count()) + ")");
  Tape tape = detail::start_tape(model, input);
  TapeAccess::advance_to(tape, layer_k);
  Tensor features = layer_k == 0 ? input : Tensor(TapeAccess::current(tape));
  return {std::move(features), std::move(tape)};
}

/// Extends a feature tape through the remaining stages and returns the logits.
inline Tensor continue_forward(Tape& tape) {
  require(!tape.used(), ErrorCode::TapeReused, "cannot extend a tape after backward");
  TapeAccess::advance_to(tape, tape.model().output_tap());
  return Tensor(TapeAccess::current(tape));
}

/// Backward from the tape's current end (logits or a feature tap) down to
/// `opts.stop_layer` (default: the input).
inline Tensor backward_from_end(Tape& tape, const Tensor& end_grad, const BackwardOptions& opts = {}) {
  opts.validate();
  const auto stop = opts.stop_layer.value_or(0);
  require(stop <= tape.end_tap(), ErrorCode::InvalidArgument, "stop_layer lies beyond the tape's end");
  require(end_grad.size() == tape.model().tap_dim(tape.end_tap()), ErrorCode::ShapeMismatch,
          "gradient length disagrees with the tape's output width");
  auto g = TapeAccess::backward(tape, end_grad.vec(), stop, opts.residual_decay);
  if (stop == 0) return Tensor(tape.input_shape(), std::move(g));
  return Tensor(std::move(g));
}

/// dL/dx given dL/dz for a tape that reached the logits.
inline Tensor backward_to_input(Tape& tape, const Tensor& logit_grad, const BackwardOptions& opts = {}) {
  require(tape.at_logits(), ErrorCode::InvalidArgument, "tape did not reach the logits");
  require(logit_grad.size() == tape.model().class_count(), ErrorCode::ShapeMismatch,
          "logit gradient length must equal the class count");
  return backward_from_end(tape, logit_grad, opts);
}

}  // namespace fzt
