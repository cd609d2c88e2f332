#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "fuzztune/autodiff.hpp"
#include "fuzztune/data.hpp"
#include "fuzztune/losses.hpp"

namespace fzt {

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double weight_decay = 0.0;

  void validate() const {
    require(learning_rate > 0.0, ErrorCode::InvalidArgument, "learning_rate must be > 0");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(weight_decay >= 0.0, ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  }
};

struct EpochStats {
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  /// (training index, predicted class) for the first few training examples
  /// after the final epoch.
  std::vector<std::pair<std::size_t, std::size_t>> prediction_audit;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Argmax of the logits, lowest index on ties.
inline std::size_t predict(const Model& model, const Tensor& x) { return argmax(forward(model, x).output.values()); }

inline double accuracy(const Model& model, const Dataset& data) {
  std::size_t hits = 0;
  for (const auto& ex : data.examples) hits += predict(model, ex.x) == ex.y;
  return data.examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.examples.size());
}

namespace detail {

struct AffineGrad {
  std::vector<double> weight;
  std::vector<double> bias;

  explicit AffineGrad(const Affine& a) : weight(a.weight.size(), 0.0), bias(a.bias.size(), 0.0) {}

  void accumulate(std::span<const double> x, std::span<const double> gy) {
    const auto in = x.size();
    for (std::size_t o = 0; o < gy.size(); ++o) {
      bias[o] += gy[o];
      const double g = gy[o];
      if (g == 0.0) continue;
      double* row = weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
    }
  }
};

struct StageGrad {
  AffineGrad first;
  AffineGrad second;
};

inline std::vector<double> relu(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

/// One example: forward with activation caching, CE backward into `grads`.
/// Returns the example's loss.
inline double accumulate_example(const Model& model, const Tensor& x, std::size_t y, std::vector<StageGrad>& grads) {
  const auto& stages = model.stages();
  struct Cache {
    std::vector<double> input, pre1, hidden, pre2;
  };
  std::vector<Cache> caches(stages.size());
  std::vector<double> cur = x.vec();
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    auto& c = caches[s];
    c.input = cur;
    c.pre1.resize(st.first.out_dim());
    st.first.apply(cur, c.pre1);
    if (st.kind == StageKind::Linear) {
      cur = c.pre1;
    } else if (st.kind == StageKind::LinearRelu) {
      cur = relu(c.pre1);
    } else {
      c.hidden = relu(c.pre1);
      c.pre2.resize(st.second.out_dim());
      st.second.apply(c.hidden, c.pre2);
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += c.pre2[i] > 0.0 ? c.pre2[i] : 0.0;
    }
  }
  const double loss = cross_entropy(cur, y);
  std::vector<double> g = loss_logit_grad(LossSpec::ce(), cur, y);
  for (std::size_t s = stages.size(); s-- > 0;) {
    const auto& st = stages[s];
    auto& c = caches[s];
    std::vector<double> gx(st.in_dim());
    if (st.kind == StageKind::Linear) {
      grads[s].first.accumulate(c.input, g);
      if (s > 0) st.first.apply_transpose(g, gx);
    } else if (st.kind == StageKind::LinearRelu) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(c.pre1[i] > 0.0)) g[i] = 0.0;
      grads[s].first.accumulate(c.input, g);
      if (s > 0) st.first.apply_transpose(g, gx);
    } else {
      std::vector<double> g2(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) g2[i] = c.pre2[i] > 0.0 ? g[i] : 0.0;
      grads[s].second.accumulate(c.hidden, g2);
      std::vector<double> g1(st.second.in_dim());
      st.second.apply_transpose(g2, g1);
      for (std::size_t i = 0; i < g1.size(); ++i)
        if (!(c.pre1[i] > 0.0)) g1[i] = 0.0;
      grads[s].first.accumulate(c.input, g1);
      st.first.apply_transpose(g1, gx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    g = std::move(gx);
  }
  return loss;
}

inline void sgd_update(Affine& a, const AffineGrad& g, double scale, double lr, double wd) {
  auto w = a.weight.values();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g.weight[i] * scale + wd * w[i]);
  auto b = a.bias.values();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * g.bias[i] * scale;
}

}  // namespace detail

/// Minibatch SGD (no momentum) on cross-entropy. Deterministic in
/// (model, dataset, cfg).
inline TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  require(data.input_dim() == model.input_dim(), ErrorCode::ShapeMismatch, "dataset and model input widths differ");
  for (const auto& ex : data.examples)
    require(ex.y < model.class_count(), ErrorCode::LabelOutOfRange,
            "label " + std::to_string(ex.y) + " >= class count " + std::to_string(model.class_count()));

  TrainHistory history;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      std::vector<detail::StageGrad> grads;
      for (const auto& st : model.stages()) grads.push_back({detail::AffineGrad(st.first), detail::AffineGrad(st.second)});
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data.examples[order[k]];
        loss_sum += detail::accumulate_example(model, ex.x, ex.y, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      auto& stages = model.mutable_stages();
      for (std::size_t s = 0; s < stages.size(); ++s) {
        detail::sgd_update(stages[s].first, grads[s].first, scale, cfg.learning_rate, cfg.weight_decay);
        if (stages[s].kind == StageKind::Residual)
          detail::sgd_update(stages[s].second, grads[s].second, scale, cfg.learning_rate, cfg.weight_decay);
      }
    }
    for (const auto& st : model.stages())
      require(st.first.weight.all_finite() && st.first.bias.all_finite() &&
                  (st.kind != StageKind::Residual || (st.second.weight.all_finite() && st.second.bias.all_finite())),
              ErrorCode::NumericalFailure, "training diverged at epoch " + std::to_string(epoch));
    history.epochs.push_back({loss_sum / static_cast<double>(order.size()), accuracy(model, data)});
  }

  const auto audit_n = std::min<std::size_t>(16, data.examples.size());
  for (std::size_t i = 0; i < audit_n; ++i) history.prediction_audit.emplace_back(i, predict(model, data.examples[i].x));
  return {std::move(model), std::move(history)};
}

}  // namespace fzt

namespace fzt {

inline CleanSelection select_clean(const Dataset& ds, const std::vector<const Model*>& models, std::size_t n,
                                   std::uint64_t seed) {
  return select_clean<Model>(ds, models, n, seed, [](const Model& m, const Tensor& x) { return predict(m, x); });
}

}  // namespace fzt
