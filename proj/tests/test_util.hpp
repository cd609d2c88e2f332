#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "fuzztune/fuzztune.hpp"

namespace fzt::testing {

inline std::vector<double> random_logits(Rng& rng, std::size_t C, double scale = 5.0) {
  std::vector<double> z(C);
  for (auto& v : z) v = rng.uniform(-scale, scale);
  return z;
}

inline Tensor random_input(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.uniform(0.05, 0.95);
  return Tensor(std::move(v));
}

// Straight softmax with no shifting; fine for the small logits used in tests.
inline std::vector<double> naive_softmax(const std::vector<double>& u) {
  double s = 0.0;
  for (double v : u) s += std::exp(v);
  std::vector<double> p;
  for (double v : u) p.push_back(std::exp(v) / s);
  return p;
}

inline Dataset small_synthetic(std::size_t per_class, std::uint64_t seed) {
  return generate_synthetic({5, per_class, 8, 0.1, seed});
}

/// Small trained nets on 8x8 synthetic images (about 0.9 test accuracy),
/// trained once per process.
inline Model trained_residual(std::size_t blocks = 2, std::uint64_t seed = 7) {
  static std::map<std::pair<std::size_t, std::uint64_t>, Model> cache;
  const auto key = std::make_pair(blocks, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = seed;
  auto m = train(build_model({64, 5, ArchKind::Residual, {16}, blocks, seed}), small_synthetic(200, 99), cfg).model;
  return cache.emplace(key, std::move(m)).first->second;
}

inline Model trained_plain(std::uint64_t seed = 11) {
  static std::map<std::uint64_t, Model> cache;
  if (auto it = cache.find(seed); it != cache.end()) return it->second;
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = seed;
  auto m = train(build_model({64, 5, ArchKind::Plain, {24, 16}, 0, seed}), small_synthetic(200, 99), cfg).model;
  return cache.emplace(seed, std::move(m)).first->second;
}

inline const Dataset& probe_set() {
  static const Dataset d = small_synthetic(4, 5);
  return d;
}

}  // namespace fzt::testing
