#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fuzztune/attacks.hpp"
#include "fuzztune/data.hpp"
#include "fuzztune/gradcheck.hpp"
#include "fuzztune/losses.hpp"

namespace fzt {

/// Outcome of one property check, with a one-line summary of the measured
/// quantity.
struct CheckResult {
  bool pass = false;
  std::string detail;
};

namespace detail {

inline std::string short_num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline std::vector<double> uniform_logits(Rng& rng, std::size_t C) {
  std::vector<double> z(C);
  for (auto& v : z) v = rng.uniform(-8.0, 8.0);
  return z;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace detail

/// FCE(1,1) against CE, value and logit gradient, for C in {2, 5, 10, 100}.
inline CheckResult check_degeneracy(std::size_t samples = 10000, std::uint64_t seed = 101) {
  Rng rng(seed);
  double worst_loss = 0.0, worst_grad = 0.0;
  const std::size_t classes[] = {2, 5, 10, 100};
  for (std::size_t i = 0; i < samples; ++i) {
    const auto C = classes[i % 4];
    const auto z = detail::uniform_logits(rng, C);
    const auto o = rng.index(C);
    worst_loss =
        std::max(worst_loss, std::abs(loss_value(LossSpec::fce(1, 1), z, o) - loss_value(LossSpec::ce(), z, o)));
    worst_grad = std::max(worst_grad, detail::max_abs_diff(loss_logit_grad(LossSpec::fce(1, 1), z, o),
                                                           loss_logit_grad(LossSpec::ce(), z, o)));
  }
  return {worst_loss < 1e-12 && worst_grad < 1e-12,
          "max |dL| " + detail::short_num(worst_loss) + ", max |dg| " + detail::short_num(worst_grad)};
}

/// Weight ratio of CCE(K) equals K/(K+1) for K = 0.2, 0.4, ..., 2.0.
inline CheckResult check_confidence_ratio(std::size_t per_value = 1000, std::uint64_t seed = 102) {
  Rng rng(seed);
  double worst = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double K = 0.2 * k;
    for (std::size_t i = 0; i < per_value; ++i) {
      const std::size_t C = 2 + rng.index(9);
      const auto z = detail::uniform_logits(rng, C);
      worst = std::max(worst, std::abs(weight_ratio(LossSpec::cce(K), z, rng.index(C)) - K / (K + 1)));
    }
  }
  return {worst < 1e-9, "max deviation from K/(K+1) " + detail::short_num(worst)};
}

/// Weight ratio of TCE(T) is 1/2 whatever T.
inline CheckResult check_temperature_ratio(std::size_t per_value = 1000, std::uint64_t seed = 103) {
  Rng rng(seed);
  double worst = 0.0;
  for (double T : {0.1, 0.5, 1.0, 2.0, 8.0}) {
    for (std::size_t i = 0; i < per_value; ++i) {
      const std::size_t C = 2 + rng.index(9);
      const auto z = detail::uniform_logits(rng, C);
      worst = std::max(worst, std::abs(weight_ratio(LossSpec::tce(T), z, rng.index(C)) - 0.5));
    }
  }
  return {worst < 1e-9, "max deviation from 1/2 " + detail::short_num(worst)};
}

/// T * grad TCE(T = 1e6) against grad RCE on random logits, then input
/// gradient sign agreement on `model` at `probes`.
inline CheckResult check_temperature_limit(const Model& model, std::span<const Example> probes,
                                           std::size_t samples = 1000, std::uint64_t seed = 104) {
  const double T = 1e6;
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t C = 2 + rng.index(9);
    const auto z = detail::uniform_logits(rng, C);
    const auto o = rng.index(C);
    auto g = loss_logit_grad(LossSpec::tce(T), z, o);
    for (auto& v : g) v *= T;
    worst = std::max(worst, detail::max_abs_diff(g, loss_logit_grad(LossSpec::rce(), z, o)));
  }
  std::size_t agree = 0, counted = 0;
  for (const auto& ex : probes) {
    const auto gt = loss_input_gradient(model, LossSpec::tce(T), ex.x, ex.y).input_grad;
    const auto gr = loss_input_gradient(model, LossSpec::rce(), ex.x, ex.y).input_grad;
    for (std::size_t i = 0; i < gr.size(); ++i) {
      if (!(std::abs(gr[i]) > 1e-12)) continue;
      ++counted;
      agree += sign(gt[i]) == sign(gr[i]);
    }
  }
  const double rate = counted ? static_cast<double>(agree) / static_cast<double>(counted) : 0.0;
  return {worst < 1e-5 && rate >= 0.999 && counted > 0,
          "logit max " + detail::short_num(worst) + ", input sign agreement " + detail::short_num(100 * rate, 6) +
              "% of " + std::to_string(counted)};
}

/// Midpoints between examples of different classes. Clean, confidently
/// classified points sit at loss ~1e-6, where central-difference round-off
/// alone exceeds a 1e-4 relative tolerance; midpoints keep the loss O(1).
inline std::vector<Example> boundary_probes(std::span<const Example> examples, std::size_t count,
                                            std::size_t stride = 37) {
  std::vector<Example> probes;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& a = examples[(i * stride) % examples.size()];
    const Example* other = nullptr;
    for (std::size_t j = 1; j < examples.size() && !other; ++j) {
      const auto& c = examples[(i * stride + j) % examples.size()];
      if (c.y != a.y) other = &c;
    }
    require(other != nullptr, ErrorCode::InvalidArgument, "boundary probes need two classes");
    Tensor mid = a.x;
    for (std::size_t k = 0; k < mid.size(); ++k) mid[k] = 0.5 * (a.x[k] + other->x[k]);
    probes.push_back({std::move(mid), a.y});
  }
  return probes;
}

/// finite_diff_check at h = 1e-5 for every model and every loss family.
inline CheckResult check_gradient_oracle(const std::vector<std::pair<std::string, const Model*>>& models,
                                         std::span<const Example> probes, double tol = 1e-4) {
  const std::vector<LossSpec> losses{LossSpec::ce(),         LossSpec::cce(1.6), LossSpec::tce(4),
                                     LossSpec::fce(1.4, 4.0), LossSpec::rce(),    LossSpec::fia_logit()};
  double worst = 0.0;
  std::string where = "-";
  for (const auto& [name, m] : models)
    for (const auto& loss : losses)
      for (const auto& p : probes) {
        const double e = finite_diff_check(*m, loss, p.x, p.y, 1e-5);
        if (e > worst) {
          worst = e;
          where = name + "/" + to_string(loss.family);
        }
      }
  return {worst <= tol, "worst relative error " + detail::short_num(worst) + " (" + where + ")"};
}

/// Byte-identical traces for the attack reductions and for FCE(1,1) vs CE
/// under every attack family, on the first `n` examples.
inline CheckResult check_reductions(const Model& surrogate, std::span<const Example> examples, std::uint64_t seed,
                                    std::size_t n = 20) {
  require(examples.size() >= n, ErrorCode::InvalidArgument, "not enough examples for the reduction check");
  std::size_t checked = 0;
  std::vector<std::string> broken;
  auto same = [&](const std::string& what, const AttackSpec& a1, const LossSpec& l1, const AttackSpec& a2,
                  const LossSpec& l2, const Example& ex) {
    ++checked;
    if (trace_bytes(run_attack(a1, l1, surrogate, ex.x, ex.y)) !=
        trace_bytes(run_attack(a2, l2, surrogate, ex.x, ex.y)))
      broken.push_back(what);
  };
  const auto ce = LossSpec::ce();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    auto spec = [&](AttackFamily f) {
      auto a = AttackSpec::defaults(f);
      a.seed = derive_seed(seed, 1000 + i);
      return a;
    };
    const auto I = spec(AttackFamily::IFGSM), MI = spec(AttackFamily::MIFGSM), NI = spec(AttackFamily::NIFGSM);
    auto mi0 = MI, ni0 = NI, vmi0 = spec(AttackFamily::VMIFGSM), sgm1 = spec(AttackFamily::SGM),
         sini1 = spec(AttackFamily::SINIFGSM);
    mi0.mu = 0;
    ni0.mu = 0;
    vmi0.beta = 0;
    sgm1.gamma = 1;
    sini1.m_scales = 1;
    same("MI(mu=0)=I", mi0, ce, I, ce, ex);
    same("NI(mu=0)=I", ni0, ce, I, ce, ex);
    same("VMI(beta=0)=MI", vmi0, ce, MI, ce, ex);
    same("SGM(gamma=1)=MI", sgm1, ce, MI, ce, ex);
    same("SINI(m=1)=NI", sini1, ce, NI, ce, ex);
    for (auto f : {AttackFamily::FGSM, AttackFamily::IFGSM, AttackFamily::MIFGSM, AttackFamily::NIFGSM,
                   AttackFamily::SINIFGSM, AttackFamily::VMIFGSM, AttackFamily::DIFGSM, AttackFamily::FIA,
                   AttackFamily::SGM})
      same(std::string("FCE(1,1)=CE ") + to_string(f), spec(f), LossSpec::fce(1, 1), spec(f), ce, ex);
  }
  std::string d = std::to_string(checked - broken.size()) + "/" + std::to_string(checked) + " identical";
  if (!broken.empty()) d += ", first mismatch " + broken.front();
  return {broken.empty(), d};
}

}  // namespace fzt
