// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Slow criteria share one standard benchmark.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fuzztune/fuzztune.hpp"

using namespace fzt;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Report {
  int failures = 0;

  Outcome run(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = secs <= budget_s;
    const bool pass = o.pass && in_time;
    if (!in_time) o.detail += "; over time budget";
    std::printf("%s  %-28s %8.2fs / %5.0fs  %s\n", pass ? "PASS" : "FAIL", name.c_str(), secs, budget_s,
                o.detail.c_str());
    std::fflush(stdout);
    failures += !pass;
    return o;
  }
};

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

Outcome from(const CheckResult& r) { return {r.pass, r.detail}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fuzztune acceptance suite"};
  std::string cache_dir = "acceptance_cache", out_dir = "acceptance_out";
  app.add_option("--cache-dir", cache_dir, "checkpoint cache for the benchmark models");
  app.add_option("--out-dir", out_dir, "where the harness CSVs are written");
  CLI11_PARSE(app, argc, argv);

  Report report;
  report.run("degeneracy", 5, [] { return from(check_degeneracy()); });
  report.run("confidence weight ratio", 5, [] { return from(check_confidence_ratio()); });
  report.run("temperature weight ratio", 5, [] { return from(check_temperature_ratio()); });

  auto cfg = standard_config();
  cfg.out_dir = out_dir;
  const auto prep_start = Clock::now();
  const Benchmark b = prepare_benchmark(cfg, std::filesystem::path(cache_dir));
  std::printf("info  benchmark ready in %.1fs: surrogate acc %.3f, %zu attacked examples\n",
              std::chrono::duration<double>(Clock::now() - prep_start).count(), b.surrogate.test_accuracy,
              b.clean.data.size());

  const auto& clean = b.clean.data.examples;
  report.run("temperature limit", 30, [&] { return from(check_temperature_limit(b.surrogate.model, clean)); });
  report.run("gradient oracle", 60, [&] {
    std::vector<std::pair<std::string, const Model*>> models{{b.surrogate.name, &b.surrogate.model}};
    for (const auto& v : b.victims)
      if (v.model.arch().kind == ArchKind::Plain) {
        models.emplace_back(v.name, &v.model);
        break;
      }
    return from(check_gradient_oracle(models, boundary_probes(clean, 3)));
  });
  report.run("reduction identities", 60,
             [&] { return from(check_reductions(b.surrogate.model, clean, b.cfg.master_seed)); });

  ConstraintAudit audit;
  const auto mi = AttackSpec::defaults(AttackFamily::MIFGSM);

  report.run("white-box gap and budget", 300, [&] {
    const auto pts = epsilon_sweep(b, mi, LossSpec::ce(), &audit);
    bool ok = true;
    std::string d;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ok = ok && pts[i].surrogate_asr >= pts[i].avg_victim_asr;
      if (i > 0) ok = ok && pts[i].surrogate_asr >= pts[i - 1].surrogate_asr;
      d += (i ? "; " : "") + num(pts[i].eps * 255) + "/255 wb " + num(pts[i].surrogate_asr) + " bb " +
           num(pts[i].avg_victim_asr);
    }
    return Outcome{ok, d};
  });

  // Every sweep is run once and shared by the criteria that read it.
  std::vector<SweepResult> sweeps;
  double mi_sweep_seconds = 0.0;
  report.run("best FCE vs CE transfer", 1200, [&] {
    bool ok = true;
    std::string d;
    for (const auto& atk : cfg.attacks) {
      const auto start = Clock::now();
      sweeps.push_back(sweep_kt(b, atk));
      if (atk.family == AttackFamily::MIFGSM)
        mi_sweep_seconds = std::chrono::duration<double>(Clock::now() - start).count();
      const auto& s = sweeps.back();
      audit.merge(s.audit);
      const auto& best = s.best_cell();
      const double margin = best.avg_victim_asr - s.find(1.0, 1.0)->avg_victim_asr;
      ok = ok && margin >= 0.0;
      d += (d.empty() ? "" : "; ") + s.attack + " +" + num(margin) + " at K=" + num(best.K) + ",T=" + num(best.T);
    }
    return Outcome{ok, d};
  });

  const SweepResult* mi_sweep = nullptr;
  for (const auto& s : sweeps)
    if (s.attack == to_string(AttackFamily::MIFGSM)) mi_sweep = &s;

  report.run("fuzziness at sweep-best", 300, [&] {
    require(mi_sweep != nullptr, ErrorCode::InvalidArgument, "momentum sweep missing");
    const auto& best = mi_sweep->best_cell();
    const auto& ce = *mi_sweep->find(1.0, 1.0);
    return Outcome{best.final_fuzziness <= ce.final_fuzziness && mi_sweep_seconds <= 300,
                   "FCE(K=" + num(best.K) + ",T=" + num(best.T) + ") " + num(best.final_fuzziness) + " vs CE " +
                       num(ce.final_fuzziness) + " (sweep " + num(mi_sweep_seconds, 3) + "s)"};
  });

  report.run("temperature vs relative CE", 600, [&] {
    require(mi_sweep != nullptr && sweeps.size() == cfg.attacks.size(), ErrorCode::InvalidArgument,
            "sweeps missing");
    std::vector<std::pair<double, double>> best_kt;
    for (const auto& s : sweeps) best_kt.emplace_back(s.best_cell().K, s.best_cell().T);
    const auto rc = rce_comparison(b, mi, best_kt);
    audit.merge(rc.audit);
    const auto& tce_limit = rc.tce_target.back();
    const bool limit_ok = std::abs(tce_limit.avg_victim_asr - rc.rce_target.avg_victim_asr) <= 1.0;

    // temperature-only cells of the momentum sweep
    std::vector<SweepCell> tce_cells;
    for (const auto& c : mi_sweep->cells)
      if (c.K == 1.0) tce_cells.push_back(c);
    const auto& tce_best = tce_cells[best_cell_index(tce_cells)];
    double rce_untarget = 0.0;
    for (const auto& r : rc.untarget.rows)
      if (r.attack == rc.attack && r.loss == "RCE") rce_untarget = r.average;
    const bool untarget_ok = tce_best.avg_victim_asr >= rce_untarget;
    return Outcome{limit_ok && untarget_ok, "target TCE(T=" + num(tce_limit.T) + ") " +
                                                num(tce_limit.avg_victim_asr) + " vs RCE " +
                                                num(rc.rce_target.avg_victim_asr) + "; untarget TCE(T=" +
                                                num(tce_best.T) + ") " + num(tce_best.avg_victim_asr) + " vs RCE " +
                                                num(rce_untarget)};
  });

  report.run("gradient angle vs T", 120, [&] {
    std::vector<double> angles;
    for (double T : {1.0, 4.0, 8.0, 1e3}) {
      Rng rng(derive_seed(cfg.master_seed, 500));
      double total = 0.0;
      for (std::size_t i = 0; i < 50; ++i) {
        const auto& ex = b.clean.data.examples[i];
        total += gradient_angle_stats(b.surrogate.model, LossSpec::tce(T), ex.x, ex.y, mi.eps, 20, rng).mean_angle;
      }
      angles.push_back(total / 50.0);
    }
    std::size_t inversions = 0;
    bool small = true;
    std::string d = "angles";
    for (std::size_t i = 0; i < angles.size(); ++i) {
      d += " " + num(angles[i]);
      if (i > 0 && angles[i] > angles[i - 1]) {
        ++inversions;
        small = small && angles[i] - angles[i - 1] <= 0.01;
      }
    }
    return Outcome{inversions == 0 || (inversions == 1 && small), d};
  });

  report.run("constraint audit", 1200, [&] {
    const auto matrix = run_matrix(b);
    audit.merge(matrix.audit);
    return Outcome{audit.violations == 0 && audit.iterates > 0,
                   std::to_string(audit.violations) + " violations in " + std::to_string(audit.iterates) +
                       " iterates"};
  });

  std::printf("%s  %d criteria failed\n", report.failures ? "FAIL" : "PASS", report.failures);
  return report.failures ? 1 : 0;
}
