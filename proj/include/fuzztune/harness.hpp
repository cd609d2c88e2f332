#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fuzztune/checkpoint.hpp"
#include "fuzztune/config.hpp"
#include "fuzztune/fuzzy_domain.hpp"

namespace fzt {

/// Runs f(0..n-1) on a small worker pool; results must be written to
/// per-index slots so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const auto workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

/// Six significant digits.
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Attack success rate in percent. Untargeted: prediction != label.
/// Targeted: prediction == target.
inline double asr(const std::vector<Tensor>& adv, const std::vector<std::size_t>& labels, const Model& model,
                  const std::optional<std::vector<std::size_t>>& targets = std::nullopt) {
  require(!adv.empty(), ErrorCode::InvalidArgument, "asr of an empty batch");
  require(adv.size() == labels.size(), ErrorCode::ShapeMismatch, "examples and labels are misaligned");
  if (targets) require(targets->size() == adv.size(), ErrorCode::ShapeMismatch, "examples and targets are misaligned");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto p = predict(model, adv[i]);
    hits += targets ? p == (*targets)[i] : p != labels[i];
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(adv.size());
}

struct TrainedModel {
  std::string name;
  Model model;
  double test_accuracy = 0.0;
  TrainHistory history;
};

struct Benchmark {
  ExperimentConfig cfg;
  Dataset train;
  Dataset pool;
  Dataset test;
  TrainedModel surrogate;
  std::vector<TrainedModel> victims;
  CleanSelection clean;
  /// One uniformly drawn wrong class per selected example.
  std::vector<std::size_t> target_labels;

  std::vector<const Model*> all_models() const {
    std::vector<const Model*> out{&surrogate.model};
    for (const auto& v : victims) out.push_back(&v.model);
    return out;
  }
  std::vector<std::string> model_names() const {
    std::vector<std::string> out{surrogate.name};
    for (const auto& v : victims) out.push_back(v.name);
    return out;
  }
  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out;
    for (const auto& ex : clean.data.examples) out.push_back(ex.y);
    return out;
  }
};

/// Trains (or, with `cache_dir`, loads a matching checkpoint of) one model.
inline TrainedModel obtain_model(const ModelSpec& spec, const Dataset& train_set, const Dataset& test_set,
                                 const std::optional<std::filesystem::path>& cache_dir) {
  TrainedModel tm{spec.name, build_model(spec.arch), 0.0, {}};
  std::optional<std::filesystem::path> path;
  if (cache_dir) path = *cache_dir / (spec.name + ".fztm");
  bool loaded = false;
  if (path && std::filesystem::exists(*path)) {
    try {
      Model m = load_checkpoint(path->string());
      if (m.arch() == spec.arch) {
        tm.model = std::move(m);
        loaded = true;
      }
    } catch (const Error&) {
      loaded = false;
    }
  }
  if (!loaded) {
    auto result = train(std::move(tm.model), train_set, spec.train);
    tm.model = std::move(result.model);
    tm.history = std::move(result.history);
    if (path) {
      std::filesystem::create_directories(path->parent_path());
      save_checkpoint(tm.model, path->string());
    }
  }
  tm.test_accuracy = accuracy(tm.model, test_set);
  return tm;
}

/// Generates data, trains the model pool and selects the clean examples.
inline Benchmark prepare_benchmark(const ExperimentConfig& cfg,
                                   const std::optional<std::filesystem::path>& cache_dir = std::nullopt) {
  cfg.validate();
  auto data_cfg = cfg.data;
  auto make = [&](std::size_t per_class, std::uint64_t stream) {
    data_cfg.n_per_class = per_class;
    data_cfg.seed = derive_seed(cfg.data.seed, stream);
    return generate_synthetic(data_cfg);
  };
  Dataset train_set = make(cfg.train_per_class, 1);
  Dataset pool = make(cfg.pool_per_class, 2);
  Dataset test_set = make(cfg.test_per_class, 3);

  TrainedModel surrogate = obtain_model(cfg.surrogate, train_set, test_set, cache_dir);
  std::vector<TrainedModel> victims;
  for (const auto& v : cfg.victims) victims.push_back(obtain_model(v, train_set, test_set, cache_dir));

  Benchmark b{cfg, std::move(train_set), std::move(pool), std::move(test_set), std::move(surrogate),
              std::move(victims), {}, {}};
  b.clean = select_clean(b.pool, b.all_models(), cfg.n_examples, derive_seed(cfg.master_seed, 10));
  Rng rng(derive_seed(cfg.master_seed, 11));
  const auto C = cfg.data.classes;
  for (const auto& ex : b.clean.data.examples) {
    auto t = rng.index(C - 1);
    b.target_labels.push_back(t >= ex.y ? t + 1 : t);
  }
  return b;
}

struct ConstraintAudit {
  std::size_t iterates = 0;
  std::size_t violations = 0;

  void merge(const ConstraintAudit& o) {
    iterates += o.iterates;
    violations += o.violations;
  }
};

/// Every iterate must sit in the eps-ball of its clean example and in [0,1].
inline ConstraintAudit audit_trace(const AttackTrace& t, const Tensor& x, double eps) {
  ConstraintAudit a;
  for (const auto& s : t.steps) {
    ++a.iterates;
    bool ok = within_ball(s.x.values(), x.values(), eps);
    for (double v : s.x.values()) ok = ok && v >= 0.0 && v <= 1.0;
    a.violations += !ok;
  }
  return a;
}

// Tables are only written once every iterate behind them passed the audit.
inline void require_clean_audit(const ConstraintAudit& a) {
  require(a.violations == 0, ErrorCode::ConstraintViolation,
          std::to_string(a.violations) + " iterates left the eps-ball or [0,1]; refusing to write results");
}

struct CellResult {
  std::string attack;
  LossSpec loss;
  bool targeted = false;
  /// Surrogate first, then victims, in percent.
  std::vector<double> model_asr;
  double avg_victim_asr = 0.0;
  std::vector<double> mean_fuzziness;
  /// Percent of examples that fool the surrogate but not a given victim,
  /// averaged over victims.
  double surrogate_only_rate = 0.0;
  ConstraintAudit audit;
  std::vector<AttackTrace> traces;
  std::string error;
};

inline std::uint64_t attack_stream(const AttackSpec& a) { return static_cast<std::uint64_t>(a.family) + 100; }

/// Attacks every selected example on the surrogate and scores the results
/// on all models. Per-example seeds depend only on (master seed, attack
/// family, example index), so two losses see identical randomness.
inline CellResult run_cell(const Benchmark& b, const AttackSpec& atk, const LossSpec& loss, bool targeted = false) {
  CellResult r;
  r.attack = to_string(atk.family);
  r.loss = loss;
  r.targeted = targeted;
  const auto& examples = b.clean.data.examples;
  const auto n = examples.size();
  r.traces.resize(n);
  const auto family_seed = derive_seed(b.cfg.master_seed, attack_stream(atk));
  parallel_for(n, [&](std::size_t i) {
    AttackSpec a = atk;
    a.seed = derive_seed(family_seed, i);
    const LossSpec l = targeted ? loss.targeted(b.target_labels[i]) : loss;
    r.traces[i] = run_attack(a, l, b.surrogate.model, examples[i].x, examples[i].y);
  });

  std::vector<Tensor> adv;
  for (std::size_t i = 0; i < n; ++i) {
    adv.push_back(r.traces[i].adversarial);
    r.audit.merge(audit_trace(r.traces[i], examples[i].x, atk.eps));
  }
  const auto labels = b.labels();
  std::optional<std::vector<std::size_t>> targets;
  if (targeted) targets = b.target_labels;
  const auto models = b.all_models();
  for (const auto* m : models) r.model_asr.push_back(asr(adv, labels, *m, targets));
  double sum = 0.0;
  for (std::size_t k = 1; k < r.model_asr.size(); ++k) sum += r.model_asr[k];
  r.avg_victim_asr = sum / static_cast<double>(r.model_asr.size() - 1);
  r.mean_fuzziness = average_fuzziness(r.traces);

  double only = 0.0;
  for (std::size_t k = 1; k < models.size(); ++k) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      count += r.traces[i].surrogate_success && predict(*models[k], adv[i]) == labels[i];
    only += 100.0 * static_cast<double>(count) / static_cast<double>(n);
  }
  r.surrogate_only_rate = only / static_cast<double>(models.size() - 1);
  return r;
}

struct AsrRow {
  std::string attack;
  std::string loss;
  double K = 1.0;
  double T = 1.0;
  std::vector<double> asr;
  double average = 0.0;
  std::string error;
};

/// Column 0 is the surrogate (white-box); Average excludes it.
struct AsrTable {
  std::vector<std::string> models;
  std::vector<AsrRow> rows;
};

inline AsrRow to_row(const CellResult& c) {
  const auto [K, T] = c.loss.reported_kt();
  return {c.attack, to_string(c.loss.family), K, T, c.model_asr, c.avg_victim_asr, c.error};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
  require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + path.string() + "'");
}

/// attack,loss,K,T,model,asr,is_surrogate
inline std::string matrix_csv(const AsrTable& t) {
  std::string out = "attack,loss,K,T,model,asr,is_surrogate\n";
  for (const auto& r : t.rows) {
    for (std::size_t k = 0; k < r.asr.size(); ++k)
      out += r.attack + "," + r.loss + "," + fmt6(r.K) + "," + fmt6(r.T) + "," + t.models[k] + "," + fmt6(r.asr[k]) +
             "," + (k == 0 ? "1" : "0") + "\n";
  }
  return out;
}

/// attack,loss,step,mean_fuzziness
inline std::string fuzziness_csv(const std::vector<CellResult>& cells) {
  std::string out = "attack,loss,step,mean_fuzziness\n";
  for (const auto& c : cells) {
    const auto [K, T] = c.loss.reported_kt();
    std::string loss = to_string(c.loss.family);
    if (c.loss.family == LossFamily::CCE || c.loss.family == LossFamily::TCE || c.loss.family == LossFamily::FCE)
      loss += "(K=" + fmt6(K) + ";T=" + fmt6(T) + ")";
    for (std::size_t s = 0; s < c.mean_fuzziness.size(); ++s)
      out += c.attack + "," + loss + "," + std::to_string(s) + "," + fmt6(c.mean_fuzziness[s]) + "\n";
  }
  return out;
}

struct MatrixResult {
  AsrTable table;
  std::vector<CellResult> cells;
  ConstraintAudit audit;
};

/// attack x loss transfer matrix. A failing cell is recorded with its error
/// and the remaining cells still run.
inline MatrixResult run_matrix(const Benchmark& b, bool write_csv = true) {
  MatrixResult res;
  res.table.models = b.model_names();
  for (const auto& atk : b.cfg.attacks) {
    for (const auto& loss : b.cfg.losses) {
      try {
        auto cell = run_cell(b, atk, loss);
        res.audit.merge(cell.audit);
        res.table.rows.push_back(to_row(cell));
        cell.traces.clear();
        res.cells.push_back(std::move(cell));
      } catch (const std::exception& e) {
        AsrRow row;
        row.attack = to_string(atk.family);
        row.loss = to_string(loss.family);
        std::tie(row.K, row.T) = loss.reported_kt();
        row.error = e.what();
        res.table.rows.push_back(std::move(row));
      }
    }
  }
  if (write_csv) {
    require_clean_audit(res.audit);
    const std::filesystem::path dir(b.cfg.out_dir);
    write_text(dir / "matrix.csv", matrix_csv(res.table));
    write_text(dir / "fuzziness.csv", fuzziness_csv(res.cells));
  }
  return res;
}

struct SweepCell {
  double K = 1.0;
  double T = 1.0;
  double avg_victim_asr = 0.0;
  double surrogate_asr = 0.0;
  double final_fuzziness = 0.0;
};

struct SweepResult {
  std::string attack;
  std::vector<SweepCell> cells;
  std::size_t best = 0;
  ConstraintAudit audit;

  const SweepCell& best_cell() const { return cells.at(best); }
  const SweepCell* find(double K, double T) const {
    for (const auto& c : cells)
      if (c.K == K && c.T == T) return &c;
    return nullptr;
  }
};

/// (K, T) pairs of the sweep. Axes mode: K along T = 1 and T along K = 1,
/// always including (1, 1). Cartesian mode: the full product plus (1, 1).
inline std::vector<std::pair<double, double>> sweep_grid(const ExperimentConfig& cfg) {
  std::vector<std::pair<double, double>> grid;
  auto add = [&grid](double K, double T) {
    if (std::find(grid.begin(), grid.end(), std::make_pair(K, T)) == grid.end()) grid.emplace_back(K, T);
  };
  add(1.0, 1.0);
  if (cfg.grid_mode == GridMode::Axes) {
    for (double K : cfg.k_grid) add(K, 1.0);
    for (double T : cfg.t_grid) add(1.0, T);
  } else {
    for (double K : cfg.k_grid)
      for (double T : cfg.t_grid) add(K, T);
  }
  return grid;
}

/// Best cell: highest average victim ASR, ties to smaller K then smaller T.
inline std::size_t best_cell_index(const std::vector<SweepCell>& cells) {
  require(!cells.empty(), ErrorCode::InvalidArgument, "empty sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const auto& a = cells[i];
    const auto& b = cells[best];
    if (a.avg_victim_asr > b.avg_victim_asr ||
        (a.avg_victim_asr == b.avg_victim_asr && (a.K < b.K || (a.K == b.K && a.T < b.T))))
      best = i;
  }
  return best;
}

/// attack,loss,K,T,avg_victim_asr,surrogate_asr
inline std::string sweep_csv(const SweepResult& s, const std::string& loss = "FCE") {
  std::string out = "attack,loss,K,T,avg_victim_asr,surrogate_asr\n";
  for (const auto& c : s.cells)
    out += s.attack + "," + loss + "," + fmt6(c.K) + "," + fmt6(c.T) + "," + fmt6(c.avg_victim_asr) + "," +
           fmt6(c.surrogate_asr) + "\n";
  return out;
}

inline std::string file_stem(std::string name) {
  for (auto& ch : name)
    if (ch == '-') ch = '_';
  return name;
}

/// FCE(K, T) over the configured grid for one attack.
inline SweepResult sweep_kt(const Benchmark& b, const AttackSpec& atk, bool write_csv = true) {
  const auto grid = sweep_grid(b.cfg);
  require(!grid.empty(), ErrorCode::InvalidArgument, "sweep grid is empty");
  SweepResult s;
  s.attack = to_string(atk.family);
  for (const auto& [K, T] : grid) {
    const auto cell = run_cell(b, atk, LossSpec::fce(K, T));
    s.audit.merge(cell.audit);
    s.cells.push_back({K, T, cell.avg_victim_asr, cell.model_asr[0], cell.mean_fuzziness.back()});
  }
  s.best = best_cell_index(s.cells);
  if (write_csv) {
    require_clean_audit(s.audit);
    write_text(std::filesystem::path(b.cfg.out_dir) / ("sweep_" + file_stem(s.attack) + ".csv"), sweep_csv(s));
  }
  return s;
}

struct EpsPoint {
  double eps = 0.0;
  double surrogate_asr = 0.0;
  double avg_victim_asr = 0.0;
};

/// White-box vs transfer ASR over the budget ladder; step size eps / steps.
inline std::vector<EpsPoint> epsilon_sweep(const Benchmark& b, const AttackSpec& atk, const LossSpec& loss,
                                           ConstraintAudit* audit = nullptr, bool write_csv = true) {
  std::vector<EpsPoint> out;
  ConstraintAudit local;
  std::string csv = "attack,loss,eps,surrogate_asr,avg_victim_asr\n";
  for (double eps : b.cfg.eps_sweep) {
    AttackSpec a = atk;
    a.eps = eps;
    a.alpha = eps / static_cast<double>(a.num_steps);
    const auto cell = run_cell(b, a, loss);
    local.merge(cell.audit);
    out.push_back({eps, cell.model_asr[0], cell.avg_victim_asr});
    csv += cell.attack + "," + to_string(loss.family) + "," + fmt6(eps) + "," + fmt6(cell.model_asr[0]) + "," +
           fmt6(cell.avg_victim_asr) + "\n";
  }
  if (audit) audit->merge(local);
  if (write_csv) {
    require_clean_audit(local);
    write_text(std::filesystem::path(b.cfg.out_dir) / "eps_sweep.csv", csv);
  }
  return out;
}

struct RceComparison {
  std::string attack;
  /// Targeted TCE over the temperature ladder, plus the RCE reference.
  std::vector<SweepCell> tce_target;
  SweepCell rce_target;
  /// Untargeted: per attack, RCE row followed by the fuzziness-tuned row.
  AsrTable untarget;
  ConstraintAudit audit;
};

/// Targeted TCE-vs-RCE curve for `target_attack`, and an untargeted table
/// comparing RCE with FCE at each attack's best (K, T) from `best_kt`
/// (one entry per configured attack).
inline RceComparison rce_comparison(const Benchmark& b, const AttackSpec& target_attack,
                                    const std::vector<std::pair<double, double>>& best_kt, bool write_csv = true) {
  require(best_kt.size() == b.cfg.attacks.size(), ErrorCode::InvalidArgument, "one best (K,T) per attack required");
  RceComparison rc;
  rc.attack = to_string(target_attack.family);
  for (double T : b.cfg.rce_t_ladder) {
    const auto cell = run_cell(b, target_attack, LossSpec::tce(T), true);
    rc.audit.merge(cell.audit);
    rc.tce_target.push_back({1.0, T, cell.avg_victim_asr, cell.model_asr[0], cell.mean_fuzziness.back()});
  }
  {
    const auto cell = run_cell(b, target_attack, LossSpec::rce(), true);
    rc.audit.merge(cell.audit);
    rc.rce_target = {1.0, 1.0, cell.avg_victim_asr, cell.model_asr[0], cell.mean_fuzziness.back()};
  }

  rc.untarget.models = b.model_names();
  for (std::size_t i = 0; i < b.cfg.attacks.size(); ++i) {
    const auto& atk = b.cfg.attacks[i];
    const auto rce = run_cell(b, atk, LossSpec::rce());
    const auto fce = run_cell(b, atk, LossSpec::fce(best_kt[i].first, best_kt[i].second));
    rc.audit.merge(rce.audit);
    rc.audit.merge(fce.audit);
    rc.untarget.rows.push_back(to_row(rce));
    rc.untarget.rows.push_back(to_row(fce));
  }

  if (write_csv) {
    require_clean_audit(rc.audit);
    const std::filesystem::path dir(b.cfg.out_dir);
    SweepResult curve{rc.attack, rc.tce_target, 0, {}};
    std::string csv = sweep_csv(curve, "TCE");
    csv += rc.attack + ",RCE,1,inf," + fmt6(rc.rce_target.avg_victim_asr) + "," + fmt6(rc.rce_target.surrogate_asr) +
           "\n";
    write_text(dir / "rce_target.csv", csv);
    write_text(dir / "rce_untarget.csv", matrix_csv(rc.untarget));
  }
  return rc;
}

/// Fuzzy-domain membership of final iterates under thresholds calibrated
/// from `calibration` (normally the CE cell of the same attack).
struct DomainCounts {
  std::size_t overfitting = 0;
  std::size_t underfitting = 0;
  std::size_t outside = 0;
};

inline DomainCounts domain_counts(const Benchmark& b, const CellResult& cell, const FuzzyDomainConfig& thresholds,
                                  double eps) {
  DomainCounts dc;
  for (std::size_t i = 0; i < cell.traces.size(); ++i) {
    const auto& t = cell.traces[i];
    const auto v = classify(t.adversarial, b.clean.data.examples[i].x, eps, t.steps.back().fuzziness, thresholds);
    switch (v.membership) {
      case Membership::Overfitting: ++dc.overfitting; break;
      case Membership::Underfitting: ++dc.underfitting; break;
      case Membership::Outside: ++dc.outside; break;
    }
  }
  return dc;
}

}  // namespace fzt
