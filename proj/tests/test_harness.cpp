#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace fzt;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fuzztune_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig c;
  c.master_seed = 77;
  c.data = SyntheticConfig{5, 0, 8, 0.1, 77};
  c.train_per_class = 60;
  c.pool_per_class = 10;
  c.test_per_class = 10;
  c.surrogate = residual_spec("res", 64, 5, 16, 1, 3);
  c.surrogate.train.epochs = 25;
  c.victims = {plain_spec("mlp-a", 64, 5, {16}, 4), plain_spec("mlp-b", 64, 5, {12}, 5)};
  for (auto& v : c.victims) v.train.epochs = 25;
  for (auto f : {AttackFamily::IFGSM, AttackFamily::VMIFGSM}) {
    auto a = AttackSpec::defaults(f);
    a.num_steps = 4;
    a.n_vmi = 3;
    a.eps = 16.0 / 255.0;
    a.alpha = 4.0 / 255.0;
    c.attacks.push_back(a);
  }
  c.losses = {LossSpec::ce(), LossSpec::fce(1, 1), LossSpec::fce(1.4, 4)};
  c.k_grid = {0.5, 1.0, 2.0};
  c.t_grid = {0.5, 1.0, 4.0};
  c.eps_sweep = {4.0 / 255.0, 16.0 / 255.0};
  c.rce_t_ladder = {1.0, 1e6};
  c.n_examples = 12;
  c.out_dir = out_dir;
  return c;
}

const Benchmark& tiny() {
  static const Benchmark b = prepare_benchmark(tiny_config(scratch("tiny_out").string()));
  return b;
}

}  // namespace

TEST(Asr, CountsMisclassifications) {
  const Model& m = tiny().surrogate.model;
  const auto& ex = tiny().clean.data.examples;
  std::vector<Tensor> xs;
  std::vector<std::size_t> right, wrong;
  for (const auto& e : ex) {
    xs.push_back(e.x);
    right.push_back(e.y);
    wrong.push_back((e.y + 1) % 5);
  }
  EXPECT_EQ(asr(xs, right, m), 0.0);
  EXPECT_EQ(asr(xs, wrong, m), 100.0);
  EXPECT_EQ(asr(xs, wrong, m, right), 100.0);
  EXPECT_EQ(asr(xs, wrong, m, wrong), 0.0);
  EXPECT_THROW(asr({}, {}, m), Error);
  EXPECT_THROW(asr(xs, {0}, m), Error);
}

TEST(Benchmark, CleanSelectionAndTargets) {
  const auto& b = tiny();
  ASSERT_FALSE(b.clean.data.examples.empty());
  ASSERT_EQ(b.target_labels.size(), b.clean.data.size());
  for (std::size_t i = 0; i < b.clean.data.size(); ++i) {
    const auto& ex = b.clean.data.examples[i];
    for (const Model* m : b.all_models()) EXPECT_EQ(predict(*m, ex.x), ex.y);
    EXPECT_NE(b.target_labels[i], ex.y);
    EXPECT_LT(b.target_labels[i], 5u);
  }
  EXPECT_EQ(b.model_names(), (std::vector<std::string>{"res", "mlp-a", "mlp-b"}));
}

TEST(Benchmark, CacheReloadsIdenticalModels) {
  const auto cache = scratch("cache");
  auto cfg = tiny_config(scratch("cache_out").string());
  const auto a = prepare_benchmark(cfg, cache);
  ASSERT_TRUE(std::filesystem::exists(cache / "res.fztm"));
  const auto b = prepare_benchmark(cfg, cache);
  EXPECT_TRUE(b.surrogate.history.epochs.empty());
  EXPECT_EQ(encode_checkpoint(a.surrogate.model), encode_checkpoint(b.surrogate.model));
  EXPECT_EQ(encode_checkpoint(a.surrogate.model), encode_checkpoint(tiny().surrogate.model));
  EXPECT_EQ(a.clean.source_indices, b.clean.source_indices);

  // a changed architecture must not pick up the stale checkpoint
  cfg.surrogate.arch.hidden_widths = {20};
  const auto c = prepare_benchmark(cfg, cache);
  EXPECT_FALSE(c.surrogate.history.epochs.empty());
}

TEST(RunCell, ScoresAndAudit) {
  const auto& b = tiny();
  const auto cell = run_cell(b, b.cfg.attacks[0], LossSpec::ce());
  ASSERT_EQ(cell.model_asr.size(), 3u);
  ASSERT_EQ(cell.traces.size(), b.clean.data.size());
  EXPECT_EQ(cell.audit.violations, 0u);
  EXPECT_EQ(cell.audit.iterates, b.clean.data.size() * 5);
  EXPECT_DOUBLE_EQ(cell.avg_victim_asr, (cell.model_asr[1] + cell.model_asr[2]) / 2);

  std::vector<Tensor> adv;
  for (const auto& t : cell.traces) adv.push_back(t.adversarial);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(cell.model_asr[k], asr(adv, b.labels(), *b.all_models()[k]));
  EXPECT_EQ(cell.mean_fuzziness, average_fuzziness(cell.traces));

  // surrogate-only rate from its definition
  double only = 0.0;
  for (std::size_t v = 1; v < 3; ++v) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const auto y = b.labels()[i];
      n += predict(b.surrogate.model, adv[i]) != y && predict(*b.all_models()[v], adv[i]) == y;
    }
    only += 100.0 * static_cast<double>(n) / static_cast<double>(adv.size());
  }
  EXPECT_NEAR(cell.surrogate_only_rate, only / 2, 1e-12);
}

TEST(RunCell, LossesShareRandomness) {
  const auto& b = tiny();
  const auto& vmi = b.cfg.attacks[1];
  const auto ce = run_cell(b, vmi, LossSpec::ce());
  const auto fce = run_cell(b, vmi, LossSpec::fce(1, 1));
  ASSERT_EQ(ce.traces.size(), fce.traces.size());
  for (std::size_t i = 0; i < ce.traces.size(); ++i) EXPECT_TRUE(trace_bytes(ce.traces[i]) == trace_bytes(fce.traces[i]));
}

TEST(RunCell, TargetedScoresAgainstTargets) {
  const auto& b = tiny();
  const auto cell = run_cell(b, b.cfg.attacks[0], LossSpec::ce(), true);
  EXPECT_TRUE(cell.targeted);
  std::vector<Tensor> adv;
  for (const auto& t : cell.traces) adv.push_back(t.adversarial);
  EXPECT_EQ(cell.model_asr[1], asr(adv, b.labels(), b.victims[0].model, b.target_labels));
}

TEST(Matrix, RowsCsvAndAverages) {
  const auto& b = tiny();
  const auto res = run_matrix(b);
  ASSERT_EQ(res.table.rows.size(), b.cfg.attacks.size() * b.cfg.losses.size());
  EXPECT_EQ(res.audit.violations, 0u);
  for (std::size_t a = 0; a < b.cfg.attacks.size(); ++a) {
    const auto& ce = res.table.rows[a * 3];
    const auto& fce11 = res.table.rows[a * 3 + 1];
    EXPECT_TRUE(ce.error.empty());
    EXPECT_EQ(ce.asr, fce11.asr);
    EXPECT_EQ(res.cells[a * 3].mean_fuzziness, res.cells[a * 3 + 1].mean_fuzziness);
  }

  const auto csv = lines(slurp(std::filesystem::path(b.cfg.out_dir) / "matrix.csv"));
  ASSERT_EQ(csv.front(), "attack,loss,K,T,model,asr,is_surrogate");
  ASSERT_EQ(csv.size(), 1 + res.table.rows.size() * 3);
  // recompute Average from the per-model rows
  for (std::size_t r = 0; r < res.table.rows.size(); ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto f = fields(csv[1 + r * 3 + k]);
      ASSERT_EQ(f.size(), 7u);
      EXPECT_EQ(f[6], k == 0 ? "1" : "0");
      EXPECT_EQ(f[4], b.model_names()[k]);
      if (k > 0) sum += std::stod(f[5]);
    }
    EXPECT_NEAR(sum / 2, res.table.rows[r].average, 1e-4);
  }
  const auto fuzz = lines(slurp(std::filesystem::path(b.cfg.out_dir) / "fuzziness.csv"));
  EXPECT_EQ(fuzz.front(), "attack,loss,step,mean_fuzziness");
  EXPECT_EQ(fuzz.size(), 1 + res.cells.size() * 5);
  EXPECT_NE(std::find(fuzz.begin(), fuzz.end(), "I-FGSM,FCE(K=1.4;T=4),0," + fmt6(res.cells[2].mean_fuzziness[0])),
            fuzz.end());
}

TEST(Matrix, CsvBytesAreReproducible) {
  const auto d1 = scratch("repro1"), d2 = scratch("repro2");
  auto c1 = tiny_config(d1.string());
  auto c2 = tiny_config(d2.string());
  c1.attacks.resize(1);
  c2.attacks.resize(1);
  run_matrix(prepare_benchmark(c1));
  run_matrix(prepare_benchmark(c2));
  EXPECT_EQ(slurp(d1 / "matrix.csv"), slurp(d2 / "matrix.csv"));
  EXPECT_EQ(slurp(d1 / "fuzziness.csv"), slurp(d2 / "fuzziness.csv"));
}

TEST(Format, SixSignificantDigits) {
  EXPECT_EQ(fmt6(2.0 / 3.0), "0.666667");
  EXPECT_EQ(fmt6(100.0), "100");
  EXPECT_EQ(fmt6(1e6), "1e+06");
  EXPECT_EQ(fmt6(12.5), "12.5");
  EXPECT_EQ(fmt6(0.0313725), "0.0313725");
}

TEST(SweepGrid, AxesAndCartesian) {
  auto cfg = standard_config();
  const auto axes = sweep_grid(cfg);
  std::set<std::pair<double, double>> expected{{1.0, 1.0}};
  for (double K : default_k_grid()) expected.insert({K, 1.0});
  for (double T : default_t_grid()) expected.insert({1.0, T});
  EXPECT_TRUE((std::set<std::pair<double, double>>(axes.begin(), axes.end()) == expected));
  EXPECT_EQ(axes.size(), expected.size());
  EXPECT_TRUE(axes.front() == std::make_pair(1.0, 1.0));

  cfg.grid_mode = GridMode::Cartesian;
  cfg.k_grid = {0.5, 2.0};
  cfg.t_grid = {0.5, 3.0, 4.0};
  EXPECT_EQ(sweep_grid(cfg).size(), 7u);
}

TEST(SweepGrid, BestCellTieBreak) {
  std::vector<SweepCell> cells{{1.0, 1.0, 50}, {0.6, 1.0, 50}, {1.0, 0.5, 50}, {0.6, 0.4, 50}, {2.0, 1.0, 49}};
  EXPECT_EQ(best_cell_index(cells), 3u);
  cells[4].avg_victim_asr = 50.5;
  EXPECT_EQ(best_cell_index(cells), 4u);
  EXPECT_THROW(best_cell_index({}), Error);
}

TEST(SweepKt, CellsMatchRunCell) {
  const auto& b = tiny();
  const auto s = sweep_kt(b, b.cfg.attacks[0]);
  ASSERT_EQ(s.cells.size(), sweep_grid(b.cfg).size());
  EXPECT_EQ(s.audit.violations, 0u);
  const auto* c = s.find(2.0, 1.0);
  ASSERT_NE(c, nullptr);
  const auto direct = run_cell(b, b.cfg.attacks[0], LossSpec::fce(2.0, 1.0));
  EXPECT_EQ(c->avg_victim_asr, direct.avg_victim_asr);
  EXPECT_EQ(c->surrogate_asr, direct.model_asr[0]);
  EXPECT_EQ(c->final_fuzziness, direct.mean_fuzziness.back());
  EXPECT_EQ(s.best, best_cell_index(s.cells));
  const auto csv = lines(slurp(std::filesystem::path(b.cfg.out_dir) / "sweep_I_FGSM.csv"));
  EXPECT_EQ(csv.front(), "attack,loss,K,T,avg_victim_asr,surrogate_asr");
  EXPECT_EQ(csv.size(), 1 + s.cells.size());
}

TEST(EpsilonSweep, OnePointPerBudget) {
  const auto& b = tiny();
  ConstraintAudit audit;
  const auto pts = epsilon_sweep(b, b.cfg.attacks[0], LossSpec::ce(), &audit);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].eps, 4.0 / 255.0);
  EXPECT_EQ(audit.violations, 0u);
  EXPECT_GT(audit.iterates, 0u);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(b.cfg.out_dir) / "eps_sweep.csv"));
}

TEST(RceComparison, ShapesAndTargetedScoring) {
  const auto& b = tiny();
  const std::vector<std::pair<double, double>> best{{1.0, 4.0}, {2.0, 1.0}};
  const auto rc = rce_comparison(b, b.cfg.attacks[0], best);
  ASSERT_EQ(rc.tce_target.size(), 2u);
  ASSERT_EQ(rc.untarget.rows.size(), 4u);
  EXPECT_EQ(rc.untarget.rows[0].loss, "RCE");
  EXPECT_EQ(rc.untarget.rows[1].T, 4.0);
  EXPECT_EQ(rc.untarget.rows[3].K, 2.0);
  EXPECT_EQ(rc.audit.violations, 0u);
  const auto direct = run_cell(b, b.cfg.attacks[0], LossSpec::rce(), true);
  EXPECT_EQ(rc.rce_target.avg_victim_asr, direct.avg_victim_asr);
  EXPECT_THROW(rce_comparison(b, b.cfg.attacks[0], {{1.0, 1.0}}), Error);
}

TEST(DomainCounts, PartitionTheBatch) {
  const auto& b = tiny();
  const auto ce = run_cell(b, b.cfg.attacks[0], LossSpec::ce());
  const auto thresholds = calibrate_thresholds(ce.traces);
  const auto dc = domain_counts(b, ce, thresholds, b.cfg.attacks[0].eps);
  EXPECT_EQ(dc.overfitting + dc.underfitting + dc.outside, ce.traces.size());
  EXPECT_GE(dc.overfitting, 1u);
  EXPECT_GE(dc.underfitting, 1u);
}

TEST(Config, JsonRoundTrip) {
  const auto cfg = tiny_config("some/dir");
  const auto j = to_json(cfg);
  const auto back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.attacks[1].n_vmi, 3u);
  EXPECT_EQ(back.losses[2], LossSpec::fce(1.4, 4));
  EXPECT_EQ(to_json(config_from_json(nlohmann::json::object())), to_json(standard_config()));
}

TEST(Config, ShippedConfigsLoad) {
  const std::filesystem::path dir(FUZZTUNE_CONFIG_DIR);
  EXPECT_EQ(to_json(load_config((dir / "standard.json").string())), to_json(standard_config()));
  const auto quick = load_config((dir / "quick.json").string());
  EXPECT_EQ(quick.attacks.size(), 3u);
  EXPECT_EQ(quick.attacks[2].n_fia, 10u);
  EXPECT_EQ(quick.attacks[2].eps, AttackSpec::defaults(AttackFamily::FIA).eps);
  EXPECT_EQ(sweep_grid(quick).size(), 12u);
}

TEST(Audit, ViolationsBlockTableOutput) {
  AttackTrace t;
  const Tensor x(std::vector<double>{0.5, 0.5});
  t.steps.push_back({x, 0, 0, 0});
  t.steps.push_back({Tensor(std::vector<double>{0.5, 0.6}), 0, 0, 0});
  t.steps.push_back({Tensor(std::vector<double>{0.5, 1.01}), 0, 0, 0});
  const auto a = audit_trace(t, x, 0.1);
  EXPECT_EQ(a.iterates, 3u);
  EXPECT_EQ(a.violations, 1u);
  try {
    require_clean_audit(a);
    FAIL() << "violations accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConstraintViolation);
  }
  EXPECT_NO_THROW(require_clean_audit(ConstraintAudit{5, 0}));
}

TEST(Config, RejectsInvalidValues) {
  auto j = to_json(standard_config());
  j["k_grid"] = {0.0};
  EXPECT_THROW(config_from_json(j), Error);
  j = to_json(standard_config());
  j["grid_mode"] = "diagonal";
  EXPECT_THROW(config_from_json(j), Error);
  j = to_json(standard_config());
  j["victims"] = nlohmann::json::array();
  EXPECT_THROW(config_from_json(j), Error);
  j = to_json(standard_config());
  j["attacks"][0]["family"] = "XX-FGSM";
  EXPECT_THROW(config_from_json(j), Error);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}
