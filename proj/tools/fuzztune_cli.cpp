#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fuzztune/fuzztune.hpp"

using namespace fzt;
namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config_path.empty() ? standard_config() : load_config(g.config_path);
  if (g.seed) {
    cfg.master_seed = *g.seed;
    cfg.data.seed = *g.seed;
  }
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  return cfg;
}

fs::path model_cache(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "models"; }

Benchmark load_benchmark(const ExperimentConfig& cfg) {
  std::fprintf(stderr, "preparing benchmark (models cached in %s)\n", model_cache(cfg).string().c_str());
  return prepare_benchmark(cfg, model_cache(cfg));
}

AttackSpec configured_attack(const ExperimentConfig& cfg, AttackFamily f) {
  for (const auto& a : cfg.attacks)
    if (a.family == f) return a;
  return AttackSpec::defaults(f);
}

void print_table(const AsrTable& t) {
  std::printf("%-12s %-6s %6s %6s", "attack", "loss", "K", "T");
  for (const auto& m : t.models) std::printf(" %12s", m.c_str());
  std::printf(" %9s\n", "Average");
  for (const auto& r : t.rows) {
    std::printf("%-12s %-6s %6s %6s", r.attack.c_str(), r.loss.c_str(), fmt6(r.K).c_str(), fmt6(r.T).c_str());
    if (!r.error.empty()) {
      std::printf("  error: %s\n", r.error.c_str());
      continue;
    }
    for (double a : r.asr) std::printf(" %12s", fmt6(a).c_str());
    std::printf(" %9s\n", fmt6(r.average).c_str());
  }
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.out_dir) / "data";
  fs::create_directories(dir);
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", cfg.train_per_class}, {"pool", cfg.pool_per_class}, {"test", cfg.test_per_class}};
  std::uint64_t stream = 1;
  for (const auto& [name, per_class] : splits) {
    auto d = cfg.data;
    d.n_per_class = per_class;
    d.seed = derive_seed(cfg.data.seed, stream++);
    const auto ds = generate_synthetic(d);
    const auto images = dir / (std::string(name) + "-images.idx");
    const auto labels = dir / (std::string(name) + "-labels.idx");
    write_idx(ds, images.string(), labels.string());
    std::printf("%-5s %5zu examples -> %s\n", name, ds.size(), images.string().c_str());
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  const auto b = load_benchmark(cfg);
  std::printf("%-14s %10s %9s\n", "model", "params", "test_acc");
  auto row = [](const TrainedModel& m) {
    std::printf("%-14s %10zu %9s\n", m.name.c_str(), m.model.parameter_count(), fmt6(m.test_accuracy).c_str());
  };
  row(b.surrogate);
  for (const auto& v : b.victims) row(v);
  std::printf("%zu of %zu requested examples qualify%s\n", b.clean.data.size(), cfg.n_examples,
              b.clean.shortfall ? " (shortfall)" : "");
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const std::string& attack, const std::string& loss_name, double K,
               double T, bool targeted) {
  LossSpec loss;
  switch (loss_family_from_string(loss_name)) {
    case LossFamily::CE: loss = LossSpec::ce(); break;
    case LossFamily::CCE: loss = LossSpec::cce(K); break;
    case LossFamily::TCE: loss = LossSpec::tce(T); break;
    case LossFamily::FCE: loss = LossSpec::fce(K, T); break;
    case LossFamily::RCE: loss = LossSpec::rce(); break;
    case LossFamily::FIA: loss = LossSpec::fia_logit(); break;
  }
  loss.validate();
  const auto atk = configured_attack(cfg, attack_family_from_string(attack));
  const auto b = load_benchmark(cfg);
  const auto cell = run_cell(b, atk, loss, targeted);
  require_clean_audit(cell.audit);
  AsrTable t{b.model_names(), {to_row(cell)}};
  print_table(t);
  std::printf("final mean fuzziness %s, surrogate-only rate %s%%\n", fmt6(cell.mean_fuzziness.back()).c_str(),
              fmt6(cell.surrogate_only_rate).c_str());
  const fs::path dir(cfg.out_dir);
  write_text(dir / "attack.csv", matrix_csv(t));
  write_text(dir / "attack_fuzziness.csv", fuzziness_csv({cell}));
  return 0;
}

int cmd_matrix(const ExperimentConfig& cfg) {
  const auto b = load_benchmark(cfg);
  const auto res = run_matrix(b);
  print_table(res.table);
  std::printf("audit: %zu iterates, %zu violations\n", res.audit.iterates, res.audit.violations);
  return 0;
}

std::vector<SweepResult> run_sweeps(const Benchmark& b, const std::string& only) {
  std::vector<SweepResult> out;
  for (const auto& atk : b.cfg.attacks) {
    if (!only.empty() && atk.family != attack_family_from_string(only)) continue;
    out.push_back(sweep_kt(b, atk));
    const auto& s = out.back();
    const auto& best = s.best_cell();
    const auto* ce = s.find(1.0, 1.0);
    std::printf("%-10s %zu cells  best K=%s T=%s avg victim ASR %s (CE %s), final fuzziness %s (CE %s)\n",
                s.attack.c_str(), s.cells.size(), fmt6(best.K).c_str(), fmt6(best.T).c_str(),
                fmt6(best.avg_victim_asr).c_str(), fmt6(ce->avg_victim_asr).c_str(),
                fmt6(best.final_fuzziness).c_str(), fmt6(ce->final_fuzziness).c_str());
  }
  require(!out.empty(), ErrorCode::InvalidArgument, "attack '" + only + "' is not in the configuration");
  return out;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& only) {
  const auto b = load_benchmark(cfg);
  run_sweeps(b, only);
  return 0;
}

int cmd_rce_compare(const ExperimentConfig& cfg, const std::string& attack) {
  const auto b = load_benchmark(cfg);
  std::vector<std::pair<double, double>> best_kt;
  for (const auto& s : run_sweeps(b, "")) best_kt.emplace_back(s.best_cell().K, s.best_cell().T);
  const auto rc = rce_comparison(b, configured_attack(cfg, attack_family_from_string(attack)), best_kt);
  std::printf("targeted %s, average victim target-ASR\n", rc.attack.c_str());
  for (const auto& c : rc.tce_target) std::printf("  TCE T=%-8s %s\n", fmt6(c.T).c_str(), fmt6(c.avg_victim_asr).c_str());
  std::printf("  RCE          %s\n", fmt6(rc.rce_target.avg_victim_asr).c_str());
  std::printf("untargeted\n");
  print_table(rc.untarget);
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg) {
  int failures = 0;
  auto report = [&](const char* name, const CheckResult& r) {
    std::printf("%s  %-26s %s\n", r.pass ? "PASS" : "FAIL", name, r.detail.c_str());
    failures += !r.pass;
  };
  report("degeneracy", check_degeneracy());
  report("confidence weight ratio", check_confidence_ratio());
  report("temperature weight ratio", check_temperature_ratio());
  const auto b = load_benchmark(cfg);
  const auto& clean = b.clean.data.examples;
  report("temperature limit", check_temperature_limit(b.surrogate.model, clean));
  std::vector<std::pair<std::string, const Model*>> models{{b.surrogate.name, &b.surrogate.model}};
  for (const auto& v : b.victims) models.emplace_back(v.name, &v.model);
  report("gradient oracle", check_gradient_oracle(models, boundary_probes(clean, 3)));
  report("reduction identities", check_reductions(b.surrogate.model, clean, cfg.master_seed,
                                                   std::min<std::size_t>(20, clean.size())));
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fuzziness-tuned transfer attacks on a synthetic benchmark"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON experiment config (missing keys use the standard benchmark)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed; also seeds the synthetic data");
  app.add_option("--out-dir", g.out_dir, "output directory for CSVs, data and model checkpoints");

  auto* gen = app.add_subcommand("gen-data", "write the train/pool/test splits as IDX files");
  auto* trn = app.add_subcommand("train", "train (or load cached) surrogate and victims, report accuracy");

  auto* atk = app.add_subcommand("attack", "run one attack/loss cell and score it on every model");
  std::string attack = "MI-FGSM", loss = "CE";
  double K = 1.0, T = 1.0;
  bool targeted = false;
  atk->add_option("--attack", attack, "attack family, e.g. MI-FGSM")->capture_default_str();
  atk->add_option("--loss", loss, "CE, CCE, TCE, FCE, RCE or FIA")->capture_default_str();
  atk->add_option("-K", K, "confidence scale")->capture_default_str();
  atk->add_option("-T", T, "temperature")->capture_default_str();
  atk->add_flag("--targeted", targeted, "aim for a random wrong class instead of any misclassification");

  auto* mat = app.add_subcommand("matrix", "attack x loss transfer matrix");
  auto* swp = app.add_subcommand("sweep", "FCE(K, T) grid sweep");
  std::string sweep_attack;
  swp->add_option("--attack", sweep_attack, "sweep one configured attack only");

  auto* rce = app.add_subcommand("rce-compare", "targeted TCE temperature ladder vs RCE, untargeted RCE vs FCE");
  std::string rce_attack = "MI-FGSM";
  rce->add_option("--attack", rce_attack, "attack for the targeted ladder")->capture_default_str();

  auto* ver = app.add_subcommand("verify", "run the loss and gradient property checks");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve_config(g);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (trn->parsed()) return cmd_train(cfg);
    if (atk->parsed()) return cmd_attack(cfg, attack, loss, K, T, targeted);
    if (mat->parsed()) return cmd_matrix(cfg);
    if (swp->parsed()) return cmd_sweep(cfg, sweep_attack);
    if (rce->parsed()) return cmd_rce_compare(cfg, rce_attack);
    if (ver->parsed()) return cmd_verify(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
