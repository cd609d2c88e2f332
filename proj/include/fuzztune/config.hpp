#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuzztune/attacks.hpp"
#include "fuzztune/data.hpp"
#include "fuzztune/train.hpp"

namespace fzt {

struct ModelSpec {
  std::string name;
  ArchSpec arch;
  TrainConfig train;
};

enum class GridMode { Axes, Cartesian };

/// Everything one experiment run needs. Identical config (including
/// master_seed) gives identical outputs.
struct ExperimentConfig {
  SyntheticConfig data{5, 0, 16, 0.1, 1};
  std::size_t train_per_class = 200;
  std::size_t pool_per_class = 200;
  std::size_t test_per_class = 100;

  ModelSpec surrogate;
  std::vector<ModelSpec> victims;

  std::vector<AttackSpec> attacks;
  std::vector<LossSpec> losses;
  std::vector<double> k_grid;
  std::vector<double> t_grid;
  GridMode grid_mode = GridMode::Axes;
  std::vector<double> eps_sweep;
  std::vector<double> rce_t_ladder;

  std::size_t n_examples = 200;
  std::string out_dir = "out";
  std::uint64_t master_seed = 2023;

  void validate() const {
    surrogate.arch.validate();
    require(!victims.empty(), ErrorCode::InvalidArgument, "at least one victim model is required");
    for (const auto& v : victims) v.arch.validate();
    require(!attacks.empty(), ErrorCode::InvalidArgument, "at least one attack is required");
    for (const auto& a : attacks) a.validate();
    for (const auto& l : losses) l.validate();
    for (double k : k_grid) require(k > 0.0, ErrorCode::InvalidArgument, "K grid values must be > 0");
    for (double t : t_grid) require(t > 0.0, ErrorCode::InvalidArgument, "T grid values must be > 0");
    require(n_examples >= 1, ErrorCode::InvalidArgument, "n_examples must be >= 1");
  }
};

/// K in {0.2, ..., 2.0}; T in {0.1, ..., 1.0} u {1, ..., 8}.
inline std::vector<double> default_k_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(0.2 * i);
  return g;
}

inline std::vector<double> default_t_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(0.1 * i);
  for (int i = 2; i <= 8; ++i) g.push_back(static_cast<double>(i));
  return g;
}

inline ModelSpec residual_spec(std::string name, std::size_t input_dim, std::size_t classes, std::size_t width,
                               std::size_t blocks, std::uint64_t seed) {
  ModelSpec m;
  m.name = std::move(name);
  m.arch = ArchSpec{input_dim, classes, ArchKind::Residual, {width}, blocks, seed};
  m.train.seed = seed + 1000;
  return m;
}

inline ModelSpec plain_spec(std::string name, std::size_t input_dim, std::size_t classes,
                            std::vector<std::size_t> widths, std::uint64_t seed) {
  ModelSpec m;
  m.name = std::move(name);
  m.arch = ArchSpec{input_dim, classes, ArchKind::Plain, std::move(widths), 0, seed};
  m.train.seed = seed + 1000;
  return m;
}

/// The desk-scale benchmark: 5-class 16x16 synthetic images, a residual
/// surrogate and three structurally different victims, 200 attacked examples
/// drawn from a 1000-example pool.
inline ExperimentConfig standard_config(std::uint64_t master_seed = 2023) {
  ExperimentConfig c;
  c.master_seed = master_seed;
  c.data = SyntheticConfig{5, 0, 16, 0.1, master_seed};
  const std::size_t d = 16 * 16, C = 5;
  c.surrogate = residual_spec("ResMLP-64x2", d, C, 64, 2, 7);
  c.victims = {plain_spec("MLP-128-64", d, C, {128, 64}, 21), residual_spec("ResMLP-48x3", d, C, 48, 3, 22),
               plain_spec("MLP-96", d, C, {96}, 23)};
  for (auto f : {AttackFamily::IFGSM, AttackFamily::MIFGSM, AttackFamily::SINIFGSM, AttackFamily::VMIFGSM})
    c.attacks.push_back(AttackSpec::defaults(f));
  c.losses = {LossSpec::ce(), LossSpec::fce(1.4, 4.0), LossSpec::rce()};
  c.k_grid = default_k_grid();
  c.t_grid = default_t_grid();
  c.eps_sweep = {2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0};
  c.rce_t_ladder = {1.0, 4.0, 16.0, 64.0, 256.0, 1e3, 1e6};
  return c;
}

inline nlohmann::json to_json(const AttackSpec& a) {
  nlohmann::json j{{"family", to_string(a.family)}, {"eps", a.eps},       {"alpha", a.alpha},
                   {"num_steps", a.num_steps},      {"mu", a.mu},         {"beta", a.beta},
                   {"n_vmi", a.n_vmi},              {"m_scales", a.m_scales}, {"resize_rate", a.resize_rate},
                   {"diversity_prob", a.diversity_prob}, {"p_d", a.p_d}, {"n_fia", a.n_fia},
                   {"gamma", a.gamma},              {"seed", a.seed}};
  if (a.layer_k) j["layer_k"] = *a.layer_k;
  return j;
}

inline AttackSpec attack_from_json(const nlohmann::json& j) {
  AttackSpec a = AttackSpec::defaults(attack_family_from_string(j.at("family").get<std::string>()));
  a.eps = j.value("eps", a.eps);
  a.alpha = j.value("alpha", a.alpha);
  a.num_steps = j.value("num_steps", a.num_steps);
  a.mu = j.value("mu", a.mu);
  a.beta = j.value("beta", a.beta);
  a.n_vmi = j.value("n_vmi", a.n_vmi);
  a.m_scales = j.value("m_scales", a.m_scales);
  a.resize_rate = j.value("resize_rate", a.resize_rate);
  a.diversity_prob = j.value("diversity_prob", a.diversity_prob);
  a.p_d = j.value("p_d", a.p_d);
  a.n_fia = j.value("n_fia", a.n_fia);
  a.gamma = j.value("gamma", a.gamma);
  a.seed = j.value("seed", a.seed);
  if (j.contains("layer_k")) a.layer_k = j.at("layer_k").get<std::size_t>();
  return a;
}

inline nlohmann::json to_json(const LossSpec& l) {
  nlohmann::json j{{"family", to_string(l.family)}, {"K", l.K}, {"T", l.T}};
  if (l.target) j["target"] = *l.target;
  return j;
}

inline LossSpec loss_from_json(const nlohmann::json& j) {
  LossSpec l;
  l.family = loss_family_from_string(j.at("family").get<std::string>());
  l.K = j.value("K", 1.0);
  l.T = j.value("T", 1.0);
  if (j.contains("target")) l.target = j.at("target").get<std::size_t>();
  return l;
}

inline nlohmann::json to_json(const ModelSpec& m) {
  return {{"name", m.name},
          {"arch", to_json(m.arch)},
          {"train",
           {{"epochs", m.train.epochs},
            {"learning_rate", m.train.learning_rate},
            {"batch_size", m.train.batch_size},
            {"seed", m.train.seed},
            {"weight_decay", m.train.weight_decay}}}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec m;
  m.name = j.at("name").get<std::string>();
  m.arch = arch_from_json(j.at("arch"));
  m.train.seed = m.arch.seed + 1000;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    m.train.epochs = t.value("epochs", m.train.epochs);
    m.train.learning_rate = t.value("learning_rate", m.train.learning_rate);
    m.train.batch_size = t.value("batch_size", m.train.batch_size);
    m.train.seed = t.value("seed", m.train.seed);
    m.train.weight_decay = t.value("weight_decay", m.train.weight_decay);
  }
  return m;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["data"] = {{"classes", c.data.classes},
               {"side", c.data.side},
               {"noise_std", c.data.noise_std},
               {"seed", c.data.seed},
               {"train_per_class", c.train_per_class},
               {"pool_per_class", c.pool_per_class},
               {"test_per_class", c.test_per_class}};
  j["surrogate"] = to_json(c.surrogate);
  for (const auto& v : c.victims) j["victims"].push_back(to_json(v));
  for (const auto& a : c.attacks) j["attacks"].push_back(to_json(a));
  for (const auto& l : c.losses) j["losses"].push_back(to_json(l));
  j["k_grid"] = c.k_grid;
  j["t_grid"] = c.t_grid;
  j["grid_mode"] = c.grid_mode == GridMode::Axes ? "axes" : "cartesian";
  j["eps_sweep"] = c.eps_sweep;
  j["rce_t_ladder"] = c.rce_t_ladder;
  j["n_examples"] = c.n_examples;
  j["out_dir"] = c.out_dir;
  j["master_seed"] = c.master_seed;
  return j;
}

/// Keys absent from `j` keep their value from the standard benchmark.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c = standard_config(j.value("master_seed", std::uint64_t{2023}));
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.classes = d.value("classes", c.data.classes);
      c.data.side = d.value("side", c.data.side);
      c.data.noise_std = d.value("noise_std", c.data.noise_std);
      c.data.seed = d.value("seed", c.data.seed);
      c.train_per_class = d.value("train_per_class", c.train_per_class);
      c.pool_per_class = d.value("pool_per_class", c.pool_per_class);
      c.test_per_class = d.value("test_per_class", c.test_per_class);
    }
    if (j.contains("surrogate")) c.surrogate = model_spec_from_json(j.at("surrogate"));
    if (j.contains("victims")) {
      c.victims.clear();
      for (const auto& v : j.at("victims")) c.victims.push_back(model_spec_from_json(v));
    }
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_from_json(a));
    }
    if (j.contains("losses")) {
      c.losses.clear();
      for (const auto& l : j.at("losses")) c.losses.push_back(loss_from_json(l));
    }
    c.k_grid = j.value("k_grid", c.k_grid);
    c.t_grid = j.value("t_grid", c.t_grid);
    if (j.contains("grid_mode")) {
      const auto mode = j.at("grid_mode").get<std::string>();
      require(mode == "axes" || mode == "cartesian", ErrorCode::InvalidArgument, "grid_mode must be axes|cartesian");
      c.grid_mode = mode == "axes" ? GridMode::Axes : GridMode::Cartesian;
    }
    c.eps_sweep = j.value("eps_sweep", c.eps_sweep);
    c.rce_t_ladder = j.value("rce_t_ladder", c.rce_t_ladder);
    c.n_examples = j.value("n_examples", c.n_examples);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open config '" + path + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace fzt
