#include "svsl/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <set>

#include "svsl/model_io.hpp"

namespace svsl {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + "." + key + ": unknown key");
  }
}

template <class T>
T get_or(const json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + obj.at(key).dump() + ")");
  }
}

Vector vector_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Box box_from(const json& env, const Box& fallback, const std::string& where) {
  Box box = fallback;
  if (env.contains("context_lower")) box.lower = vector_from(env.at("context_lower"), where + ".context_lower");
  if (env.contains("context_upper")) box.upper = vector_from(env.at("context_upper"), where + ".context_upper");
  if (box.lower.size() != box.upper.size()) throw ConfigError(where + ": context_lower/context_upper lengths differ");
  if (!(box.lower.array() < box.upper.array()).all()) throw ConfigError(where + ": context_lower must be < context_upper");
  return box;
}

EnvSpec make_reacher_env(const json& env) {
  const std::string where = "env";
  check_keys(env, {"name", "n_links", "link_length", "link_lengths", "obstacles", "context_lower", "context_upper",
                   "goal_weight", "action_weight", "context_penalty", "obstacle_penalty", "success_tolerance"},
             where);
  PlanarReacherConfig cfg;
  if (env.contains("link_lengths")) {
    const Vector l = vector_from(env.at("link_lengths"), where + ".link_lengths");
    cfg.link_lengths.assign(l.data(), l.data() + l.size());
  } else {
    const auto n = get_or<std::size_t>(env, "n_links", 10, where);
    const double len = get_or<double>(env, "link_length", 1.0, where);
    if (n == 0) throw ConfigError(where + ".n_links: must be >= 1");
    cfg.link_lengths.assign(n, len);
  }
  if (env.contains("obstacles")) {
    const auto& obs = env.at("obstacles");
    if (!obs.is_array()) throw ConfigError(where + ".obstacles: expected an array");
    cfg.obstacles.clear();
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const std::string w = where + ".obstacles[" + std::to_string(i) + "]";
      check_keys(obs[i], {"center", "half_extents"}, w);
      if (!obs[i].contains("center") || !obs[i].contains("half_extents")) {
        throw ConfigError(w + ": needs center and half_extents");
      }
      const Vector c = vector_from(obs[i].at("center"), w + ".center");
      const Vector h = vector_from(obs[i].at("half_extents"), w + ".half_extents");
      if (c.size() != 2 || h.size() != 2) throw ConfigError(w + ": center and half_extents must be 2-D");
      cfg.obstacles.push_back({Eigen::Vector2d(c(0), c(1)), Eigen::Vector2d(h(0), h(1))});
    }
  }
  cfg.context_box = box_from(env, cfg.context_box, where);
  if (cfg.context_box.dim() != 2) throw ConfigError(where + ": planar_reacher context box must be 2-D");
  cfg.goal_weight = get_or<double>(env, "goal_weight", cfg.goal_weight, where);
  cfg.action_weight = get_or<double>(env, "action_weight", cfg.action_weight, where);
  cfg.context_penalty = get_or<double>(env, "context_penalty", cfg.context_penalty, where);
  cfg.obstacle_penalty = get_or<double>(env, "obstacle_penalty", cfg.obstacle_penalty, where);
  cfg.success_tolerance = get_or<double>(env, "success_tolerance", cfg.success_tolerance, where);
  return make_planar_reacher(std::move(cfg));
}

EnvSpec make_bimodal_env(const json& env) {
  const std::string where = "env";
  check_keys(env, {"name", "parameter_scale", "parameter_center", "success_tolerance"}, where);
  BimodalConfig cfg;
  cfg.parameter_scale = get_or<double>(env, "parameter_scale", cfg.parameter_scale, where);
  cfg.parameter_center = get_or<double>(env, "parameter_center", cfg.parameter_center, where);
  cfg.success_tolerance = get_or<double>(env, "success_tolerance", cfg.success_tolerance, where);
  return make_bimodal(cfg);
}

EnvSpec make_quadratic_env(const json& env) {
  const std::string where = "env";
  check_keys(env, {"name", "A", "a", "context_lower", "context_upper", "parameter_scale", "success_tolerance"}, where);
  for (const char* key : {"A", "a", "context_lower", "context_upper"}) {
    if (!env.contains(key)) throw ConfigError(where + "." + key + ": required for quadratic_toy");
  }
  QuadraticToyConfig cfg;
  cfg.a = vector_from(env.at("a"), where + ".a");
  const auto& rows = env.at("A");
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(cfg.a.size())) {
    throw ConfigError(where + ".A: expected one row per entry of a");
  }
  cfg.context_box = box_from(env, Box{}, where);
  cfg.A.resize(cfg.a.size(), static_cast<Eigen::Index>(cfg.context_box.dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Vector row = vector_from(rows[r], where + ".A[" + std::to_string(r) + "]");
    if (row.size() != cfg.A.cols()) throw ConfigError(where + ".A: row length must equal the context dimension");
    cfg.A.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  cfg.parameter_scale = get_or<double>(env, "parameter_scale", cfg.parameter_scale, where);
  cfg.success_tolerance = get_or<double>(env, "success_tolerance", cfg.success_tolerance, where);
  return make_quadratic_toy(std::move(cfg));
}

}  // namespace

// ----------------------------------------------------------- hyperparams

json hyperparams_to_json(const HyperParams& hp) {
  return {{"alpha", hp.alpha},
          {"beta", hp.beta},
          {"beta_w", hp.beta_w},
          {"n_components", hp.n_components},
          {"iters_per_component", hp.iters_per_component},
          {"finetune_every", hp.finetune_every},
          {"samples_per_iter", hp.samples_per_iter},
          {"buffer_capacity", hp.buffer_capacity},
          {"deletion_weight_threshold", hp.deletion_weight_threshold},
          {"deletion_check_enabled", hp.deletion_check_enabled},
          {"epsilon_expert", hp.epsilon_expert},
          {"epsilon_context", hp.epsilon_context},
          {"epsilon_weights", hp.epsilon_weights},
          {"ridge", hp.ridge},
          {"nw_bandwidth_factor", hp.nw_bandwidth_factor},
          {"weight_update_iters", hp.weight_update_iters},
          {"metrics_entropy_contexts", hp.metrics_entropy_contexts},
          {"metrics_entropy_samples", hp.metrics_entropy_samples}};
}

HyperParams hyperparams_from_json(const json& j, HyperParams hp) {
  const std::string w = "hyperparams";
  if (!j.is_object()) throw ConfigError(w + ": expected an object");
  const json known = hyperparams_to_json(hp);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError(w + "." + key + ": unknown key");
  }
  hp.alpha = get_or(j, "alpha", hp.alpha, w);
  hp.beta = get_or(j, "beta", hp.beta, w);
  hp.beta_w = get_or(j, "beta_w", hp.beta_w, w);
  hp.n_components = get_or(j, "n_components", hp.n_components, w);
  hp.iters_per_component = get_or(j, "iters_per_component", hp.iters_per_component, w);
  hp.finetune_every = get_or(j, "finetune_every", hp.finetune_every, w);
  hp.samples_per_iter = get_or(j, "samples_per_iter", hp.samples_per_iter, w);
  hp.buffer_capacity = get_or(j, "buffer_capacity", hp.buffer_capacity, w);
  hp.deletion_weight_threshold = get_or(j, "deletion_weight_threshold", hp.deletion_weight_threshold, w);
  hp.deletion_check_enabled = get_or(j, "deletion_check_enabled", hp.deletion_check_enabled, w);
  hp.epsilon_expert = get_or(j, "epsilon_expert", hp.epsilon_expert, w);
  hp.epsilon_context = get_or(j, "epsilon_context", hp.epsilon_context, w);
  hp.epsilon_weights = get_or(j, "epsilon_weights", hp.epsilon_weights, w);
  hp.ridge = get_or(j, "ridge", hp.ridge, w);
  hp.nw_bandwidth_factor = get_or(j, "nw_bandwidth_factor", hp.nw_bandwidth_factor, w);
  hp.weight_update_iters = get_or(j, "weight_update_iters", hp.weight_update_iters, w);
  hp.metrics_entropy_contexts = get_or(j, "metrics_entropy_contexts", hp.metrics_entropy_contexts, w);
  hp.metrics_entropy_samples = get_or(j, "metrics_entropy_samples", hp.metrics_entropy_samples, w);
  return hp;
}

// ---------------------------------------------------------------- presets

std::vector<std::string> preset_names() {
  return {"planar_reacher_paper", "bimodal_ablation", "reacher5_curriculum", "quadratic_toy"};
}

json preset_config(const std::string& name) {
  HyperParams hp;
  json env;
  std::string out = "runs/" + name;
  if (name == "planar_reacher_paper") {
    env = {{"name", "planar_reacher"}};
    hp.alpha = 1e-4;
    hp.beta = 1.0;
    hp.beta_w = 1.0;
    hp.n_components = 60;
    hp.iters_per_component = 350;
    hp.finetune_every = 50;
  } else if (name == "bimodal_ablation") {
    env = {{"name", "bimodal"}};
    hp.alpha = 1.0;
    hp.beta = 1.0;
    hp.beta_w = 1.0;
    hp.n_components = 2;
    hp.iters_per_component = 150;
    hp.finetune_every = 50;
  } else if (name == "reacher5_curriculum") {
    env = {{"name", "planar_reacher"},
           {"n_links", 5},
           {"link_length", 0.5},
           {"obstacles", json::array()},
           {"context_lower", {1.5, -2.0}},
           {"context_upper", {2.4, 2.0}}};
    hp.alpha = 1e-3;
    hp.beta = 0.5;
    hp.beta_w = 1.0;
    hp.n_components = 10;
    hp.iters_per_component = 200;
    hp.finetune_every = 50;
  } else if (name == "quadratic_toy") {
    env = {{"name", "quadratic_toy"},
           {"A", {{1.0, 0.0}, {0.0, 1.0}, {0.5, -0.5}}},
           {"a", {0.5, -0.5, 0.0}},
           {"context_lower", {-1.0, -1.0}},
           {"context_upper", {1.0, 1.0}}};
    hp.alpha = 0.0;
    hp.beta = 1.0;
    hp.n_components = 1;
    hp.iters_per_component = 50;
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += " " + n;
    throw ConfigError("preset '" + name + "' is unknown; available:" + names);
  }
  return {{"env", env},
          {"hyperparams", hyperparams_to_json(hp)},
          {"ablation_zero_aux", false},
          {"output_dir", out},
          {"seeds", json::array({0})}};
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set '" + assignment + "': empty key segment");
    if (!node->is_object()) throw ConfigError("--set '" + assignment + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  check_keys(doc, {"env", "hyperparams", "ablation_zero_aux", "output_dir", "seeds"}, "config");
  if (!doc.contains("env")) throw ConfigError("env: required key is missing");
  const auto& env = doc.at("env");
  if (!env.is_object() || !env.contains("name") || !env.at("name").is_string()) {
    throw ConfigError("env.name: required string key is missing");
  }
  RunConfig cfg;
  cfg.env = env;
  try {
    (void)make_env(env);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("env: ") + e.what());
  }
  if (doc.contains("hyperparams")) cfg.hyperparams = hyperparams_from_json(doc.at("hyperparams"));
  cfg.ablation_zero_aux = get_or(doc, "ablation_zero_aux", false, "config");
  cfg.output_dir = get_or<std::string>(doc, "output_dir", "runs", "config");
  if (doc.contains("seeds")) {
    const auto& seeds = doc.at("seeds");
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds: expected a non-empty array of integers");
    cfg.seeds.clear();
    for (const auto& s : seeds) {
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0) throw ConfigError("seeds: entries must be non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  try {
    cfg.hyperparams.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json seeds = json::array();
  for (auto s : cfg.seeds) seeds.push_back(s);
  return {{"env", cfg.env},
          {"hyperparams", hyperparams_to_json(cfg.hyperparams)},
          {"ablation_zero_aux", cfg.ablation_zero_aux},
          {"output_dir", cfg.output_dir.string()},
          {"seeds", seeds}};
}

EnvSpec make_env(const json& env_block) {
  if (!env_block.is_object() || !env_block.contains("name")) throw ConfigError("env.name: required key is missing");
  const auto name = get_or<std::string>(env_block, "name", "", "env");
  if (name == "planar_reacher") return make_reacher_env(env_block);
  if (name == "bimodal") return make_bimodal_env(env_block);
  if (name == "quadratic_toy") return make_quadratic_env(env_block);
  throw ConfigError("env.name: '" + name + "' is not one of planar_reacher, bimodal, quadratic_toy");
}

// -------------------------------------------------------------------- csv

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_metrics_csv(std::ostream& out, const std::vector<IterationMetrics>& metrics) {
  out << "iter,env_samples,rejected_samples,n_components,mean_reward,expected_entropy,mean_ctx_kl,mean_expert_kl\n";
  for (const auto& m : metrics) {
    out << m.iter << ',' << m.env_samples << ',' << m.rejected_samples << ',' << m.n_components << ','
        << format_number(m.mean_reward) << ',' << format_number(m.expected_entropy) << ','
        << format_number(m.mean_ctx_kl) << ',' << format_number(m.mean_expert_kl) << '\n';
  }
}

std::vector<Vector> grid_points(const Box& box, const std::vector<std::size_t>& counts) {
  require_dim(box.dim(), counts.size(), "grid_points");
  std::size_t total = 1;
  for (auto n : counts) {
    if (n == 0) throw std::invalid_argument("grid_points: every axis needs at least one cell");
    total *= n;
  }
  const Vector width = box.width();
  std::vector<Vector> pts;
  pts.reserve(total);
  std::vector<std::size_t> idx(counts.size(), 0);
  for (std::size_t k = 0; k < total; ++k) {
    Vector c(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t d = 0; d < counts.size(); ++d) {
      const auto i = static_cast<Eigen::Index>(d);
      c(i) = box.lower(i) + (static_cast<double>(idx[d]) + 0.5) * width(i) / static_cast<double>(counts[d]);
    }
    pts.push_back(std::move(c));
    // last axis varies fastest
    for (std::size_t d = counts.size(); d-- > 0;) {
      if (++idx[d] < counts[d]) break;
      idx[d] = 0;
    }
  }
  return pts;
}

namespace {

void write_context_header(std::ostream& out, std::size_t dim) {
  for (std::size_t d = 0; d < dim; ++d) out << 'c' << d << ',';
}

void write_context(std::ostream& out, const Vector& c) {
  for (Eigen::Index i = 0; i < c.size(); ++i) out << format_number(c(i)) << ',';
}

}  // namespace

std::vector<CoverageRow> compute_coverage(const MoEPolicy& m, const Box& box, const std::vector<std::size_t>& counts) {
  require_dim(m.context_dim(), box.dim(), "coverage grid");
  std::vector<CoverageRow> rows;
  for (auto& c : grid_points(box, counts)) {
    const Vector g = gating(m, c);
    Eigen::Index best = 0;
    g.maxCoeff(&best);
    double h = 0.0;
    for (Eigen::Index o = 0; o < g.size(); ++o) {
      if (g(o) > 0.0) h -= g(o) * std::log(g(o));
    }
    const double ld = marginal_context_log_density(m, c);
    rows.push_back({std::move(c), ld, static_cast<std::size_t>(best), h});
  }
  return rows;
}

void write_coverage_csv(std::ostream& out, const std::vector<CoverageRow>& rows) {
  write_context_header(out, rows.empty() ? 0 : static_cast<std::size_t>(rows.front().c.size()));
  out << "log_density,argmax_component,gating_entropy\n";
  for (const auto& r : rows) {
    write_context(out, r.c);
    out << format_number(r.log_density) << ',' << r.argmax_component << ',' << format_number(r.gating_entropy) << '\n';
  }
}

double coverage_fraction(const MoEPolicy& m, const Box& box, const std::vector<std::size_t>& counts,
                         double density_threshold) {
  const auto rows = compute_coverage(m, box, counts);
  const double log_thr = std::log(density_threshold);
  std::size_t covered = 0;
  for (const auto& r : rows) covered += r.log_density > log_thr ? 1 : 0;
  return static_cast<double>(covered) / static_cast<double>(rows.size());
}

std::vector<HeatmapRow> compute_heatmap(const MoEPolicy& m, const EnvSpec& env, const std::vector<std::size_t>& counts,
                                        std::size_t samples_per_cell, Rng& rng) {
  if (!env.success) throw std::invalid_argument("heatmap: environment has no success predicate");
  if (samples_per_cell == 0) throw std::invalid_argument("heatmap: samples per cell must be >= 1");
  require_dim(m.context_dim(), env.context_dim, "heatmap model/env context");
  require_dim(m.param_dim(), env.param_dim, "heatmap model/env parameters");
  std::vector<HeatmapRow> rows;
  for (auto& c : grid_points(env.context_box, counts)) {
    const Vector g = gating(m, c);
    std::size_t hits = 0;
    for (std::size_t s = 0; s < samples_per_cell; ++s) {
      const std::size_t o = sample_index(g, rng);
      hits += env.success(m.expert(o).conditional_mean(c), c) ? 1 : 0;
    }
    rows.push_back({std::move(c), static_cast<double>(hits) / static_cast<double>(samples_per_cell)});
  }
  return rows;
}

void write_heatmap_csv(std::ostream& out, const std::vector<HeatmapRow>& rows) {
  write_context_header(out, rows.empty() ? 0 : static_cast<std::size_t>(rows.front().c.size()));
  out << "success_rate\n";
  for (const auto& r : rows) {
    write_context(out, r.c);
    out << format_number(r.success_rate) << '\n';
  }
}

std::vector<std::size_t> grid_counts_for(std::size_t n_contexts, std::size_t dim) {
  if (n_contexts == 0 || dim == 0) throw std::invalid_argument("grid_counts_for: need positive counts");
  const auto per_axis = static_cast<std::size_t>(
      std::max(1.0, std::round(std::pow(static_cast<double>(n_contexts), 1.0 / static_cast<double>(dim)))));
  return std::vector<std::size_t>(dim, per_axis);
}

std::vector<EntropyRow> compute_entropy(const MoEPolicy& m, const Box& box, std::size_t n_contexts,
                                        std::size_t n_samples, Rng& rng) {
  require_dim(m.context_dim(), box.dim(), "entropy grid");
  std::vector<EntropyRow> rows;
  for (auto& c : grid_points(box, grid_counts_for(n_contexts, box.dim()))) {
    const double h = mixture_entropy_at(m, c, n_samples, rng);
    rows.push_back({std::move(c), h});
  }
  return rows;
}

void write_entropy_csv(std::ostream& out, const std::vector<EntropyRow>& rows) {
  write_context_header(out, rows.empty() ? 0 : static_cast<std::size_t>(rows.front().c.size()));
  out << "entropy\n";
  for (const auto& r : rows) {
    write_context(out, r.c);
    out << format_number(r.entropy) << '\n';
  }
}

// ------------------------------------------------------------------ train

SeedRunResult train_seed(const RunConfig& cfg, std::uint64_t seed, bool force) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir / ("seed_" + std::to_string(seed));
  if (fs::exists(dir) && !force) {
    throw ConfigError("output directory " + dir.string() + " already exists (use --force to overwrite)");
  }
  fs::create_directories(dir);

  HyperParams hp = cfg.hyperparams;
  hp.seed = seed;
  hp.zero_aux = cfg.ablation_zero_aux;
  if (const char* t = std::getenv("SVSL_THREADS")) hp.threads = static_cast<std::size_t>(std::strtoull(t, nullptr, 10));
  const EnvSpec env = make_env(cfg.env);

  RunConfig resolved = cfg;
  resolved.seeds = {seed};
  {
    std::ofstream out(dir / "run_config.resolved.json");
    out << run_config_to_json(resolved).dump(2) << '\n';
  }

  TrainState state = run(hp, env);

  save_model(dir / "model.json", state.policy, hp.alpha, hp.beta);
  {
    std::ofstream out(dir / "metrics.csv");
    write_metrics_csv(out, state.metrics);
  }
  return {dir, std::move(state)};
}

}  // namespace svsl
