#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svsl/envs.hpp"
#include "svsl/moe.hpp"
#include "svsl/trainer.hpp"

namespace svsl {

/// Invalid experiment configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  nlohmann::json env;  ///< {"name": ..., env-specific keys}
  HyperParams hyperparams;
  bool ablation_zero_aux = false;
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};
};

nlohmann::json hyperparams_to_json(const HyperParams& hp);
/// Starts from `base` and overwrites the keys present in `j`; unknown keys are rejected.
HyperParams hyperparams_from_json(const nlohmann::json& j, HyperParams base = {});

/// Names accepted by `preset_config`.
std::vector<std::string> preset_names();
/// Complete config document for a named preset; throws ConfigError for unknown names.
nlohmann::json preset_config(const std::string& name);

/// Applies one dotted-key override "a.b.c=value". The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig parse_run_config(const nlohmann::json& doc);
/// Fully resolved document; parse_run_config(run_config_to_json(c)) reproduces c.
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Builds the environment described by an env block ({"name": ..., ...}).
EnvSpec make_env(const nlohmann::json& env_block);

/// "%.17g" rendering (17 significant digits).
std::string format_number(double v);

void write_metrics_csv(std::ostream& out, const std::vector<IterationMetrics>& metrics);

/// Cell centres of a uniform grid over `box` with counts[i] cells along dimension i.
std::vector<Vector> grid_points(const Box& box, const std::vector<std::size_t>& counts);

struct CoverageRow {
  Vector c;
  double log_density;
  std::size_t argmax_component;
  double gating_entropy;
};

std::vector<CoverageRow> compute_coverage(const MoEPolicy& m, const Box& box, const std::vector<std::size_t>& counts);
void write_coverage_csv(std::ostream& out, const std::vector<CoverageRow>& rows);

/// Fraction of grid cells whose marginal context density exceeds `density_threshold`.
double coverage_fraction(const MoEPolicy& m, const Box& box, const std::vector<std::size_t>& counts,
                         double density_threshold);

struct HeatmapRow {
  Vector c;
  double success_rate;
};

/// Per cell: sample a component from the gating, execute its conditional mean, record success.
std::vector<HeatmapRow> compute_heatmap(const MoEPolicy& m, const EnvSpec& env, const std::vector<std::size_t>& counts,
                                        std::size_t samples_per_cell, Rng& rng);
void write_heatmap_csv(std::ostream& out, const std::vector<HeatmapRow>& rows);

struct EntropyRow {
  Vector c;
  double entropy;
};

/// Splits `n_contexts` over the box as a uniform grid (round(n^(1/d)) cells per axis).
std::vector<std::size_t> grid_counts_for(std::size_t n_contexts, std::size_t dim);

std::vector<EntropyRow> compute_entropy(const MoEPolicy& m, const Box& box, std::size_t n_contexts,
                                        std::size_t n_samples, Rng& rng);
void write_entropy_csv(std::ostream& out, const std::vector<EntropyRow>& rows);

struct SeedRunResult {
  std::filesystem::path dir;
  TrainState state;
};

/// Trains one seed and writes model.json, metrics.csv and run_config.resolved.json into
/// output_dir/seed_<seed>. Refuses to touch an existing directory unless `force`.
SeedRunResult train_seed(const RunConfig& cfg, std::uint64_t seed, bool force);

}  // namespace svsl
