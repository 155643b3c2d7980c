#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "svsl/harness.hpp"
#include "svsl/model_io.hpp"

namespace svsl::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ConfigArgs {
  std::string config;
  std::string preset;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "JSON run config");
  cmd->add_option("--preset", a.preset, "named preset instead of --config");
  cmd->add_option("--set", a.sets, "dotted override key=value (repeatable)");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Config document from --config / --preset / --set, or nullopt when neither source is given.
std::optional<json> resolve_doc(const ConfigArgs& a) {
  if (!a.config.empty() && !a.preset.empty()) throw ConfigError("--config and --preset are mutually exclusive");
  json doc;
  if (!a.preset.empty()) {
    doc = preset_config(a.preset);
  } else if (!a.config.empty()) {
    doc = read_json_file(a.config);
  } else if (a.sets.empty()) {
    return std::nullopt;
  } else {
    throw ConfigError("--set needs --config or --preset");
  }
  for (const auto& s : a.sets) apply_override(doc, s);
  return doc;
}

/// Env block for model-based commands: explicit config first, then the resolved
/// config stored next to the model by `train`.
json env_for_model(const ConfigArgs& a, const fs::path& model_path) {
  if (auto doc = resolve_doc(a)) return parse_run_config(*doc).env;
  const fs::path sibling = model_path.parent_path() / "run_config.resolved.json";
  if (fs::exists(sibling)) return parse_run_config(read_json_file(sibling)).env;
  throw ConfigError("no environment given: pass --config or --preset (no run_config.resolved.json next to the model)");
}

std::vector<std::size_t> parse_grid(const std::string& spec, std::size_t dim) {
  std::vector<std::size_t> counts;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(part, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != part.size() || part.empty() || v <= 0) throw ConfigError("--grid '" + spec + "': expected e.g. 20x20");
    counts.push_back(static_cast<std::size_t>(v));
  }
  if (counts.size() == 1 && dim > 1) counts.assign(dim, counts.front());
  if (counts.size() != dim) {
    throw ConfigError("--grid '" + spec + "' has " + std::to_string(counts.size()) + " axes but the model context has " +
                      std::to_string(dim));
  }
  return counts;
}

void check_model_env(const MoEPolicy& m, const EnvSpec& env) {
  if (m.context_dim() != env.context_dim || m.param_dim() != env.param_dim) {
    throw ConfigError("model dims (d_c=" + std::to_string(m.context_dim()) + ", d_theta=" +
                      std::to_string(m.param_dim()) + ") do not match env '" + env.name + "' (d_c=" +
                      std::to_string(env.context_dim) + ", d_theta=" + std::to_string(env.param_dim) + ")");
  }
}

template <class Writer>
void emit(const std::string& path, std::ostream& out, Writer&& write) {
  if (path.empty()) {
    write(out);
    return;
  }
  std::ofstream file(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  write(file);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Curriculum mixture-of-experts policy search"};
  app.require_subcommand(1);

  ConfigArgs train_cfg;
  std::optional<std::uint64_t> train_seed_opt;
  std::string train_out;
  bool force = false;
  auto* train = app.add_subcommand("train", "train one model per seed");
  add_config_flags(train, train_cfg);
  train->add_option("--seed", train_seed_opt, "single seed (replaces the config's seed list)");
  train->add_option("--out", train_out, "output directory (replaces output_dir)");
  train->add_flag("--force", force, "overwrite existing seed directories");

  ConfigArgs validate_cfg;
  auto* validate = app.add_subcommand("validate-config", "print the resolved config or the first error");
  add_config_flags(validate, validate_cfg);

  ConfigArgs model_cfg;
  std::string model_path;
  std::string grid = "20";
  std::string csv_out;
  std::size_t samples = 100;
  std::size_t contexts = 1600;
  std::size_t entropy_samples = 1000;
  std::uint64_t seed = 0;

  auto* coverage = app.add_subcommand("coverage", "marginal context density, gating argmax and entropy on a grid");
  auto* heatmap = app.add_subcommand("heatmap", "per-cell success rate of the gated conditional means");
  auto* entropy = app.add_subcommand("entropy", "expected mixture entropy over a context grid");
  for (auto* cmd : {coverage, heatmap, entropy}) {
    cmd->add_option("--model", model_path, "model.json")->required();
    add_config_flags(cmd, model_cfg);
    cmd->add_option("--out", csv_out, "CSV output path (default: stdout)");
  }
  for (auto* cmd : {coverage, heatmap}) cmd->add_option("--grid", grid, "cells per axis, e.g. 20x20 or 20");
  heatmap->add_option("--samples", samples, "draws per cell");
  entropy->add_option("--contexts", contexts, "number of grid contexts");
  entropy->add_option("--samples", entropy_samples, "parameter samples per context");
  for (auto* cmd : {heatmap, entropy}) cmd->add_option("--seed", seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* shown = &app;
    for (const auto* sub : app.get_subcommands()) shown = sub;
    out << shown->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (train->parsed()) {
      auto doc = resolve_doc(train_cfg);
      if (!doc) throw ConfigError("train needs --config or --preset");
      if (!train_out.empty()) (*doc)["output_dir"] = train_out;
      if (train_seed_opt) (*doc)["seeds"] = json::array({*train_seed_opt});
      const RunConfig cfg = parse_run_config(*doc);
      for (auto s : cfg.seeds) {
        const auto result = train_seed(cfg, s, force);
        out << "seed " << s << ": " << result.dir.string() << " components=" << result.state.policy.size()
            << " env_samples=" << result.state.env_samples << '\n';
      }
      return 0;
    }
    if (validate->parsed()) {
      auto doc = resolve_doc(validate_cfg);
      if (!doc) throw ConfigError("validate-config needs --config or --preset");
      out << run_config_to_json(parse_run_config(*doc)).dump(2) << '\n';
      return 0;
    }

    MoEPolicy model = load_model(model_path).policy;
    const EnvSpec env = make_env(env_for_model(model_cfg, model_path));
    check_model_env(model, env);

    if (coverage->parsed()) {
      const auto rows = compute_coverage(model, env.context_box, parse_grid(grid, model.context_dim()));
      emit(csv_out, out, [&](std::ostream& o) { write_coverage_csv(o, rows); });
      return 0;
    }
    if (heatmap->parsed()) {
      if (samples == 0) throw ConfigError("--samples must be >= 1");
      Rng rng(seed);
      const auto rows = compute_heatmap(model, env, parse_grid(grid, model.context_dim()), samples, rng);
      emit(csv_out, out, [&](std::ostream& o) { write_heatmap_csv(o, rows); });
      return 0;
    }
    if (entropy->parsed()) {
      if (contexts == 0 || entropy_samples == 0) throw ConfigError("--contexts and --samples must be >= 1");
      Rng rng(seed);
      const auto rows = compute_entropy(model, env.context_box, contexts, entropy_samples, rng);
      double total = 0.0;
      for (const auto& r : rows) total += r.entropy;
      out << "expected_entropy " << format_number(total / static_cast<double>(rows.size())) << '\n';
      if (!csv_out.empty()) emit(csv_out, out, [&](std::ostream& o) { write_entropy_csv(o, rows); });
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ModelFormatError& e) {
    err << "model error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace svsl::cli
