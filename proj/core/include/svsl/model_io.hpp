#pragma once

#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "svsl/moe.hpp"

namespace svsl {

inline constexpr int kModelFormatVersion = 1;

/// A model file couldn't be parsed or failed validation.
class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A policy together with the entropy scales it was trained with.
struct ModelDocument {
  MoEPolicy policy;
  double alpha = 0.0;
  double beta = 0.0;
};

/// Covariances are written in full (row-major), never as factors.
nlohmann::json model_to_json(const MoEPolicy& m, double alpha, double beta);
/// Re-factorizes every covariance; non-PD input raises ModelFormatError.
ModelDocument model_from_json(const nlohmann::json& doc);

void save_model(const std::filesystem::path& path, const MoEPolicy& m, double alpha, double beta);
ModelDocument load_model(const std::filesystem::path& path);

}  // namespace svsl
