#include "svsl/model_io.hpp"

#include <fstream>

namespace svsl {
namespace {

using nlohmann::json;

json to_array(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_rowmajor(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

Vector read_vector(const json& j, std::size_t n, const char* field) {
  if (!j.is_array() || j.size() != n) {
    throw ModelFormatError(std::string("model: field '") + field + "' must be an array of length " + std::to_string(n));
  }
  Vector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix read_rowmajor(const json& j, std::size_t rows, std::size_t cols, const char* field) {
  const Vector flat = read_vector(j, rows * cols, field);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat(static_cast<Eigen::Index>(r * cols + c));
  return m;
}

const json& field(const json& j, const char* key) {
  if (!j.contains(key)) throw ModelFormatError(std::string("model: missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

json model_to_json(const MoEPolicy& m, double alpha, double beta) {
  json doc;
  doc["version"] = kModelFormatVersion;
  doc["d_c"] = m.context_dim();
  doc["d_theta"] = m.param_dim();
  doc["alpha"] = alpha;
  doc["beta"] = beta;
  json comps = json::array();
  for (std::size_t o = 0; o < m.size(); ++o) {
    const auto& ctx = m.context(o);
    const auto& ex = m.expert(o);
    comps.push_back({{"weight", m.weights()[o]},
                     {"ctx_mean", to_array(ctx.mean())},
                     {"ctx_cov_rowmajor", to_rowmajor(ctx.covariance())},
                     {"gain_rowmajor", to_rowmajor(ex.gain())},
                     {"bias", to_array(ex.bias())},
                     {"expert_cov_rowmajor", to_rowmajor(ex.covariance())}});
  }
  doc["components"] = std::move(comps);
  return doc;
}

ModelDocument model_from_json(const json& doc) {
  try {
    if (field(doc, "version").get<int>() != kModelFormatVersion) {
      throw ModelFormatError("model: unsupported version " + field(doc, "version").dump());
    }
    const auto dc = field(doc, "d_c").get<std::size_t>();
    const auto dt = field(doc, "d_theta").get<std::size_t>();
    const auto& comps = field(doc, "components");
    if (!comps.is_array() || comps.empty()) throw ModelFormatError("model: 'components' must be a non-empty array");

    MoEPolicy m(dc, dt);
    Vector weights(static_cast<Eigen::Index>(comps.size()));
    for (std::size_t o = 0; o < comps.size(); ++o) {
      const auto& c = comps[o];
      weights(static_cast<Eigen::Index>(o)) = field(c, "weight").get<double>();
      auto ctx = Gaussian::from_covariance(read_vector(field(c, "ctx_mean"), dc, "ctx_mean"),
                                           read_rowmajor(field(c, "ctx_cov_rowmajor"), dc, dc, "ctx_cov_rowmajor"));
      auto ex = LinCondGaussian::from_covariance(
          read_rowmajor(field(c, "gain_rowmajor"), dt, dc, "gain_rowmajor"), read_vector(field(c, "bias"), dt, "bias"),
          read_rowmajor(field(c, "expert_cov_rowmajor"), dt, dt, "expert_cov_rowmajor"));
      m.add_component(std::move(ctx), std::move(ex));
    }
    m.set_weights(Categorical(weights));
    return {std::move(m), field(doc, "alpha").get<double>(), field(doc, "beta").get<double>()};
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelFormatError(std::string("model: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const MoEPolicy& m, double alpha, double beta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << model_to_json(m, alpha, beta).dump(2) << '\n';
}

ModelDocument load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelFormatError("cannot open model file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ModelFormatError(std::string("model: parse error: ") + e.what());
  }
  return model_from_json(doc);
}

}  // namespace svsl
