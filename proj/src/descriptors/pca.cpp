#include "homsurro/descriptors/pca.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace homsurro::descriptors {

namespace {

std::string blob_path(const std::string& manifest_path) {
  const auto dot = manifest_path.find_last_of('.');
  const auto base =
      dot == std::string::npos ? manifest_path : manifest_path.substr(0, dot);
  return base + ".bin";
}

}  // namespace

PCABasis pca_fit(const std::vector<std::vector<double>>& samples,
                 std::size_t k) {
  if (k < 1) throw std::invalid_argument("pca_fit requires k >= 1");
  if (samples.size() < k)
    throw std::invalid_argument("pca_fit requires at least k samples");
  const std::size_t n = samples.size();
  const std::size_t dim = samples[0].size();
  for (const auto& s : samples)
    if (s.size() != dim)
      throw std::invalid_argument("pca_fit: inconsistent sample lengths");

  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          samples[i][j];

  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();

  double total = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) total += sv[i] * sv[i];
  if (!(total > 0.0) || !std::isfinite(total))
    throw std::invalid_argument(
        "pca_fit: degenerate sample set (zero variance)");

  PCABasis basis;
  basis.dim = dim;
  basis.k = k;
  basis.mean.assign(mean.data(), mean.data() + dim);
  basis.components.resize(k * dim);
  basis.explained_variance_ratio.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd v = svd.matrixV().col(static_cast<Eigen::Index>(c));
    // deterministic sign: largest-magnitude entry positive
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v[at] < 0.0) v = -v;
    for (std::size_t j = 0; j < dim; ++j)
      basis.components[c * dim + j] = v[static_cast<Eigen::Index>(j)];
    basis.explained_variance_ratio[c] = sv[static_cast<Eigen::Index>(c)] *
                                        sv[static_cast<Eigen::Index>(c)] /
                                        total;
  }
  return basis;
}

MicroDescriptor pca_transform(const PCABasis& basis,
                              std::span<const double> f) {
  if (f.size() != basis.dim)
    throw std::invalid_argument("pca_transform: dimension mismatch");
  MicroDescriptor d;
  d.source = MicroDescriptor::Source::pca;
  d.scores.resize(basis.k);
  for (std::size_t c = 0; c < basis.k; ++c) {
    const double* phi = basis.components.data() + c * basis.dim;
    double s = 0.0;
    for (std::size_t j = 0; j < basis.dim; ++j)
      s += (f[j] - basis.mean[j]) * phi[j];
    d.scores[c] = s;
  }
  return d;
}

std::vector<double> pca_reconstruct(const PCABasis& basis,
                                    std::span<const double> scores) {
  if (scores.size() > basis.k)
    throw std::invalid_argument("pca_reconstruct: too many scores");
  std::vector<double> out = basis.mean;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double* phi = basis.components.data() + c * basis.dim;
    for (std::size_t j = 0; j < basis.dim; ++j) out[j] += scores[c] * phi[j];
  }
  return out;
}

std::vector<double> explained_variance(const PCABasis& basis) {
  return basis.explained_variance_ratio;
}

void save_pca(const PCABasis& basis, const std::string& path) {
  const std::string bin = blob_path(path);
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + bin);
    auto write_f32 = [&](const std::vector<double>& v) {
      for (double x : v) {
        const float f = static_cast<float>(x);
        out.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
    };
    write_f32(basis.mean);
    write_f32(basis.components);
    if (!out) throw std::runtime_error("write failed: " + bin);
  }
  nlohmann::ordered_json j;
  j["format"] = "homsurro-pca-1";
  j["dim"] = basis.dim;
  j["k"] = basis.k;
  j["explained_variance_ratio"] = basis.explained_variance_ratio;
  j["blob"] = bin.substr(bin.find_last_of('/') + 1);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

PCABasis load_pca(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "homsurro-pca-1")
    throw std::runtime_error("not a PCA basis manifest: " + path);
  PCABasis basis;
  basis.dim = j.at("dim").get<std::size_t>();
  basis.k = j.at("k").get<std::size_t>();
  basis.explained_variance_ratio =
      j.at("explained_variance_ratio").get<std::vector<double>>();

  const std::string bin = blob_path(path);
  std::ifstream blob(bin, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open: " + bin);
  auto read_f32 = [&](std::size_t count) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
      float f = 0.0f;
      blob.read(reinterpret_cast<char*>(&f), sizeof(f));
      v[i] = static_cast<double>(f);
    }
    if (!blob) throw std::runtime_error("truncated PCA blob: " + bin);
    return v;
  };
  basis.mean = read_f32(basis.dim);
  basis.components = read_f32(basis.k * basis.dim);
  return basis;
}

}  // namespace homsurro::descriptors
