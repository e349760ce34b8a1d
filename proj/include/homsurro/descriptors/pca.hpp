#pragma once

#include <span>
#include <string>
#include <vector>

namespace homsurro::descriptors {

/// Orthonormal principal-component basis of a sample set.
struct PCABasis {
  std::size_t dim = 0;  // feature length
  std::size_t k = 0;    // retained components
  std::vector<double> mean;                      // dim
  std::vector<double> components;                // k x dim, row-major
  std::vector<double> explained_variance_ratio;  // k, non-increasing

  std::span<const double> component(std::size_t n) const {
    return {components.data() + n * dim, dim};
  }
};

/// Microstructure descriptor: principal-component scores or CNN outputs.
struct MicroDescriptor {
  enum class Source { pca, cnn };
  std::vector<double> scores;
  Source source = Source::pca;
};

/// Mean-centered SVD of the sample matrix; components are the top-k right
/// singular vectors with the sign fixed so each component's
/// largest-magnitude entry is positive. Throws on a degenerate
/// (zero-variance) sample set or when #samples < k.
PCABasis pca_fit(const std::vector<std::vector<double>>& samples,
                 std::size_t k);

/// Scores <f - mean, phi_n> for n = 1..k.
MicroDescriptor pca_transform(const PCABasis& basis, std::span<const double> f);

/// Reconstruction mean + sum_n score_n phi_n (used by projection tests).
std::vector<double> pca_reconstruct(const PCABasis& basis,
                                    std::span<const double> scores);

std::vector<double> explained_variance(const PCABasis& basis);

/// Serialization: JSON manifest at `path` plus a raw little-endian f32 blob
/// (mean then components) at `path` with extension replaced by ".bin".
void save_pca(const PCABasis& basis, const std::string& path);
PCABasis load_pca(const std::string& path);

}  // namespace homsurro::descriptors
