#pragma once

#include <cstdint>
#include <vector>

#include "homsurro/micro/sve.hpp"

namespace homsurro::descriptors {

enum class Phase : std::uint8_t { matrix = 0, fiber = 1 };

/// Two-point correlation values f[h,h'; r] over all discrete offsets r of a
/// periodic grid. values[(ry * resolution) + rx] holds the offset
/// r = (rx, ry) with negative offsets wrapped (resolution - |r|).
struct CorrelationMap {
  std::size_t resolution = 0;
  Phase head = Phase::matrix;
  Phase tail = Phase::matrix;
  std::vector<double> values;

  double at(std::size_t ry, std::size_t rx) const {
    return values[ry * resolution + rx];
  }
};

/// f[h,h'; r] = (1/|S|) sum_s m[h; s] m[h'; s+r] with periodic wrap and
/// constant normalization |S| = resolution^2. Computed with an FFT circular
/// cross-correlation; because the indicators are binary the raw correlation
/// counts are integers and are rounded before normalization, so identities
/// like f[h,h;0] == volume fraction hold exactly.
CorrelationMap two_point(const micro::PhaseGrid& grid, Phase head, Phase tail);

/// Matrix-phase auto-correlation flattened for PCA.
std::vector<double> matrix_autocorrelation(const micro::PhaseGrid& grid);

}  // namespace homsurro::descriptors
