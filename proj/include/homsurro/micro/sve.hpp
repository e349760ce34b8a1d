#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace homsurro::micro {

/// Periodic square microcell with equal-diameter circular fibers.
struct FiberSet {
  double cell_size = 70.0;       // micron
  double fiber_diameter = 7.0;   // micron
  std::vector<std::array<double, 2>> centers;

  /// Exact area fraction: n * pi * (d/2)^2 / L^2 (discs wrap periodically,
  /// so every disc contributes its full area).
  double analytic_fvr() const;
};

/// Thrown when random sequential placement cannot fit another fiber.
class JammingError : public std::runtime_error {
 public:
  JammingError(double achieved)
      : std::runtime_error("fiber placement jammed at FVR " +
                           std::to_string(achieved)),
        achieved_fvr(achieved) {}
  double achieved_fvr;
};

/// Random sequential placement of non-overlapping fibers under periodic
/// wrapping. Placement stops at the first fiber whose addition makes the
/// analytic FVR reach the target. Deterministic per seed. Throws
/// JammingError after 10,000 rejected attempts for a single fiber.
FiberSet generate_sve(std::uint64_t seed, double target_fvr,
                      double cell_size = 70.0, double fiber_diameter = 7.0);

/// generate_sve with deterministic restarts: a jammed placement is retried
/// with a seed derived from (seed, restart index). Targets near 0.5 sit at
/// about nine tenths of the jamming density, where a single run can fail.
FiberSet generate_sve_retrying(std::uint64_t seed, double target_fvr,
                               double cell_size = 70.0,
                               double fiber_diameter = 7.0,
                               int max_restarts = 8);

/// Minimum periodic (wrapped) center distance over all fiber pairs.
double min_pair_distance(const FiberSet& f);

/// Binary raster of a microcell; treated as periodic in both axes.
struct PhaseGrid {
  std::size_t resolution = 0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = fiber, 0 = matrix
  double fvr = 0.0;                 // count of 1-cells / resolution^2

  std::uint8_t at(std::size_t row, std::size_t col) const {
    return cells[row * resolution + col];
  }
};

/// Rasterize: a cell becomes fiber when its center lies inside any
/// periodically wrapped disc. Requires resolution >= 8.
PhaseGrid rasterize(const FiberSet& f, std::size_t resolution);

/// Binary PGM (P5), maxval 255, fiber = 255, matrix = 0.
void write_pgm(const PhaseGrid& g, const std::string& path);
PhaseGrid read_pgm(const std::string& path);

/// JSON round-trip: {cell_size, fiber_diameter, centers: [[x,y], ...]}.
std::string fiberset_to_json(const FiberSet& f);
FiberSet fiberset_from_json(const std::string& text);

}  // namespace homsurro::micro
