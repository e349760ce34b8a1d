#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "homsurro/ndcore/rng.hpp"

namespace homsurro::loadpath {

using ndcore::Rng;

/// Symmetric 2x2 tensor (right stretch tensors and their increments).
struct Sym2 {
  double xx = 0.0, yy = 0.0, xy = 0.0;

  static Sym2 identity() { return {1.0, 1.0, 0.0}; }
  Sym2 operator+(const Sym2& o) const { return {xx + o.xx, yy + o.yy, xy + o.xy}; }
};

bool is_spd(const Sym2& u);

/// Default step-size bounds for the two path families.
inline constexpr double kRandomStepMin = 5e-5;
inline constexpr double kRandomStepMax = 2.5e-3;
inline constexpr double kCyclicStepMin = 5e-4;
inline constexpr double kStepMax = 2.5e-3;
inline constexpr double kStretchCap = 0.05;  // max |U_ij - I_ij| per component

/// Spectral construction of a stretch increment: eigenvectors
/// n1 = [cos a, sin a], n2 = [-sin a, cos a] and eigenvalues (l1, l2),
/// dU = l1 n1 (x) n1 + l2 n2 (x) n2.
Sym2 stretch_increment(double alpha, double l1, double l2);

/// One random stretch increment: alpha ~ U[0,pi) and eigenvalues
/// (sqrt(R) cos(theta), sqrt(R) sin(theta)) with R ~ U[min^2, max^2],
/// theta ~ U[0, 2pi]. The increment norm sqrt(dl1^2 + dl2^2) is bounded in
/// [step_min, step_max] by construction.
Sym2 random_increment(Rng& rng, double step_min, double step_max);

/// Sequence of right stretch tensors, starting at the identity.
struct StretchPath {
  std::vector<Sym2> stretch;  // stretch[0] == I; stretch[t] = U_t

  std::size_t steps() const { return stretch.empty() ? 0 : stretch.size() - 1; }
};

/// Random walk of stretch increments. Increments that would push any
/// component of U past the 0.05 cap are resampled (up to 100 tries), after
/// which the path is truncated.
StretchPath random_path(Rng& rng, std::size_t n_steps,
                        double step_min = kRandomStepMin,
                        double step_max = kRandomStepMax);

enum class CyclicMode { uniaxial_x, uniaxial_y, biaxial, shear };

/// Cyclic load-unload-reload path along a fixed direction for the chosen
/// mode. The amplitude advances by per-step draws in [step_min, step_max]
/// and reverses at turning amplitudes drawn uniformly in [0.01, 0.05].
StretchPath cyclic_path(Rng& rng, CyclicMode mode, std::size_t n_steps,
                        double step_min = kCyclicStepMin,
                        double step_max = kStepMax);

/// Green-Lagrange strain E = (U^2 - I)/2 of a symmetric positive-definite
/// stretch (deformation gradient F = R U with R = I). Returns (Exx, Eyy, Exy).
std::array<double, 3> green_lagrange(const Sym2& u);

/// Strain sequence for U_1..U_n (the identity start maps to zero strain and
/// is not emitted).
std::vector<std::array<double, 3>> to_strain_path(const StretchPath& path);

}  // namespace homsurro::loadpath
