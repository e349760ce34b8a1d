#include "homsurro/loadpath/paths.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace homsurro::loadpath {

namespace {

constexpr double kTurnAmpMin = 0.01;
constexpr double kTurnAmpMax = 0.05;

bool within_cap(const Sym2& u) {
  return std::abs(u.xx - 1.0) <= kStretchCap &&
         std::abs(u.yy - 1.0) <= kStretchCap && std::abs(u.xy) <= kStretchCap;
}

}  // namespace

bool is_spd(const Sym2& u) {
  // symmetric 2x2: positive definite iff trace > 0 and det > 0
  return u.xx + u.yy > 0.0 && u.xx * u.yy - u.xy * u.xy > 0.0;
}

Sym2 stretch_increment(double alpha, double l1, double l2) {
  const double c = std::cos(alpha), s = std::sin(alpha);
  Sym2 du;
  du.xx = l1 * c * c + l2 * s * s;
  du.yy = l1 * s * s + l2 * c * c;
  du.xy = (l1 - l2) * c * s;
  return du;
}

Sym2 random_increment(Rng& rng, double step_min, double step_max) {
  if (!(0.0 < step_min && step_min < step_max))
    throw std::invalid_argument("require 0 < step_min < step_max");
  const double alpha = rng.uniform(0.0, std::numbers::pi);
  const double r = rng.uniform(step_min * step_min, step_max * step_max);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return stretch_increment(alpha, std::sqrt(r) * std::cos(theta),
                           std::sqrt(r) * std::sin(theta));
}

StretchPath random_path(Rng& rng, std::size_t n_steps, double step_min,
                        double step_max) {
  StretchPath path;
  path.stretch.push_back(Sym2::identity());
  for (std::size_t t = 0; t < n_steps; ++t) {
    Sym2 next;
    bool ok = false;
    for (int attempt = 0; attempt < 100; ++attempt) {
      next = path.stretch.back() + random_increment(rng, step_min, step_max);
      if (within_cap(next)) {
        ok = true;
        break;
      }
    }
    if (!ok) break;  // cap reached: truncate the path
    path.stretch.push_back(next);
  }
  return path;
}

StretchPath cyclic_path(Rng& rng, CyclicMode mode, std::size_t n_steps,
                        double step_min, double step_max) {
  StretchPath path;
  path.stretch.push_back(Sym2::identity());

  double amp = 0.0;       // signed amplitude in step-norm units
  double sign = 1.0;      // current loading direction
  double turn = rng.uniform(kTurnAmpMin, kTurnAmpMax);

  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t t = 0; t < n_steps; ++t) {
    const double rho =
        std::sqrt(rng.uniform(step_min * step_min, step_max * step_max));
    amp += sign * rho;
    if (sign > 0.0 ? amp >= turn : amp <= -turn) {
      sign = -sign;
      turn = rng.uniform(kTurnAmpMin, kTurnAmpMax);
    }
    Sym2 u = Sym2::identity();
    switch (mode) {
      case CyclicMode::uniaxial_x: u.xx += amp; break;
      case CyclicMode::uniaxial_y: u.yy += amp; break;
      case CyclicMode::biaxial:
        u.xx += amp * inv_sqrt2;
        u.yy += amp * inv_sqrt2;
        break;
      case CyclicMode::shear: u.xy = amp * inv_sqrt2; break;
    }
    path.stretch.push_back(u);
  }
  return path;
}

std::array<double, 3> green_lagrange(const Sym2& u) {
  if (!is_spd(u))
    throw std::invalid_argument("green_lagrange requires an SPD stretch");
  // U^2 for symmetric U
  const double uxx2 = u.xx * u.xx + u.xy * u.xy;
  const double uyy2 = u.yy * u.yy + u.xy * u.xy;
  const double uxy2 = u.xy * (u.xx + u.yy);
  return {0.5 * (uxx2 - 1.0), 0.5 * (uyy2 - 1.0), 0.5 * uxy2};
}

std::vector<std::array<double, 3>> to_strain_path(const StretchPath& path) {
  std::vector<std::array<double, 3>> out;
  out.reserve(path.steps());
  for (std::size_t t = 1; t < path.stretch.size(); ++t)
    out.push_back(green_lagrange(path.stretch[t]));
  return out;
}

}  // namespace homsurro::loadpath
