#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "homsurro/loadpath/paths.hpp"

using namespace homsurro;
using namespace homsurro::loadpath;
using homsurro::ndcore::Rng;

namespace {

double increment_norm(const Sym2& du) {
  // eigenvalue norm of a symmetric 2x2
  const double tr = du.xx + du.yy;
  const double det = du.xx * du.yy - du.xy * du.xy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double l1 = tr / 2.0 + disc, l2 = tr / 2.0 - disc;
  return std::sqrt(l1 * l1 + l2 * l2);
}

}  // namespace

TEST_SUITE_BEGIN("loadpath");

TEST_CASE("spectral increment construction") {
  SUBCASE("boundary draw gives a diagonal increment") {
    const auto du = stretch_increment(0.0, 2.5e-3, 0.0);
    CHECK(du.xx == doctest::Approx(2.5e-3).epsilon(1e-14));
    CHECK(du.yy == 0.0);
    CHECK(du.xy == 0.0);
  }
  SUBCASE("eigenvalues and eigenvectors are preserved") {
    const double alpha = 0.7, l1 = 1.5e-3, l2 = -0.8e-3;
    const auto du = stretch_increment(alpha, l1, l2);
    // apply to n1 = [cos a, sin a]: expect l1 * n1
    const double c = std::cos(alpha), s = std::sin(alpha);
    CHECK(du.xx * c + du.xy * s == doctest::Approx(l1 * c).epsilon(1e-12));
    CHECK(du.xy * c + du.yy * s == doctest::Approx(l1 * s).epsilon(1e-12));
    CHECK(increment_norm(du) ==
          doctest::Approx(std::sqrt(l1 * l1 + l2 * l2)).epsilon(1e-12));
  }
}

TEST_CASE("random increments respect the step-size bounds") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto du = random_increment(rng, kRandomStepMin, kRandomStepMax);
    const double norm = increment_norm(du);
    CHECK(norm >= kRandomStepMin);
    CHECK(norm <= kRandomStepMax);
  }
  CHECK_THROWS_AS(random_increment(rng, 1e-3, 1e-4), std::invalid_argument);
}

TEST_CASE("random paths") {
  SUBCASE("single step path") {
    Rng rng(2);
    const auto p = random_path(rng, 1);
    CHECK(p.steps() == 1);
    CHECK(p.stretch[0].xx == 1.0);
  }
  SUBCASE("deterministic per seed") {
    Rng a(3), b(3);
    const auto pa = random_path(a, 50);
    const auto pb = random_path(b, 50);
    REQUIRE(pa.stretch.size() == pb.stretch.size());
    for (std::size_t i = 0; i < pa.stretch.size(); ++i) {
      CHECK(pa.stretch[i].xx == pb.stretch[i].xx);
      CHECK(pa.stretch[i].xy == pb.stretch[i].xy);
    }
  }
  SUBCASE("stays SPD and inside the component cap") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      Rng rng(seed);
      const auto p = random_path(rng, 100);
      for (const auto& u : p.stretch) {
        CHECK(is_spd(u));
        CHECK(std::abs(u.xx - 1.0) <= kStretchCap + 1e-15);
        CHECK(std::abs(u.yy - 1.0) <= kStretchCap + 1e-15);
        CHECK(std::abs(u.xy) <= kStretchCap + 1e-15);
      }
    }
  }
}

TEST_CASE("cyclic paths") {
  SUBCASE("uniaxial x stays diagonal in x only") {
    Rng rng(4);
    const auto p = cyclic_path(rng, CyclicMode::uniaxial_x, 100);
    for (const auto& u : p.stretch) {
      CHECK(u.yy == 1.0);
      CHECK(u.xy == 0.0);
    }
  }
  SUBCASE("shear keeps the diagonal at one") {
    Rng rng(5);
    const auto p = cyclic_path(rng, CyclicMode::shear, 100);
    for (const auto& u : p.stretch) {
      CHECK(u.xx == 1.0);
      CHECK(u.yy == 1.0);
    }
    // E_xx = E_yy comes from the off-diagonal only
    const auto e = green_lagrange(p.stretch.back());
    CHECK(e[0] == doctest::Approx(e[1]).epsilon(1e-14));
    CHECK(e[0] ==
          doctest::Approx(0.5 * p.stretch.back().xy * p.stretch.back().xy)
              .epsilon(1e-12));
  }
  SUBCASE("direction reverses at least once in 100 steps") {
    Rng rng(6);
    const auto p = cyclic_path(rng, CyclicMode::uniaxial_x, 100);
    int sign_changes = 0;
    for (std::size_t t = 2; t < p.stretch.size(); ++t) {
      const double prev = p.stretch[t - 1].xx - p.stretch[t - 2].xx;
      const double curr = p.stretch[t].xx - p.stretch[t - 1].xx;
      if (prev * curr < 0.0) ++sign_changes;
    }
    CHECK(sign_changes >= 1);
  }
  SUBCASE("biaxial loads both axes equally") {
    Rng rng(7);
    const auto p = cyclic_path(rng, CyclicMode::biaxial, 40);
    for (const auto& u : p.stretch) {
      CHECK(u.xx == doctest::Approx(u.yy).epsilon(1e-14));
      CHECK(u.xy == 0.0);
    }
  }
}

TEST_CASE("green lagrange strain") {
  SUBCASE("identity maps to zero") {
    const auto e = green_lagrange(Sym2::identity());
    CHECK(e[0] == 0.0);
    CHECK(e[1] == 0.0);
    CHECK(e[2] == 0.0);
  }
  SUBCASE("uniaxial stretch") {
    const auto e = green_lagrange({1.1, 1.0, 0.0});
    CHECK(e[0] == doctest::Approx(0.105).epsilon(1e-12));
    CHECK(e[1] == 0.0);
    CHECK(e[2] == 0.0);
  }
  SUBCASE("small shear") {
    const auto e = green_lagrange({1.0, 1.0, 0.01});
    CHECK(e[0] == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(e[1] == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(e[2] == doctest::Approx(0.01).epsilon(1e-12));
  }
  SUBCASE("non-SPD input is rejected") {
    CHECK_THROWS_AS(green_lagrange({1.0, 1.0, 1.5}), std::invalid_argument);
  }
  SUBCASE("symmetric output via the strain path") {
    Rng rng(8);
    const auto p = random_path(rng, 20);
    const auto strains = to_strain_path(p);
    CHECK(strains.size() == p.steps());
  }
}

TEST_SUITE_END();
