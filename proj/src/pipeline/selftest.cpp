#include "homsurro/pipeline/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>

#include "homsurro/constitutive/plasticity.hpp"
#include "homsurro/descriptors/pca.hpp"
#include "homsurro/descriptors/twopoint.hpp"
#include "homsurro/loadpath/paths.hpp"
#include "homsurro/micro/sve.hpp"
#include "homsurro/ndcore/ops.hpp"
#include "homsurro/pipeline/dataset.hpp"
#include "homsurro/pipeline/optim.hpp"
#include "homsurro/seqmodel/surrogate.hpp"

namespace homsurro::pipeline {

namespace {

using ndcore::Binder;
using ndcore::Rng;
using ndcore::Tape;
using ndcore::Tensor;
using ndcore::Var;

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

int run_selftest(std::ostream& out) {
  int failures = 0;
  int checks = 0;
  auto check = [&](const char* name, const std::function<bool()>& fn) {
    ++checks;
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      out << "FAIL - " << name << " (" << e.what() << ")\n";
      ++failures;
      return;
    }
    if (ok) {
      out << "ok - " << name << "\n";
    } else {
      out << "FAIL - " << name << "\n";
      ++failures;
    }
  };

  check("ndcore.linear hand value", [] {
    Tape t;
    Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
    Var w = t.leaf(Tensor({2, 1}, {1.0, 1.0}));
    Var b = t.leaf(Tensor({1}, {0.5}));
    return near(t.value(ndcore::linear(x, w, b))[0], 3.5, 1e-15);
  });

  check("ndcore.softmax rows sum to one", [] {
    Tape t;
    Rng rng(7);
    Tensor x({5, 9});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-4.0, 4.0);
    const Tensor& y = t.value(ndcore::softmax_lastdim(t.leaf(std::move(x))));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        if (y.at(r, c) < 0.0) return false;
        s += y.at(r, c);
      }
      if (!near(s, 1.0, 1e-12)) return false;
    }
    return true;
  });

  check("ndcore.dropout eval identity", [] {
    Tape t;
    Rng rng(3);
    Tensor x({4, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    Var v = t.leaf(x);
    const Tensor& y = t.value(ndcore::dropout(v, 0.5, false, rng));
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (y[i] != x[i]) return false;
    return true;
  });

  check("ndcore.glu hand value", [] {
    Tape t;
    Var x = t.leaf(Tensor({1}, {1.0}));
    Var w1 = t.leaf(Tensor({1, 1}, {1.0}));
    Var b1 = t.leaf(Tensor({1}, {0.0}));
    Var w2 = t.leaf(Tensor({1, 1}, {2.0}));
    Var b2 = t.leaf(Tensor({1}, {0.0}));
    return near(t.value(seqmodel::glu(x, w1, b1, w2, b2))[0], 1.462117,
                1e-6);
  });

  check("ndcore.glu gradient vs central differences", [] {
    // d/dx [sigmoid(x) * 2x] at x = 0.7
    const double x0 = 0.7, h = 1e-6;
    auto f = [](double x) { return (1.0 / (1.0 + std::exp(-x))) * 2.0 * x; };
    const double numeric = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
    Tape t;
    Var x = t.leaf(Tensor({1}, {x0}), true);
    Var w1 = t.leaf(Tensor({1, 1}, {1.0}));
    Var b1 = t.leaf(Tensor({1}, {0.0}));
    Var w2 = t.leaf(Tensor({1, 1}, {2.0}));
    Var b2 = t.leaf(Tensor({1}, {0.0}));
    Var y = ndcore::sum(seqmodel::glu(x, w1, b1, w2, b2));
    t.backward(y);
    return near(t.grad(x)[0], numeric, 1e-7);
  });

  check("constitutive.elastic hand values", [] {
    const auto s = constitutive::elastic_stress(
        constitutive::MaterialParams::matrix(), {0.001, 0.0, 0.0});
    return near(s.xx, 2.142857, 1e-6) && near(s.yy, 1.428571, 1e-6) &&
           near(s.zz, 1.428571, 1e-6) && near(s.xy, 0.0, 1e-15);
  });

  check("constitutive.pure shear yield plateau", [] {
    const auto m = constitutive::MaterialParams::matrix();
    constitutive::PlasticState st;
    double last_xy = 0.0;
    for (int i = 1; i <= 200; ++i) {
      const auto s = constitutive::j2_step(st, {0.0, 0.0, 2.0e-4 * i}, m);
      last_xy = s.xy;
    }
    return near(last_xy, m.yield / std::sqrt(3.0), 1e-6);
  });

  check("constitutive.J2 invariants on random paths", [] {
    const auto m = constitutive::MaterialParams::matrix();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      auto path = loadpath::random_path(rng, 100);
      constitutive::PlasticState st;
      constitutive::PlasticState prev;
      for (const auto& e : loadpath::to_strain_path(path)) {
        prev = st;
        const auto s = constitutive::j2_step(st, {e[0], e[1], e[2]}, m);
        if (constitutive::von_mises(s) > m.yield + 1e-8) return false;
        if (std::abs(st.trace()) > 1e-10) return false;
        const double diss = s.xx * (st.xx - prev.xx) + s.yy * (st.yy - prev.yy) +
                            s.zz * (st.zz - prev.zz) +
                            2.0 * s.xy * (st.xy - prev.xy);
        if (diss < -1e-12) return false;
      }
    }
    return true;
  });

  check("loadpath.increment bounds and SPD", [] {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
      const auto du = loadpath::random_increment(rng, 5e-5, 2.5e-3);
      // eigenvalues of the increment have norm = step size
      const double tr = du.xx + du.yy;
      const double det = du.xx * du.yy - du.xy * du.xy;
      const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
      const double l1 = tr / 2.0 + disc, l2 = tr / 2.0 - disc;
      const double norm = std::sqrt(l1 * l1 + l2 * l2);
      if (norm < 5e-5 || norm > 2.5e-3) return false;
    }
    Rng prng(12);
    const auto path = loadpath::random_path(prng, 100);
    for (const auto& u : path.stretch)
      if (!loadpath::is_spd(u)) return false;
    return true;
  });

  check("loadpath.green_lagrange hand values", [] {
    const auto e1 = loadpath::green_lagrange({1.1, 1.0, 0.0});
    const auto e2 = loadpath::green_lagrange({1.0, 1.0, 0.01});
    return near(e1[0], 0.105, 1e-12) && near(e1[1], 0.0, 1e-12) &&
           near(e2[0], 5e-5, 1e-12) && near(e2[2], 0.01, 1e-12);
  });

  check("micro.single fiber analytic FVR", [] {
    const auto f = micro::generate_sve(1, 0.0078);
    return f.centers.size() == 1 && near(f.analytic_fvr(), 0.007854, 1e-6);
  });

  check("micro.pgm round trip", [] {
    const auto f = micro::generate_sve(5, 0.3);
    const auto g = micro::rasterize(f, 32);
    const std::string path = "/tmp/homsurro_selftest.pgm";
    micro::write_pgm(g, path);
    const auto h = micro::read_pgm(path);
    std::filesystem::remove(path);
    return h.resolution == g.resolution && h.cells == g.cells &&
           near(h.fvr, g.fvr, 1e-15);
  });

  check("descriptors.two_point identities", [] {
    using descriptors::Phase;
    const auto f = micro::generate_sve(9, 0.35);
    const auto g = micro::rasterize(f, 32);
    const auto ff = descriptors::two_point(g, Phase::fiber, Phase::fiber);
    const auto fm = descriptors::two_point(g, Phase::fiber, Phase::matrix);
    if (!near(ff.values[0], g.fvr, 1e-15)) return false;
    for (std::size_t r = 0; r < ff.values.size(); ++r)
      if (!near(ff.values[r] + fm.values[r], g.fvr, 1e-12)) return false;
    return true;
  });

  check("descriptors.pca orthonormal components", [] {
    Rng rng(21);
    std::vector<std::vector<double>> samples(12, std::vector<double>(6));
    for (auto& s : samples)
      for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    const auto basis = descriptors::pca_fit(samples, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double dot = 0.0;
        for (std::size_t d = 0; d < 6; ++d)
          dot += basis.components[i * 6 + d] * basis.components[j * 6 + d];
        if (!near(dot, i == j ? 1.0 : 0.0, 1e-10)) return false;
      }
    return true;
  });

  check("seqmodel.positional encoding values", [] {
    const auto pe = seqmodel::positional_encoding(4, 8);
    if (!near(pe.at(0, 0), 0.0, 1e-15) || !near(pe.at(0, 1), 1.0, 1e-15))
      return false;
    if (!near(pe.at(1, 0), std::sin(1.0), 1e-12)) return false;
    for (std::size_t i = 0; i < pe.numel(); ++i)
      if (pe[i] < -1.0 || pe[i] > 1.0) return false;
    return true;
  });

  check("seqmodel.shift_right definition", [] {
    Tensor s({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor sh = seqmodel::shift_right(s);
    return sh.at(0, 0) == 0.0 && sh.at(0, 1) == 0.0 && sh.at(1, 0) == 1.0 &&
           sh.at(2, 1) == 4.0;
  });

  check("seqmodel.causality single trial", [] {
    auto cfg = seqmodel::SurrogateConfig::desk();
    cfg.d_model = 32;
    cfg.layers = 2;
    cfg.ff_dim = 64;
    cfg.grn_hidden = 64;
    cfg.heads = 4;
    auto model = seqmodel::SurrogateModel::build(cfg);
    Rng rng(17);
    model.init_params(rng);
    const std::size_t t_len = 8, k = 3;
    Tensor strain({t_len, 3}), shifted({t_len, 4});
    for (std::size_t i = 0; i < strain.numel(); ++i)
      strain[i] = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < shifted.numel(); ++i)
      shifted[i] = rng.uniform(-1.0, 1.0);
    const Tensor base = model.predict(strain, shifted, {});
    Tensor strain2 = strain, shifted2 = shifted;
    for (std::size_t t = k + 1; t < t_len; ++t) {
      for (std::size_t c = 0; c < 3; ++c)
        strain2.at(t, c) += rng.uniform(0.5, 1.0);
      for (std::size_t c = 0; c < 4; ++c)
        shifted2.at(t, c) += rng.uniform(0.5, 1.0);
    }
    const Tensor other = model.predict(strain2, shifted2, {});
    for (std::size_t t = 0; t <= k; ++t)
      for (std::size_t c = 0; c < 4; ++c)
        if (std::abs(base.at(t, c) - other.at(t, c)) > 1e-9) return false;
    return true;
  });

  check("pipeline.lr schedule formula", [] {
    auto oracle = [](double s) {
      return std::pow(512.0, -0.5) *
             std::min(std::pow(s, -0.5), s * std::pow(4000.0, -1.5));
    };
    for (double s : {1.0, 4000.0, 16000.0}) {
      const double got = lr_schedule(static_cast<std::size_t>(s), 512, 4000);
      if (std::abs(got - oracle(s)) > 1e-10 * oracle(s)) return false;
    }
    return true;
  });

  check("pipeline.adam zero gradient is identity", [] {
    Tensor p({3}, {1.0, -2.0, 3.0});
    std::vector<Tensor*> params = {&p};
    Adam adam(params);
    std::vector<Tensor> grads;
    grads.emplace_back(Tensor({3}));
    adam.step(grads, 1e-3);
    return p[0] == 1.0 && p[1] == -2.0 && p[2] == 3.0 && adam.steps() == 1;
  });

  check("pipeline.standardizer round trip", [] {
    GenConfig gc;
    gc.count = 4;
    gc.seed = 33;
    gc.steps = 20;
    std::vector<SequenceRecord> recs;
    for (std::size_t i = 0; i < gc.count; ++i)
      recs.push_back(generate_record(gc, i));
    const auto s = standardize_fit(recs);
    const auto back = standardize_invert(s, standardize_apply(s, recs[0]));
    for (std::size_t t = 0; t < recs[0].length(); ++t)
      for (std::size_t c = 0; c < 4; ++c)
        if (!near(back.stress[t][c], recs[0].stress[t][c], 1e-9)) return false;
    return true;
  });

  out << (failures == 0 ? "selftest: " : "selftest FAILED: ")
      << (checks - failures) << "/" << checks << " checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace homsurro::pipeline
