#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "homsurro/convnet/convnet.hpp"
#include "homsurro/micro/sve.hpp"

using namespace homsurro;
using namespace homsurro::convnet;
using homsurro::ndcore::Binder;
using homsurro::ndcore::Rng;
using homsurro::ndcore::Tape;
using homsurro::ndcore::Tensor;
using homsurro::ndcore::Var;

TEST_SUITE_BEGIN("convnet");

TEST_CASE("parameter counts from the layer shapes") {
  auto net = ConvNet::build(ConvNetSpec::encoder32());
  SUBCASE("first conv block") {
    CHECK(net.blocks[0].kernels.numel() + net.blocks[0].bias.numel() == 416);
  }
  SUBCASE("widest fully connected layer") {
    CHECK(net.fc_w[0].numel() + net.fc_b[0].numel() == 16779264);
    CHECK(net.fc_w[0].shape() == ndcore::Shape{8192, 2048});
  }
  SUBCASE("grand total") { CHECK(net.param_count() == 19015209); }
}

TEST_CASE("forward contract") {
  auto spec = ConvNetSpec::reduced8();
  auto net = ConvNet::build(spec);
  Rng rng(1);
  net.init_params(rng);

  SUBCASE("wrong input size is rejected") {
    Tape t;
    Binder b(t, false);
    Rng r(0);
    CHECK_THROWS_AS(net.forward(b, b.constant(Tensor({1, 16, 16})), false, r),
                    std::invalid_argument);
  }
  SUBCASE("zero image with fresh statistics maps to zero") {
    Tape t;
    Binder b(t, false);
    Rng r(0);
    auto fresh = ConvNet::build(spec);  // zero weights, gamma 1, stats (0,1)
    Var out = fresh.forward(b, b.constant(Tensor({1, 8, 8})), false, r);
    for (std::size_t i = 0; i < t.value(out).numel(); ++i)
      CHECK(t.value(out)[i] == 0.0);
  }
  SUBCASE("eval forward is deterministic") {
    const Tensor img = gradcheck::random_tensor({1, 8, 8}, 5, 0.0, 1.0);
    auto run = [&] {
      Tape t;
      Binder b(t, false);
      Rng r(123);
      return t.value(net.forward(b, b.constant(img), false, r));
    };
    const Tensor a = run(), c = run();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == c[i]);
  }
  SUBCASE("batched and single-image forwards agree in eval mode") {
    const Tensor img = gradcheck::random_tensor({1, 8, 8}, 6, 0.0, 1.0);
    Tensor batch({2, 1, 8, 8});
    for (int k = 0; k < 2; ++k)
      std::copy(img.data(), img.data() + img.numel(),
                batch.data() + k * img.numel());
    Tape t;
    Binder b(t, false);
    Rng r(0);
    const Tensor single = t.value(net.forward(b, b.constant(img), false, r));
    Tape t2;
    Binder b2(t2, false);
    const Tensor both = t2.value(net.forward(b2, b2.constant(batch), false, r));
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(both.at(0, c) == doctest::Approx(single[c]).epsilon(1e-14));
      CHECK(both.at(1, c) == doctest::Approx(single[c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("pixel polarity is fixed by the input mapping") {
  // PGM stores fiber=255/matrix=0; images always enter as {0,1}
  const auto grid = micro::rasterize(micro::generate_sve(4, 0.3), 32);
  const Tensor img = grid_to_image(grid);
  for (std::size_t i = 0; i < img.numel(); ++i)
    CHECK((img[i] == 0.0 || img[i] == 1.0));
  const std::string path = "/tmp/homsurro_convnet_polarity.pgm";
  micro::write_pgm(grid, path);
  const Tensor img2 = grid_to_image(micro::read_pgm(path));
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(img[i] == img2[i]);
  std::remove(path.c_str());
}

TEST_CASE("reduced encoder gradient check (frozen statistics)") {
  auto spec = ConvNetSpec::reduced8();
  spec.dropout = 0.0;
  auto net = ConvNet::build(spec);
  Rng rng(7);
  net.init_params(rng);
  // nudge running stats away from the (0,1) defaults, gently enough that no
  // block's activations die (a dead block puts fc pre-activations exactly on
  // the relu kink, where finite differences are meaningless)
  for (auto& blk : net.blocks)
    if (blk.bn.running_mean.numel())
      for (std::size_t i = 0; i < blk.bn.running_mean.numel(); ++i) {
        blk.bn.running_mean[i] = (i % 2 ? 0.01 : -0.01);
        blk.bn.running_var[i] = 1.0 + 0.03 * static_cast<double>(i);
      }

  const Tensor img = gradcheck::random_tensor({1, 8, 8}, 8, 0.0, 1.0);
  const Tensor probe = gradcheck::random_tensor({3}, 9, 0.05, 0.15);

  // analytic gradients for every trainable tensor
  std::vector<ndcore::ParamRef> refs;
  net.collect_params("", refs);
  Tape tape;
  Binder binder(tape, true);
  Rng drop(0);
  Var out = net.forward(binder, binder.constant(img), false, drop);
  Var loss = ndcore::sum(ndcore::mul(out, binder.constant(probe)));
  tape.backward(loss);

  auto eval = [&]() {
    Tape t;
    Binder b(t, false);
    Rng r(0);
    const Tensor& o = t.value(net.forward(b, b.constant(img), false, r));
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += o[i] * probe[i];
    return s;
  };

  double worst = 0.0;
  for (const auto& ref : refs) {
    if (!ref.trainable) continue;
    Tensor& p = *ref.tensor;
    const Tensor* g = binder.grad(p);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      auto eval_at = [&](double v) {
        p[i] = v;
        const double r = eval();
        p[i] = saved;
        return r;
      };
      worst = std::max(
          worst, gradcheck::converged_rel_err(eval_at, saved,
                                              g ? (*g)[i] : 0.0));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("descriptor helper runs on a rasterized cell") {
  auto net = ConvNet::build(ConvNetSpec::encoder32());
  Rng rng(11);
  net.init_params(rng);
  const auto grid = micro::rasterize(micro::generate_sve(12, 0.35), 32);
  const auto d = net.descriptor(grid);
  REQUIRE(d.size() == 3);
  for (double v : d) CHECK(std::isfinite(v));
}

TEST_SUITE_END();
