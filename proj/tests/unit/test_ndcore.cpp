#include "doctest.h"
#include "gradcheck.hpp"
#include "homsurro/ndcore/ops.hpp"

using namespace homsurro::ndcore;

TEST_SUITE_BEGIN("ndcore");

TEST_CASE("linear identity and hand values") {
  Tape t;
  SUBCASE("identity") {
    Var x = t.leaf(Tensor({2}, {1.0, 0.0}));
    Var w = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    Var b = t.leaf(Tensor({2}));
    const Tensor& y = t.value(linear(x, w, b));
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 0.0);
  }
  SUBCASE("hand evaluation") {
    Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
    Var w = t.leaf(Tensor({2, 1}, {1.0, 1.0}));
    Var b = t.leaf(Tensor({1}, {0.5}));
    CHECK(t.value(linear(x, w, b))[0] == doctest::Approx(3.5).epsilon(1e-14));
  }
  SUBCASE("zero input returns the bias") {
    Var x = t.leaf(Tensor({2, 3}));
    Var w = t.leaf(gradcheck::random_tensor({3, 4}, 5));
    Var b = t.leaf(Tensor({4}, {1, -2, 3, -4}));
    const Tensor& y = t.value(linear(x, w, b));
    for (std::size_t r = 0; r < 2; ++r) {
      CHECK(y.at(r, 0) == 1.0);
      CHECK(y.at(r, 3) == -4.0);
    }
  }
  SUBCASE("shape mismatch throws") {
    Var x = t.leaf(Tensor({3}));
    Var w = t.leaf(Tensor({2, 2}));
    CHECK_THROWS_AS(linear(x, w, Var{}), std::invalid_argument);
  }
}

TEST_CASE("activation examples") {
  Tape t;
  const Tensor& r = t.value(relu(t.leaf(Tensor({2}, {-1.0, 2.0}))));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(t.value(sigmoid(t.leaf(Tensor({1}, {0.0}))))[0] == 0.5);
  const Tensor& s = t.value(softmax_lastdim(t.leaf(Tensor({3}))));
  for (int i = 0; i < 3; ++i)
    CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(t.value(activation(t.leaf(Tensor({1}, {-2.0})), Act::elu))[0] ==
        doctest::Approx(std::expm1(-2.0)).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and are non-negative") {
  Tape t;
  const Tensor x = gradcheck::random_tensor({7, 11}, 42, -6.0, 6.0);
  const Tensor& y = t.value(softmax_lastdim(t.leaf(x)));
  for (std::size_t r = 0; r < 7; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 11; ++c) {
      CHECK(y.at(r, c) >= 0.0);
      sum += y.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("causal softmax masks strictly above the diagonal") {
  Tape t;
  const Tensor x = gradcheck::random_tensor({5, 5}, 3);
  const Tensor& y = t.value(softmax_causal(t.leaf(x)));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (j > i) CHECK(y.at(i, j) == 0.0);
      sum += y.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("conv2d examples") {
  Tape t;
  SUBCASE("zero kernel annihilates") {
    Var x = t.leaf(Tensor::full({1, 3, 3}, 1.0));
    Var k = t.leaf(Tensor({1, 1, 3, 3}));
    const Tensor& y = t.value(conv2d(x, k));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
  }
  SUBCASE("delta kernel is the identity") {
    const Tensor img = gradcheck::random_tensor({1, 5, 5}, 8);
    Tensor k({1, 1, 3, 3});
    k[4] = 1.0;  // center tap
    const Tensor& y = t.value(conv2d(t.leaf(img), t.leaf(k)));
    for (std::size_t i = 0; i < img.numel(); ++i)
      CHECK(y[i] == doctest::Approx(img[i]).epsilon(1e-14));
  }
  SUBCASE("ones kernel counts overlaps under zero padding") {
    Var x = t.leaf(Tensor::full({1, 3, 3}, 1.0));
    Var k = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    const Tensor& y = t.value(conv2d(x, k));
    CHECK(y[4] == 9.0);   // center
    CHECK(y[1] == 6.0);   // edge
    CHECK(y[0] == 4.0);   // corner
  }
  SUBCASE("stride two halves the spatial extents") {
    Var x = t.leaf(Tensor({1, 8, 8}));
    Var k = t.leaf(Tensor({4, 1, 3, 3}));
    const Tensor& y = t.value(conv2d(x, k, Var{}, 2));
    CHECK(y.shape() == Shape{4, 4, 4});
  }
}

TEST_CASE("maxpool examples") {
  Tape t;
  CHECK(t.value(maxpool2d(t.leaf(Tensor({1, 2, 2}, {1, 2, 3, 4}))))[0] == 4.0);
  CHECK(t.value(maxpool2d(t.leaf(Tensor({1, 2, 2}, {-1, -2, -3, -4}))))[0] ==
        -1.0);
  const Tensor& c = t.value(maxpool2d(t.leaf(Tensor::full({2, 4, 4}, 2.5))));
  CHECK(c.shape() == Shape{2, 2, 2});
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == 2.5);
  CHECK_THROWS_AS(maxpool2d(t.leaf(Tensor({1, 3, 3}))), std::invalid_argument);
}

TEST_CASE("maxpool ties route the gradient to the first maximum") {
  Tape t;
  Var x = t.leaf(Tensor({1, 2, 2}, {7.0, 7.0, 7.0, 7.0}), true);
  Var y = maxpool2d(x);
  t.backward(sum(y));
  const Tensor& g = t.grad(x);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("layer norm examples") {
  Tape t;
  SUBCASE("constant row maps to beta") {
    Var x = t.leaf(Tensor({1, 3}, {1, 1, 1}));
    Var g = t.leaf(Tensor::full({3}, 1.0));
    Var b = t.leaf(Tensor({3}));
    const Tensor& y = t.value(layer_norm(x, g, b));
    for (int i = 0; i < 3; ++i) CHECK(y[i] == 0.0);
  }
  SUBCASE("unit-variance input passes through up to eps") {
    Var x = t.leaf(Tensor({1, 2}, {-1.0, 1.0}));
    Var g = t.leaf(Tensor::full({2}, 1.0));
    Var b = t.leaf(Tensor({2}));
    const Tensor& y = t.value(layer_norm(x, g, b));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-4));
  }
  SUBCASE("beta shifts the output mean") {
    Var x = t.leaf(Tensor({1, 4}, {-2, -1, 1, 2}));
    Var g = t.leaf(Tensor::full({4}, 1.0));
    Var b = t.leaf(Tensor::full({4}, 5.0));
    const Tensor& y = t.value(layer_norm(x, g, b));
    double mean = 0.0;
    for (int i = 0; i < 4; ++i) mean += y[i];
    CHECK(mean / 4.0 == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("batch norm train vs eval") {
  BatchNormBuffers buf;
  buf.running_mean = Tensor({3});
  buf.running_var = Tensor::full({3}, 1.0);
  const Tensor x = gradcheck::random_tensor({4, 3}, 10, -2.0, 2.0);

  Tape t1;
  Var g = t1.leaf(Tensor::full({3}, 1.0));
  Var b = t1.leaf(Tensor({3}));
  const Tensor& y = t1.value(batch_norm(t1.leaf(x), g, b, &buf, true));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 4; ++r) mean += y.at(r, c);
    mean /= 4.0;
    for (std::size_t r = 0; r < 4; ++r)
      var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var / 4.0 == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(buf.running_mean[c] != 0.0);  // momentum update happened
  }

  Tape t2;
  CHECK_THROWS_AS(batch_norm(t2.leaf(Tensor({1, 3})),
                             t2.leaf(Tensor::full({3}, 1.0)),
                             t2.leaf(Tensor({3})), &buf, true),
                  std::invalid_argument);
}

TEST_CASE("dropout behavior") {
  Rng rng(4);
  const Tensor x = gradcheck::random_tensor({10, 10}, 5);
  SUBCASE("eval mode is the identity") {
    Tape t;
    const Tensor& y = t.value(dropout(t.leaf(x), 0.4, false, rng));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("train mode zeroes roughly p and rescales the rest") {
    Tape t;
    const Tensor& y = t.value(dropout(t.leaf(x), 0.5, true, rng));
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (y[i] == 0.0) ++zeros;
      else CHECK(y[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-14));
    }
    CHECK(zeros > 25);
    CHECK(zeros < 75);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones gradient") {
    Tape t;
    Var x = t.leaf(gradcheck::random_tensor({3, 4}, 6), true);
    t.backward(sum(x));
    const Tensor& g = t.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
  }
  SUBCASE("x squared at 3 has gradient 6") {
    Tape t;
    Var x = t.leaf(Tensor({1}, {3.0}), true);
    t.backward(sum(mul(x, x)));
    CHECK(t.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    Var x = t.leaf(Tensor({2}), true);
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
  }
}

TEST_CASE("gradient check: every op vs central differences") {
  constexpr double kTol = 1e-4;

  SUBCASE("linear") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, linear(v[0], v[1], v[2]));
              },
              {gradcheck::random_tensor({4, 3}, 1),
               gradcheck::random_tensor({3, 5}, 2),
               gradcheck::random_tensor({5}, 3)}) < kTol);
  }
  SUBCASE("matmul and matmul_nt") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, matmul(v[0], v[1]));
              },
              {gradcheck::random_tensor({3, 4}, 4),
               gradcheck::random_tensor({4, 2}, 5)}) < kTol);
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, matmul_nt(v[0], v[1]));
              },
              {gradcheck::random_tensor({3, 4}, 6),
               gradcheck::random_tensor({5, 4}, 7)}) < kTol);
  }
  SUBCASE("elementwise and broadcast") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(
                    t, mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.3))));
              },
              {gradcheck::random_tensor({3, 3}, 8),
               gradcheck::random_tensor({3, 3}, 9)}) < kTol);
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, add_rowvec(v[0], v[1]));
              },
              {gradcheck::random_tensor({4, 3}, 10),
               gradcheck::random_tensor({3}, 11)}) < kTol);
  }
  SUBCASE("activations away from kinks") {
    for (auto kind : {Act::relu, Act::elu, Act::sigmoid}) {
      CHECK(gradcheck::max_rel_error(
                [kind](Tape& t, const std::vector<Var>& v) {
                  return gradcheck::weighted_sum(t, activation(v[0], kind));
                },
                {gradcheck::random_tensor({4, 4}, 12, -2.0, 2.0, 0.05)}) <
            kTol);
    }
  }
  SUBCASE("softmax variants") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, softmax_lastdim(v[0]));
              },
              {gradcheck::random_tensor({3, 6}, 13, -2.0, 2.0)}) < kTol);
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, softmax_causal(v[0]));
              },
              {gradcheck::random_tensor({5, 5}, 14, -2.0, 2.0)}) < kTol);
  }
  SUBCASE("conv2d with bias") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, conv2d(v[0], v[1], v[2]));
              },
              {gradcheck::random_tensor({2, 2, 5, 5}, 15),
               gradcheck::random_tensor({3, 2, 3, 3}, 16),
               gradcheck::random_tensor({3}, 17)}) < kTol);
  }
  SUBCASE("maxpool") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t, maxpool2d(v[0]));
              },
              {gradcheck::random_tensor({2, 4, 4}, 18, -3.0, 3.0)}) < kTol);
  }
  SUBCASE("layer norm") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return gradcheck::weighted_sum(t,
                                               layer_norm(v[0], v[1], v[2]));
              },
              {gradcheck::random_tensor({4, 6}, 19),
               gradcheck::random_tensor({6}, 20, 0.5, 1.5),
               gradcheck::random_tensor({6}, 21)}) < kTol);
  }
  SUBCASE("batch norm train and eval") {
    auto train_fn = [](Tape& t, const std::vector<Var>& v) {
      BatchNormBuffers buf;
      buf.running_mean = Tensor({3});
      buf.running_var = Tensor::full({3}, 1.0);
      return gradcheck::weighted_sum(
          t, batch_norm(v[0], v[1], v[2], &buf, true));
    };
    CHECK(gradcheck::max_rel_error(train_fn,
                                   {gradcheck::random_tensor({5, 3}, 22),
                                    gradcheck::random_tensor({3}, 23, 0.5, 1.5),
                                    gradcheck::random_tensor({3}, 24)}) < kTol);
    auto eval_fn = [](Tape& t, const std::vector<Var>& v) {
      static BatchNormBuffers buf = [] {
        BatchNormBuffers b;
        b.running_mean = gradcheck::random_tensor({3}, 25, -0.5, 0.5);
        b.running_var = gradcheck::random_tensor({3}, 26, 0.5, 1.5);
        return b;
      }();
      return gradcheck::weighted_sum(
          t, batch_norm(v[0], v[1], v[2], &buf, false));
    };
    CHECK(gradcheck::max_rel_error(eval_fn,
                                   {gradcheck::random_tensor({4, 3}, 27),
                                    gradcheck::random_tensor({3}, 28, 0.5, 1.5),
                                    gradcheck::random_tensor({3}, 29)}) < kTol);
  }
  SUBCASE("dropout with a fixed mask") {
    auto fn = [](Tape& t, const std::vector<Var>& v) {
      Rng rng(77);  // same mask on every evaluation
      return gradcheck::weighted_sum(t, dropout(v[0], 0.3, true, rng));
    };
    CHECK(gradcheck::max_rel_error(fn, {gradcheck::random_tensor({6, 6}, 30)}) <
          kTol);
  }
  SUBCASE("shape ops") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                Var parts0 = slice_cols(v[0], 0, 2);
                Var parts1 = slice_cols(v[0], 2, 5);
                const Var cat[] = {parts1, parts0};
                return gradcheck::weighted_sum(
                    t, reshape(concat_cols(cat), {15}));
              },
              {gradcheck::random_tensor({3, 5}, 31)}) < kTol);
  }
  SUBCASE("mean squared error") {
    CHECK(gradcheck::max_rel_error(
              [](Tape& t, const std::vector<Var>& v) {
                return mean_sq_err(v[0], v[1]);
              },
              {gradcheck::random_tensor({4, 4}, 32),
               gradcheck::random_tensor({4, 4}, 33)}) < kTol);
  }
}

TEST_CASE("forward determinism") {
  const Tensor x = gradcheck::random_tensor({6, 6}, 40);
  const Tensor w = gradcheck::random_tensor({6, 6}, 41);
  auto run = [&] {
    Tape t;
    return t.value(softmax_lastdim(matmul(t.leaf(x), t.leaf(w))));
  };
  const Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_SUITE_END();
