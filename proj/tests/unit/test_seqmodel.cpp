#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "homsurro/seqmodel/surrogate.hpp"

using namespace homsurro;
using namespace homsurro::seqmodel;
using homsurro::ndcore::Binder;
using homsurro::ndcore::Rng;
using homsurro::ndcore::Shape;
using homsurro::ndcore::Tape;
using homsurro::ndcore::Tensor;
using homsurro::ndcore::Var;

TEST_SUITE_BEGIN("seqmodel");

TEST_CASE("scaled dot-product attention basics") {
  Tape t;
  SUBCASE("a single key returns its value row") {
    Var q = t.leaf(gradcheck::random_tensor({3, 4}, 1));
    Var k = t.leaf(gradcheck::random_tensor({1, 4}, 2));
    Var v = t.leaf(Tensor({1, 2}, {5.0, -3.0}));
    const Tensor& o = t.value(scaled_dot_attention(q, k, v, false));
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(o.at(r, 0) == 5.0);
      CHECK(o.at(r, 1) == -3.0);
    }
  }
  SUBCASE("zero scores average the values uniformly") {
    Var q = t.leaf(Tensor({2, 3}));
    Var k = t.leaf(gradcheck::random_tensor({4, 3}, 3));
    Var v = t.leaf(Tensor({4, 1}, {1.0, 2.0, 3.0, 4.0}));
    const Tensor& o = t.value(scaled_dot_attention(q, k, v, false));
    CHECK(o.at(0, 0) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(o.at(1, 0) == doctest::Approx(2.5).epsilon(1e-12));
  }
  SUBCASE("causal first row sees only the first key") {
    Var q = t.leaf(gradcheck::random_tensor({3, 4}, 4));
    Var k = t.leaf(gradcheck::random_tensor({3, 4}, 5));
    Var v = t.leaf(gradcheck::random_tensor({3, 2}, 6));
    const Tensor& o = t.value(scaled_dot_attention(q, k, v, true));
    const Tensor& vv = t.value(v);
    CHECK(o.at(0, 0) == doctest::Approx(vv.at(0, 0)).epsilon(1e-12));
    CHECK(o.at(0, 1) == doctest::Approx(vv.at(0, 1)).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention") {
  const std::size_t d = 4;
  SUBCASE("one identity-projected head reduces to plain attention") {
    AttentionWeights w;
    Tensor eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
    w.wq = w.wk = w.wv = w.wo = eye;
    w.bq = w.bk = w.bv = w.bo = Tensor({d});
    const Tensor q = gradcheck::random_tensor({5, d}, 7);
    const Tensor kv = gradcheck::random_tensor({5, d}, 8);
    Tape t;
    Binder b(t, false);
    const Tensor& multi = t.value(
        multi_head_attention(b, w, b.constant(q), b.constant(kv), 1, false));
    const Tensor& single = t.value(scaled_dot_attention(
        b.constant(q), b.constant(kv), b.constant(kv), false));
    for (std::size_t i = 0; i < multi.numel(); ++i)
      CHECK(multi[i] == doctest::Approx(single[i]).epsilon(1e-12));
  }
  SUBCASE("output shape is [T, d_model]") {
    AttentionWeights w;
    w.wq = gradcheck::random_tensor({d, d}, 9);
    w.wk = gradcheck::random_tensor({d, d}, 10);
    w.wv = gradcheck::random_tensor({d, d}, 11);
    w.wo = gradcheck::random_tensor({d, d}, 12);
    w.bq = gradcheck::random_tensor({d}, 13);
    w.bk = gradcheck::random_tensor({d}, 14);
    w.bv = gradcheck::random_tensor({d}, 15);
    w.bo = gradcheck::random_tensor({d}, 16);
    Tape t;
    Binder b(t, false);
    Var out = multi_head_attention(b, w, b.constant(gradcheck::random_tensor(
                                             {6, d}, 17)),
                                   b.constant(gradcheck::random_tensor(
                                       {6, d}, 18)),
                                   2, true);
    CHECK(t.value(out).shape() == Shape{6, d});
  }
  SUBCASE("permuting heads with matching output rows leaves output unchanged") {
    AttentionWeights w;
    w.wq = gradcheck::random_tensor({d, d}, 20);
    w.wk = gradcheck::random_tensor({d, d}, 21);
    w.wv = gradcheck::random_tensor({d, d}, 22);
    w.wo = gradcheck::random_tensor({d, d}, 23);
    w.bq = gradcheck::random_tensor({d}, 24);
    w.bk = gradcheck::random_tensor({d}, 25);
    w.bv = gradcheck::random_tensor({d}, 26);
    w.bo = gradcheck::random_tensor({d}, 27);

    AttentionWeights p = w;  // swap the two head column blocks (width 2)
    auto swap_cols = [](Tensor& m) {
      for (std::size_t r = 0; r < m.extent(0); ++r) {
        std::swap(m.at(r, 0), m.at(r, 2));
        std::swap(m.at(r, 1), m.at(r, 3));
      }
    };
    auto swap_vec = [](Tensor& v) {
      std::swap(v[0], v[2]);
      std::swap(v[1], v[3]);
    };
    swap_cols(p.wq);
    swap_cols(p.wk);
    swap_cols(p.wv);
    swap_vec(p.bq);
    swap_vec(p.bk);
    swap_vec(p.bv);
    // concatenation order changed, so the output projection rows swap too
    for (std::size_t c = 0; c < d; ++c) {
      std::swap(p.wo.at(0, c), p.wo.at(2, c));
      std::swap(p.wo.at(1, c), p.wo.at(3, c));
    }

    const Tensor q = gradcheck::random_tensor({5, d}, 28);
    const Tensor kv = gradcheck::random_tensor({5, d}, 29);
    Tape t;
    Binder b(t, false);
    const Tensor& base = t.value(
        multi_head_attention(b, w, b.constant(q), b.constant(kv), 2, true));
    const Tensor& perm = t.value(
        multi_head_attention(b, p, b.constant(q), b.constant(kv), 2, true));
    for (std::size_t i = 0; i < base.numel(); ++i)
      CHECK(base[i] == doctest::Approx(perm[i]).epsilon(1e-12));
  }
}

TEST_CASE("positional encoding") {
  const auto pe = positional_encoding(8, 6);
  SUBCASE("position zero alternates zero and one") {
    for (std::size_t i = 0; i < 6; i += 2) {
      CHECK(pe.at(0, i) == 0.0);
      CHECK(pe.at(0, i + 1) == 1.0);
    }
  }
  SUBCASE("bounded by one in magnitude") {
    for (std::size_t i = 0; i < pe.numel(); ++i) {
      CHECK(pe[i] >= -1.0);
      CHECK(pe[i] <= 1.0);
    }
  }
  SUBCASE("direct evaluation at position one") {
    CHECK(pe.at(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  }
}

TEST_CASE("glu") {
  Tape t;
  SUBCASE("neutral gate halves the value branch") {
    Var x = t.leaf(gradcheck::random_tensor({3, 2}, 30));
    Var w1 = t.leaf(Tensor({2, 2}));
    Var b1 = t.leaf(Tensor({2}));
    Var w2 = t.leaf(gradcheck::random_tensor({2, 2}, 31));
    Var b2 = t.leaf(gradcheck::random_tensor({2}, 32));
    const Tensor& y = t.value(glu(x, w1, b1, w2, b2));
    const Tensor& lin = t.value(linear(x, w2, b2));
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(0.5 * lin[i]).epsilon(1e-12));
  }
  SUBCASE("saturated gate passes the value branch") {
    Var x = t.leaf(gradcheck::random_tensor({2, 2}, 33));
    Var w1 = t.leaf(Tensor({2, 2}));
    Var b1 = t.leaf(Tensor::full({2}, 20.0));
    Var w2 = t.leaf(gradcheck::random_tensor({2, 2}, 34));
    Var b2 = t.leaf(Tensor({2}));
    const Tensor& y = t.value(glu(x, w1, b1, w2, b2));
    const Tensor& lin = t.value(linear(x, w2, b2));
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(lin[i]).epsilon(1e-8));
  }
  SUBCASE("scalar hand value") {
    Var x = t.leaf(Tensor({1}, {1.0}));
    Var w1 = t.leaf(Tensor({1, 1}, {1.0}));
    Var b1 = t.leaf(Tensor({1}));
    Var w2 = t.leaf(Tensor({1, 1}, {2.0}));
    Var b2 = t.leaf(Tensor({1}));
    CHECK(t.value(glu(x, w1, b1, w2, b2))[0] ==
          doctest::Approx(1.462117).epsilon(1e-6));
  }
}

namespace {

GrnWeights random_grn(std::size_t d, std::size_t hidden, bool ctx,
                      std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](Shape s) {
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.6, 0.6);
    return t;
  };
  GrnWeights g;
  g.w_in = fill({d, hidden});
  g.b_in = fill({hidden});
  if (ctx) g.w_ctx = fill({d, hidden});
  g.w_mid = fill({hidden, d});
  g.b_mid = fill({d});
  g.w_gate = fill({d, d});
  g.b_gate = fill({d});
  g.w_val = fill({d, d});
  g.b_val = fill({d});
  g.ln_gamma = Tensor::full({d}, 1.0);
  g.ln_beta = Tensor({d});
  return g;
}

}  // namespace

TEST_CASE("gated residual block") {
  const std::size_t d = 4, hidden = 6;
  Rng drop(0);

  SUBCASE("a closed gate reduces to layer norm of the input") {
    GrnWeights g = random_grn(d, hidden, false, 40);
    g.b_gate = Tensor::full({d}, -40.0);  // sigmoid -> 0
    const Tensor x = gradcheck::random_tensor({3, d}, 41);
    Tape t;
    Binder b(t, false);
    const Tensor& y =
        t.value(grn_forward(b, g, b.constant(x), Var{}, false, 0.1, drop));
    const Tensor& ln = t.value(ndcore::layer_norm(
        b.constant(x), b.use(g.ln_gamma), b.use(g.ln_beta)));
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(ln[i]).epsilon(1e-10));
  }
  SUBCASE("zero context equals no context") {
    GrnWeights with_ctx = random_grn(d, hidden, true, 42);
    GrnWeights without = with_ctx;
    without.w_ctx = Tensor{};
    const Tensor x = gradcheck::random_tensor({3, d}, 43);
    Tape t;
    Binder b(t, false);
    Var zero_ctx = b.constant(Tensor({d}));
    const Tensor& a = t.value(
        grn_forward(b, with_ctx, b.constant(x), zero_ctx, false, 0.1, drop));
    const Tensor& c = t.value(
        grn_forward(b, without, b.constant(x), Var{}, false, 0.1, drop));
    for (std::size_t i = 0; i < a.numel(); ++i)
      CHECK(a[i] == doctest::Approx(c[i]).epsilon(1e-12));
  }
  SUBCASE("context/configuration mismatch is rejected") {
    GrnWeights g = random_grn(d, hidden, false, 44);
    Tape t;
    Binder b(t, false);
    CHECK_THROWS_AS(
        grn_forward(b, g, b.constant(Tensor({2, d})), b.constant(Tensor({d})),
                    false, 0.1, drop),
        std::invalid_argument);
  }
  SUBCASE("gradient check against central differences") {
    GrnWeights g = random_grn(d, hidden, true, 45);
    // weights fixed, differentiating wrt the sequence input and the context
    auto fn = [&g](Tape& t, const std::vector<Var>& v) {
      Binder b(t, true);
      Rng r(0);
      return gradcheck::weighted_sum(
          t, grn_forward(b, g, v[0], v[1], false, 0.0, r));
    };
    CHECK(gradcheck::max_rel_error(fn,
                                   {gradcheck::random_tensor({3, d}, 46),
                                    gradcheck::random_tensor({d}, 47)}) <
          1e-4);
  }
}

TEST_CASE("shift right") {
  SUBCASE("single row becomes zero") {
    const Tensor s({1, 4}, {1, 2, 3, 4});
    const Tensor y = shift_right(s);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 0.0);
  }
  SUBCASE("rows move down by one") {
    const Tensor s({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor y = shift_right(s);
    CHECK(y.at(0, 0) == 0.0);
    CHECK(y.at(1, 0) == 1.0);
    CHECK(y.at(1, 1) == 2.0);
    CHECK(y.at(2, 0) == 3.0);
  }
  SUBCASE("twice gives two leading zero rows") {
    const Tensor s({3, 2}, {1, 2, 3, 4, 5, 6});
    const Tensor y = shift_right(shift_right(s));
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(y.at(0, c) == 0.0);
      CHECK(y.at(1, c) == 0.0);
    }
    CHECK(y.at(2, 0) == 1.0);
  }
}

namespace {

SurrogateConfig tiny_config(MicroEncoding micro = MicroEncoding::none) {
  SurrogateConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ff_dim = 24;
  cfg.grn_hidden = 32;
  cfg.dropout = 0.1;
  cfg.micro = micro;
  return cfg;
}

}  // namespace

TEST_CASE("surrogate model contracts") {
  auto model = SurrogateModel::build(tiny_config());
  Rng rng(50);
  model.init_params(rng);

  SUBCASE("random weights produce a finite [T,4] output") {
    const Tensor strain = gradcheck::random_tensor({7, 3}, 51);
    const Tensor shifted = gradcheck::random_tensor({7, 4}, 52);
    const Tensor out = model.predict(strain, shifted, {});
    CHECK(out.shape() == Shape{7, 4});
    CHECK(out.all_finite());
  }
  SUBCASE("sequence length bounds are enforced") {
    CHECK_THROWS_AS(model.predict(Tensor({101, 3}), Tensor({101, 4}), {}),
                    std::invalid_argument);
  }
  SUBCASE("descriptor mismatch is rejected") {
    auto with_micro = SurrogateModel::build(tiny_config(MicroEncoding::descriptor));
    Rng r2(53);
    with_micro.init_params(r2);
    const std::vector<double> bad = {1.0, 2.0};  // needs 3
    CHECK_THROWS_AS(
        with_micro.predict(Tensor({2, 3}), Tensor({2, 4}), bad),
        std::invalid_argument);
    CHECK_THROWS_AS(model.predict(Tensor({2, 3}), Tensor({2, 4}),
                                  std::vector<double>{1.0, 2.0, 3.0}),
                    std::invalid_argument);
  }
  SUBCASE("eval forward is deterministic") {
    const Tensor strain = gradcheck::random_tensor({5, 3}, 54);
    const Tensor shifted = gradcheck::random_tensor({5, 4}, 55);
    const Tensor a = model.predict(strain, shifted, {});
    const Tensor b = model.predict(strain, shifted, {});
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("causality of the decoder") {
  auto model = SurrogateModel::build(tiny_config(MicroEncoding::descriptor));
  Rng rng(60);
  model.init_params(rng);
  const std::vector<double> micro = {0.3, -0.7, 1.1};

  for (int trial = 0; trial < 5; ++trial) {
    Rng trng(100 + trial);
    const std::size_t t_len = 12;
    const std::size_t k = trng.bounded(t_len - 1);
    Tensor strain({t_len, 3}), shifted({t_len, 4});
    for (std::size_t i = 0; i < strain.numel(); ++i)
      strain[i] = trng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < shifted.numel(); ++i)
      shifted[i] = trng.uniform(-1.0, 1.0);
    const Tensor base = model.predict(strain, shifted, micro);

    Tensor strain2 = strain, shifted2 = shifted;
    for (std::size_t t = k + 1; t < t_len; ++t) {
      for (std::size_t c = 0; c < 3; ++c)
        strain2.at(t, c) += trng.uniform(0.5, 2.0);
      for (std::size_t c = 0; c < 4; ++c)
        shifted2.at(t, c) += trng.uniform(0.5, 2.0);
    }
    const Tensor pert = model.predict(strain2, shifted2, micro);
    for (std::size_t t = 0; t <= k; ++t)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(std::abs(base.at(t, c) - pert.at(t, c)) <= 1e-9);
  }
}

TEST_CASE("autoregressive decoding") {
  auto model = SurrogateModel::build(tiny_config());
  Rng rng(70);
  model.init_params(rng);

  SUBCASE("length one equals the teacher-forced call with a zero row") {
    const Tensor strain = gradcheck::random_tensor({1, 3}, 71);
    const Tensor auto_pred = model.predict_autoregressive(strain, {});
    const Tensor forced = model.predict(strain, Tensor({1, 4}), {});
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(auto_pred[i] == doctest::Approx(forced[i]).epsilon(1e-14));
  }
  SUBCASE("deterministic across runs") {
    const Tensor strain = gradcheck::random_tensor({6, 3}, 72);
    const Tensor a = model.predict_autoregressive(strain, {});
    const Tensor b = model.predict_autoregressive(strain, {});
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  SUBCASE("feeding its own predictions back reproduces the decoding") {
    const Tensor strain = gradcheck::random_tensor({6, 3}, 73);
    const Tensor auto_pred = model.predict_autoregressive(strain, {});
    const Tensor forced =
        model.predict(strain, shift_right(auto_pred), {});
    for (std::size_t i = 0; i < auto_pred.numel(); ++i)
      CHECK(auto_pred[i] == doctest::Approx(forced[i]).epsilon(1e-9));
  }
}

TEST_CASE("parameter counts at the published configuration") {
  auto model = SurrogateModel::build(SurrogateConfig::full());
  SUBCASE("decoder stack total") {
    CHECK(model.decoder_stack_param_count() == 25224192);
  }
  SUBCASE("per-layer breakdown") {
    std::size_t attn = 0, ff = 0, ln = 0;
    const auto& l = model.decoder[0];
    for (const Tensor* t : {&l.self_attn.wq, &l.self_attn.bq, &l.self_attn.wk,
                            &l.self_attn.bk, &l.self_attn.wv, &l.self_attn.bv,
                            &l.self_attn.wo, &l.self_attn.bo})
      attn += t->numel();
    CHECK(attn == 1050624);
    for (const Tensor* t : {&l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2})
      ff += t->numel();
    CHECK(ff == 2099712);
    for (const Tensor* t : {&l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b, &l.ln3_g,
                            &l.ln3_b})
      ln += t->numel();
    CHECK(ln == 3072);
    CHECK(2 * attn + ff + ln == 4204032);
  }
}

TEST_CASE("reduced full-model gradient check") {
  auto cfg = tiny_config(MicroEncoding::descriptor);
  cfg.dropout = 0.0;
  auto model = SurrogateModel::build(cfg);
  Rng rng(80);
  model.init_params(rng);

  const Tensor strain = gradcheck::random_tensor({3, 3}, 81);
  const Tensor shifted = gradcheck::random_tensor({3, 4}, 82);
  const Tensor micro = gradcheck::random_tensor({3}, 83);
  const Tensor probe = gradcheck::random_tensor({3, 4}, 84, 0.05, 0.15);

  Tape tape;
  Binder binder(tape, true);
  Rng drop(0);
  Var out = model.forward(binder, strain, shifted, binder.constant(micro),
                          false, drop);
  Var loss = ndcore::sum(ndcore::mul(out, binder.constant(probe)));
  tape.backward(loss);

  auto eval = [&]() {
    const Tensor o = model.predict(strain, shifted,
                                   std::span<const double>(micro.data(), 3));
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += o[i] * probe[i];
    return s;
  };

  double worst = 0.0;
  for (auto& ref : model.params()) {
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

TEST_SUITE_END();
