#include "homsurro/ndcore/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace homsurro::ndcore {

namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw std::invalid_argument("use of an invalid Var");
  return *v.tape;
}

void require_same_tape(Var a, Var b) {
  if (b.valid() && a.tape != b.tape)
    throw std::logic_error("ops cannot mix nodes from different tapes");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

Var emit1(Var x, Tensor out, Tape::BackwardFn fn) {
  const Var ins[] = {x};
  return tape_of(x).emit(std::move(out), ins, std::move(fn));
}

Var emit2(Var a, Var b, Tensor out, Tape::BackwardFn fn) {
  require_same_tape(a, b);
  const Var ins[] = {a, b};
  return tape_of(a).emit(std::move(out), ins, std::move(fn));
}

}  // namespace

// -- elementwise --------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return emit2(a, b, std::move(out), [a, b](Tape& tp, const Tensor& g) {
    if (tp.wants_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.wants_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return emit2(a, b, std::move(out), [a, b](Tape& tp, const Tensor& g) {
    if (tp.wants_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.wants_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return emit2(a, b, std::move(out), [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.wants_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.wants_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * c;
  return emit1(a, std::move(out), [a, c](Tape& tp, const Tensor& g) {
    if (!tp.wants_grad(a)) return;
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
  });
}

Var add_rowvec(Var x, Var v) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const Tensor& vv = t.value(v);
  if (xv.rank() < 1 || vv.rank() != 1 ||
      xv.shape().back() != vv.extent(0))
    shape_error("add_rowvec", xv, vv);
  const std::size_t d = vv.extent(0);
  const std::size_t rows = xv.numel() / d;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[r * d + c] = xv[r * d + c] + vv[c];
  return emit2(x, v, std::move(out), [x, v, rows, d](Tape& tp, const Tensor& g) {
    if (tp.wants_grad(x)) {
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (tp.wants_grad(v)) {
      Tensor& gv = tp.grad_buffer(v);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
    }
  });
}

// -- dense linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0))
    shape_error("matmul", av, bv);
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out({m, n});
  gemm(false, false, m, n, k, 1.0, av.data(), k, bv.data(), n, 0.0, out.data(),
       n);
  return emit2(a, b, std::move(out),
               [a, b, m, n, k](Tape& tp, const Tensor& g) {
                 const Tensor& av = tp.value(a);
                 const Tensor& bv = tp.value(b);
                 if (tp.wants_grad(a))
                   gemm(false, true, m, k, n, 1.0, g.data(), n, bv.data(), n,
                        1.0, tp.grad_buffer(a).data(), k);
                 if (tp.wants_grad(b))
                   gemm(true, false, k, n, m, 1.0, av.data(), k, g.data(), n,
                        1.0, tp.grad_buffer(b).data(), n);
               });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(1))
    shape_error("matmul_nt", av, bv);
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(0);
  Tensor out({m, n});
  gemm(false, true, m, n, k, 1.0, av.data(), k, bv.data(), k, 0.0, out.data(),
       n);
  return emit2(a, b, std::move(out),
               [a, b, m, n, k](Tape& tp, const Tensor& g) {
                 const Tensor& av = tp.value(a);
                 const Tensor& bv = tp.value(b);
                 if (tp.wants_grad(a))
                   gemm(false, false, m, k, n, 1.0, g.data(), n, bv.data(), k,
                        1.0, tp.grad_buffer(a).data(), k);
                 if (tp.wants_grad(b))
                   gemm(true, false, n, k, m, 1.0, g.data(), n, av.data(), k,
                        1.0, tp.grad_buffer(b).data(), k);
               });
}

Var linear(Var x, Var w, Var b) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (wv.rank() != 2) shape_error("linear", xv, wv);
  const bool vec_in = xv.rank() == 1;
  if ((vec_in ? xv.extent(0) : xv.extent(1)) != wv.extent(0))
    shape_error("linear", xv, wv);
  const std::size_t rows = vec_in ? 1 : xv.extent(0);
  const std::size_t in = wv.extent(0), out_dim = wv.extent(1);
  Tensor out(vec_in ? Shape{out_dim} : Shape{rows, out_dim});
  gemm(false, false, rows, out_dim, in, 1.0, xv.data(), in, wv.data(), out_dim,
       0.0, out.data(), out_dim);
  if (b.valid()) {
    const Tensor& bv = t.value(b);
    if (bv.rank() != 1 || bv.extent(0) != out_dim) shape_error("linear", xv, bv);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += bv[c];
  }
  require_same_tape(x, w);
  require_same_tape(x, b);
  const Var ins[] = {x, w, b};
  return t.emit(std::move(out), std::span<const Var>(ins, b.valid() ? 3 : 2),
                [x, w, b, rows, in, out_dim](Tape& tp, const Tensor& g) {
                  const Tensor& xv = tp.value(x);
                  const Tensor& wv = tp.value(w);
                  if (tp.wants_grad(x))
                    gemm(false, true, rows, in, out_dim, 1.0, g.data(), out_dim,
                         wv.data(), out_dim, 1.0, tp.grad_buffer(x).data(), in);
                  if (tp.wants_grad(w))
                    gemm(true, false, in, out_dim, rows, 1.0, xv.data(), in,
                         g.data(), out_dim, 1.0, tp.grad_buffer(w).data(),
                         out_dim);
                  if (b.valid() && tp.wants_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < out_dim; ++c)
                        gb[c] += g[r * out_dim + c];
                  }
                });
}

// -- activations ------------------------------------------------------------------

Var relu(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return emit1(x, std::move(out), [x](Tape& tp, const Tensor& g) {
    if (!tp.wants_grad(x)) return;
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var elu(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : std::expm1(xv[i]);
  Tensor saved = out;
  return emit1(x, std::move(out),
               [x, saved = std::move(saved)](Tape& tp, const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 const Tensor& xv = tp.value(x);
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t i = 0; i < g.numel(); ++i)
                   gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : saved[i] + 1.0);
               });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  Tensor saved = out;
  return emit1(x, std::move(out),
               [x, saved = std::move(saved)](Tape& tp, const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t i = 0; i < g.numel(); ++i)
                   gx[i] += g[i] * saved[i] * (1.0 - saved[i]);
               });
}

Var softmax_lastdim(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.rank() < 1) throw std::invalid_argument("softmax: rank-0 input");
  const std::size_t d = xv.shape().back();
  const std::size_t rows = xv.numel() / d;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double* o = out.data() + r * d;
    double mx = in[0];
    for (std::size_t c = 1; c < d; ++c) mx = std::max(mx, in[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < d; ++c) o[c] /= z;
  }
  Tensor saved = out;
  return emit1(x, std::move(out),
               [x, saved = std::move(saved), rows, d](Tape& tp,
                                                      const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t r = 0; r < rows; ++r) {
                   const double* y = saved.data() + r * d;
                   const double* gr = g.data() + r * d;
                   double dot = 0.0;
                   for (std::size_t c = 0; c < d; ++c) dot += gr[c] * y[c];
                   for (std::size_t c = 0; c < d; ++c)
                     gx[r * d + c] += y[c] * (gr[c] - dot);
                 }
               });
}

Var activation(Var x, Act kind) {
  switch (kind) {
    case Act::relu: return relu(x);
    case Act::elu: return elu(x);
    case Act::sigmoid: return sigmoid(x);
    case Act::softmax_lastdim: return softmax_lastdim(x);
  }
  throw std::invalid_argument("unknown activation");
}

Var softmax_causal(Var scores) {
  Tape& t = tape_of(scores);
  const Tensor& sv = t.value(scores);
  if (sv.rank() != 2 || sv.extent(0) != sv.extent(1))
    throw std::invalid_argument("softmax_causal expects a square [T,T] matrix");
  const std::size_t n = sv.extent(0);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = sv.data() + i * n;
    double* o = out.data() + i * n;
    double mx = in[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j <= i; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j <= i; ++j) o[j] /= z;
    // columns j > i stay exactly zero
  }
  Tensor saved = out;
  return emit1(scores, std::move(out),
               [scores, saved = std::move(saved), n](Tape& tp,
                                                     const Tensor& g) {
                 if (!tp.wants_grad(scores)) return;
                 Tensor& gx = tp.grad_buffer(scores);
                 for (std::size_t i = 0; i < n; ++i) {
                   const double* y = saved.data() + i * n;
                   const double* gr = g.data() + i * n;
                   double dot = 0.0;
                   for (std::size_t j = 0; j <= i; ++j) dot += gr[j] * y[j];
                   for (std::size_t j = 0; j <= i; ++j)
                     gx[i * n + j] += y[j] * (gr[j] - dot);
                 }
               });
}

// -- convolution / pooling -----------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t batch, cin, h, w, cout, k, pad, stride, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kern, std::size_t stride) {
  if (kern.rank() != 4 || kern.extent(2) != kern.extent(3))
    throw std::invalid_argument("conv2d kernels must be [C_out,C_in,k,k]");
  if (kern.extent(2) % 2 == 0)
    throw std::invalid_argument("conv2d requires odd kernel size");
  if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
  ConvDims d{};
  d.batched = x.rank() == 4;
  if (!d.batched && x.rank() != 3)
    throw std::invalid_argument("conv2d input must be [C,H,W] or [B,C,H,W]");
  d.batch = d.batched ? x.extent(0) : 1;
  d.cin = x.extent(d.batched ? 1 : 0);
  d.h = x.extent(d.batched ? 2 : 1);
  d.w = x.extent(d.batched ? 3 : 2);
  d.cout = kern.extent(0);
  d.k = kern.extent(2);
  if (kern.extent(1) != d.cin) shape_error("conv2d", x, kern);
  d.pad = (d.k - 1) / 2;
  d.stride = stride;
  d.ho = (d.h + 2 * d.pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * d.pad - d.k) / stride + 1;
  return d;
}

// Unpack one image [C,H,W] into columns [C*k*k, Ho*Wo] (zero padding).
void im2col(const double* x, const ConvDims& d, double* col) {
  const std::size_t patch = d.cin * d.k * d.k;
  const std::size_t cols = d.ho * d.wo;
  for (std::size_t c = 0; c < d.cin; ++c)
    for (std::size_t ki = 0; ki < d.k; ++ki)
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        double* row = col + ((c * d.k + ki) * d.k + kj) * cols;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * d.stride + ki) -
              static_cast<std::ptrdiff_t>(d.pad);
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * d.stride + kj) -
                static_cast<std::ptrdiff_t>(d.pad);
            row[oh * d.wo + ow] =
                (ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(d.h) &&
                 iw < static_cast<std::ptrdiff_t>(d.w))
                    ? x[(c * d.h + ih) * d.w + iw]
                    : 0.0;
          }
        }
      }
  (void)patch;
}

// Scatter-add columns back into an image (transpose of im2col).
void col2im_add(const double* col, const ConvDims& d, double* x) {
  const std::size_t cols = d.ho * d.wo;
  for (std::size_t c = 0; c < d.cin; ++c)
    for (std::size_t ki = 0; ki < d.k; ++ki)
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        const double* row = col + ((c * d.k + ki) * d.k + kj) * cols;
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * d.stride + ki) -
              static_cast<std::ptrdiff_t>(d.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * d.stride + kj) -
                static_cast<std::ptrdiff_t>(d.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            x[(c * d.h + ih) * d.w + iw] += row[oh * d.wo + ow];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var kernels, Var bias, std::size_t stride) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernels);
  const ConvDims d = conv_dims(xv, kv, stride);
  const std::size_t patch = d.cin * d.k * d.k;
  const std::size_t cols = d.ho * d.wo;
  const std::size_t img = d.cin * d.h * d.w;
  const std::size_t out_img = d.cout * cols;

  Tensor out(d.batched ? Shape{d.batch, d.cout, d.ho, d.wo}
                       : Shape{d.cout, d.ho, d.wo});
  std::vector<double> col(patch * cols);
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(xv.data() + b * img, d, col.data());
    gemm(false, false, d.cout, cols, patch, 1.0, kv.data(), patch, col.data(),
         cols, 0.0, out.data() + b * out_img, cols);
  }
  if (bias.valid()) {
    const Tensor& bv = t.value(bias);
    if (bv.rank() != 1 || bv.extent(0) != d.cout) shape_error("conv2d", xv, bv);
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t c = 0; c < d.cout; ++c) {
        double* o = out.data() + b * out_img + c * cols;
        for (std::size_t i = 0; i < cols; ++i) o[i] += bv[c];
      }
  }
  require_same_tape(x, kernels);
  require_same_tape(x, bias);
  const Var ins[] = {x, kernels, bias};
  return t.emit(
      std::move(out), std::span<const Var>(ins, bias.valid() ? 3 : 2),
      [x, kernels, bias, d, patch, cols, img, out_img](Tape& tp,
                                                       const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& kv = tp.value(kernels);
        std::vector<double> col(patch * cols);
        std::vector<double> dcol(patch * cols);
        for (std::size_t b = 0; b < d.batch; ++b) {
          const double* gb = g.data() + b * out_img;
          if (tp.wants_grad(kernels)) {
            im2col(xv.data() + b * img, d, col.data());
            gemm(false, true, d.cout, patch, cols, 1.0, gb, cols, col.data(),
                 cols, 1.0, tp.grad_buffer(kernels).data(), patch);
          }
          if (tp.wants_grad(x)) {
            gemm(true, false, patch, cols, d.cout, 1.0, kv.data(), patch, gb,
                 cols, 0.0, dcol.data(), cols);
            col2im_add(dcol.data(), d, tp.grad_buffer(x).data() + b * img);
          }
        }
        if (bias.valid() && tp.wants_grad(bias)) {
          Tensor& gbias = tp.grad_buffer(bias);
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.cout; ++c) {
              const double* gb = g.data() + b * out_img + c * cols;
              double s = 0.0;
              for (std::size_t i = 0; i < cols; ++i) s += gb[i];
              gbias[c] += s;
            }
        }
      });
}

Var maxpool2d(Var x, std::size_t window) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const bool batched = xv.rank() == 4;
  if (!batched && xv.rank() != 3)
    throw std::invalid_argument("maxpool2d input must be [C,H,W] or [B,C,H,W]");
  const std::size_t batch = batched ? xv.extent(0) : 1;
  const std::size_t ch = xv.extent(batched ? 1 : 0);
  const std::size_t h = xv.extent(batched ? 2 : 1);
  const std::size_t w = xv.extent(batched ? 3 : 2);
  if (window < 1 || h % window != 0 || w % window != 0)
    throw std::invalid_argument("maxpool2d requires extents divisible by window");
  const std::size_t ho = h / window, wo = w / window;

  Tensor out(batched ? Shape{batch, ch, ho, wo} : Shape{ch, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t oi = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* plane = xv.data() + (b * ch + c) * h * w;
      const std::size_t plane_off = (b * ch + c) * h * w;
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j, ++oi) {
          double best = plane[i * window * w + j * window];
          std::size_t best_at = i * window * w + j * window;
          for (std::size_t di = 0; di < window; ++di)
            for (std::size_t dj = 0; dj < window; ++dj) {
              const std::size_t at = (i * window + di) * w + (j * window + dj);
              if (plane[at] > best) {  // strict: first max wins on ties
                best = plane[at];
                best_at = at;
              }
            }
          out[oi] = best;
          argmax[oi] = plane_off + best_at;
        }
    }
  return emit1(x, std::move(out),
               [x, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t i = 0; i < g.numel(); ++i)
                   gx[argmax[i]] += g[i];
               });
}

// -- normalization -------------------------------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  const std::size_t d = xv.shape().back();
  if (gv.numel() != d || bv.numel() != d) shape_error("layer_norm", xv, gv);
  const std::size_t rows = xv.numel() / d;

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_std({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (in[c] - mean) * is;
      xhat[r * d + c] = xh;
      out[r * d + c] = gv[c] * xh + bv[c];
    }
  }
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Var ins[] = {x, gamma, beta};
  return t.emit(std::move(out), ins,
                [x, gamma, beta, xhat = std::move(xhat),
                 inv_std = std::move(inv_std), rows, d](Tape& tp,
                                                        const Tensor& g) {
                  const Tensor& gv = tp.value(gamma);
                  if (tp.wants_grad(gamma)) {
                    Tensor& gg = tp.grad_buffer(gamma);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c)
                        gg[c] += g[r * d + c] * xhat[r * d + c];
                  }
                  if (tp.wants_grad(beta)) {
                    Tensor& gb = tp.grad_buffer(beta);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                  }
                  if (tp.wants_grad(x)) {
                    Tensor& gx = tp.grad_buffer(x);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_gy = 0.0, mean_gy_xhat = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double gy = g[r * d + c] * gv[c];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat[r * d + c];
                      }
                      mean_gy *= inv_d;
                      mean_gy_xhat *= inv_d;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double gy = g[r * d + c] * gv[c];
                        gx[r * d + c] +=
                            inv_std[r] *
                            (gy - mean_gy - xhat[r * d + c] * mean_gy_xhat);
                      }
                    }
                  }
                });
}

namespace {

// Group layout for per-channel stats: x viewed as [B, C, S] with S spatial.
struct BnDims {
  std::size_t batch, ch, spatial;
};

BnDims bn_dims(const Tensor& x) {
  if (x.rank() == 2) return {x.extent(0), x.extent(1), 1};
  if (x.rank() == 4)
    return {x.extent(0), x.extent(1), x.extent(2) * x.extent(3)};
  throw std::invalid_argument("batch_norm input must be [B,F] or [B,C,H,W]");
}

}  // namespace

Var batch_norm(Var x, Var gamma, Var beta, BatchNormBuffers* buffers,
               bool train, double eps) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  const BnDims d = bn_dims(xv);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  if (gv.numel() != d.ch || bv.numel() != d.ch)
    shape_error("batch_norm", xv, gv);
  if (buffers == nullptr)
    throw std::invalid_argument("batch_norm requires running-stat buffers");
  if (buffers->running_mean.numel() != d.ch ||
      buffers->running_var.numel() != d.ch)
    throw std::invalid_argument("batch_norm buffers have wrong width");
  if (train && d.batch < 2)
    throw std::invalid_argument("batch_norm in train mode requires batch > 1");

  const std::size_t group = d.batch * d.spatial;
  const auto at = [&](std::size_t b, std::size_t c, std::size_t s) {
    return (b * d.ch + c) * d.spatial + s;
  };

  Tensor mean({d.ch}), var({d.ch});
  if (train) {
    for (std::size_t c = 0; c < d.ch; ++c) {
      double m = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t s = 0; s < d.spatial; ++s) m += xv[at(b, c, s)];
      m /= static_cast<double>(group);
      double v = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t s = 0; s < d.spatial; ++s) {
          const double dx = xv[at(b, c, s)] - m;
          v += dx * dx;
        }
      v /= static_cast<double>(group);
      mean[c] = m;
      var[c] = v;
      buffers->running_mean[c] =
          (1.0 - buffers->momentum) * buffers->running_mean[c] +
          buffers->momentum * m;
      buffers->running_var[c] =
          (1.0 - buffers->momentum) * buffers->running_var[c] +
          buffers->momentum * v;
    }
  } else {
    mean = buffers->running_mean;
    var = buffers->running_var;
  }

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_std({d.ch});
  for (std::size_t c = 0; c < d.ch; ++c)
    inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.ch; ++c)
      for (std::size_t s = 0; s < d.spatial; ++s) {
        const std::size_t i = at(b, c, s);
        const double xh = (xv[i] - mean[c]) * inv_std[c];
        xhat[i] = xh;
        out[i] = gv[c] * xh + bv[c];
      }

  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Var ins[] = {x, gamma, beta};
  return t.emit(
      std::move(out), ins,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
       group, train](Tape& tp, const Tensor& g) {
        const auto at = [d](std::size_t b, std::size_t c, std::size_t s) {
          return (b * d.ch + c) * d.spatial + s;
        };
        const Tensor& gv = tp.value(gamma);
        if (tp.wants_grad(gamma)) {
          Tensor& gg = tp.grad_buffer(gamma);
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.ch; ++c)
              for (std::size_t s = 0; s < d.spatial; ++s)
                gg[c] += g[at(b, c, s)] * xhat[at(b, c, s)];
        }
        if (tp.wants_grad(beta)) {
          Tensor& gb = tp.grad_buffer(beta);
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.ch; ++c)
              for (std::size_t s = 0; s < d.spatial; ++s)
                gb[c] += g[at(b, c, s)];
        }
        if (!tp.wants_grad(x)) return;
        Tensor& gx = tp.grad_buffer(x);
        if (!train) {
          // running stats are constants: straight-through scaling
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.ch; ++c)
              for (std::size_t s = 0; s < d.spatial; ++s)
                gx[at(b, c, s)] += g[at(b, c, s)] * gv[c] * inv_std[c];
          return;
        }
        const double inv_n = 1.0 / static_cast<double>(group);
        for (std::size_t c = 0; c < d.ch; ++c) {
          double mean_gy = 0.0, mean_gy_xhat = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t s = 0; s < d.spatial; ++s) {
              const double gy = g[at(b, c, s)] * gv[c];
              mean_gy += gy;
              mean_gy_xhat += gy * xhat[at(b, c, s)];
            }
          mean_gy *= inv_n;
          mean_gy_xhat *= inv_n;
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t s = 0; s < d.spatial; ++s) {
              const double gy = g[at(b, c, s)] * gv[c];
              gx[at(b, c, s)] +=
                  inv_std[c] *
                  (gy - mean_gy - xhat[at(b, c, s)] * mean_gy_xhat);
            }
        }
      });
}

Var normalize(Var x, NormKind kind, Var gamma, Var beta,
              BatchNormBuffers* buffers, bool train, double eps) {
  if (kind == NormKind::layernorm_lastdim)
    return layer_norm(x, gamma, beta, eps);
  return batch_norm(x, gamma, beta, buffers, train, eps);
}

// -- regularization ---------------------------------------------------------------------

Var dropout(Var x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout probability must be in [0,1)");
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (!train || p == 0.0) {
    // identity in eval mode; still recorded so gradients flow through
    Tensor out = xv;
    return emit1(x, std::move(out), [x](Tape& tp, const Tensor& g) {
      if (!tp.wants_grad(x)) return;
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
  }
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return emit1(x, std::move(out),
               [x, mask = std::move(mask)](Tape& tp, const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t i = 0; i < g.numel(); ++i)
                   gx[i] += g[i] * mask[i];
               });
}

// -- shape ----------------------------------------------------------------------------------

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor out = t.value(x).reshaped(std::move(shape));
  return emit1(x, std::move(out), [x](Tape& tp, const Tensor& g) {
    if (!tp.wants_grad(x)) return;
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t c0, std::size_t c1) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2 || c1 <= c0 || c1 > xv.extent(1))
    throw std::invalid_argument("slice_cols: bad column range on " +
                                shape_str(xv.shape()));
  const std::size_t rows = xv.extent(0), d = xv.extent(1), w = c1 - c0;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = xv[r * d + c0 + c];
  return emit1(x, std::move(out),
               [x, c0, rows, d, w](Tape& tp, const Tensor& g) {
                 if (!tp.wants_grad(x)) return;
                 Tensor& gx = tp.grad_buffer(x);
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < w; ++c)
                     gx[r * d + c0 + c] += g[r * w + c];
               });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = t.value(parts[0]).extent(0);
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p);
    const Tensor& pv = t.value(p);
    if (pv.rank() != 2 || pv.extent(0) != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += pv.extent(1);
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = t.value(p);
    const std::size_t w = pv.extent(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out[r * total + off + c] = pv[r * w + c];
    off += w;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.emit(std::move(out), parts,
                [saved = std::move(saved), rows, total](Tape& tp,
                                                        const Tensor& g) {
                  std::size_t off = 0;
                  for (const Var& p : saved) {
                    const std::size_t w = tp.value(p).extent(1);
                    if (tp.wants_grad(p)) {
                      Tensor& gp = tp.grad_buffer(p);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                          gp[r * w + c] += g[r * total + off + c];
                    }
                    off += w;
                  }
                });
}

// -- reductions -----------------------------------------------------------------------------

Var sum(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
  return emit1(x, Tensor::scalar(s), [x](Tape& tp, const Tensor& g) {
    if (!tp.wants_grad(x)) return;
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
  });
}

Var mean_sq_err(Var pred, Var target) {
  Tape& t = tape_of(pred);
  const Tensor& pv = t.value(pred);
  const Tensor& tv = t.value(target);
  if (!pv.same_shape(tv)) shape_error("mean_sq_err", pv, tv);
  const double inv_n = 1.0 / static_cast<double>(pv.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    const double d = pv[i] - tv[i];
    s += d * d;
  }
  return emit2(pred, target, Tensor::scalar(s * inv_n),
               [pred, target, inv_n](Tape& tp, const Tensor& g) {
                 const Tensor& pv = tp.value(pred);
                 const Tensor& tv = tp.value(target);
                 const double c = 2.0 * inv_n * g[0];
                 if (tp.wants_grad(pred)) {
                   Tensor& gp = tp.grad_buffer(pred);
                   for (std::size_t i = 0; i < pv.numel(); ++i)
                     gp[i] += c * (pv[i] - tv[i]);
                 }
                 if (tp.wants_grad(target)) {
                   Tensor& gt = tp.grad_buffer(target);
                   for (std::size_t i = 0; i < pv.numel(); ++i)
                     gt[i] -= c * (pv[i] - tv[i]);
                 }
               });
}

}  // namespace homsurro::ndcore
