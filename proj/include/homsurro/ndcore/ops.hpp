#pragma once

#include <span>
#include <vector>

#include "homsurro/ndcore/rng.hpp"
#include "homsurro/ndcore/tape.hpp"

// Differentiable op library. Every function records its backward pass on
// the tape of its first argument. Inputs from different tapes are a logic
// error. Shapes are validated up front; NaN/Inf produced by an op is a
// caller-visible error surface (checked in debug builds and by callers at
// loss/prediction boundaries).
namespace homsurro::ndcore {

// -- elementwise ------------------------------------------------------------

Var add(Var a, Var b);            // same shape
Var sub(Var a, Var b);            // same shape
Var mul(Var a, Var b);            // Hadamard, same shape
Var scale(Var a, double c);

/// x[..., D] + v[D], v broadcast over all leading dimensions.
Var add_rowvec(Var x, Var v);

// -- dense linear algebra ----------------------------------------------------

Var matmul(Var a, Var b);         // [m,k] x [k,n] -> [m,n]
Var matmul_nt(Var a, Var b);      // [m,k] x [n,k]^T -> [m,n]

/// y = x W + b. x may be rank 1 ([in]) or rank 2 ([T,in]); b is optional
/// (pass Var{} for none).
Var linear(Var x, Var w, Var b);

// -- activations --------------------------------------------------------------

enum class Act { relu, elu, sigmoid, softmax_lastdim };

Var activation(Var x, Act kind);
Var relu(Var x);
Var elu(Var x);                   // alpha = 1
Var sigmoid(Var x);
Var softmax_lastdim(Var x);

/// Row-wise softmax of a square score matrix [T,T] where row i only sees
/// columns j <= i; forbidden entries are exactly zero in the output.
Var softmax_causal(Var scores);

// -- convolution / pooling ----------------------------------------------------

/// Cross-correlation with zero "same" padding. x is [C,H,W] or [B,C,H,W];
/// kernels are [C_out,C_in,k,k] with odd k; bias (optional) is [C_out].
/// Output spatial size is preserved at stride 1.
Var conv2d(Var x, Var kernels, Var bias = {}, std::size_t stride = 1);

/// Non-overlapping window maximum, window x window (extents must divide).
/// Backward routes the gradient to the first maximum in row-major order.
Var maxpool2d(Var x, std::size_t window = 2);

// -- normalization -------------------------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Running statistics for batch normalization; owned by the model, not the
/// tape. Updated in train mode, read in eval mode.
struct BatchNormBuffers {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
};

/// Per-channel batch normalization. x is [B,F] (stats over B) or
/// [B,C,H,W] (stats over B,H,W). Train mode requires B > 1.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormBuffers* buffers,
               bool train, double eps = 1e-5);

enum class NormKind { layernorm_lastdim, batchnorm_channel };

Var normalize(Var x, NormKind kind, Var gamma, Var beta,
              BatchNormBuffers* buffers = nullptr, bool train = false,
              double eps = 1e-5);

// -- regularization -------------------------------------------------------------

/// Inverted dropout: scales kept entries by 1/(1-p) at train time so that
/// eval mode is the identity.
Var dropout(Var x, double p, bool train, Rng& rng);

// -- shape ----------------------------------------------------------------------

Var reshape(Var x, Shape shape);
Var slice_cols(Var x, std::size_t c0, std::size_t c1);  // x[T,D] -> [T,c1-c0]
Var concat_cols(std::span<const Var> parts);            // [T,d_i] -> [T,sum d_i]

// -- reductions -------------------------------------------------------------------

Var sum(Var x);                                   // -> scalar
Var mean_sq_err(Var pred, Var target);            // mean over all entries

}  // namespace homsurro::ndcore
