#pragma once

#include <span>
#include <string>
#include <vector>

#include "homsurro/convnet/convnet.hpp"
#include "homsurro/ndcore/ops.hpp"
#include "homsurro/ndcore/params.hpp"

namespace homsurro::seqmodel {

using ndcore::Binder;
using ndcore::ParamRef;
using ndcore::Rng;
using ndcore::Tensor;
using ndcore::Var;

/// Sinusoidal positional encoding: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
/// PE[pos, 2i+1] = cos of the same argument.
Tensor positional_encoding(std::size_t len, std::size_t d_model);

/// Decoder input: zero row first, source truncated at the second-to-last row.
Tensor shift_right(const Tensor& seq);

/// softmax(Q K^T / sqrt(d_k)) V with an optional causal mask (query t sees
/// keys <= t; masked weights are exactly zero).
Var scaled_dot_attention(Var q, Var k, Var v, bool causal);

/// Combined per-head projections: column block i of each matrix is head i.
struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

Var multi_head_attention(Binder& b, const AttentionWeights& w, Var query_seq,
                         Var memory_seq, std::size_t heads, bool causal);

/// sigmoid(W1 x + b1) (Hadamard) (W2 x + b2)
Var glu(Var x, Var w_gate, Var b_gate, Var w_val, Var b_val);

/// Gated residual block: in/out width d_model, hidden width grn_hidden,
/// optional static context added after the input projection (no bias on the
/// context path). The GLU gate lets the block shut itself off, in which case
/// the output reduces to LayerNorm of the input.
struct GrnWeights {
  Tensor w_in, b_in;    // d_model -> hidden
  Tensor w_ctx;         // d_model -> hidden, no bias; empty if context-free
  Tensor w_mid, b_mid;  // hidden -> d_model
  Tensor w_gate, b_gate, w_val, b_val;  // GLU pair, d_model -> d_model
  Tensor ln_gamma, ln_beta;

  bool has_context() const { return w_ctx.numel() > 0; }
};

/// context must be a rank-1 [d_model] node (or invalid when the block is
/// context-free); it is broadcast over all sequence positions.
Var grn_forward(Binder& b, const GrnWeights& w, Var x, Var context, bool train,
                double dropout_p, Rng& dropout_rng);

struct DecoderLayerWeights {
  AttentionWeights self_attn;
  AttentionWeights cross_attn;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

enum class MicroEncoding { none, descriptor, image };

struct SurrogateConfig {
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t layers = 6;
  std::size_t ff_dim = 2048;
  std::size_t grn_hidden = 2048;
  std::size_t grn_stack = 2;
  double dropout = 0.1;
  std::size_t strain_dim = 3;
  std::size_t stress_dim = 4;
  std::size_t max_len = 100;
  MicroEncoding micro = MicroEncoding::none;
  std::size_t micro_dim = 3;
  convnet::ConvNetSpec cnn;  // used when micro == image

  /// Full-size architecture (d_model 512, 6 layers, 8 heads, GRN hidden 2048).
  static SurrogateConfig full(MicroEncoding micro = MicroEncoding::none);
  /// Desk-scale architecture for CI and laptop training
  /// (d_model 128, 3 layers, GRN hidden 512).
  static SurrogateConfig desk(MicroEncoding micro = MicroEncoding::none);
};

/// The surrogate network: strain and shifted-stress paths are linearly
/// embedded, passed through stacked GRNs with the microstructure as static
/// context, topped up with the microstructure embedding, normalized and
/// positionally encoded; a causally masked transformer decoder stack maps
/// the stress path attending to the strain path; two GRN decoders and a
/// linear head emit the four stress components (standardized units).
struct SurrogateModel {
  SurrogateConfig cfg;

  Tensor strain_w, strain_b;
  Tensor stress_w, stress_b;
  Tensor micro_w, micro_b;  // descriptor -> d_model; empty when micro == none
  std::vector<GrnWeights> strain_grns, stress_grns;
  Tensor strain_ln_g, strain_ln_b, stress_ln_g, stress_ln_b;
  std::vector<DecoderLayerWeights> decoder;
  std::vector<GrnWeights> out_grns;
  Tensor head_w, head_b;
  convnet::ConvNet cnn;  // built when micro == image

  static SurrogateModel build(const SurrogateConfig& cfg);
  void init_params(Rng& rng);
  std::vector<ParamRef> params();

  std::size_t param_count() const;
  std::size_t decoder_stack_param_count() const;

  /// Teacher-forced forward on one record. strain is [T,3] and
  /// shifted_stress [T,4], both already standardized; micro_descriptor is a
  /// rank-1 [micro_dim] node on the same tape (PCA scores or CNN outputs),
  /// or invalid when the model is microstructure-free.
  Var forward(Binder& b, const Tensor& strain, const Tensor& shifted_stress,
              Var micro_descriptor, bool train, Rng& dropout_rng) const;

  /// Eval-mode teacher-forced prediction (no dropout, deterministic).
  Tensor predict(const Tensor& strain, const Tensor& shifted_stress,
                 std::span<const double> micro_descriptor) const;

  /// Iterative decoding: position t is predicted from strain[0..t] and the
  /// model's own previous predictions fed back as the shifted stress input.
  Tensor predict_autoregressive(const Tensor& strain,
                                std::span<const double> micro_descriptor) const;
};

}  // namespace homsurro::seqmodel
