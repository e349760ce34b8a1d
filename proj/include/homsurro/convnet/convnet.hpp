#pragma once

#include <string>
#include <vector>

#include "homsurro/micro/sve.hpp"
#include "homsurro/ndcore/ops.hpp"
#include "homsurro/ndcore/params.hpp"

namespace homsurro::convnet {

using ndcore::BatchNormBuffers;
using ndcore::Binder;
using ndcore::ParamRef;
using ndcore::Rng;
using ndcore::Tensor;
using ndcore::Var;

struct ConvBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  bool batch_norm = false;
  bool pool = false;
};

struct ConvNetSpec {
  std::size_t input_res = 32;
  std::size_t in_channels = 1;
  std::vector<ConvBlockSpec> blocks;
  std::vector<std::size_t> fc_hidden;
  std::size_t outputs = 3;
  double dropout = 0.3;

  /// The 32x32 microstructure encoder: five conv blocks (pooling in blocks
  /// 2 and 5, batch norm in blocks 1, 2 and 5), three fully connected
  /// layers with dropout, and a final batch norm on the outputs.
  static ConvNetSpec encoder32();

  /// Shape-preserving reduction (same layer types, 8x8 input, narrow
  /// channels) used by gradient checks.
  static ConvNetSpec reduced8();

  std::size_t flatten_dim() const;
};

struct ConvBlock {
  Tensor kernels;  // [C_out, C_in, k, k]
  Tensor bias;     // [C_out]
  Tensor bn_gamma, bn_beta;
  BatchNormBuffers bn;
};

/// Microstructure image encoder mapping a binary R x R microcell raster to a
/// fixed-length descriptor. Trained jointly with the sequence model.
struct ConvNet {
  ConvNetSpec spec;
  std::vector<ConvBlock> blocks;
  std::vector<Tensor> fc_w, fc_b;
  Tensor out_bn_gamma, out_bn_beta;
  BatchNormBuffers out_bn;

  bool built() const { return !blocks.empty(); }

  static ConvNet build(const ConvNetSpec& spec);
  void init_params(Rng& rng);
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out);
  std::size_t param_count() const;  // trainable tensors only

  /// images: [B, C_in, R, R] (or [C_in, R, R] for a single image) with
  /// pixel values in {0, 1}. Train mode requires B > 1 (batch statistics).
  /// Returns [B, outputs] (or [outputs]). Mutates running stats when
  /// training.
  Var forward(Binder& b, Var images, bool train, Rng& dropout_rng);

  /// Eval-mode descriptor of one rasterized microcell.
  std::vector<double> descriptor(const micro::PhaseGrid& grid);
};

/// Pixel mapping used at the encoder input: fiber -> 1, matrix -> 0.
Tensor grid_to_image(const micro::PhaseGrid& grid);

}  // namespace homsurro::convnet
