#include "homsurro/convnet/convnet.hpp"

#include <cmath>
#include <stdexcept>

namespace homsurro::convnet {

ConvNetSpec ConvNetSpec::encoder32() {
  ConvNetSpec s;
  s.input_res = 32;
  s.in_channels = 1;
  s.blocks = {
      {16, 5, true, false},
      {32, 3, true, true},
      {64, 3, false, false},
      {64, 3, false, false},
      {128, 3, true, true},
  };
  s.fc_hidden = {2048, 1024};
  s.outputs = 3;
  s.dropout = 0.3;
  return s;
}

ConvNetSpec ConvNetSpec::reduced8() {
  ConvNetSpec s;
  s.input_res = 8;
  s.in_channels = 1;
  s.blocks = {
      {4, 5, true, false},
      {6, 3, true, true},
      {6, 3, false, false},
      {6, 3, false, false},
      {8, 3, true, true},
  };
  s.fc_hidden = {16, 8};
  s.outputs = 3;
  s.dropout = 0.3;
  return s;
}

std::size_t ConvNetSpec::flatten_dim() const {
  std::size_t res = input_res;
  for (const auto& b : blocks)
    if (b.pool) res /= 2;
  return blocks.back().out_channels * res * res;
}

ConvNet ConvNet::build(const ConvNetSpec& spec) {
  ConvNet net;
  net.spec = spec;
  std::size_t cin = spec.in_channels;
  for (const auto& bs : spec.blocks) {
    ConvBlock blk;
    blk.kernels = Tensor({bs.out_channels, cin, bs.kernel, bs.kernel});
    blk.bias = Tensor({bs.out_channels});
    if (bs.batch_norm) {
      blk.bn_gamma = Tensor::full({bs.out_channels}, 1.0);
      blk.bn_beta = Tensor({bs.out_channels});
      blk.bn.running_mean = Tensor({bs.out_channels});
      blk.bn.running_var = Tensor::full({bs.out_channels}, 1.0);
    }
    net.blocks.push_back(std::move(blk));
    cin = bs.out_channels;
  }
  std::size_t in_dim = spec.flatten_dim();
  for (std::size_t h : spec.fc_hidden) {
    net.fc_w.push_back(Tensor({in_dim, h}));
    net.fc_b.push_back(Tensor({h}));
    in_dim = h;
  }
  net.fc_w.push_back(Tensor({in_dim, spec.outputs}));
  net.fc_b.push_back(Tensor({spec.outputs}));
  net.out_bn_gamma = Tensor::full({spec.outputs}, 1.0);
  net.out_bn_beta = Tensor({spec.outputs});
  net.out_bn.running_mean = Tensor({spec.outputs});
  net.out_bn.running_var = Tensor::full({spec.outputs}, 1.0);
  return net;
}

namespace {

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform(-bound, bound);
}

}  // namespace

void ConvNet::init_params(Rng& rng) {
  for (auto& blk : blocks) {
    const std::size_t fan_in =
        blk.kernels.extent(1) * blk.kernels.extent(2) * blk.kernels.extent(3);
    init_uniform(blk.kernels, fan_in, rng);
    blk.bias.fill(0.0);
  }
  for (std::size_t i = 0; i < fc_w.size(); ++i) {
    init_uniform(fc_w[i], fc_w[i].extent(0), rng);
    fc_b[i].fill(0.0);
  }
}

void ConvNet::collect_params(const std::string& prefix,
                             std::vector<ParamRef>& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + "b" + std::to_string(i) + ".";
    ConvBlock& blk = blocks[i];
    out.push_back({p + "k", &blk.kernels});
    out.push_back({p + "bias", &blk.bias});
    if (spec.blocks[i].batch_norm) {
      out.push_back({p + "bn.g", &blk.bn_gamma});
      out.push_back({p + "bn.b", &blk.bn_beta});
      out.push_back({p + "bn.mean", &blk.bn.running_mean, false});
      out.push_back({p + "bn.var", &blk.bn.running_var, false});
    }
  }
  for (std::size_t i = 0; i < fc_w.size(); ++i) {
    const std::string p = prefix + "fc" + std::to_string(i) + ".";
    out.push_back({p + "w", &fc_w[i]});
    out.push_back({p + "b", &fc_b[i]});
  }
  out.push_back({prefix + "out_bn.g", &out_bn_gamma});
  out.push_back({prefix + "out_bn.b", &out_bn_beta});
  out.push_back({prefix + "out_bn.mean", &out_bn.running_mean, false});
  out.push_back({prefix + "out_bn.var", &out_bn.running_var, false});
}

std::size_t ConvNet::param_count() const {
  std::size_t n = 0;
  auto* self = const_cast<ConvNet*>(this);
  std::vector<ParamRef> refs;
  self->collect_params("", refs);
  for (const auto& r : refs)
    if (r.trainable) n += r.tensor->numel();
  return n;
}

Var ConvNet::forward(Binder& b, Var images, bool train, Rng& dropout_rng) {
  ndcore::Tape& t = b.tape();
  const bool batched = t.value(images).rank() == 4;
  Var x = batched ? images
                  : ndcore::reshape(images, {1, spec.in_channels,
                                             spec.input_res, spec.input_res});
  const Tensor& xv = t.value(x);
  if (xv.extent(1) != spec.in_channels || xv.extent(2) != spec.input_res ||
      xv.extent(3) != spec.input_res)
    throw std::invalid_argument("convnet input must be " +
                                std::to_string(spec.input_res) + "x" +
                                std::to_string(spec.input_res));
  const std::size_t batch = xv.extent(0);

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    ConvBlock& blk = blocks[i];
    x = ndcore::conv2d(x, b.use(blk.kernels), b.use(blk.bias));
    if (spec.blocks[i].batch_norm)
      x = ndcore::batch_norm(x, b.use(blk.bn_gamma), b.use(blk.bn_beta),
                             &blk.bn, train);
    x = ndcore::relu(x);
    if (spec.blocks[i].pool) x = ndcore::maxpool2d(x, 2);
  }
  x = ndcore::reshape(x, {batch, spec.flatten_dim()});
  for (std::size_t i = 0; i + 1 < fc_w.size(); ++i) {
    x = ndcore::linear(x, b.use(fc_w[i]), b.use(fc_b[i]));
    x = ndcore::relu(x);
    x = ndcore::dropout(x, spec.dropout, train, dropout_rng);
  }
  x = ndcore::linear(x, b.use(fc_w.back()), b.use(fc_b.back()));
  x = ndcore::batch_norm(x, b.use(out_bn_gamma), b.use(out_bn_beta), &out_bn,
                         train);
  return batched ? x : ndcore::reshape(x, {spec.outputs});
}

std::vector<double> ConvNet::descriptor(const micro::PhaseGrid& grid) {
  ndcore::Tape tape;
  Binder b(tape, false);
  Rng rng(0);  // eval mode draws nothing
  Var img = b.constant(grid_to_image(grid));
  Var out = forward(b, img, false, rng);
  const Tensor& v = tape.value(out);
  return std::vector<double>(v.data(), v.data() + v.numel());
}

Tensor grid_to_image(const micro::PhaseGrid& grid) {
  Tensor img({1, grid.resolution, grid.resolution});
  for (std::size_t i = 0; i < grid.cells.size(); ++i)
    img[i] = grid.cells[i] ? 1.0 : 0.0;
  return img;
}

}  // namespace homsurro::convnet
