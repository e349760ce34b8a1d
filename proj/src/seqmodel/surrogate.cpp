#include "homsurro/seqmodel/surrogate.hpp"

#include <cmath>
#include <stdexcept>

namespace homsurro::seqmodel {

using namespace ndcore;

Tensor positional_encoding(std::size_t len, std::size_t d_model) {
  if (len < 1) throw std::invalid_argument("positional encoding needs len >= 1");
  Tensor pe({len, d_model});
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) /
                               static_cast<double>(d_model));
      const double arg = static_cast<double>(pos) * freq;
      pe.at(pos, i) = std::sin(arg);
      if (i + 1 < d_model) pe.at(pos, i + 1) = std::cos(arg);
    }
  return pe;
}

Tensor shift_right(const Tensor& seq) {
  if (seq.rank() != 2 || seq.extent(0) < 1)
    throw std::invalid_argument("shift_right expects a non-empty [T,D] tensor");
  const std::size_t t = seq.extent(0), d = seq.extent(1);
  Tensor out({t, d});
  for (std::size_t r = 1; r < t; ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = seq.at(r - 1, c);
  return out;
}

Var scaled_dot_attention(Var q, Var k, Var v, bool causal) {
  const std::size_t dk = q.tape->value(k).extent(1);
  Var scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = causal ? softmax_causal(scores) : softmax_lastdim(scores);
  return matmul(weights, v);
}

Var multi_head_attention(Binder& b, const AttentionWeights& w, Var query_seq,
                         Var memory_seq, std::size_t heads, bool causal) {
  const std::size_t d_model = b.tape().value(query_seq).extent(1);
  if (heads == 0 || d_model % heads != 0)
    throw std::invalid_argument("head count must divide d_model");
  const std::size_t dk = d_model / heads;

  Var q = linear(query_seq, b.use(w.wq), b.use(w.bq));
  Var k = linear(memory_seq, b.use(w.wk), b.use(w.bk));
  Var v = linear(memory_seq, b.use(w.wv), b.use(w.bv));

  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dk, c1 = (h + 1) * dk;
    head_out.push_back(scaled_dot_attention(slice_cols(q, c0, c1),
                                            slice_cols(k, c0, c1),
                                            slice_cols(v, c0, c1), causal));
  }
  Var cat = heads == 1 ? head_out[0] : concat_cols(head_out);
  return linear(cat, b.use(w.wo), b.use(w.bo));
}

Var glu(Var x, Var w_gate, Var b_gate, Var w_val, Var b_val) {
  return mul(sigmoid(linear(x, w_gate, b_gate)), linear(x, w_val, b_val));
}

Var grn_forward(Binder& b, const GrnWeights& w, Var x, Var context, bool train,
                double dropout_p, Rng& dropout_rng) {
  if (context.valid() != w.has_context())
    throw std::invalid_argument(
        context.valid() ? "context given to a context-free block"
                        : "context-enabled block called without context");
  Var h = linear(x, b.use(w.w_in), b.use(w.b_in));
  if (context.valid())
    h = add_rowvec(h, linear(context, b.use(w.w_ctx), Var{}));
  h = elu(h);
  Var g = linear(h, b.use(w.w_mid), b.use(w.b_mid));
  g = dropout(g, dropout_p, train, dropout_rng);
  g = glu(g, b.use(w.w_gate), b.use(w.b_gate), b.use(w.w_val), b.use(w.b_val));
  return layer_norm(add(x, g), b.use(w.ln_gamma), b.use(w.ln_beta));
}

SurrogateConfig SurrogateConfig::full(MicroEncoding micro) {
  SurrogateConfig c;
  c.micro = micro;
  if (micro == MicroEncoding::image) c.cnn = convnet::ConvNetSpec::encoder32();
  return c;
}

SurrogateConfig SurrogateConfig::desk(MicroEncoding micro) {
  SurrogateConfig c;
  c.d_model = 128;
  c.layers = 3;
  c.ff_dim = 512;
  c.grn_hidden = 512;
  c.micro = micro;
  if (micro == MicroEncoding::image) c.cnn = convnet::ConvNetSpec::encoder32();
  return c;
}

namespace {

GrnWeights build_grn(std::size_t d_model, std::size_t hidden, bool context) {
  GrnWeights g;
  g.w_in = Tensor({d_model, hidden});
  g.b_in = Tensor({hidden});
  if (context) g.w_ctx = Tensor({d_model, hidden});
  g.w_mid = Tensor({hidden, d_model});
  g.b_mid = Tensor({d_model});
  g.w_gate = Tensor({d_model, d_model});
  g.b_gate = Tensor({d_model});
  g.w_val = Tensor({d_model, d_model});
  g.b_val = Tensor({d_model});
  g.ln_gamma = Tensor::full({d_model}, 1.0);
  g.ln_beta = Tensor({d_model});
  return g;
}

AttentionWeights build_attention(std::size_t d_model) {
  AttentionWeights a;
  a.wq = Tensor({d_model, d_model});
  a.bq = Tensor({d_model});
  a.wk = Tensor({d_model, d_model});
  a.bk = Tensor({d_model});
  a.wv = Tensor({d_model, d_model});
  a.bv = Tensor({d_model});
  a.wo = Tensor({d_model, d_model});
  a.bo = Tensor({d_model});
  return a;
}

DecoderLayerWeights build_decoder_layer(std::size_t d_model,
                                        std::size_t ff_dim) {
  DecoderLayerWeights l;
  l.self_attn = build_attention(d_model);
  l.cross_attn = build_attention(d_model);
  l.ff_w1 = Tensor({d_model, ff_dim});
  l.ff_b1 = Tensor({ff_dim});
  l.ff_w2 = Tensor({ff_dim, d_model});
  l.ff_b2 = Tensor({d_model});
  l.ln1_g = Tensor::full({d_model}, 1.0);
  l.ln1_b = Tensor({d_model});
  l.ln2_g = Tensor::full({d_model}, 1.0);
  l.ln2_b = Tensor({d_model});
  l.ln3_g = Tensor::full({d_model}, 1.0);
  l.ln3_b = Tensor({d_model});
  return l;
}

void collect_grn(const std::string& prefix, GrnWeights& g,
                 std::vector<ParamRef>& out) {
  out.push_back({prefix + "in.w", &g.w_in});
  out.push_back({prefix + "in.b", &g.b_in});
  if (g.has_context()) out.push_back({prefix + "ctx.w", &g.w_ctx});
  out.push_back({prefix + "mid.w", &g.w_mid});
  out.push_back({prefix + "mid.b", &g.b_mid});
  out.push_back({prefix + "gate.w", &g.w_gate});
  out.push_back({prefix + "gate.b", &g.b_gate});
  out.push_back({prefix + "val.w", &g.w_val});
  out.push_back({prefix + "val.b", &g.b_val});
  out.push_back({prefix + "ln.g", &g.ln_gamma});
  out.push_back({prefix + "ln.b", &g.ln_beta});
}

void collect_attention(const std::string& prefix, AttentionWeights& a,
                       std::vector<ParamRef>& out) {
  out.push_back({prefix + "q.w", &a.wq});
  out.push_back({prefix + "q.b", &a.bq});
  out.push_back({prefix + "k.w", &a.wk});
  out.push_back({prefix + "k.b", &a.bk});
  out.push_back({prefix + "v.w", &a.wv});
  out.push_back({prefix + "v.b", &a.bv});
  out.push_back({prefix + "o.w", &a.wo});
  out.push_back({prefix + "o.b", &a.bo});
}

}  // namespace

SurrogateModel SurrogateModel::build(const SurrogateConfig& cfg) {
  if (cfg.d_model % cfg.heads != 0)
    throw std::invalid_argument("heads must divide d_model");
  SurrogateModel m;
  m.cfg = cfg;
  const std::size_t d = cfg.d_model;
  const bool with_micro = cfg.micro != MicroEncoding::none;

  m.strain_w = Tensor({cfg.strain_dim, d});
  m.strain_b = Tensor({d});
  m.stress_w = Tensor({cfg.stress_dim, d});
  m.stress_b = Tensor({d});
  if (with_micro) {
    m.micro_w = Tensor({cfg.micro_dim, d});
    m.micro_b = Tensor({d});
  }
  for (std::size_t i = 0; i < cfg.grn_stack; ++i) {
    m.strain_grns.push_back(build_grn(d, cfg.grn_hidden, with_micro));
    m.stress_grns.push_back(build_grn(d, cfg.grn_hidden, with_micro));
    m.out_grns.push_back(build_grn(d, cfg.grn_hidden, with_micro));
  }
  m.strain_ln_g = Tensor::full({d}, 1.0);
  m.strain_ln_b = Tensor({d});
  m.stress_ln_g = Tensor::full({d}, 1.0);
  m.stress_ln_b = Tensor({d});
  for (std::size_t i = 0; i < cfg.layers; ++i)
    m.decoder.push_back(build_decoder_layer(d, cfg.ff_dim));
  m.head_w = Tensor({d, cfg.stress_dim});
  m.head_b = Tensor({cfg.stress_dim});
  if (cfg.micro == MicroEncoding::image)
    m.cnn = convnet::ConvNet::build(cfg.cnn);
  return m;
}

void SurrogateModel::init_params(Rng& rng) {
  for (ParamRef& p : params()) {
    if (!p.trainable) continue;
    Tensor& t = *p.tensor;
    if (t.rank() == 2 || t.rank() == 4) {
      std::size_t fan_in = t.rank() == 2
                               ? t.extent(0)
                               : t.extent(1) * t.extent(2) * t.extent(3);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = rng.uniform(-bound, bound);
    }
    // rank-1 tensors (biases, norm affine) keep their built defaults
  }
}

std::vector<ParamRef> SurrogateModel::params() {
  std::vector<ParamRef> out;
  out.push_back({"embed.strain.w", &strain_w});
  out.push_back({"embed.strain.b", &strain_b});
  out.push_back({"embed.stress.w", &stress_w});
  out.push_back({"embed.stress.b", &stress_b});
  if (cfg.micro != MicroEncoding::none) {
    out.push_back({"embed.micro.w", &micro_w});
    out.push_back({"embed.micro.b", &micro_b});
  }
  for (std::size_t i = 0; i < strain_grns.size(); ++i)
    collect_grn("enc.strain.g" + std::to_string(i) + ".", strain_grns[i], out);
  out.push_back({"enc.strain.norm.g", &strain_ln_g});
  out.push_back({"enc.strain.norm.b", &strain_ln_b});
  for (std::size_t i = 0; i < stress_grns.size(); ++i)
    collect_grn("enc.stress.g" + std::to_string(i) + ".", stress_grns[i], out);
  out.push_back({"enc.stress.norm.g", &stress_ln_g});
  out.push_back({"enc.stress.norm.b", &stress_ln_b});
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec.l" + std::to_string(i) + ".";
    collect_attention(p + "self.", decoder[i].self_attn, out);
    collect_attention(p + "cross.", decoder[i].cross_attn, out);
    out.push_back({p + "ff.w1", &decoder[i].ff_w1});
    out.push_back({p + "ff.b1", &decoder[i].ff_b1});
    out.push_back({p + "ff.w2", &decoder[i].ff_w2});
    out.push_back({p + "ff.b2", &decoder[i].ff_b2});
    out.push_back({p + "ln1.g", &decoder[i].ln1_g});
    out.push_back({p + "ln1.b", &decoder[i].ln1_b});
    out.push_back({p + "ln2.g", &decoder[i].ln2_g});
    out.push_back({p + "ln2.b", &decoder[i].ln2_b});
    out.push_back({p + "ln3.g", &decoder[i].ln3_g});
    out.push_back({p + "ln3.b", &decoder[i].ln3_b});
  }
  for (std::size_t i = 0; i < out_grns.size(); ++i)
    collect_grn("out.g" + std::to_string(i) + ".", out_grns[i], out);
  out.push_back({"head.w", &head_w});
  out.push_back({"head.b", &head_b});
  if (cfg.micro == MicroEncoding::image) cnn.collect_params("cnn.", out);
  return out;
}

std::size_t SurrogateModel::param_count() const {
  std::size_t n = 0;
  for (const ParamRef& p : const_cast<SurrogateModel*>(this)->params())
    if (p.trainable) n += p.tensor->numel();
  return n;
}

std::size_t SurrogateModel::decoder_stack_param_count() const {
  std::size_t n = 0;
  for (const ParamRef& p : const_cast<SurrogateModel*>(this)->params())
    if (p.trainable && p.name.rfind("dec.", 0) == 0) n += p.tensor->numel();
  return n;
}

namespace {

struct PathWeights {
  const Tensor *w, *b;
  const std::vector<GrnWeights>* grns;
  const Tensor *ln_g, *ln_b;
};

Var embed_path(Binder& b, const SurrogateConfig& cfg, const Tensor& seq,
               const PathWeights& pw, Var micro_embed, bool train,
               Rng& dropout_rng) {
  Var x = b.constant(seq);
  Var e = linear(x, b.use(*pw.w), b.use(*pw.b));
  for (const GrnWeights& g : *pw.grns)
    e = grn_forward(b, g, e, micro_embed, train, cfg.dropout, dropout_rng);
  if (micro_embed.valid()) e = add_rowvec(e, micro_embed);
  e = layer_norm(e, b.use(*pw.ln_g), b.use(*pw.ln_b));
  e = add(e, b.constant(positional_encoding(seq.extent(0), cfg.d_model)));
  return dropout(e, cfg.dropout, train, dropout_rng);
}

}  // namespace

Var SurrogateModel::forward(Binder& b, const Tensor& strain,
                            const Tensor& shifted_stress, Var micro_descriptor,
                            bool train, Rng& dropout_rng) const {
  if (strain.rank() != 2 || strain.extent(1) != cfg.strain_dim)
    throw std::invalid_argument("strain input must be [T," +
                                std::to_string(cfg.strain_dim) + "]");
  if (shifted_stress.rank() != 2 ||
      shifted_stress.extent(1) != cfg.stress_dim ||
      shifted_stress.extent(0) != strain.extent(0))
    throw std::invalid_argument("shifted stress must be [T," +
                                std::to_string(cfg.stress_dim) + "]");
  const std::size_t t_len = strain.extent(0);
  if (t_len < 1 || t_len > cfg.max_len)
    throw std::invalid_argument("sequence length outside [1," +
                                std::to_string(cfg.max_len) + "]");
  const bool with_micro = cfg.micro != MicroEncoding::none;
  if (with_micro != micro_descriptor.valid())
    throw std::invalid_argument(
        with_micro ? "model expects a microstructure descriptor"
                   : "microstructure-free model given a descriptor");

  Var micro_embed;
  if (with_micro) {
    const Tensor& md = b.tape().value(micro_descriptor);
    if (md.rank() != 1 || md.extent(0) != cfg.micro_dim)
      throw std::invalid_argument("descriptor length mismatch");
    micro_embed = linear(micro_descriptor, b.use(micro_w), b.use(micro_b));
  }

  Var memory = embed_path(
      b, cfg, strain,
      {&strain_w, &strain_b, &strain_grns, &strain_ln_g, &strain_ln_b},
      micro_embed, train, dropout_rng);
  Var x = embed_path(
      b, cfg, shifted_stress,
      {&stress_w, &stress_b, &stress_grns, &stress_ln_g, &stress_ln_b},
      micro_embed, train, dropout_rng);

  for (const DecoderLayerWeights& l : decoder) {
    Var y = multi_head_attention(b, l.self_attn, x, x, cfg.heads, true);
    y = dropout(y, cfg.dropout, train, dropout_rng);
    x = layer_norm(add(x, y), b.use(l.ln1_g), b.use(l.ln1_b));

    // encoder-decoder attention over the strain path, also causally masked:
    // position t may only see strain history up to t
    y = multi_head_attention(b, l.cross_attn, x, memory, cfg.heads, true);
    y = dropout(y, cfg.dropout, train, dropout_rng);
    x = layer_norm(add(x, y), b.use(l.ln2_g), b.use(l.ln2_b));

    y = linear(relu(linear(x, b.use(l.ff_w1), b.use(l.ff_b1))), b.use(l.ff_w2),
               b.use(l.ff_b2));
    y = dropout(y, cfg.dropout, train, dropout_rng);
    x = layer_norm(add(x, y), b.use(l.ln3_g), b.use(l.ln3_b));
  }

  for (const GrnWeights& g : out_grns)
    x = grn_forward(b, g, x, micro_embed, train, cfg.dropout, dropout_rng);
  return linear(x, b.use(head_w), b.use(head_b));
}

Tensor SurrogateModel::predict(const Tensor& strain,
                               const Tensor& shifted_stress,
                               std::span<const double> micro_descriptor) const {
  ndcore::Tape tape;
  Binder b(tape, false);
  Rng rng(0);
  Var micro;
  if (cfg.micro == MicroEncoding::none) {
    if (!micro_descriptor.empty())
      throw std::invalid_argument(
          "microstructure-free model given a descriptor");
  } else {
    if (micro_descriptor.size() != cfg.micro_dim)
      throw std::invalid_argument("descriptor length mismatch");
    Tensor md({cfg.micro_dim});
    for (std::size_t i = 0; i < cfg.micro_dim; ++i) md[i] = micro_descriptor[i];
    micro = b.constant(std::move(md));
  }
  Var out = forward(b, strain, shifted_stress, micro, false, rng);
  return tape.value(out);
}

Tensor SurrogateModel::predict_autoregressive(
    const Tensor& strain, std::span<const double> micro_descriptor) const {
  const std::size_t t_len = strain.extent(0);
  Tensor out({t_len, cfg.stress_dim});
  Tensor shifted({t_len, cfg.stress_dim});
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor strain_prefix({t + 1, cfg.strain_dim});
    Tensor shifted_prefix({t + 1, cfg.stress_dim});
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t c = 0; c < cfg.strain_dim; ++c)
        strain_prefix.at(r, c) = strain.at(r, c);
      for (std::size_t c = 0; c < cfg.stress_dim; ++c)
        shifted_prefix.at(r, c) = shifted.at(r, c);
    }
    Tensor pred = predict(strain_prefix, shifted_prefix, micro_descriptor);
    for (std::size_t c = 0; c < cfg.stress_dim; ++c) {
      out.at(t, c) = pred.at(t, c);
      if (t + 1 < t_len) shifted.at(t + 1, c) = pred.at(t, c);
    }
  }
  return out;
}

}  // namespace homsurro::seqmodel
