#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "jessi/graph.hpp"
#include "jessi/ops.hpp"
#include "jessi/rng.hpp"

namespace jessi {

template <typename Real>
Parameter<Real> glorot_param(const std::string& name, std::vector<std::size_t> shape,
                             RngStream& rng) {
  std::size_t fan_in = 1, fan_out = 1;
  if (shape.size() == 1) {
    fan_in = fan_out = shape[0];
  } else if (shape.size() == 2) {
    fan_out = shape[0];
    fan_in = shape[1];
  } else if (shape.size() == 3) {  // conv kernel h x Din x Dout
    fan_in = shape[0] * shape[1];
    fan_out = shape[0] * shape[2];
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Parameter<Real>(name, Tensor<Real>::uniform(std::move(shape), static_cast<Real>(-limit),
                                                     static_cast<Real>(limit), rng));
}

// ---------------------------------------------------------------------------
// convolution bank shared by both CNN encoders
// ---------------------------------------------------------------------------

template <typename Real>
struct ConvBank {
  std::vector<std::size_t> widths;
  std::size_t channels = 0;
  std::vector<Parameter<Real>> kernels;
  std::vector<Parameter<Real>> biases;

  ConvBank() = default;
  ConvBank(const std::string& prefix, std::size_t in_dim, std::vector<std::size_t> filter_widths,
           std::size_t n_channels, RngStream& rng)
      : widths(std::move(filter_widths)), channels(n_channels) {
    for (std::size_t w : widths) {
      kernels.push_back(
          glorot_param<Real>(strf("%s.conv%zu.kernel", prefix.c_str(), w), {w, in_dim, channels},
                             rng));
      biases.emplace_back(strf("%s.conv%zu.bias", prefix.c_str(), w),
                          Tensor<Real>({channels}));
    }
  }

  std::size_t out_dim() const { return widths.size() * channels; }

  // One conv per filter width, ReLU, concatenated on the feature axis.
  Var apply(Graph<Real>& g, Var x) {
    Var out{};
    for (std::size_t i = 0; i < widths.size(); ++i) {
      Var conv = relu(g, conv1d_same(g, x, g.param(kernels[i]), g.param(biases[i])));
      out = out.valid() ? concat_last(g, out, conv) : conv;
    }
    return out;
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      out.push_back(&kernels[i]);
      out.push_back(&biases[i]);
    }
  }
};

// ---------------------------------------------------------------------------
// CNN encoder with attention pooling (task-specific branch)
// ---------------------------------------------------------------------------

template <typename Real>
class CnnAttEncoder {
 public:
  CnnAttEncoder() = default;
  CnnAttEncoder(const std::string& prefix, std::size_t in_dim, std::vector<std::size_t> widths,
                std::size_t channels, RngStream& rng)
      : bank_(prefix, in_dim, std::move(widths), channels, rng),
        attn_w_(glorot_param<Real>(prefix + ".attn.w", {bank_.out_dim(), bank_.out_dim()}, rng)),
        attn_b_(prefix + ".attn.b", Tensor<Real>({bank_.out_dim()})),
        attn_v_(glorot_param<Real>(prefix + ".attn.v", {1, bank_.out_dim()}, rng)) {}

  std::size_t out_dim() const { return bank_.out_dim(); }

  // Word encodings: conv bank + ReLU, padded time steps zeroed after the
  // activation. emb is (B x T x in_dim), mask (B x T).
  Var word_encode(Graph<Real>& g, Var emb, const Tensor<Real>& mask) {
    return mask_zero(g, bank_.apply(g, emb), mask);
  }

  struct Pooled {
    Var weights;   // B x T
    Var sentence;  // B x out_dim
  };

  // a = softmax over v . tanh(W e + b); s = sum_i a_i e_i.
  Pooled attention_pool(Graph<Real>& g, Var e_c, const Tensor<Real>& mask) {
    const auto& shape = g.val(e_c).shape;
    detail::require(shape.size() == 3, strf("attention_pool: expects B x T x D, got %s",
                                            shape_str(shape).c_str()));
    const std::size_t B = shape[0], T = shape[1], D = shape[2];
    Var hidden = tanh_op(g, linear(g, e_c, g.param(attn_w_), g.param(attn_b_)));
    Var scores = reshape(g, linear(g, hidden, g.param(attn_v_)), {B, T});
    Tensor<Real> m({B, T});
    for (std::size_t i = 0; i < B * T; ++i) m.data[i] = mask.data[i];
    Var weights = masked_softmax(g, scores, &m);
    Var pooled = reshape(g, bmm(g, reshape(g, weights, {B, std::size_t(1), T}), e_c), {B, D});
    return {weights, pooled};
  }

  Var encode(Graph<Real>& g, Var emb, const Tensor<Real>& mask, Mode mode, double dropout_rate,
             RngStream& rng) {
    Var e_c = word_encode(g, emb, mask);
    e_c = dropout(g, e_c, dropout_rate, mode, rng);
    return attention_pool(g, e_c, mask).sentence;
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    bank_.collect_params(out);
    out.push_back(&attn_w_);
    out.push_back(&attn_b_);
    out.push_back(&attn_v_);
  }

 private:
  ConvBank<Real> bank_;
  Parameter<Real> attn_w_, attn_b_, attn_v_;
};

// ---------------------------------------------------------------------------
// simple recurrent unit
// ---------------------------------------------------------------------------

// Per-direction SRU weights. The state update touches c_{t-1} only through
// elementwise gates; the heavy input maps are batched matmuls over all steps.
// `proj` is the highway input projection, present when d_in != d_h.
template <typename Real>
struct SruLayer {
  std::size_t d_in = 0, d_h = 0;
  Parameter<Real> w, wf, wr;  // d_h x d_in
  Parameter<Real> vf, vr;     // d_h peepholes
  Parameter<Real> bf, br;     // d_h
  Parameter<Real> proj;       // d_h x d_in when projecting
  bool has_proj = false;

  SruLayer() = default;
  SruLayer(const std::string& prefix, std::size_t in_dim, std::size_t hidden, RngStream& rng)
      : d_in(in_dim),
        d_h(hidden),
        w(glorot_param<Real>(prefix + ".w", {hidden, in_dim}, rng)),
        wf(glorot_param<Real>(prefix + ".wf", {hidden, in_dim}, rng)),
        wr(glorot_param<Real>(prefix + ".wr", {hidden, in_dim}, rng)),
        vf(Parameter<Real>(prefix + ".vf",
                           Tensor<Real>::uniform({hidden}, Real(-0.1), Real(0.1), rng))),
        vr(Parameter<Real>(prefix + ".vr",
                           Tensor<Real>::uniform({hidden}, Real(-0.1), Real(0.1), rng))),
        bf(prefix + ".bf", Tensor<Real>({hidden})),
        br(prefix + ".br", Tensor<Real>({hidden})),
        has_proj(in_dim != hidden) {
    if (has_proj) proj = glorot_param<Real>(prefix + ".proj", {hidden, in_dim}, rng);
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    out.push_back(&w);
    out.push_back(&wf);
    out.push_back(&wr);
    out.push_back(&vf);
    out.push_back(&vr);
    out.push_back(&bf);
    out.push_back(&br);
    if (has_proj) out.push_back(&proj);
  }
};

// One direction of the recurrence:
//   f_t = sigmoid(Wf x_t + vf . c_{t-1} + bf)
//   c_t = f_t . c_{t-1} + (1 - f_t) . (W x_t)
//   r_t = sigmoid(Wr x_t + vr . c_{t-1} + br)
//   h_t = r_t . c_t + (1 - r_t) . (P x_t)
// Masked steps carry c and emit h = 0, so trailing padding cannot move the
// state. x is (B x T x d_in) with mask (B x T), or (T x d_in) with mask (T).
template <typename Real>
Var sru_forward(Graph<Real>& g, Var x, SruLayer<Real>& layer, const Tensor<Real>& mask,
                bool reverse) {
  // register the parameter leaves before taking any node references: the tape
  // may reallocate on every new node
  Var wv = g.param(layer.w);
  Var wfv = g.param(layer.wf);
  Var wrv = g.param(layer.wr);
  Var vfv = g.param(layer.vf);
  Var vrv = g.param(layer.vr);
  Var bfv = g.param(layer.bf);
  Var brv = g.param(layer.br);
  Var pv = layer.has_proj ? g.param(layer.proj) : Var{};

  const auto& tx = g.val(x);
  detail::require(tx.rank() == 2 || tx.rank() == 3,
                  strf("sru_forward: input must be rank 2 or 3, got %s",
                       shape_str(tx.shape).c_str()));
  const bool batched = tx.rank() == 3;
  const std::size_t B = batched ? tx.shape[0] : 1;
  const std::size_t T = batched ? tx.shape[1] : tx.shape[0];
  const std::size_t din = tx.shape.back();
  const std::size_t dh = layer.d_h;
  detail::require(din == layer.d_in, strf("sru_forward: input dim %zu vs layer dim %zu", din,
                                          layer.d_in));
  detail::require(mask.size() == B * T, "sru_forward: mask does not match input");

  const std::size_t n = B * T;
  auto u = std::make_shared<std::vector<Real>>(n * dh);
  auto uf = std::vector<Real>(n * dh);
  auto ur = std::vector<Real>(n * dh);
  auto p = std::make_shared<std::vector<Real>>(n * dh);
  kernels::matmul_nt(tx.ptr(), g.val(wv).ptr(), u->data(), n, din, dh, false);
  kernels::matmul_nt(tx.ptr(), g.val(wfv).ptr(), uf.data(), n, din, dh, false);
  kernels::matmul_nt(tx.ptr(), g.val(wrv).ptr(), ur.data(), n, din, dh, false);
  if (layer.has_proj)
    kernels::matmul_nt(tx.ptr(), g.val(pv).ptr(), p->data(), n, din, dh, false);
  else
    std::copy(tx.data.begin(), tx.data.end(), p->begin());

  auto fg = std::make_shared<std::vector<Real>>(n * dh);
  auto rg = std::make_shared<std::vector<Real>>(n * dh);
  auto cs = std::make_shared<std::vector<Real>>(n * dh);
  auto mk = std::make_shared<Tensor<Real>>(mask);

  const Real* vf_ = g.val(vfv).ptr();
  const Real* vr_ = g.val(vrv).ptr();
  const Real* bf_ = g.val(bfv).ptr();
  const Real* br_ = g.val(brv).ptr();

  Tensor<Real> h(tx.rank() == 3 ? std::vector<std::size_t>{B, T, dh}
                                : std::vector<std::size_t>{T, dh});
  std::vector<Real> c_prev(B * dh, Real(0));
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t row = b * T + t;
      const Real m = mask.data[row];
      const Real* cp = c_prev.data() + b * dh;
      Real* crow = cs->data() + row * dh;
      Real* frow = fg->data() + row * dh;
      Real* rrow = rg->data() + row * dh;
      Real* hrow = h.ptr() + row * dh;
      for (std::size_t j = 0; j < dh; ++j) {
        const Real f = Real(1) / (Real(1) + std::exp(-(uf[row * dh + j] + vf_[j] * cp[j] + bf_[j])));
        const Real cand = f * cp[j] + (Real(1) - f) * (*u)[row * dh + j];
        const Real r = Real(1) / (Real(1) + std::exp(-(ur[row * dh + j] + vr_[j] * cp[j] + br_[j])));
        frow[j] = f;
        rrow[j] = r;
        crow[j] = m * cand + (Real(1) - m) * cp[j];
        hrow[j] = m * (r * cand + (Real(1) - r) * (*p)[row * dh + j]);
      }
      std::copy_n(crow, dh, c_prev.data() + b * dh);
    }
  }

  std::vector<Var> inputs{x, wv, wfv, wrv, vfv, vrv, bfv, brv};
  if (layer.has_proj) inputs.push_back(pv);
  const bool has_proj = layer.has_proj;

  return g.make_node(
      std::move(h), std::move(inputs),
      [x, wv, wfv, wrv, vfv, vrv, bfv, brv, pv, u, p, fg, rg, cs, mk, B, T, din, dh, reverse,
       has_proj](Graph<Real>& gr, std::int32_t self) {
        const auto& gh = gr.grad(Var{self});
        const auto& vx = gr.val(x);
        const Real* vf_ = gr.val(vfv).ptr();
        const Real* vr_ = gr.val(vrv).ptr();
        auto& gvf = gr.grad(vfv);
        auto& gvr = gr.grad(vrv);
        auto& gbf = gr.grad(bfv);
        auto& gbr = gr.grad(brv);

        const std::size_t n = B * T;
        std::vector<Real> gu(n * dh, Real(0));
        std::vector<Real> guf(n * dh, Real(0));
        std::vector<Real> gur(n * dh, Real(0));
        std::vector<Real> gp(n * dh, Real(0));
        std::vector<Real> gc_next(B * dh, Real(0));
        std::vector<Real> zeros(dh, Real(0));

        for (std::size_t s = T; s-- > 0;) {
          const std::size_t t = reverse ? T - 1 - s : s;
          const std::size_t t_prev = reverse ? t + 1 : t - 1;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t row = b * T + t;
            const Real m = mk->data[row];
            const Real* cp =
                s == 0 ? zeros.data() : cs->data() + (b * T + t_prev) * dh;
            const Real* frow = fg->data() + row * dh;
            const Real* rrow = rg->data() + row * dh;
            const Real* crow = cs->data() + row * dh;
            Real* gcn = gc_next.data() + b * dh;
            for (std::size_t j = 0; j < dh; ++j) {
              const Real dh_j = m * gh.data[row * dh + j];
              const Real gc_total = gcn[j];
              const Real f = frow[j], r = rrow[j];
              const Real cand = crow[j];  // equals the candidate where m = 1
              const Real dr = dh_j * (cand - (*p)[row * dh + j]);
              Real dcand = dh_j * r + m * gc_total;
              Real dc_prev = (Real(1) - m) * gc_total;
              const Real df = dcand * (cp[j] - (*u)[row * dh + j]);
              gu[row * dh + j] = dcand * (Real(1) - f);
              dc_prev += dcand * f;
              const Real dzf = df * f * (Real(1) - f);
              const Real dzr = dr * r * (Real(1) - r);
              guf[row * dh + j] = dzf;
              gur[row * dh + j] = dzr;
              gvf.data[j] += dzf * cp[j];
              gvr.data[j] += dzr * cp[j];
              gbf.data[j] += dzf;
              gbr.data[j] += dzr;
              dc_prev += dzf * vf_[j] + dzr * vr_[j];
              gp[row * dh + j] = dh_j * (Real(1) - r);
              gcn[j] = dc_prev;
            }
          }
        }

        auto& gx = gr.grad(x);
        kernels::matmul_nn(gu.data(), gr.val(wv).ptr(), gx.ptr(), n, dh, din, true);
        kernels::matmul_tn(gu.data(), vx.ptr(), gr.grad(wv).ptr(), dh, n, din, true);
        kernels::matmul_nn(guf.data(), gr.val(wfv).ptr(), gx.ptr(), n, dh, din, true);
        kernels::matmul_tn(guf.data(), vx.ptr(), gr.grad(wfv).ptr(), dh, n, din, true);
        kernels::matmul_nn(gur.data(), gr.val(wrv).ptr(), gx.ptr(), n, dh, din, true);
        kernels::matmul_tn(gur.data(), vx.ptr(), gr.grad(wrv).ptr(), dh, n, din, true);
        if (has_proj) {
          kernels::matmul_nn(gp.data(), gr.val(pv).ptr(), gx.ptr(), n, dh, din, true);
          kernels::matmul_tn(gp.data(), vx.ptr(), gr.grad(pv).ptr(), dh, n, din, true);
        } else {
          kernels::axpy(Real(1), gp.data(), gx.ptr(), n * dh);
        }
      },
      "sru");
}

// ---------------------------------------------------------------------------
// bidirectional SRU stack
// ---------------------------------------------------------------------------

template <typename Real>
class BiSruStack {
 public:
  BiSruStack() = default;
  BiSruStack(const std::string& prefix, std::size_t in_dim, std::size_t hidden,
             std::size_t layers, RngStream& rng)
      : hidden_(hidden) {
    std::size_t d = in_dim;
    for (std::size_t l = 0; l < layers; ++l) {
      fwd_.emplace_back(strf("%s.l%zu.fwd", prefix.c_str(), l), d, hidden, rng);
      bwd_.emplace_back(strf("%s.l%zu.bwd", prefix.c_str(), l), d, hidden, rng);
      d = 2 * hidden;
    }
  }

  std::size_t out_dim() const { return 4 * hidden_; }
  std::size_t depth() const { return fwd_.size(); }
  SruLayer<Real>& forward_layer(std::size_t l) { return fwd_[l]; }
  SruLayer<Real>& backward_layer(std::size_t l) { return bwd_[l]; }

  // Per-time output of the top layer: concatenated directional states.
  struct TopStates {
    Var fwd;  // B x T x hidden
    Var bwd;  // B x T x hidden
  };

  TopStates run(Graph<Real>& g, Var x, const Tensor<Real>& mask, Mode mode, double dropout_rate,
                RngStream& rng) {
    Var cur = x;
    Var hf{}, hb{};
    for (std::size_t l = 0; l < fwd_.size(); ++l) {
      hf = sru_forward(g, cur, fwd_[l], mask, false);
      hb = sru_forward(g, cur, bwd_[l], mask, true);
      cur = concat_last(g, hf, hb);
      if (l + 1 < fwd_.size()) cur = dropout(g, cur, dropout_rate, mode, rng);
    }
    return {hf, hb};
  }

  // Sentence vector: [last unmasked forward state ; backward state at the
  // first position] then the same pair max-pooled over unmasked steps.
  Var encode(Graph<Real>& g, Var x, const Tensor<Real>& mask, Mode mode, double dropout_rate,
             RngStream& rng) {
    const auto& shape = g.val(x).shape;
    detail::require(shape.size() == 3, strf("bisru_encode: expects B x T x D, got %s",
                                            shape_str(shape).c_str()));
    const std::size_t B = shape[0], T = shape[1];
    TopStates top = run(g, x, mask, mode, dropout_rate, rng);

    std::vector<std::size_t> last(B, 0), first(B, 0);
    for (std::size_t b = 0; b < B; ++b) {
      bool seen = false;
      for (std::size_t t = 0; t < T; ++t) {
        if (mask.data[b * T + t] != Real(0)) {
          last[b] = t;
          seen = true;
        }
      }
      if (!seen) throw ValueError(strf("bisru_encode: row %zu is fully masked", b));
    }
    Var terminal = concat_last(g, gather_time(g, top.fwd, last), gather_time(g, top.bwd, first));
    Var pooled = concat_last(g, max_pool_time(g, top.fwd, mask), max_pool_time(g, top.bwd, mask));
    return concat_last(g, terminal, pooled);
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    for (std::size_t l = 0; l < fwd_.size(); ++l) {
      fwd_[l].collect_params(out);
      bwd_[l].collect_params(out);
    }
  }

 private:
  std::size_t hidden_ = 0;
  std::vector<SruLayer<Real>> fwd_, bwd_;
};

// ---------------------------------------------------------------------------
// CNN + masked max pooling sentence encoder (word-encoder branch, preset A)
// ---------------------------------------------------------------------------

template <typename Real>
class CnnMaxpoolEncoder {
 public:
  CnnMaxpoolEncoder() = default;
  CnnMaxpoolEncoder(const std::string& prefix, std::size_t in_dim, std::vector<std::size_t> widths,
                    std::size_t channels, RngStream& rng)
      : bank_(prefix, in_dim, std::move(widths), channels, rng) {}

  std::size_t out_dim() const { return bank_.out_dim(); }

  Var encode(Graph<Real>& g, Var x, const Tensor<Real>& mask, Mode mode, double dropout_rate,
             RngStream& rng) {
    Var words = dropout(g, bank_.apply(g, x), dropout_rate, mode, rng);
    return max_pool_time(g, words, mask);
  }

  void collect_params(std::vector<Parameter<Real>*>& out) { bank_.collect_params(out); }

 private:
  ConvBank<Real> bank_;
};

// ---------------------------------------------------------------------------
// transformer word encoder (fine-tunable stand-in with loadable weights)
// ---------------------------------------------------------------------------

template <typename Real>
class TransformerWordEncoder {
 public:
  struct Config {
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_len = 128;
  };

  TransformerWordEncoder() = default;
  TransformerWordEncoder(const std::string& prefix, std::size_t vocab_size, Config cfg,
                         RngStream& rng)
      : cfg_(cfg),
        tok_emb_(prefix + ".tok_emb",
                 Tensor<Real>::uniform({vocab_size, cfg.d_model}, Real(-0.25), Real(0.25), rng)),
        pos_emb_(prefix + ".pos_emb",
                 Tensor<Real>::uniform({cfg.max_len, cfg.d_model}, Real(-0.05), Real(0.05), rng)) {
    if (cfg.d_model % cfg.heads != 0)
      throw ValueError(strf("transformer: %zu heads do not divide d_model %zu", cfg.heads,
                            cfg.d_model));
    // PAD row stays zero
    for (std::size_t j = 0; j < cfg.d_model; ++j) tok_emb_.value.data[j] = Real(0);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string bp = strf("%s.block%zu", prefix.c_str(), l);
      Block blk;
      blk.wq = glorot_param<Real>(bp + ".wq", {cfg.d_model, cfg.d_model}, rng);
      blk.bq = Parameter<Real>(bp + ".bq", Tensor<Real>({cfg.d_model}));
      blk.wk = glorot_param<Real>(bp + ".wk", {cfg.d_model, cfg.d_model}, rng);
      blk.bk = Parameter<Real>(bp + ".bk", Tensor<Real>({cfg.d_model}));
      blk.wv = glorot_param<Real>(bp + ".wv", {cfg.d_model, cfg.d_model}, rng);
      blk.bv = Parameter<Real>(bp + ".bv", Tensor<Real>({cfg.d_model}));
      blk.wo = glorot_param<Real>(bp + ".wo", {cfg.d_model, cfg.d_model}, rng);
      blk.bo = Parameter<Real>(bp + ".bo", Tensor<Real>({cfg.d_model}));
      blk.ln1_g = Parameter<Real>(bp + ".ln1.gain", Tensor<Real>({cfg.d_model}, Real(1)));
      blk.ln1_b = Parameter<Real>(bp + ".ln1.bias", Tensor<Real>({cfg.d_model}));
      blk.ff1_w = glorot_param<Real>(bp + ".ff1.w", {cfg.d_ff, cfg.d_model}, rng);
      blk.ff1_b = Parameter<Real>(bp + ".ff1.b", Tensor<Real>({cfg.d_ff}));
      blk.ff2_w = glorot_param<Real>(bp + ".ff2.w", {cfg.d_model, cfg.d_ff}, rng);
      blk.ff2_b = Parameter<Real>(bp + ".ff2.b", Tensor<Real>({cfg.d_model}));
      blk.ln2_g = Parameter<Real>(bp + ".ln2.gain", Tensor<Real>({cfg.d_model}, Real(1)));
      blk.ln2_b = Parameter<Real>(bp + ".ln2.bias", Tensor<Real>({cfg.d_model}));
      blocks_.push_back(std::move(blk));
    }
  }

  const Config& config() const { return cfg_; }
  std::size_t out_dim() const { return cfg_.d_model; }

  // Word encodings e_b (B x T x d_model). Padded keys are excluded from
  // attention; outputs at padded positions are meaningless and must be masked
  // by the consumer. When attn_trace is set, per-block attention tensors of
  // shape ((B*heads) x T x T) are appended to it.
  Var encode(Graph<Real>& g, const std::vector<std::int32_t>& ids, std::size_t B, std::size_t T,
             const Tensor<Real>& mask, Mode mode, double dropout_rate, RngStream& rng,
             std::vector<Tensor<Real>>* attn_trace = nullptr) {
    if (T > cfg_.max_len)
      throw ValueError(strf("transformer: sequence length %zu exceeds max_len %zu", T,
                            cfg_.max_len));
    const std::size_t H = cfg_.heads;
    const std::size_t dk = cfg_.d_model / H;
    Var x = add_position(g, embedding_lookup(g, g.param(tok_emb_), ids, B, T, mask),
                         g.param(pos_emb_));

    // key mask broadcast over heads and query positions
    Tensor<Real> key_mask({B * H, T, T});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t tq = 0; tq < T; ++tq)
          for (std::size_t tk = 0; tk < T; ++tk)
            key_mask.data[((b * H + h) * T + tq) * T + tk] = mask.data[b * T + tk];

    const Real inv_sqrt_dk = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dk)));
    for (auto& blk : blocks_) {
      Var q = split_heads(g, linear(g, x, g.param(blk.wq), g.param(blk.bq)), H);
      Var k = split_heads(g, linear(g, x, g.param(blk.wk), g.param(blk.bk)), H);
      Var v = split_heads(g, linear(g, x, g.param(blk.wv), g.param(blk.bv)), H);
      Var scores = scale(g, bmm(g, q, transpose2(g, k)), inv_sqrt_dk);
      Var attn = masked_softmax(g, scores, &key_mask);
      if (attn_trace) attn_trace->push_back(g.val(attn));
      Var ctx = merge_heads(g, bmm(g, attn, v), H);
      Var mixed = linear(g, ctx, g.param(blk.wo), g.param(blk.bo));
      x = layer_norm(g, add(g, x, mixed), g.param(blk.ln1_g), g.param(blk.ln1_b));
      Var ff_hidden = dropout(g, relu(g, linear(g, x, g.param(blk.ff1_w), g.param(blk.ff1_b))),
                              dropout_rate, mode, rng);
      Var ff = linear(g, ff_hidden, g.param(blk.ff2_w), g.param(blk.ff2_b));
      x = layer_norm(g, add(g, x, ff), g.param(blk.ln2_g), g.param(blk.ln2_b));
    }
    return x;
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    out.push_back(&tok_emb_);
    out.push_back(&pos_emb_);
    for (auto& blk : blocks_) {
      for (auto* p : {&blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv, &blk.bv, &blk.wo, &blk.bo,
                      &blk.ln1_g, &blk.ln1_b, &blk.ff1_w, &blk.ff1_b, &blk.ff2_w, &blk.ff2_b,
                      &blk.ln2_g, &blk.ln2_b})
        out.push_back(p);
    }
  }

 private:
  struct Block {
    Parameter<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<Real> ln1_g, ln1_b;
    Parameter<Real> ff1_w, ff1_b, ff2_w, ff2_b;
    Parameter<Real> ln2_g, ln2_b;
  };

  Config cfg_;
  Parameter<Real> tok_emb_, pos_emb_;
  std::vector<Block> blocks_;
};

}  // namespace jessi
