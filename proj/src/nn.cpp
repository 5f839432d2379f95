#include "uop/nn.hpp"

#include <cmath>

#include "uop/kernels.hpp"

namespace uop {

int ParamStore::create(const std::string& name, Tensor init, double lr_mult) {
  UOP_CHECK(index_.find(name) == index_.end(), "duplicate parameter: " + name);
  Entry e;
  e.name = name;
  e.m = Tensor(init.shape);
  e.v = Tensor(init.shape);
  e.value = std::move(init);
  e.lr_mult = lr_mult;
  params_.push_back(std::move(e));
  index_[name] = static_cast<int>(params_.size()) - 1;
  return static_cast<int>(params_.size()) - 1;
}

ParamStore::Entry* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParamStore::mount(Tape& tape, const std::vector<std::string>& frozen_prefixes) {
  for (auto& e : params_) {
    bool frozen = !e.trainable;
    for (const auto& p : frozen_prefixes)
      if (e.name.rfind(p, 0) == 0) frozen = true;
    e.node = tape.leaf(e.value, !frozen);
  }
}

int64_t ParamStore::total_numel() const {
  int64_t n = 0;
  for (const auto& e : params_) n += e.value.numel();
  return n;
}

Tensor xavier_init(int64_t rows, int64_t cols, Rng& rng) {
  const double sigma = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (auto& x : t.v) x = rng.normal() * sigma;
  return t;
}

Linear Linear::create(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                      bool bias, Rng& rng, double lr_mult) {
  Linear l;
  l.w = ps.create(name + ".w", xavier_init(in, out, rng), lr_mult);
  if (bias) l.b = ps.create(name + ".b", Tensor({out}), lr_mult);
  return l;
}

int Linear::apply(Tape& t, const ParamStore& ps, int x) const {
  int y = t.matmul(x, ps.node(w));
  if (b >= 0) y = t.add_rowvec(y, ps.node(b));
  return y;
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name, int64_t dim,
                            double lr_mult) {
  LayerNorm ln;
  ln.gamma = ps.create(name + ".gamma", Tensor::full({dim}, 1.0), lr_mult);
  ln.beta = ps.create(name + ".beta", Tensor({dim}), lr_mult);
  return ln;
}

int LayerNorm::apply(Tape& t, const ParamStore& ps, int x) const {
  return t.layernorm_rows(x, ps.node(gamma), ps.node(beta));
}

Mlp Mlp::create(ParamStore& ps, const std::string& name, const std::vector<int64_t>& dims,
                bool bias, Rng& rng, double lr_mult) {
  UOP_CHECK(dims.size() >= 2, "Mlp: need at least in/out dims");
  Mlp m;
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    m.layers.push_back(Linear::create(ps, name + ".l" + std::to_string(i), dims[i],
                                      dims[i + 1], bias, rng, lr_mult));
  return m;
}

int Mlp::apply(Tape& t, const ParamStore& ps, int x) const {
  int h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].apply(t, ps, h);
    if (i + 1 < layers.size()) h = t.relu(h);
  }
  return h;
}

MultiheadAttention MultiheadAttention::create(ParamStore& ps, const std::string& name,
                                              int64_t dim, int heads, Rng& rng, bool qk_bias,
                                              bool vo_bias, double lr_mult) {
  UOP_CHECK(dim % heads == 0, "MultiheadAttention: dim % heads != 0");
  MultiheadAttention m;
  m.heads = heads;
  m.dim = dim;
  m.q = Linear::create(ps, name + ".q", dim, dim, qk_bias, rng, lr_mult);
  m.k = Linear::create(ps, name + ".k", dim, dim, qk_bias, rng, lr_mult);
  m.v = Linear::create(ps, name + ".v", dim, dim, vo_bias, rng, lr_mult);
  m.o = Linear::create(ps, name + ".o", dim, dim, vo_bias, rng, lr_mult);
  return m;
}

int MultiheadAttention::apply(Tape& t, const ParamStore& ps, int query_in, int kv_in) const {
  const int64_t tq = t.val(query_in).rows();
  if (t.val(kv_in).rows() == 0) return t.leaf(Tensor({tq, dim}));
  const int64_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const int Q = q.apply(t, ps, query_in);
  const int Kx = k.apply(t, ps, kv_in);
  const int V = v.apply(t, ps, kv_in);
  std::vector<int> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const int64_t c0 = h * dh, c1 = (h + 1) * dh;
    int qh = t.slice_cols(Q, c0, c1);
    int kh = t.slice_cols(Kx, c0, c1);
    int vh = t.slice_cols(V, c0, c1);
    int scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
    int attn = t.softmax_rows(scores);
    ctx.push_back(t.matmul(attn, vh));
  }
  return o.apply(t, ps, t.concat_cols(ctx));
}

Tensor sine_position_encoding(int64_t h, int64_t w, int64_t dim) {
  UOP_CHECK(dim % 4 == 0, "sine_position_encoding: dim % 4 != 0");
  const int64_t quarter = dim / 4;
  Tensor out({h * w, dim});
  const double temperature = 10000.0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double* row = out.v.data() + (y * w + x) * dim;
      for (int64_t i = 0; i < quarter; ++i) {
        const double freq =
            std::pow(temperature, 2.0 * static_cast<double>(i) / static_cast<double>(dim / 2));
        row[4 * i + 0] = std::sin(static_cast<double>(x) / freq);
        row[4 * i + 1] = std::cos(static_cast<double>(x) / freq);
        row[4 * i + 2] = std::sin(static_cast<double>(y) / freq);
        row[4 * i + 3] = std::cos(static_cast<double>(y) / freq);
      }
    }
  }
  return out;
}

double AdamW::step(ParamStore& ps, Tape& tape, double lr_scale) {
  ++t_;
  // Global grad norm over trainable, mounted params.
  double sq = 0.0;
  for (auto& e : ps.all()) {
    if (e.node < 0) continue;
    const Tensor& g = tape.grad(e.node);
    if (g.numel() == 0) continue;
    sq += kernels::active().dot(g.v.size(), g.v.data(), g.v.data());
  }
  const double norm = std::sqrt(sq);
  double clip_scale = 1.0;
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;

  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& e : ps.all()) {
    if (e.node < 0) continue;
    const Tensor& g = tape.grad(e.node);
    if (g.numel() != e.value.numel()) continue;  // frozen leaf: grad not allocated
    const double lr = cfg_.lr * lr_scale * e.lr_mult;
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      const double gi = g.v[i] * clip_scale;
      e.m.v[i] = cfg_.beta1 * e.m.v[i] + (1.0 - cfg_.beta1) * gi;
      e.v.v[i] = cfg_.beta2 * e.v.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = e.m.v[i] / bc1;
      const double vhat = e.v.v[i] / bc2;
      e.value.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * e.value.v[i]);
    }
  }
  return norm;
}

}  // namespace uop
