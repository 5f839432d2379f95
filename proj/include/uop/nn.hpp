#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "uop/graph.hpp"
#include "uop/rng.hpp"
#include "uop/tensor.hpp"

namespace uop {

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Named parameter registry. Creation order is fixed and defines both the
// checkpoint layout and the optimizer iteration order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m, v;         // AdamW moments
    double lr_mult = 1.0;
    bool trainable = true;
    int node = -1;       // handle in the current tape, -1 when unmounted
  };

  int create(const std::string& name, Tensor init, double lr_mult = 1.0);
  Entry& entry(int id) { return params_.at(id); }
  const Entry& entry(int id) const { return params_.at(id); }
  Entry* find(const std::string& name);
  size_t size() const { return params_.size(); }
  std::vector<Entry>& all() { return params_; }
  const std::vector<Entry>& all() const { return params_; }

  // Mount every parameter as a tape leaf. Frozen names (prefix match) are
  // mounted without grad.
  void mount(Tape& tape, const std::vector<std::string>& frozen_prefixes = {});
  int node(int id) const { return params_.at(id).node; }

  int64_t total_numel() const;

 private:
  std::vector<Entry> params_;
  std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// initializers

Tensor xavier_init(int64_t rows, int64_t cols, Rng& rng);

// ---------------------------------------------------------------------------
// modules: thin bundles of param ids plus an apply()

struct Linear {
  int w = -1;  // [in, out]
  int b = -1;  // [out], -1 when bias-free
  static Linear create(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                       bool bias, Rng& rng, double lr_mult = 1.0);
  int apply(Tape& t, const ParamStore& ps, int x) const;
};

struct LayerNorm {
  int gamma = -1, beta = -1;
  static LayerNorm create(ParamStore& ps, const std::string& name, int64_t dim,
                          double lr_mult = 1.0);
  int apply(Tape& t, const ParamStore& ps, int x) const;
};

struct Mlp {
  std::vector<Linear> layers;  // relu between all but the last
  static Mlp create(ParamStore& ps, const std::string& name, const std::vector<int64_t>& dims,
                    bool bias, Rng& rng, double lr_mult = 1.0);
  int apply(Tape& t, const ParamStore& ps, int x) const;
};

struct MultiheadAttention {
  Linear q, k, v, o;
  int heads = 1;
  int64_t dim = 0;
  // value/output projections can be created bias-free (early fusion relies on
  // zero embeddings contributing exactly zero).
  static MultiheadAttention create(ParamStore& ps, const std::string& name, int64_t dim,
                                   int heads, Rng& rng, bool qk_bias, bool vo_bias,
                                   double lr_mult = 1.0);
  // query_in [Tq, C], kv_in [Tk, C] -> [Tq, C]. Tk may be 0: returns zeros.
  int apply(Tape& t, const ParamStore& ps, int query_in, int kv_in) const;
};

// Fixed 2-D sine/cosine positional encoding, [h*w, dim], row-major over (y,x).
Tensor sine_position_encoding(int64_t h, int64_t w, int64_t dim);

// ---------------------------------------------------------------------------
// optimizer

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 1.0;  // <= 0 disables
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  // Applies one update using grads found in the mounted tape nodes.
  // lr_scale multiplies the base lr (schedule hook). Returns global grad norm.
  double step(ParamStore& ps, Tape& tape, double lr_scale = 1.0);
  int64_t t() const { return t_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace uop
