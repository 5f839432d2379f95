#include "uop/graph.hpp"

#include <algorithm>
#include <memory>
#include <cmath>

#include "uop/kernels.hpp"

namespace uop {

namespace {
const kernels::KernelTable& K() { return kernels::active(); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}
}  // namespace

int Tape::push(Tensor val, bool needs_grad, std::function<void()> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.grad = Tensor(n.val.shape);
    n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

bool Tape::want_grad(std::initializer_list<int> parents) const {
  if (!grad_enabled) return false;
  for (int p : parents)
    if (nodes_[p].needs_grad) return true;
  return false;
}

int Tape::leaf(Tensor t, bool needs_grad) {
  return push(std::move(t), grad_enabled && needs_grad, nullptr);
}

void Tape::backward(int root) {
  UOP_CHECK(nodes_[root].val.numel() == 1, "backward: root must be scalar");
  UOP_CHECK(nodes_[root].needs_grad, "backward: root does not require grad");
  nodes_[root].grad.v[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back();
  }
}

// ---------------------------------------------------------------------------
// elementwise

int Tape::add(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "add: shape mismatch");
  Tensor out(val(a).shape);
  K().add(out.v.size(), val(a).v.data(), val(b).v.data(), out.v.data());
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad) K().axpy(go.size(), 1.0, go.data(), grad(a).v.data());
      if (nodes_[b].needs_grad) K().axpy(go.size(), 1.0, go.data(), grad(b).v.data());
    };
  return id;
}

int Tape::sub(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "sub: shape mismatch");
  Tensor out(val(a).shape);
  K().sub(out.v.size(), val(a).v.data(), val(b).v.data(), out.v.data());
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad) K().axpy(go.size(), 1.0, go.data(), grad(a).v.data());
      if (nodes_[b].needs_grad) K().axpy(go.size(), -1.0, go.data(), grad(b).v.data());
    };
  return id;
}

int Tape::mul(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "mul: shape mismatch");
  Tensor out(val(a).shape);
  K().mul(out.v.size(), val(a).v.data(), val(b).v.data(), out.v.data());
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      const size_t n = go.size();
      if (nodes_[a].needs_grad) {
        auto& ga = grad(a).v;
        const auto& vb = val(b).v;
        for (size_t i = 0; i < n; ++i) ga[i] += go[i] * vb[i];
      }
      if (nodes_[b].needs_grad) {
        auto& gb = grad(b).v;
        const auto& va = val(a).v;
        for (size_t i = 0; i < n; ++i) gb[i] += go[i] * va[i];
      }
    };
  return id;
}

int Tape::div(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "div: shape mismatch");
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = val(a).v[i] / val(b).v[i];
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      const auto& vb = val(b).v;
      const size_t n = go.size();
      if (nodes_[a].needs_grad) {
        auto& ga = grad(a).v;
        for (size_t i = 0; i < n; ++i) ga[i] += go[i] / vb[i];
      }
      if (nodes_[b].needs_grad) {
        auto& gb = grad(b).v;
        for (size_t i = 0; i < n; ++i) gb[i] -= go[i] * va[i] / (vb[i] * vb[i]);
      }
    };
  return id;
}

int Tape::scale(int a, double s) {
  Tensor out(val(a).shape);
  K().scale(out.v.size(), s, val(a).v.data(), out.v.data());
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, s] {
      K().axpy(grad(id).v.size(), s, grad(id).v.data(), grad(a).v.data());
    };
  return id;
}

int Tape::add_const(int a, double c) {
  Tensor out = val(a);
  for (auto& x : out.v) x += c;
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      K().axpy(grad(id).v.size(), 1.0, grad(id).v.data(), grad(a).v.data());
    };
  return id;
}

// ---------------------------------------------------------------------------
// unary elementwise

int Tape::relu(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::max(0.0, val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i)
        if (va[i] > 0.0) ga[i] += go[i];
    };
  return id;
}

int Tape::sigmoid(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = stable_sigmoid(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& y = val(id).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
    };
  return id;
}

int Tape::exp_(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::exp(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& y = val(id).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
    };
  return id;
}

int Tape::log_(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::log(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / va[i];
    };
  return id;
}

int Tape::log1p_(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::log1p(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / (1.0 + va[i]);
    };
  return id;
}

int Tape::softplus(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = stable_softplus(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * stable_sigmoid(va[i]);
    };
  return id;
}

int Tape::abs_(int a) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::fabs(val(a).v[i]);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) {
        const double s = va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
        ga[i] += go[i] * s;
      }
    };
  return id;
}

int Tape::pow_const(int a, double p) {
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::pow(val(a).v[i], p);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, p] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * p * std::pow(va[i], p - 1.0);
    };
  return id;
}

int Tape::min_el(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "min_el: shape mismatch");
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::min(val(a).v[i], val(b).v[i]);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      const auto& vb = val(b).v;
      for (size_t i = 0; i < go.size(); ++i) {
        // Ties route to the first argument.
        if (va[i] <= vb[i]) {
          if (nodes_[a].needs_grad) grad(a).v[i] += go[i];
        } else if (nodes_[b].needs_grad) {
          grad(b).v[i] += go[i];
        }
      }
    };
  return id;
}

int Tape::max_el(int a, int b) {
  UOP_CHECK(val(a).same_shape(val(b)), "max_el: shape mismatch");
  Tensor out(val(a).shape);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::max(val(a).v[i], val(b).v[i]);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b] {
      const auto& go = grad(id).v;
      const auto& va = val(a).v;
      const auto& vb = val(b).v;
      for (size_t i = 0; i < go.size(); ++i) {
        if (va[i] >= vb[i]) {
          if (nodes_[a].needs_grad) grad(a).v[i] += go[i];
        } else if (nodes_[b].needs_grad) {
          grad(b).v[i] += go[i];
        }
      }
    };
  return id;
}

// ---------------------------------------------------------------------------
// matrix ops

int Tape::matmul(int a, int b) {
  const auto& A = val(a);
  const auto& B = val(b);
  UOP_CHECK(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul: shape mismatch");
  const int64_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  K().gemm_nn(m, n, k, A.v.data(), B.v.data(), out.v.data(), false);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b, m, k, n] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad)
        K().gemm_nt(m, k, n, go.data(), val(b).v.data(), grad(a).v.data(), true);
      if (nodes_[b].needs_grad)
        K().gemm_tn(k, n, m, val(a).v.data(), go.data(), grad(b).v.data(), true);
    };
  return id;
}

int Tape::matmul_nt(int a, int b) {
  const auto& A = val(a);
  const auto& B = val(b);
  UOP_CHECK(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "matmul_nt: shape mismatch");
  const int64_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  K().gemm_nt(m, n, k, A.v.data(), B.v.data(), out.v.data(), false);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b, m, k, n] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad)
        K().gemm_nn(m, k, n, go.data(), val(b).v.data(), grad(a).v.data(), true);
      if (nodes_[b].needs_grad)
        K().gemm_tn(n, k, m, go.data(), val(a).v.data(), grad(b).v.data(), true);
    };
  return id;
}

int Tape::matmul_tn(int a, int b) {
  const auto& A = val(a);
  const auto& B = val(b);
  UOP_CHECK(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(), "matmul_tn: shape mismatch");
  const int64_t k = A.rows(), m = A.cols(), n = B.cols();
  Tensor out({m, n});
  K().gemm_tn(m, n, k, A.v.data(), B.v.data(), out.v.data(), false);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b, m, k, n] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad)
        K().gemm_nt(k, m, n, val(b).v.data(), go.data(), grad(a).v.data(), true);
      if (nodes_[b].needs_grad)
        K().gemm_nn(k, n, m, val(a).v.data(), go.data(), grad(b).v.data(), true);
    };
  return id;
}

int Tape::add_rowvec(int a, int b) {
  const auto& A = val(a);
  const auto& B = val(b);
  const int64_t m = A.rows(), n = A.cols();
  UOP_CHECK(A.rank() == 2 && B.numel() == n, "add_rowvec: shape mismatch");
  Tensor out(A.shape);
  for (int64_t i = 0; i < m; ++i)
    K().add(n, A.v.data() + i * n, B.v.data(), out.v.data() + i * n);
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b, m, n] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad) K().axpy(go.size(), 1.0, go.data(), grad(a).v.data());
      if (nodes_[b].needs_grad) {
        auto& gb = grad(b).v;
        for (int64_t i = 0; i < m; ++i)
          K().axpy(n, 1.0, go.data() + i * n, gb.data());
      }
    };
  return id;
}

int Tape::transpose(int a) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2, "transpose: rank must be 2");
  const int64_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.v[j * m + i] = A.v[i * n + j];
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& go = grad(id).v;
      auto& ga = grad(a).v;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    };
  return id;
}

int Tape::reshape(int a, std::vector<int64_t> shape) {
  UOP_CHECK(Tensor::numel_of(shape) == val(a).numel(), "reshape: numel mismatch");
  Tensor out(std::move(shape), val(a).v);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      K().axpy(grad(id).v.size(), 1.0, grad(id).v.data(), grad(a).v.data());
    };
  return id;
}

int Tape::slice_rows(int a, int64_t r0, int64_t r1) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2 && 0 <= r0 && r0 <= r1 && r1 <= A.rows(), "slice_rows: bad range");
  const int64_t n = A.cols();
  Tensor out({r1 - r0, n});
  std::copy(A.v.begin() + r0 * n, A.v.begin() + r1 * n, out.v.begin());
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, r0, n] {
      const auto& go = grad(id).v;
      K().axpy(go.size(), 1.0, go.data(), grad(a).v.data() + r0 * n);
    };
  return id;
}

int Tape::slice_cols(int a, int64_t c0, int64_t c1) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2 && 0 <= c0 && c0 <= c1 && c1 <= A.cols(), "slice_cols: bad range");
  const int64_t m = A.rows(), n = A.cols(), w = c1 - c0;
  Tensor out({m, w});
  for (int64_t i = 0; i < m; ++i)
    std::copy(A.v.begin() + i * n + c0, A.v.begin() + i * n + c1, out.v.begin() + i * w);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, c0, m, n, w] {
      const auto& go = grad(id).v;
      auto& ga = grad(a).v;
      for (int64_t i = 0; i < m; ++i)
        K().axpy(w, 1.0, go.data() + i * w, ga.data() + i * n + c0);
    };
  return id;
}

int Tape::concat_rows(const std::vector<int>& parts) {
  UOP_CHECK(!parts.empty(), "concat_rows: empty");
  const int64_t n = val(parts[0]).cols();
  int64_t m = 0;
  bool g = false;
  for (int p : parts) {
    UOP_CHECK(val(p).rank() == 2 && val(p).cols() == n, "concat_rows: col mismatch");
    m += val(p).rows();
    g = g || (grad_enabled && nodes_[p].needs_grad);
  }
  Tensor out({m, n});
  int64_t r = 0;
  for (int p : parts) {
    std::copy(val(p).v.begin(), val(p).v.end(), out.v.begin() + r * n);
    r += val(p).rows();
  }
  std::vector<int> ps = parts;
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, ps, n] {
      const auto& go = grad(id).v;
      int64_t r = 0;
      for (int p : ps) {
        const int64_t rows = val(p).rows();
        if (nodes_[p].needs_grad)
          K().axpy(rows * n, 1.0, go.data() + r * n, grad(p).v.data());
        r += rows;
      }
    };
  return id;
}

int Tape::concat_cols(const std::vector<int>& parts) {
  UOP_CHECK(!parts.empty(), "concat_cols: empty");
  const int64_t m = val(parts[0]).rows();
  int64_t n = 0;
  bool g = false;
  for (int p : parts) {
    UOP_CHECK(val(p).rank() == 2 && val(p).rows() == m, "concat_cols: row mismatch");
    n += val(p).cols();
    g = g || (grad_enabled && nodes_[p].needs_grad);
  }
  Tensor out({m, n});
  int64_t c = 0;
  for (int p : parts) {
    const int64_t w = val(p).cols();
    for (int64_t i = 0; i < m; ++i)
      std::copy(val(p).v.begin() + i * w, val(p).v.begin() + (i + 1) * w,
                out.v.begin() + i * n + c);
    c += w;
  }
  std::vector<int> ps = parts;
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, ps, m, n] {
      const auto& go = grad(id).v;
      int64_t c = 0;
      for (int p : ps) {
        const int64_t w = val(p).cols();
        if (nodes_[p].needs_grad) {
          auto& gp = grad(p).v;
          for (int64_t i = 0; i < m; ++i)
            K().axpy(w, 1.0, go.data() + i * n + c, gp.data() + i * w);
        }
        c += w;
      }
    };
  return id;
}

int Tape::gather_rows(int a, std::vector<int64_t> idx) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2, "gather_rows: rank must be 2");
  const int64_t n = A.cols();
  Tensor out({static_cast<int64_t>(idx.size()), n});
  for (size_t i = 0; i < idx.size(); ++i) {
    UOP_CHECK(idx[i] >= 0 && idx[i] < A.rows(), "gather_rows: index out of range");
    std::copy(A.v.begin() + idx[i] * n, A.v.begin() + (idx[i] + 1) * n, out.v.begin() + i * n);
  }
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, idx = std::move(idx), n] {
      const auto& go = grad(id).v;
      auto& ga = grad(a).v;
      for (size_t i = 0; i < idx.size(); ++i)
        K().axpy(n, 1.0, go.data() + i * n, ga.data() + idx[i] * n);
    };
  return id;
}

int Tape::softmax_rows(int a) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2, "softmax_rows: rank must be 2");
  const int64_t m = A.rows(), n = A.cols();
  Tensor out(A.shape);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = A.v.data() + i * n;
    double mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    double* orow = out.v.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int64_t j = 0; j < n; ++j) orow[j] /= z;
  }
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& go = grad(id).v;
      const auto& y = val(id).v;
      auto& ga = grad(a).v;
      for (int64_t i = 0; i < m; ++i) {
        const double* yr = y.data() + i * n;
        const double* gr = go.data() + i * n;
        double dotv = K().dot(n, gr, yr);
        double* gar = ga.data() + i * n;
        for (int64_t j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dotv);
      }
    };
  return id;
}

int Tape::layernorm_rows(int x, int gamma, int beta, double eps) {
  const auto& X = val(x);
  UOP_CHECK(X.rank() == 2, "layernorm_rows: rank must be 2");
  const int64_t m = X.rows(), n = X.cols();
  UOP_CHECK(val(gamma).numel() == n && val(beta).numel() == n, "layernorm_rows: param shape");
  Tensor out(X.shape);
  Tensor xhat(X.shape);
  Tensor inv_sigma({m});
  for (int64_t i = 0; i < m; ++i) {
    const double* row = X.v.data() + i * n;
    const double mu = K().sum(n, row) / static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma.v[i] = is;
    for (int64_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat.v[i * n + j] = xh;
      out.v[i * n + j] = val(gamma).v[j] * xh + val(beta).v[j];
    }
  }
  const bool g = want_grad({x, gamma, beta});
  int id = push(std::move(out), g, nullptr);
  if (g) {
    // Keep xhat/inv_sigma alive for the closure.
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<Tensor>(std::move(inv_sigma));
    nodes_[id].back = [this, id, x, gamma, beta, m, n, xh, is] {
      const auto& go = grad(id).v;
      const auto& gam = val(gamma).v;
      for (int64_t i = 0; i < m; ++i) {
        const double* gr = go.data() + i * n;
        const double* xr = xh->v.data() + i * n;
        if (nodes_[gamma].needs_grad) {
          auto& gg = grad(gamma).v;
          for (int64_t j = 0; j < n; ++j) gg[j] += gr[j] * xr[j];
        }
        if (nodes_[beta].needs_grad) {
          auto& gb = grad(beta).v;
          for (int64_t j = 0; j < n; ++j) gb[j] += gr[j];
        }
        if (nodes_[x].needs_grad) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < n; ++j) {
            const double dxh = gr[j] * gam[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xr[j];
          }
          mean_dxhat /= static_cast<double>(n);
          mean_dxhat_xhat /= static_cast<double>(n);
          auto& gx = grad(x).v;
          const double isv = is->v[i];
          for (int64_t j = 0; j < n; ++j) {
            const double dxh = gr[j] * gam[j];
            gx[i * n + j] += isv * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
          }
        }
      }
    };
  }
  return id;
}

// ---------------------------------------------------------------------------
// reductions

int Tape::sum(int a) {
  Tensor out({1});
  out.v[0] = K().sum(val(a).v.size(), val(a).v.data());
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a] {
      const double go = grad(id).v[0];
      auto& ga = grad(a).v;
      for (auto& x : ga) x += go;
    };
  return id;
}

int Tape::mean(int a) {
  const double n = static_cast<double>(val(a).numel());
  UOP_CHECK(n > 0, "mean: empty tensor");
  Tensor out({1});
  out.v[0] = K().sum(val(a).v.size(), val(a).v.data()) / n;
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, n] {
      const double go = grad(id).v[0] / n;
      auto& ga = grad(a).v;
      for (auto& x : ga) x += go;
    };
  return id;
}

int Tape::mean_rows(int a) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2 && A.rows() > 0, "mean_rows: bad shape");
  const int64_t m = A.rows(), n = A.cols();
  Tensor out({1, n});
  for (int64_t i = 0; i < m; ++i)
    K().axpy(n, 1.0, A.v.data() + i * n, out.v.data());
  K().scale(n, 1.0 / static_cast<double>(m), out.v.data(), out.v.data());
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& go = grad(id).v;
      auto& ga = grad(a).v;
      const double inv = 1.0 / static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i)
        K().axpy(n, inv, go.data(), ga.data() + i * n);
    };
  return id;
}

int Tape::row_sums(int a) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 2, "row_sums: rank must be 2");
  const int64_t m = A.rows(), n = A.cols();
  Tensor out({m, 1});
  for (int64_t i = 0; i < m; ++i) out.v[i] = K().sum(n, A.v.data() + i * n);
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, m, n] {
      const auto& go = grad(id).v;
      auto& ga = grad(a).v;
      for (int64_t i = 0; i < m; ++i) {
        const double gi = go[i];
        double* row = ga.data() + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += gi;
      }
    };
  return id;
}

// ---------------------------------------------------------------------------
// structured ops

int Tape::sub_outer(int a, int b) {
  const int64_t p = val(a).numel(), q = val(b).numel();
  Tensor out({p, q});
  for (int64_t i = 0; i < p; ++i)
    for (int64_t j = 0; j < q; ++j) out.v[i * q + j] = val(b).v[j] - val(a).v[i];
  const bool g = want_grad({a, b});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, b, p, q] {
      const auto& go = grad(id).v;
      if (nodes_[a].needs_grad) {
        auto& ga = grad(a).v;
        for (int64_t i = 0; i < p; ++i) ga[i] -= K().sum(q, go.data() + i * q);
      }
      if (nodes_[b].needs_grad) {
        auto& gb = grad(b).v;
        for (int64_t i = 0; i < p; ++i)
          K().axpy(q, 1.0, go.data() + i * q, gb.data());
      }
    };
  return id;
}

int Tape::space_to_depth(int a, int block) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 3, "space_to_depth: need CHW");
  const int64_t c = A.shape[0], h = A.shape[1], w = A.shape[2];
  UOP_CHECK(h % block == 0 && w % block == 0, "space_to_depth: size not divisible");
  const int64_t ho = h / block, wo = w / block;
  Tensor out({c * block * block, ho, wo});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t dy = 0; dy < block; ++dy)
      for (int64_t dx = 0; dx < block; ++dx) {
        const int64_t oc = (ch * block + dy) * block + dx;
        for (int64_t y = 0; y < ho; ++y)
          for (int64_t x = 0; x < wo; ++x)
            out.at(oc, y, x) = A.at(ch, y * block + dy, x * block + dx);
      }
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, c, block, ho, wo] {
      auto& ga = grad(a);
      const auto& gout = grad(id);
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t dy = 0; dy < block; ++dy)
          for (int64_t dx = 0; dx < block; ++dx) {
            const int64_t oc = (ch * block + dy) * block + dx;
            for (int64_t y = 0; y < ho; ++y)
              for (int64_t x = 0; x < wo; ++x)
                ga.at(ch, y * block + dy, x * block + dx) += gout.at(oc, y, x);
          }
    };
  return id;
}

namespace {
struct LinCoord {
  int64_t lo, hi;
  double w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

LinCoord bilinear_axis(double pos, int64_t size) {
  // pos is a continuous source coordinate; clamp to valid sample range.
  double p = pos;
  if (p < 0.0) p = 0.0;
  if (p > static_cast<double>(size - 1)) p = static_cast<double>(size - 1);
  const auto lo = static_cast<int64_t>(std::floor(p));
  const int64_t hi = std::min(lo + 1, size - 1);
  return {lo, hi, p - static_cast<double>(lo)};
}
}  // namespace

int Tape::bilinear_resize(int a, int64_t h_out, int64_t w_out) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 3, "bilinear_resize: need CHW");
  const int64_t c = A.shape[0], h = A.shape[1], w = A.shape[2];
  UOP_CHECK(h_out > 0 && w_out > 0, "bilinear_resize: bad output size");
  const double sy = static_cast<double>(h) / static_cast<double>(h_out);
  const double sx = static_cast<double>(w) / static_cast<double>(w_out);
  std::vector<LinCoord> ys(h_out), xs(w_out);
  for (int64_t y = 0; y < h_out; ++y)
    ys[y] = bilinear_axis((static_cast<double>(y) + 0.5) * sy - 0.5, h);
  for (int64_t x = 0; x < w_out; ++x)
    xs[x] = bilinear_axis((static_cast<double>(x) + 0.5) * sx - 0.5, w);
  Tensor out({c, h_out, w_out});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h_out; ++y)
      for (int64_t x = 0; x < w_out; ++x) {
        const auto& cy = ys[y];
        const auto& cx = xs[x];
        const double v00 = A.at(ch, cy.lo, cx.lo), v01 = A.at(ch, cy.lo, cx.hi);
        const double v10 = A.at(ch, cy.hi, cx.lo), v11 = A.at(ch, cy.hi, cx.hi);
        out.at(ch, y, x) = (1 - cy.w_hi) * ((1 - cx.w_hi) * v00 + cx.w_hi * v01) +
                           cy.w_hi * ((1 - cx.w_hi) * v10 + cx.w_hi * v11);
      }
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, c, h_out, w_out, ys = std::move(ys), xs = std::move(xs)] {
      auto& ga = grad(a);
      const auto& go = grad(id);
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h_out; ++y)
          for (int64_t x = 0; x < w_out; ++x) {
            const auto& cy = ys[y];
            const auto& cx = xs[x];
            const double gv = go.at(ch, y, x);
            ga.at(ch, cy.lo, cx.lo) += (1 - cy.w_hi) * (1 - cx.w_hi) * gv;
            ga.at(ch, cy.lo, cx.hi) += (1 - cy.w_hi) * cx.w_hi * gv;
            ga.at(ch, cy.hi, cx.lo) += cy.w_hi * (1 - cx.w_hi) * gv;
            ga.at(ch, cy.hi, cx.hi) += cy.w_hi * cx.w_hi * gv;
          }
    };
  return id;
}

int Tape::bilinear_sample(int a, const std::vector<std::pair<double, double>>& points) {
  const auto& A = val(a);
  UOP_CHECK(A.rank() == 3, "bilinear_sample: need CHW");
  const int64_t c = A.shape[0], h = A.shape[1], w = A.shape[2];
  const auto s = static_cast<int64_t>(points.size());
  Tensor out({s, c});
  std::vector<LinCoord> ys(s), xs(s);
  for (int64_t i = 0; i < s; ++i) {
    ys[i] = bilinear_axis(points[i].first, h);
    xs[i] = bilinear_axis(points[i].second, w);
    for (int64_t ch = 0; ch < c; ++ch) {
      const auto& cy = ys[i];
      const auto& cx = xs[i];
      const double v00 = A.at(ch, cy.lo, cx.lo), v01 = A.at(ch, cy.lo, cx.hi);
      const double v10 = A.at(ch, cy.hi, cx.lo), v11 = A.at(ch, cy.hi, cx.hi);
      out.at(i, ch) = (1 - cy.w_hi) * ((1 - cx.w_hi) * v00 + cx.w_hi * v01) +
                      cy.w_hi * ((1 - cx.w_hi) * v10 + cx.w_hi * v11);
    }
  }
  const bool g = want_grad({a});
  int id = push(std::move(out), g, nullptr);
  if (g)
    nodes_[id].back = [this, id, a, c, s, ys = std::move(ys), xs = std::move(xs)] {
      auto& ga = grad(a);
      const auto& go = grad(id);
      for (int64_t i = 0; i < s; ++i) {
        const auto& cy = ys[i];
        const auto& cx = xs[i];
        for (int64_t ch = 0; ch < c; ++ch) {
          const double gv = go.at(i, ch);
          ga.at(ch, cy.lo, cx.lo) += (1 - cy.w_hi) * (1 - cx.w_hi) * gv;
          ga.at(ch, cy.lo, cx.hi) += (1 - cy.w_hi) * cx.w_hi * gv;
          ga.at(ch, cy.hi, cx.lo) += cy.w_hi * (1 - cx.w_hi) * gv;
          ga.at(ch, cy.hi, cx.hi) += cy.w_hi * cx.w_hi * gv;
        }
      }
    };
  return id;
}

}  // namespace uop
