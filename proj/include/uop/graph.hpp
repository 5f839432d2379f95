#pragma once

#include <functional>
#include <vector>

#include "uop/tensor.hpp"

namespace uop {

// Reverse-mode tape. One Tape per forward pass; ops append nodes and return
// integer handles. backward() walks the tape in reverse creation order, which
// is a topological order by construction.
//
// All reductions have a fixed evaluation order, so a given binary on a given
// machine reproduces runs bit-exactly.
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When false, ops skip closure creation; forward values only.
  bool grad_enabled = true;

  int leaf(Tensor t, bool needs_grad = false);

  const Tensor& val(int id) const { return nodes_[id].val; }
  Tensor& grad(int id) { return nodes_[id].grad; }
  const std::vector<int64_t>& shape(int id) const { return nodes_[id].val.shape; }
  size_t size() const { return nodes_.size(); }

  void backward(int root);

  // ---- elementwise, same shape ----
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int scale(int a, double s);
  int add_const(int a, double c);
  int neg(int a) { return scale(a, -1.0); }

  // ---- unary elementwise ----
  int relu(int a);
  int sigmoid(int a);
  int exp_(int a);
  int log_(int a);
  int log1p_(int a);
  int softplus(int a);
  int abs_(int a);
  int pow_const(int a, double p);
  int min_el(int a, int b);
  int max_el(int a, int b);

  // ---- matrix ----
  int matmul(int a, int b);     // [m,k]x[k,n]
  int matmul_nt(int a, int b);  // [m,k]x[n,k]^T
  int matmul_tn(int a, int b);  // [k,m]^T x [k,n]
  int add_rowvec(int a, int b);  // [m,n] + [n] (or [1,n])
  int transpose(int a);
  int reshape(int a, std::vector<int64_t> shape);
  int slice_rows(int a, int64_t r0, int64_t r1);
  int slice_cols(int a, int64_t c0, int64_t c1);
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int gather_rows(int a, std::vector<int64_t> idx);
  int softmax_rows(int a);
  int layernorm_rows(int x, int gamma, int beta, double eps = 1e-5);

  // ---- reductions ----
  int sum(int a);        // -> [1]
  int mean(int a);       // -> [1]
  int mean_rows(int a);  // [m,n] -> [1,n]
  int row_sums(int a);   // [m,n] -> [m,1]

  // ---- structured ----
  // out[i,j] = b[j] - a[i]; a is [P] (or [1,P]), b is [Q] (or [1,Q]).
  int sub_outer(int a, int b);
  // CHW -> C*b^2, H/b, W/b. H, W must be divisible by b.
  int space_to_depth(int a, int block);
  // CHW -> [C, H_out, W_out], bilinear, half-pixel centers.
  int bilinear_resize(int a, int64_t h_out, int64_t w_out);
  // Sample CHW map at continuous (y, x) grid coordinates -> [S, C].
  int bilinear_sample(int a, const std::vector<std::pair<double, double>>& points);

 private:
  std::vector<Node> nodes_;

  int push(Tensor val, bool needs_grad, std::function<void()> back);
  bool want_grad(std::initializer_list<int> parents) const;
};

}  // namespace uop
