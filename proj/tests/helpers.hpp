#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uop/graph.hpp"
#include "uop/rng.hpp"
#include "uop/tensor.hpp"

namespace uop::testing {

// Builds a scalar-valued graph from mounted input nodes.
using GraphBuilder = std::function<int(Tape&, const std::vector<int>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central finite differences against tape gradients, one perturbation per
// input element. rel err uses max(|analytic|, |numeric|, 1e-8) as scale.
inline GradCheckResult gradcheck(const std::vector<Tensor>& inputs, const GraphBuilder& build,
                                 double fd_eps = 1e-6) {
  Tape tape;
  std::vector<int> nodes;
  for (const auto& in : inputs) nodes.push_back(tape.leaf(in, true));
  const int root = build(tape, nodes);
  tape.backward(root);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    t2.grad_enabled = false;
    std::vector<int> ns;
    for (const auto& x : xs) ns.push_back(t2.leaf(x, false));
    return t2.val(build(t2, ns)).v[0];
  };

  GradCheckResult res;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      const double h = fd_eps * std::max(1.0, std::fabs(inputs[i].v[j]));
      plus[i].v[j] += h;
      minus[i].v[j] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      const double an = tape.grad(nodes[i]).v[j];
      const double scale = std::max({std::fabs(an), std::fabs(fd), 1e-8});
      res.max_rel_err = std::max(res.max_rel_err, std::fabs(an - fd) / scale);
      ++res.checked;
    }
  }
  return res;
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace uop::testing
