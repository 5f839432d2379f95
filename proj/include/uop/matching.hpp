#pragma once

#include <array>
#include <utility>
#include <vector>

#include "uop/tensor.hpp"

namespace uop {

struct LossWeights;

// (query, target) pairs, sorted by query index. Every target appears exactly
// once, every query at most once.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_queries;

  // target -> query lookup, -1 when absent.
  int query_of(int target) const {
    for (const auto& p : pairs)
      if (p.second == target) return p.first;
    return -1;
  }
};

// Minimum-cost assignment of all T targets (columns) to distinct queries
// (rows), T <= N. Among optimal assignments, returns the one whose sorted
// (query, target) pair list is lexicographically smallest.
MatchResult hungarian_match(const Tensor& cost);

struct CostInputs {
  const Tensor* s_align = nullptr;    // [N,K] raw logits; null when K == 0
  const Tensor* boxes = nullptr;      // [N,4] cx cy w h
  const Tensor* mask_probs = nullptr; // [N,P] sigmoid probs at mask resolution
  const std::vector<int>* labels = nullptr;                   // per-target column
  const std::vector<std::array<double, 4>>* target_boxes = nullptr;
  const Tensor* target_masks = nullptr;  // [T,P] {0,1}
};

// w_cls * focal-style class cost + w_l1 * L1 + w_giou * (1 - giou)
// + mask terms when masks are present.
Tensor build_match_cost(const CostInputs& in, const LossWeights& w);

}  // namespace uop
