#include "uop/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uop/losses.hpp"

namespace uop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path assignment (potentials form). cost is T x N
// (targets on the small side), every target gets a distinct query. Returns
// the optimal total; fills query_of_target when non-null.
double jv_solve(const std::vector<double>& cost, int t_count, int n_count,
                std::vector<int>* query_of_target) {
  const int n = t_count, m = n_count;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  if (query_of_target) query_of_target->assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    total += cost[(p[j] - 1) * m + (j - 1)];
    if (query_of_target) (*query_of_target)[p[j] - 1] = j - 1;
  }
  return total;
}

// Optimal total over a sub-problem given by index subsets.
double sub_optimal(const Tensor& cost, const std::vector<int>& queries,
                   const std::vector<int>& targets) {
  if (targets.empty()) return 0.0;
  const int tc = static_cast<int>(targets.size());
  const int nc = static_cast<int>(queries.size());
  std::vector<double> sub(static_cast<size_t>(tc) * nc);
  for (int a = 0; a < tc; ++a)
    for (int b = 0; b < nc; ++b) sub[a * nc + b] = cost.at(queries[b], targets[a]);
  return jv_solve(sub, tc, nc, nullptr);
}

}  // namespace

MatchResult hungarian_match(const Tensor& cost) {
  UOP_CHECK(cost.rank() == 2, "hungarian_match: cost must be 2-D");
  const int n = static_cast<int>(cost.rows());
  const int t = static_cast<int>(cost.cols());
  UOP_CHECK(t <= n, "hungarian_match: more targets than queries");
  UOP_CHECK(cost.all_finite(), "hungarian_match: cost must be finite");

  MatchResult res;
  if (t == 0) {
    for (int q = 0; q < n; ++q) res.unmatched_queries.push_back(q);
    return res;
  }

  std::vector<int> rem_queries(n), rem_targets(t);
  for (int i = 0; i < n; ++i) rem_queries[i] = i;
  for (int j = 0; j < t; ++j) rem_targets[j] = j;
  double rem_total = sub_optimal(cost, rem_queries, rem_targets);
  const double eps = 1e-9 * std::max(1.0, std::fabs(rem_total));

  // Fix pairs in lexicographic order: for each query (ascending) take the
  // smallest target that still admits an optimal completion.
  for (int q = 0; q < n && !rem_targets.empty(); ++q) {
    std::vector<int> queries_wo_q;
    queries_wo_q.reserve(rem_queries.size());
    for (int x : rem_queries)
      if (x != q) queries_wo_q.push_back(x);

    // When queries and targets are equally many, q must be matched; guard
    // against eps misses by falling back to the cheapest completion.
    const bool must_match = rem_queries.size() == rem_targets.size();
    int chosen = -1;
    double best_fallback = kInf;
    int fallback = -1;
    for (int tt : rem_targets) {
      std::vector<int> targets_wo;
      targets_wo.reserve(rem_targets.size());
      for (int y : rem_targets)
        if (y != tt) targets_wo.push_back(y);
      const double with_pair = cost.at(q, tt) + sub_optimal(cost, queries_wo_q, targets_wo);
      if (with_pair < best_fallback) {
        best_fallback = with_pair;
        fallback = tt;
      }
      if (with_pair <= rem_total + eps) {
        chosen = tt;
        break;
      }
    }
    if (chosen < 0 && must_match) chosen = fallback;
    if (chosen >= 0) {
      rem_total -= cost.at(q, chosen);
      std::vector<int> targets_wo;
      for (int y : rem_targets)
        if (y != chosen) targets_wo.push_back(y);
      res.pairs.emplace_back(q, chosen);
      rem_targets = std::move(targets_wo);
    }
    rem_queries = std::move(queries_wo_q);
  }

  std::vector<char> matched(n, 0);
  for (const auto& p : res.pairs) matched[p.first] = 1;
  for (int q = 0; q < n; ++q)
    if (!matched[q]) res.unmatched_queries.push_back(q);
  return res;
}

namespace {
// Deformable-DETR style focal class cost: pos_cost - neg_cost at the target
// column.
double focal_class_cost(double logit, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double safe_log_p = std::log(std::max(p, 1e-12));
  const double safe_log_1p = std::log(std::max(1.0 - p, 1e-12));
  const double pos = alpha * std::pow(1.0 - p, gamma) * (-safe_log_p);
  const double neg = (1.0 - alpha) * std::pow(p, gamma) * (-safe_log_1p);
  return pos - neg;
}
}  // namespace

Tensor build_match_cost(const CostInputs& in, const LossWeights& w) {
  UOP_CHECK(in.boxes && in.target_boxes, "build_match_cost: boxes required");
  const int64_t n = in.boxes->rows();
  const auto t = static_cast<int64_t>(in.target_boxes->size());
  Tensor cost({n, t});
  const int64_t k = in.s_align ? in.s_align->cols() : 0;
  for (int64_t j = 0; j < t; ++j) {
    int label = -1;
    if (in.labels && j < static_cast<int64_t>(in.labels->size())) label = (*in.labels)[j];
    if (label >= 0) UOP_CHECK(label < k, "build_match_cost: label column out of range");
    const auto& tb = (*in.target_boxes)[j];
    const Box gt{tb[0], tb[1], tb[2], tb[3]};
    for (int64_t i = 0; i < n; ++i) {
      double c = 0.0;
      if (label >= 0 && w.w_cls != 0.0)
        c += w.w_cls * focal_class_cost(in.s_align->at(i, label), w.focal_alpha, w.focal_gamma);
      const Box pb{in.boxes->at(i, 0), in.boxes->at(i, 1), in.boxes->at(i, 2),
                   in.boxes->at(i, 3)};
      const auto [l1, giou_term] = box_loss(pb, gt);
      c += w.w_l1 * l1 + w.w_giou * giou_term;
      if (in.mask_probs && in.target_masks) {
        const int64_t p = in.mask_probs->cols();
        // dice
        double inter = 0.0, psum = 0.0, gsum = 0.0, mf = 0.0;
        const double* pr = in.mask_probs->v.data() + i * p;
        const double* gr = in.target_masks->v.data() + j * p;
        for (int64_t x = 0; x < p; ++x) {
          inter += pr[x] * gr[x];
          psum += pr[x];
          gsum += gr[x];
          const double prob = std::min(std::max(pr[x], 1e-12), 1.0 - 1e-12);
          if (gr[x] > 0.5)
            mf += w.focal_alpha * std::pow(1.0 - prob, w.focal_gamma) * (-std::log(prob));
          else
            mf += (1.0 - w.focal_alpha) * std::pow(prob, w.focal_gamma) * (-std::log(1.0 - prob));
        }
        const double dice = 1.0 - (2.0 * inter + w.dice_eps) / (psum + gsum + w.dice_eps);
        c += w.w_dice * dice + w.w_mask_focal * (mf / static_cast<double>(p));
      }
      cost.at(i, j) = c;
    }
  }
  return cost;
}

}  // namespace uop
