#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "uop/losses.hpp"
#include "uop/matching.hpp"

using namespace uop;
using namespace uop::testing;

namespace {

// Exhaustive oracle: minimum total over all target->query injections, ties
// broken by lexicographically smallest sorted (query, target) pair list.
struct BruteResult {
  double total;
  std::vector<std::pair<int, int>> pairs;
};

BruteResult brute_force(const Tensor& cost) {
  const int n = static_cast<int>(cost.rows());
  const int t = static_cast<int>(cost.cols());
  std::vector<int> queries(n);
  std::iota(queries.begin(), queries.end(), 0);
  BruteResult best{1e300, {}};
  std::vector<int> perm(queries);
  // choose t queries in order: iterate over all permutations of queries and
  // take the first t positions (dedup cost is fine at these sizes)
  std::sort(perm.begin(), perm.end());
  do {
    double total = 0;
    std::vector<std::pair<int, int>> pairs;
    for (int j = 0; j < t; ++j) {
      total += cost.at(perm[j], j);
      pairs.emplace_back(perm[j], j);
    }
    std::sort(pairs.begin(), pairs.end());
    if (total < best.total - 1e-12 ||
        (std::fabs(total - best.total) <= 1e-12 && pairs < best.pairs)) {
      best.total = total;
      best.pairs = pairs;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double total_of(const Tensor& cost, const MatchResult& m) {
  double s = 0;
  for (const auto& [q, t] : m.pairs) s += cost.at(q, t);
  return s;
}

}  // namespace

TEST_CASE("hungarian 2x2 example") {
  const Tensor cost({2, 2}, {1, 2, 2, 1});
  const MatchResult m = hungarian_match(cost);
  REQUIRE(m.pairs.size() == 2);
  CHECK(m.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(m.pairs[1] == std::pair<int, int>{1, 1});
  CHECK(total_of(cost, m) == 2.0);
}

TEST_CASE("identity-favoring diagonal cost gives the diagonal") {
  Tensor cost({4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cost.at(i, j) = i == j ? 0.0 : 5.0 + i + j;
  const MatchResult m = hungarian_match(cost);
  for (int j = 0; j < 4; ++j) CHECK(m.query_of(j) == j);
  CHECK(m.unmatched_queries.empty());
}

TEST_CASE("ties break to the lexicographically smallest assignment") {
  const Tensor flat({3, 2}, {1, 1, 1, 1, 1, 1});
  const MatchResult m = hungarian_match(flat);
  REQUIRE(m.pairs.size() == 2);
  CHECK(m.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(m.pairs[1] == std::pair<int, int>{1, 1});
  CHECK(m.unmatched_queries == std::vector<int>{2});

  // exact-representable tie where lexicographic and greedy differ
  const Tensor tie({2, 2}, {1.0, 2.0, 2.0, 1.0});
  // optimal total 2 unique; but an all-equal alternative:
  const Tensor equal({2, 2}, {3.0, 3.0, 3.0, 3.0});
  const MatchResult me = hungarian_match(equal);
  CHECK(me.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(me.pairs[1] == std::pair<int, int>{1, 1});
}

TEST_CASE("hungarian equals brute force on random costs up to 6x6") {
  Rng rng(77);
  for (int it = 0; it < 60; ++it) {
    const int t = 1 + static_cast<int>(rng.randint(5));
    const int n = t + static_cast<int>(rng.randint(3));
    Tensor cost({n, t});
    for (auto& c : cost.v) c = rng.uniform(-2, 2);
    const MatchResult m = hungarian_match(cost);
    const BruteResult b = brute_force(cost);
    CHECK(total_of(cost, m) == doctest::Approx(b.total).epsilon(1e-9));
    // lexicographic agreement
    std::vector<std::pair<int, int>> got = m.pairs;
    std::sort(got.begin(), got.end());
    CHECK(got == b.pairs);
  }
}

TEST_CASE("hungarian input validation") {
  Tensor wide({2, 3});
  CHECK_THROWS(hungarian_match(wide));  // more targets than queries
  Tensor nan({2, 2});
  nan.v[1] = std::nan("");
  CHECK_THROWS(hungarian_match(nan));
  // zero targets: everything unmatched
  const MatchResult m = hungarian_match(Tensor({3, 0}));
  CHECK(m.pairs.empty());
  CHECK(m.unmatched_queries == std::vector<int>{0, 1, 2});
}

TEST_CASE("build_match_cost composes the weighted terms") {
  Rng rng(5);
  const int n = 4, t = 2, k = 3;
  Tensor s_align({n, k});
  for (auto& x : s_align.v) x = rng.uniform(-2, 2);
  Tensor boxes({n, 4});
  for (int i = 0; i < n; ++i) {
    boxes.at(i, 0) = rng.uniform(0.3, 0.7);
    boxes.at(i, 1) = rng.uniform(0.3, 0.7);
    boxes.at(i, 2) = rng.uniform(0.1, 0.4);
    boxes.at(i, 3) = rng.uniform(0.1, 0.4);
  }
  std::vector<int> labels = {2, 0};
  std::vector<std::array<double, 4>> tboxes = {{0.4, 0.4, 0.2, 0.2}, {0.6, 0.6, 0.3, 0.3}};
  const int p = 16;
  Tensor probs({n, p});
  for (auto& x : probs.v) x = rng.uniform(0.01, 0.99);
  Tensor tmasks({t, p});
  for (auto& x : tmasks.v) x = rng.uniform() < 0.5 ? 1.0 : 0.0;

  LossWeights w;
  CostInputs in;
  in.s_align = &s_align;
  in.boxes = &boxes;
  in.labels = &labels;
  in.target_boxes = &tboxes;
  in.mask_probs = &probs;
  in.target_masks = &tmasks;
  const Tensor cost = build_match_cost(in, w);
  REQUIRE(cost.shape == std::vector<int64_t>{n, t});

  // recompose one cell from the individually tested pieces
  const int i = 1, j = 0;
  const Box pb{boxes.at(i, 0), boxes.at(i, 1), boxes.at(i, 2), boxes.at(i, 3)};
  const Box gb{tboxes[j][0], tboxes[j][1], tboxes[j][2], tboxes[j][3]};
  const auto [l1, gterm] = box_loss(pb, gb);
  const double x = s_align.at(i, labels[j]);
  const double prob = 1.0 / (1.0 + std::exp(-x));
  const double cls = w.focal_alpha * std::pow(1 - prob, w.focal_gamma) * (-std::log(prob)) -
                     (1 - w.focal_alpha) * std::pow(prob, w.focal_gamma) * (-std::log(1 - prob));
  Tensor prow({1, p}), grow({1, p});
  for (int q = 0; q < p; ++q) {
    prow.v[q] = probs.at(i, q);
    grow.v[q] = tmasks.at(j, q);
  }
  const double dice = dice_loss(prow, grow, w.dice_eps);
  std::vector<uint8_t> gt8(p);
  Tensor logits({p});
  for (int q = 0; q < p; ++q) {
    gt8[q] = grow.v[q] > 0.5 ? 1 : 0;
    logits.v[q] = std::log(prow.v[q] / (1 - prow.v[q]));
  }
  const double mf = focal_loss(logits, gt8, w.focal_alpha, w.focal_gamma);
  const double expected = w.w_cls * cls + w.w_l1 * l1 + w.w_giou * gterm + w.w_dice * dice +
                          w.w_mask_focal * mf;
  CHECK(cost.at(i, j) == doctest::Approx(expected).epsilon(1e-9));

  // zeroing w_cls removes the dependence on S_align
  LossWeights w0 = w;
  w0.w_cls = 0.0;
  const Tensor c1 = build_match_cost(in, w0);
  Tensor s2 = s_align;
  for (auto& xx : s2.v) xx += 3.0;
  CostInputs in2 = in;
  in2.s_align = &s2;
  const Tensor c2 = build_match_cost(in2, w0);
  for (int64_t q = 0; q < c1.numel(); ++q) CHECK(c1.v[q] == doctest::Approx(c2.v[q]));

  // label out of range
  std::vector<int> bad_labels = {5, 0};
  CostInputs in3 = in;
  in3.labels = &bad_labels;
  CHECK_THROWS_WITH(build_match_cost(in3, w), doctest::Contains("out of range"));
}
