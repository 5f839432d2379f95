#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "uop/datamodel.hpp"
#include "uop/graph.hpp"
#include "uop/matching.hpp"

namespace uop {

struct LossWeights {
  double w_cls = 2.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  double w_dice = 5.0;
  double w_mask_focal = 5.0;
  double w_conf = 2.0;
  double w_track = 2.0;
  double w_distill = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;
};

// ---------------------------------------------------------------------------
// plain (non-differentiable) reference forms, shared by matching and eval

// Mean over M of the standard focal form on logits.
double focal_loss(const Tensor& logits, const std::vector<uint8_t>& targets, double alpha,
                  double gamma);

// IoU - |hull \ union| / |hull| on center-format boxes, in (-1, 1].
double giou(const Box& a, const Box& b);

// (mean-abs over 4 coords, 1 - giou).
std::pair<double, double> box_loss(const Box& pred, const Box& gt);

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps); probs in [0,1].
double dice_loss(const Tensor& probs, const Tensor& gt, double eps = 1.0);

// log(1 + sum_{k+} sum_{k-} exp(v.k- - v.k+)). Empty negatives -> 0;
// empty positives with nonempty negatives -> error.
double contrastive_tracking_loss(const std::vector<double>& v,
                                 const std::vector<std::vector<double>>& positives,
                                 const std::vector<std::vector<double>>& negatives);

// ---------------------------------------------------------------------------
// tape builders (training path; gradient-checked against finite differences)

// logits node of any shape, targets {0,1} same shape; mean reduction.
int focal_loss_node(Tape& t, int logits, const Tensor& targets, double alpha, double gamma);

// pred/gt [T,4] center-format; returns (l1 node, giou_term node), means over T.
std::pair<int, int> box_loss_nodes(Tape& t, int pred, int gt);

// probs/gt [T,P]; mean of per-row dice.
int dice_loss_node(Tape& t, int probs, int gt, double eps);

// v [1,C], kplus [P,C], kminus [Q,C].
int contrastive_node(Tape& t, int v, int kplus, int kminus);

// student [K,D] node, teacher [K,D] leaf values; (1/K) sum_i |s_i - t_i|_1.
int distillation_node(Tape& t, int student, const Tensor& teacher);

// ---------------------------------------------------------------------------
// per-step composition

struct LayerOutputNodes {
  int s_align = -1;      // [N,K]
  int boxes = -1;        // [N,4], sigmoid applied
  int mask_logits = -1;  // [N,H4*W4]
  int confidence = -1;   // [N,1] logits, last layer only
  int queries = -1;      // [N,C] decoder embedding
};

struct TrainTargets {
  std::vector<int> labels;  // column in S_align, -1 when no text
  std::vector<std::array<double, 4>> boxes;
  Tensor masks_full;  // [T, H*W] {0,1}; numel 0 when unavailable
  Tensor masks_q;     // [T, H4*W4] {0,1}, quarter-resolution (matching costs)
  std::vector<int64_t> track_ids;  // -1 when absent
  int64_t h = 0, w = 0, h4 = 0, w4 = 0;
  size_t size() const { return boxes.size(); }
};

struct FrameLossInputs {
  const std::vector<LayerOutputNodes>* layers = nullptr;
  const TrainTargets* targets = nullptr;
  const std::vector<MatchResult>* matches = nullptr;  // one per layer
};

struct ComposeInputs {
  FrameLossInputs key;
  std::optional<FrameLossInputs> ref;  // second frame of a video step
  int student_node = -1;               // [K,D] when the student encoder ran
  const Tensor* teacher_rows = nullptr;
  int prompt_target = -1;  // index into key targets for the confidence loss
};

struct LossReport {
  std::optional<double> semantic, box_l1, box_giou, mask_dice, mask_focal, confidence,
      tracking, distillation;
  double total = 0.0;
  std::string format() const;  // fixed field order, fixed float format
};

// Activates exactly the descriptor's loss mask; returns the report plus the
// scalar total node (-1 if nothing was active). Per-term report values are
// summed over decoder layers so that total == sum(w_i * loss_i) holds.
std::pair<LossReport, int> compose_losses(Tape& t, const LossWeights& w,
                                          const LossMask& mask, const ComposeInputs& in);

}  // namespace uop
