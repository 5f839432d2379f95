#include "uop/losses.hpp"

#include <cmath>
#include <cstdio>

namespace uop {

// ---------------------------------------------------------------------------
// plain reference forms

double focal_loss(const Tensor& logits, const std::vector<uint8_t>& targets, double alpha,
                  double gamma) {
  UOP_CHECK(logits.numel() == static_cast<int64_t>(targets.size()),
            "focal_loss: logits/targets size mismatch");
  UOP_CHECK(logits.numel() > 0, "focal_loss: empty input");
  double total = 0.0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double x = logits.v[i];
    const double p = 1.0 / (1.0 + std::exp(-x));
    const double log_p = -std::log(std::max(p, 1e-300));
    const double log_1p = -std::log(std::max(1.0 - p, 1e-300));
    if (targets[i])
      total += alpha * std::pow(1.0 - p, gamma) * log_p;
    else
      total += (1.0 - alpha) * std::pow(p, gamma) * log_1p;
  }
  return total / static_cast<double>(logits.numel());
}

double giou(const Box& a, const Box& b) {
  const double ax0 = a.cx - 0.5 * a.w, ax1 = a.cx + 0.5 * a.w;
  const double ay0 = a.cy - 0.5 * a.h, ay1 = a.cy + 0.5 * a.h;
  const double bx0 = b.cx - 0.5 * b.w, bx1 = b.cx + 0.5 * b.w;
  const double by0 = b.cy - 0.5 * b.h, by1 = b.cy + 0.5 * b.h;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double iou = inter / uni;
  const double hull_w = std::max(ax1, bx1) - std::min(ax0, bx0);
  const double hull_h = std::max(ay1, by1) - std::min(ay0, by0);
  const double hull = hull_w * hull_h;
  return iou - (hull - uni) / hull;
}

std::pair<double, double> box_loss(const Box& pred, const Box& gt) {
  const double l1 = (std::fabs(pred.cx - gt.cx) + std::fabs(pred.cy - gt.cy) +
                     std::fabs(pred.w - gt.w) + std::fabs(pred.h - gt.h)) /
                    4.0;
  return {l1, 1.0 - giou(pred, gt)};
}

double dice_loss(const Tensor& probs, const Tensor& gt, double eps) {
  UOP_CHECK(probs.same_shape(gt), "dice_loss: shape mismatch");
  double inter = 0.0, ps = 0.0, gs = 0.0;
  for (int64_t i = 0; i < probs.numel(); ++i) {
    inter += probs.v[i] * gt.v[i];
    ps += probs.v[i];
    gs += gt.v[i];
  }
  return 1.0 - (2.0 * inter + eps) / (ps + gs + eps);
}

double contrastive_tracking_loss(const std::vector<double>& v,
                                 const std::vector<std::vector<double>>& positives,
                                 const std::vector<std::vector<double>>& negatives) {
  if (negatives.empty()) return 0.0;
  UOP_CHECK(!positives.empty(),
            "contrastive_tracking_loss: negatives without positives is undefined");
  auto dot = [&](const std::vector<double>& k) {
    UOP_CHECK(k.size() == v.size(), "contrastive_tracking_loss: dim mismatch");
    double s = 0.0;
    for (size_t i = 0; i < v.size(); ++i) s += v[i] * k[i];
    return s;
  };
  double total = 0.0;
  for (const auto& kp : positives) {
    const double sp = dot(kp);
    for (const auto& kn : negatives) total += std::exp(dot(kn) - sp);
  }
  return std::log1p(total);
}

// ---------------------------------------------------------------------------
// tape builders

int focal_loss_node(Tape& t, int logits, const Tensor& targets, double alpha, double gamma) {
  UOP_CHECK(t.val(logits).numel() == targets.numel(), "focal_loss_node: size mismatch");
  UOP_CHECK(targets.numel() > 0, "focal_loss_node: empty input");
  Tensor pos_mask(t.val(logits).shape);
  Tensor neg_mask(t.val(logits).shape);
  for (int64_t i = 0; i < targets.numel(); ++i) {
    pos_mask.v[i] = targets.v[i] > 0.5 ? 1.0 : 0.0;
    neg_mask.v[i] = 1.0 - pos_mask.v[i];
  }
  const int pm = t.leaf(std::move(pos_mask));
  const int nm = t.leaf(std::move(neg_mask));
  const int p = t.sigmoid(logits);
  const int one = t.leaf(Tensor::full(t.val(logits).shape, 1.0));
  // -log(p) = softplus(-x), -log(1-p) = softplus(x)
  const int ce_pos = t.softplus(t.neg(logits));
  const int ce_neg = t.softplus(logits);
  const int mod_pos = t.pow_const(t.sub(one, p), gamma);
  const int mod_neg = t.pow_const(p, gamma);
  const int lp = t.scale(t.mul(mod_pos, ce_pos), alpha);
  const int ln = t.scale(t.mul(mod_neg, ce_neg), 1.0 - alpha);
  return t.mean(t.add(t.mul(pm, lp), t.mul(nm, ln)));
}

namespace {
struct BoxCols {
  int x0, y0, x1, y1, area;
};

BoxCols box_corners(Tape& t, int boxes) {
  const int cx = t.slice_cols(boxes, 0, 1);
  const int cy = t.slice_cols(boxes, 1, 2);
  const int w = t.slice_cols(boxes, 2, 3);
  const int h = t.slice_cols(boxes, 3, 4);
  const int hw = t.scale(w, 0.5);
  const int hh = t.scale(h, 0.5);
  BoxCols c;
  c.x0 = t.sub(cx, hw);
  c.x1 = t.add(cx, hw);
  c.y0 = t.sub(cy, hh);
  c.y1 = t.add(cy, hh);
  c.area = t.mul(w, h);
  return c;
}
}  // namespace

std::pair<int, int> box_loss_nodes(Tape& t, int pred, int gt) {
  UOP_CHECK(t.val(pred).same_shape(t.val(gt)), "box_loss_nodes: shape mismatch");
  const int l1 = t.mean(t.abs_(t.sub(pred, gt)));
  const BoxCols a = box_corners(t, pred);
  const BoxCols b = box_corners(t, gt);
  const int iw = t.relu(t.sub(t.min_el(a.x1, b.x1), t.max_el(a.x0, b.x0)));
  const int ih = t.relu(t.sub(t.min_el(a.y1, b.y1), t.max_el(a.y0, b.y0)));
  const int inter = t.mul(iw, ih);
  const int uni = t.add_const(t.sub(t.add(a.area, b.area), inter), 1e-12);
  const int iou = t.div(inter, uni);
  const int hull_w = t.sub(t.max_el(a.x1, b.x1), t.min_el(a.x0, b.x0));
  const int hull_h = t.sub(t.max_el(a.y1, b.y1), t.min_el(a.y0, b.y0));
  const int hull = t.add_const(t.mul(hull_w, hull_h), 1e-12);
  const int giou_col = t.sub(iou, t.div(t.sub(hull, uni), hull));
  const int one = t.leaf(Tensor::full(t.val(giou_col).shape, 1.0));
  const int giou_term = t.mean(t.sub(one, giou_col));
  return {l1, giou_term};
}

int dice_loss_node(Tape& t, int probs, int gt, double eps) {
  UOP_CHECK(t.val(probs).same_shape(t.val(gt)), "dice_loss_node: shape mismatch");
  const int inter = t.row_sums(t.mul(probs, gt));
  const int denom = t.add(t.row_sums(probs), t.row_sums(gt));
  const int num = t.add_const(t.scale(inter, 2.0), eps);
  const int frac = t.div(num, t.add_const(denom, eps));
  const int one = t.leaf(Tensor::full(t.val(frac).shape, 1.0));
  return t.mean(t.sub(one, frac));
}

int contrastive_node(Tape& t, int v, int kplus, int kminus) {
  const int64_t q = t.val(kminus).rows();
  if (q == 0) return t.leaf(Tensor::scalar(0.0));
  UOP_CHECK(t.val(kplus).rows() > 0,
            "contrastive_node: negatives without positives is undefined");
  const int s_plus = t.matmul_nt(v, kplus);    // [1,P]
  const int s_minus = t.matmul_nt(v, kminus);  // [1,Q]
  const int diffs = t.sub_outer(s_plus, s_minus);  // [P,Q] = minus_j - plus_i
  return t.log1p_(t.sum(t.exp_(diffs)));
}

int distillation_node(Tape& t, int student, const Tensor& teacher) {
  UOP_CHECK(t.val(student).same_shape(teacher), "distillation_node: shape mismatch");
  const int64_t k = teacher.rows();
  const int tt = t.leaf(teacher);
  return t.scale(t.sum(t.abs_(t.sub(student, tt))), 1.0 / static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// composition

namespace {

void append_scalar(std::string& s, const char* name, const std::optional<double>& v) {
  if (!v) return;
  char buf[64];
  std::snprintf(buf, sizeof(buf), " %s=%.9g", name, *v);
  s += buf;
}

struct Accum {
  Tape& t;
  int total = -1;
  void add(int node, double weight) {
    if (node < 0) return;
    const int scaled = t.scale(node, weight);
    total = total < 0 ? scaled : t.add(total, scaled);
  }
};

// Detection-style terms for one frame, summed over decoder layers.
void frame_losses(Tape& t, const LossWeights& w, const LossMask& mask,
                  const FrameLossInputs& f, int prompt_target, LossReport& rep, Accum& acc) {
  const auto& layers = *f.layers;
  const auto& tg = *f.targets;
  const auto& matches = *f.matches;
  UOP_CHECK(layers.size() == matches.size(), "compose_losses: layer/match count mismatch");

  for (size_t li = 0; li < layers.size(); ++li) {
    const auto& lo = layers[li];
    const auto& m = matches[li];

    if (mask.semantic && lo.s_align >= 0 && t.val(lo.s_align).cols() > 0) {
      Tensor targets(t.val(lo.s_align).shape);
      for (const auto& [q, tj] : m.pairs) {
        const int label = tg.labels[tj];
        if (label >= 0) targets.at(q, label) = 1.0;
      }
      const int sem = focal_loss_node(t, lo.s_align, targets, w.focal_alpha, w.focal_gamma);
      rep.semantic = rep.semantic.value_or(0.0) + t.val(sem).v[0];
      acc.add(sem, w.w_cls);
    }

    if (!m.pairs.empty()) {
      std::vector<int64_t> qidx;
      std::vector<int64_t> tidx;
      for (const auto& [q, tj] : m.pairs) {
        qidx.push_back(q);
        tidx.push_back(tj);
      }
      if (mask.box) {
        const int pred = t.gather_rows(lo.boxes, qidx);
        Tensor gt({static_cast<int64_t>(tidx.size()), 4});
        for (size_t i = 0; i < tidx.size(); ++i)
          for (int c = 0; c < 4; ++c) gt.at(i, c) = tg.boxes[tidx[i]][c];
        const auto [l1, gterm] = box_loss_nodes(t, pred, t.leaf(std::move(gt)));
        rep.box_l1 = rep.box_l1.value_or(0.0) + t.val(l1).v[0];
        rep.box_giou = rep.box_giou.value_or(0.0) + t.val(gterm).v[0];
        acc.add(l1, w.w_l1);
        acc.add(gterm, w.w_giou);
      }
      if (mask.mask && lo.mask_logits >= 0 && tg.masks_full.numel() > 0) {
        // Gather matched mask logits, upsample 1/4 -> full, supervise there.
        const int sel = t.gather_rows(lo.mask_logits, qidx);
        const auto tm = static_cast<int64_t>(tidx.size());
        const int as_chw = t.reshape(sel, {tm, tg.h4, tg.w4});
        const int up = t.bilinear_resize(as_chw, tg.h, tg.w);
        const int flat = t.reshape(up, {tm, tg.h * tg.w});
        Tensor gt({tm, tg.h * tg.w});
        for (int64_t i = 0; i < tm; ++i)
          for (int64_t px = 0; px < tg.h * tg.w; ++px)
            gt.at(i, px) = tg.masks_full.at(tidx[i], px);
        const int probs = t.sigmoid(flat);
        const int gt_leaf = t.leaf(gt);
        const int dice = dice_loss_node(t, probs, gt_leaf, w.dice_eps);
        const int mf = focal_loss_node(t, flat, gt, w.focal_alpha, w.focal_gamma);
        rep.mask_dice = rep.mask_dice.value_or(0.0) + t.val(dice).v[0];
        rep.mask_focal = rep.mask_focal.value_or(0.0) + t.val(mf).v[0];
        acc.add(dice, w.w_dice);
        acc.add(mf, w.w_mask_focal);
      }
    } else {
      if (mask.box) {
        rep.box_l1 = rep.box_l1.value_or(0.0);
        rep.box_giou = rep.box_giou.value_or(0.0);
      }
      if (mask.mask) {
        rep.mask_dice = rep.mask_dice.value_or(0.0);
        rep.mask_focal = rep.mask_focal.value_or(0.0);
      }
    }
  }

  // Confidence: last layer only; positive = queries matched to the prompted
  // target.
  if (mask.confidence) {
    const auto& last = layers.back();
    if (last.confidence >= 0) {
      Tensor targets(t.val(last.confidence).shape);
      if (prompt_target >= 0) {
        const int mq = matches.back().query_of(prompt_target);
        if (mq >= 0) targets.v[mq] = 1.0;
      }
      const int conf = focal_loss_node(t, last.confidence, targets, w.focal_alpha, w.focal_gamma);
      rep.confidence = rep.confidence.value_or(0.0) + t.val(conf).v[0];
      acc.add(conf, w.w_conf);
    }
  }
}

}  // namespace

std::pair<LossReport, int> compose_losses(Tape& t, const LossWeights& w, const LossMask& mask,
                                          const ComposeInputs& in) {
  LossReport rep;
  Accum acc{t};

  UOP_CHECK(in.key.layers && in.key.targets && in.key.matches,
            "compose_losses: key frame inputs required");
  // Required annotations must back every requested loss.
  if (mask.box) UOP_CHECK(!in.key.targets->boxes.empty() || in.key.targets->size() == 0,
                          "compose_losses: box loss without boxes");
  if (mask.mask)
    UOP_CHECK(in.key.targets->size() == 0 || in.key.targets->masks_full.numel() > 0,
              "compose_losses: mask loss requested without mask annotations");
  if (mask.tracking)
    UOP_CHECK(in.ref.has_value(), "compose_losses: tracking loss requires a reference frame");
  if (mask.distillation)
    UOP_CHECK(in.student_node >= 0 && in.teacher_rows,
              "compose_losses: distillation requires student/teacher rows");

  frame_losses(t, w, mask, in.key, in.prompt_target, rep, acc);
  if (in.ref) frame_losses(t, w, mask, *in.ref, -1, rep, acc);

  if (mask.tracking && in.ref) {
    const auto& key_last = in.key.layers->back();
    const auto& ref_last = in.ref->layers->back();
    const auto& key_match = in.key.matches->back();
    const auto& ref_match = in.ref->matches->back();
    const auto& key_tg = *in.key.targets;
    const auto& ref_tg = *in.ref->targets;

    int track_total = -1;
    int terms = 0;
    for (const auto& [kq, kt] : key_match.pairs) {
      const int64_t tid = key_tg.track_ids[kt];
      if (tid < 0) continue;
      // positives: ref queries of the same identity; negatives: other matched
      // ref queries.
      std::vector<int64_t> pos, neg;
      for (const auto& [rq, rt] : ref_match.pairs) {
        if (ref_tg.track_ids[rt] == tid)
          pos.push_back(rq);
        else
          neg.push_back(rq);
      }
      if (pos.empty() || neg.empty()) continue;
      const int v = t.gather_rows(key_last.queries, {kq});
      const int kp = t.gather_rows(ref_last.queries, pos);
      const int kn = t.gather_rows(ref_last.queries, neg);
      const int term = contrastive_node(t, v, kp, kn);
      track_total = track_total < 0 ? term : t.add(track_total, term);
      ++terms;
    }
    if (terms > 0) {
      const int tr = t.scale(track_total, 1.0 / static_cast<double>(terms));
      rep.tracking = t.val(tr).v[0];
      acc.add(tr, w.w_track);
    } else {
      rep.tracking = 0.0;
    }
  }

  if (mask.distillation) {
    const int d = distillation_node(t, in.student_node, *in.teacher_rows);
    rep.distillation = t.val(d).v[0];
    acc.add(d, w.w_distill);
  }

  rep.total = acc.total >= 0 ? t.val(acc.total).v[0] : 0.0;
  return {rep, acc.total};
}

std::string LossReport::format() const {
  std::string s;
  append_scalar(s, "semantic", semantic);
  append_scalar(s, "box_l1", box_l1);
  append_scalar(s, "box_giou", box_giou);
  append_scalar(s, "mask_dice", mask_dice);
  append_scalar(s, "mask_focal", mask_focal);
  append_scalar(s, "confidence", confidence);
  append_scalar(s, "tracking", tracking);
  append_scalar(s, "distillation", distillation);
  char buf[64];
  std::snprintf(buf, sizeof(buf), " total=%.9g", total);
  s += buf;
  return s;
}

}  // namespace uop
