#include "uop/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "uop/data.hpp"

namespace uop {

namespace {

MaskRLE mask_from_logits(const Tensor& logits_row, int64_t h4, int64_t w4, int64_t h,
                         int64_t w) {
  Tape t;
  t.grad_enabled = false;
  const int node = t.leaf(Tensor({1, h4, w4}, logits_row.v));
  const Tensor up = t.val(t.bilinear_resize(node, h, w));
  std::vector<uint8_t> grid(h * w);
  for (int64_t i = 0; i < h * w; ++i) grid[i] = up.v[i] > 0.0 ? 1 : 0;
  return encode_rle(grid, h, w);
}

}  // namespace

double average_precision(std::vector<DetPrediction> preds,
                         const std::vector<DetGroundTruth>& gts, double iou_threshold,
                         bool use_masks) {
  if (gts.empty()) return 0.0;
  if (preds.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(), [](const DetPrediction& a, const DetPrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.image < b.image;
  });
  // per-image gt bookkeeping
  std::map<int, std::vector<int>> gt_by_image;
  for (size_t i = 0; i < gts.size(); ++i) gt_by_image[gts[i].image].push_back(static_cast<int>(i));
  std::vector<char> taken(gts.size(), 0);

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& p : preds) {
    double best_iou = 0.0;
    int best_gt = -1;
    auto it = gt_by_image.find(p.image);
    if (it != gt_by_image.end()) {
      for (int gi : it->second) {
        if (taken[gi]) continue;
        double iou;
        if (use_masks) {
          if (!p.mask || !gts[gi].mask) continue;
          iou = mask_iou(*p.mask, *gts[gi].mask);
        } else {
          iou = box_iou(p.box, gts[gi].box);
        }
        if (iou > best_iou) {
          best_iou = iou;
          best_gt = gi;
        }
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      taken[best_gt] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  // 11-point interpolation
  double ap = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double r = static_cast<double>(k) / 10.0;
    double pmax = 0.0;
    for (size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= r) pmax = std::max(pmax, precision[i]);
    ap += pmax;
  }
  return ap / 11.0;
}

ApReport ap_from_predictions(const std::vector<DetPrediction>& preds,
                             const std::vector<DetGroundTruth>& gts, int n_categories,
                             bool with_masks) {
  ApReport rep;
  double b50 = 0, b75 = 0, m50 = 0, m75 = 0;
  int counted = 0;
  for (int c = 0; c < n_categories; ++c) {
    std::vector<DetPrediction> pc;
    std::vector<DetGroundTruth> gc;
    for (const auto& p : preds)
      if (p.category == c) pc.push_back(p);
    for (const auto& g : gts)
      if (g.category == c) gc.push_back(g);
    const double ap50 = average_precision(pc, gc, 0.5, false);
    const double ap75 = average_precision(pc, gc, 0.75, false);
    rep.box_ap50.push_back(ap50);
    rep.box_ap75.push_back(ap75);
    if (with_masks) {
      rep.mask_ap50.push_back(average_precision(pc, gc, 0.5, true));
      rep.mask_ap75.push_back(average_precision(pc, gc, 0.75, true));
    }
    if (!gc.empty()) {
      ++counted;
      b50 += ap50;
      b75 += ap75;
      if (with_masks) {
        m50 += rep.mask_ap50.back();
        m75 += rep.mask_ap75.back();
      }
    }
  }
  if (counted > 0) {
    rep.mean_box_ap50 = b50 / counted;
    rep.mean_box_ap75 = b75 / counted;
    if (with_masks) {
      rep.mean_mask_ap50 = m50 / counted;
      rep.mean_mask_ap75 = m75 / counted;
    }
  }
  return rep;
}

std::vector<DetPrediction> predict_image(Model& model, const ImageRecord& rec,
                                         const std::vector<std::string>& categories,
                                         int image_index, uint64_t render_seed) {
  const Tensor image = render_image(rec, render_seed);
  InferenceResult r = model.infer(image, categories);
  std::vector<DetPrediction> out;
  const int64_t n = r.boxes.rows();
  for (int64_t q = 0; q < n; ++q) {
    DetPrediction p;
    p.image = image_index;
    int best = 0;
    double best_logit = -1e300;
    for (int64_t k = 0; k < r.s_align.cols(); ++k)
      if (r.s_align.at(q, k) > best_logit) {
        best_logit = r.s_align.at(q, k);
        best = static_cast<int>(k);
      }
    p.category = best;
    p.score = r.s_align.cols() > 0 ? sigmoid_scalar(best_logit) : 0.0;
    p.box = Box{r.boxes.at(q, 0), r.boxes.at(q, 1), r.boxes.at(q, 2), r.boxes.at(q, 3)};
    Tensor row({r.h4 * r.w4});
    for (int64_t i = 0; i < r.h4 * r.w4; ++i) row.v[i] = r.mask_logits.at(q, i);
    p.mask = mask_from_logits(row, r.h4, r.w4, r.h, r.w);
    out.push_back(std::move(p));
  }
  return out;
}

ApReport eval_detection(Model& model, const std::vector<ImageRecord>& records,
                        const std::vector<std::string>& categories) {
  std::vector<DetPrediction> preds;
  std::vector<DetGroundTruth> gts;
  bool any_mask = false;
  for (size_t i = 0; i < records.size(); ++i) {
    const uint64_t seed = record_hash(UnifiedRecord{records[i]});
    auto p = predict_image(model, records[i], categories, static_cast<int>(i), seed);
    preds.insert(preds.end(), p.begin(), p.end());
    for (const auto& a : records[i].annotations) {
      DetGroundTruth g;
      g.image = static_cast<int>(i);
      g.category = a.category ? *a.category : 0;
      g.box = a.box;
      if (a.mask) {
        g.mask = a.mask;
        any_mask = true;
      }
      gts.push_back(std::move(g));
    }
  }
  return ap_from_predictions(preds, gts, static_cast<int>(categories.size()), any_mask);
}

std::string ApReport::format() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "box_ap50=%.9g box_ap75=%.9g mask_ap50=%.9g mask_ap75=%.9g", mean_box_ap50,
                mean_box_ap75, mean_mask_ap50, mean_mask_ap75);
  return buf;
}

// ---------------------------------------------------------------------------
// tracking

TrackingReport tracking_metrics(const std::vector<std::vector<FrameDetections>>& per_clip,
                                const std::vector<std::vector<std::vector<int64_t>>>& ids,
                                const std::vector<VideoClipRecord>& clips) {
  UOP_CHECK(per_clip.size() == clips.size() && ids.size() == clips.size(),
            "tracking_metrics: clip count mismatch");
  int64_t total_dets = 0, majority_hits = 0;
  int64_t gt_links = 0, gt_links_kept = 0, pred_links = 0, pred_links_correct = 0;

  for (size_t c = 0; c < clips.size(); ++c) {
    const auto& clip = clips[c];
    // (identity) -> list of assigned predicted ids, one per visible frame
    std::map<int64_t, std::vector<int64_t>> assigned;
    // per frame: gt index -> pred id (or -1)
    std::vector<std::map<size_t, int64_t>> frame_assign(clip.frames.size());

    for (size_t f = 0; f < clip.frames.size(); ++f) {
      const auto& frame = clip.frames[f];
      const auto& dets = per_clip[c][f].dets;
      const auto& det_ids = ids[c][f];
      // greedy IoU matching of predictions to ground truth
      std::vector<char> det_used(dets.size(), 0);
      for (size_t g = 0; g < frame.annotations.size(); ++g) {
        double best = 0.5;
        int pick = -1;
        for (size_t d = 0; d < dets.size(); ++d) {
          if (det_used[d] || det_ids[d] < 0) continue;
          const double iou = box_iou(dets[d].box, frame.annotations[g].box);
          if (iou >= best) {
            best = iou;
            pick = static_cast<int>(d);
          }
        }
        const int64_t tid = frame.annotations[g].track_id ? *frame.annotations[g].track_id
                                                          : static_cast<int64_t>(g);
        if (pick >= 0) {
          det_used[pick] = 1;
          assigned[tid].push_back(det_ids[pick]);
          frame_assign[f][g] = det_ids[pick];
        } else {
          assigned[tid].push_back(-1);
          frame_assign[f][g] = -1;
        }
        ++total_dets;
      }
    }
    // majority vote per identity
    for (const auto& [tid, list] : assigned) {
      std::map<int64_t, int64_t> counts;
      for (int64_t id : list)
        if (id >= 0) ++counts[id];
      int64_t best_count = 0, best_id = -1;
      for (const auto& [id, n] : counts)
        if (n > best_count) {
          best_count = n;
          best_id = id;
        }
      for (int64_t id : list)
        if (id >= 0 && id == best_id) ++majority_hits;
    }
    // association links over consecutive frames
    for (size_t f = 0; f + 1 < clip.frames.size(); ++f) {
      const auto& fa = clip.frames[f];
      const auto& fb = clip.frames[f + 1];
      for (size_t ga = 0; ga < fa.annotations.size(); ++ga) {
        if (!fa.annotations[ga].track_id) continue;
        for (size_t gb = 0; gb < fb.annotations.size(); ++gb) {
          if (!fb.annotations[gb].track_id) continue;
          if (*fa.annotations[ga].track_id != *fb.annotations[gb].track_id) continue;
          ++gt_links;
          const auto ia = frame_assign[f].find(ga);
          const auto ib = frame_assign[f + 1].find(gb);
          if (ia != frame_assign[f].end() && ib != frame_assign[f + 1].end() &&
              ia->second >= 0 && ia->second == ib->second)
            ++gt_links_kept;
        }
      }
      // predicted links: same pred id matched to gt in both frames
      std::map<int64_t, int64_t> a_ids, b_ids;  // pred id -> gt identity
      for (const auto& [g, id] : frame_assign[f])
        if (id >= 0 && fa.annotations[g].track_id) a_ids[id] = *fa.annotations[g].track_id;
      for (const auto& [g, id] : frame_assign[f + 1])
        if (id >= 0 && fb.annotations[g].track_id) b_ids[id] = *fb.annotations[g].track_id;
      for (const auto& [id, tid] : a_ids) {
        const auto it = b_ids.find(id);
        if (it == b_ids.end()) continue;
        ++pred_links;
        if (it->second == tid) ++pred_links_correct;
      }
    }
  }

  TrackingReport rep;
  rep.identity_accuracy =
      total_dets > 0 ? static_cast<double>(majority_hits) / static_cast<double>(total_dets) : 0.0;
  rep.assoc_recall =
      gt_links > 0 ? static_cast<double>(gt_links_kept) / static_cast<double>(gt_links) : 0.0;
  rep.assoc_precision = pred_links > 0
                            ? static_cast<double>(pred_links_correct) / static_cast<double>(pred_links)
                            : 0.0;
  return rep;
}

namespace {
std::vector<Detection> detections_from_inference(const InferenceResult& r,
                                                 double det_threshold) {
  std::vector<Detection> dets;
  for (int64_t q = 0; q < r.boxes.rows(); ++q) {
    double best_logit = -1e300;
    int best = -1;
    for (int64_t k = 0; k < r.s_align.cols(); ++k)
      if (r.s_align.at(q, k) > best_logit) {
        best_logit = r.s_align.at(q, k);
        best = static_cast<int>(k);
      }
    const double score = r.s_align.cols() > 0 ? sigmoid_scalar(best_logit) : 0.0;
    if (score < det_threshold) continue;
    Detection d;
    d.score = score;
    d.category = best;
    d.box = Box{r.boxes.at(q, 0), r.boxes.at(q, 1), r.boxes.at(q, 2), r.boxes.at(q, 3)};
    d.embedding.resize(r.queries.cols());
    for (int64_t c = 0; c < r.queries.cols(); ++c) d.embedding[c] = r.queries.at(q, c);
    Tensor row({r.h4 * r.w4});
    for (int64_t i = 0; i < r.h4 * r.w4; ++i) row.v[i] = r.mask_logits.at(q, i);
    d.mask = mask_from_logits(row, r.h4, r.w4, r.h, r.w);
    dets.push_back(std::move(d));
  }
  return dets;
}
}  // namespace

TrackingReport eval_tracking(Model& model, const std::vector<VideoClipRecord>& clips,
                             const std::vector<std::string>& categories,
                             const AssociationConfig& assoc, double det_threshold) {
  std::vector<std::vector<FrameDetections>> per_clip;
  std::vector<std::vector<std::vector<int64_t>>> ids;
  for (const auto& clip : clips) {
    Tracker tracker(assoc);
    std::vector<FrameDetections> frames;
    std::vector<std::vector<int64_t>> frame_ids;
    const uint64_t seed = record_hash(UnifiedRecord{clip});
    for (size_t f = 0; f < clip.frames.size(); ++f) {
      const Tensor image = render_image(clip.frames[f], seed ^ static_cast<uint64_t>(f));
      InferenceResult r = model.infer(image, categories);
      FrameDetections fd;
      fd.dets = detections_from_inference(r, det_threshold);
      frame_ids.push_back(tracker.associate_frame(fd.dets));
      frames.push_back(std::move(fd));
    }
    per_clip.push_back(std::move(frames));
    ids.push_back(std::move(frame_ids));
  }
  return tracking_metrics(per_clip, ids, clips);
}

void write_track_records(const std::string& path, Model& model,
                         const std::vector<VideoClipRecord>& clips,
                         const std::vector<std::string>& categories,
                         const AssociationConfig& assoc, double det_threshold) {
  std::ofstream out(path);
  UOP_CHECK(out.good(), "cannot open for writing: " + path);
  for (size_t c = 0; c < clips.size(); ++c) {
    Tracker tracker(assoc);
    const uint64_t seed = record_hash(UnifiedRecord{clips[c]});
    for (size_t f = 0; f < clips[c].frames.size(); ++f) {
      const Tensor image = render_image(clips[c].frames[f], seed ^ static_cast<uint64_t>(f));
      InferenceResult r = model.infer(image, categories);
      const auto dets = detections_from_inference(r, det_threshold);
      const auto ids = tracker.associate_frame(dets);
      for (size_t d = 0; d < dets.size(); ++d) {
        if (ids[d] < 0) continue;
        nlohmann::json j;
        j["clip"] = c;
        j["frame"] = f;
        j["track"] = ids[d];
        j["box"] = {dets[d].box.cx, dets[d].box.cy, dets[d].box.w, dets[d].box.h};
        if (dets[d].mask)
          j["mask"] = {{"h", dets[d].mask->height},
                       {"w", dets[d].mask->width},
                       {"counts", dets[d].mask->counts}};
        if (dets[d].category) j["category"] = *dets[d].category;
        j["score"] = dets[d].score;
        out << j.dump() << "\n";
      }
    }
  }
}

std::string TrackingReport::format() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "identity_accuracy=%.9g assoc_precision=%.9g assoc_recall=%.9g",
                identity_accuracy, assoc_precision, assoc_recall);
  return buf;
}

// ---------------------------------------------------------------------------

double eval_grounding(Model& model, const std::vector<ImageRecord>& records, double iou_thr) {
  int64_t total = 0, correct = 0;
  for (const auto& rec : records) {
    std::vector<std::string> exprs;
    for (const auto& a : rec.annotations) exprs.push_back(a.expression ? *a.expression : "");
    if (exprs.empty()) continue;
    const Tensor image = render_image(rec, record_hash(UnifiedRecord{rec}));
    InferenceResult r = model.infer(image, exprs);
    for (size_t k = 0; k < exprs.size(); ++k) {
      // referred query: argmax over the expression's alignment column
      int best = 0;
      double best_score = -1e300;
      for (int64_t q = 0; q < r.s_align.rows(); ++q)
        if (r.s_align.at(q, static_cast<int64_t>(k)) > best_score) {
          best_score = r.s_align.at(q, static_cast<int64_t>(k));
          best = static_cast<int>(q);
        }
      const Box pred{r.boxes.at(best, 0), r.boxes.at(best, 1), r.boxes.at(best, 2),
                     r.boxes.at(best, 3)};
      ++total;
      if (box_iou(pred, rec.annotations[k].box) >= iou_thr) ++correct;
    }
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

PromptSegmentResult prompt_segment(Model& model, const Tensor& image, const PromptSpec& prompt,
                                   uint64_t prompt_seed) {
  InferenceResult r = model.infer(image, {}, &prompt, prompt_seed);
  const auto conf = predict_confidence(r.confidence);
  int best = 0;
  for (size_t i = 1; i < conf.size(); ++i)
    if (conf[i] > conf[best]) best = static_cast<int>(i);
  PromptSegmentResult out;
  out.query = best;
  out.confidence = conf[best];
  out.low_confidence = conf[best] < 0.5;
  Tensor row({r.h4 * r.w4});
  for (int64_t i = 0; i < r.h4 * r.w4; ++i) row.v[i] = r.mask_logits.at(best, i);
  out.mask = mask_from_logits(row, r.h4, r.w4, r.h, r.w);
  out.box = Box{r.boxes.at(best, 0), r.boxes.at(best, 1), r.boxes.at(best, 2),
                r.boxes.at(best, 3)};
  return out;
}

}  // namespace uop
