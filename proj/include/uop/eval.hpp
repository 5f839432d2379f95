#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uop/association.hpp"
#include "uop/config.hpp"
#include "uop/model.hpp"

namespace uop {

// ---------------------------------------------------------------------------
// detection / instance segmentation

struct DetPrediction {
  int image = 0;
  int category = 0;
  double score = 0.0;
  Box box;
  std::optional<MaskRLE> mask;
};

struct DetGroundTruth {
  int image = 0;
  int category = 0;
  Box box;
  std::optional<MaskRLE> mask;
};

// 11-point interpolated AP at one IoU threshold for one category;
// use_masks switches the IoU to mask IoU.
double average_precision(std::vector<DetPrediction> preds,
                         const std::vector<DetGroundTruth>& gts, double iou_threshold,
                         bool use_masks);

struct ApReport {
  std::vector<double> box_ap50, box_ap75, mask_ap50, mask_ap75;  // per category
  double mean_box_ap50 = 0, mean_box_ap75 = 0, mean_mask_ap50 = 0, mean_mask_ap75 = 0;
  std::string format() const;
};

ApReport ap_from_predictions(const std::vector<DetPrediction>& preds,
                             const std::vector<DetGroundTruth>& gts, int n_categories,
                             bool with_masks);

// Runs the model on every record; category = argmax over S_align columns,
// score = sigmoid of that logit, masks thresholded at 0.5 after upsampling.
ApReport eval_detection(Model& model, const std::vector<ImageRecord>& records,
                        const std::vector<std::string>& categories);

// Model-driven prediction dump for one image (also used by the CLI).
std::vector<DetPrediction> predict_image(Model& model, const ImageRecord& rec,
                                         const std::vector<std::string>& categories,
                                         int image_index, uint64_t render_seed);

// ---------------------------------------------------------------------------
// tracking

struct FrameDetections {
  std::vector<Detection> dets;
};

struct TrackingReport {
  double identity_accuracy = 0.0;
  double assoc_precision = 0.0;
  double assoc_recall = 0.0;
  std::string format() const;
};

// Core metric on injected detections (one entry per frame per clip), matched
// to ground truth by box IoU >= 0.5.
TrackingReport tracking_metrics(const std::vector<std::vector<FrameDetections>>& per_clip,
                                const std::vector<std::vector<std::vector<int64_t>>>& ids,
                                const std::vector<VideoClipRecord>& clips);

// Full path: per-frame inference (score-gated), query association, metrics.
TrackingReport eval_tracking(Model& model, const std::vector<VideoClipRecord>& clips,
                             const std::vector<std::string>& categories,
                             const AssociationConfig& assoc, double det_threshold = 0.5);

// Track output record stream: one line per (frame, track).
void write_track_records(const std::string& path, Model& model,
                         const std::vector<VideoClipRecord>& clips,
                         const std::vector<std::string>& categories,
                         const AssociationConfig& assoc, double det_threshold = 0.5);

// ---------------------------------------------------------------------------
// grounding + prompting

// Fraction of annotations whose referred query (argmax of S_align for the
// expression) lands on the right object at IoU >= iou_thr.
double eval_grounding(Model& model, const std::vector<ImageRecord>& records,
                      double iou_thr = 0.5);

struct PromptSegmentResult {
  MaskRLE mask;
  Box box;
  double confidence = 0.0;
  bool low_confidence = false;
  int query = -1;
};

PromptSegmentResult prompt_segment(Model& model, const Tensor& image, const PromptSpec& prompt,
                                   uint64_t prompt_seed = 0);

}  // namespace uop
