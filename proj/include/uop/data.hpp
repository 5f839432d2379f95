#pragma once

#include <string>
#include <vector>

#include "uop/datamodel.hpp"
#include "uop/rng.hpp"
#include "uop/tensor.hpp"

namespace uop {

// ---------------------------------------------------------------------------
// ingestion

struct IngestResult {
  std::vector<UnifiedRecord> records;
  std::vector<std::string> rejections;  // one entry per dropped annotation
};

// format ids: det (boxes+categories), inst (boxes+masks+categories),
// ground (expressions), video (video-tracks), sa (class-agnostic masks),
// unified (re-ingest of our own files).
IngestResult ingest(const std::string& format, const std::string& path);

// ---------------------------------------------------------------------------
// sampling

struct SamplingPlan {
  std::vector<std::string> steps;  // dataset name per training step
  uint64_t seed = 0;
};

// Step t draws dataset i with probability ratio_i / sum(ratios); ratio 0 is
// never drawn. Throws when all ratios are zero.
SamplingPlan build_sampling_plan(const std::vector<DatasetDescriptor>& descriptors,
                                 uint64_t seed, int64_t steps);

void write_plan(const std::string& path, const SamplingPlan& plan);

// Two distinct frame indices (a < b) with b - a <= max_gap, uniform over all
// eligible pairs. Throws on clips shorter than 2 frames.
std::pair<int, int> sample_frame_pair(const VideoClipRecord& clip, Rng& rng, int max_gap);

// Greedy mask-IoU NMS with pixel area as score (ties by ascending index);
// returns kept indices in ascending original order.
std::vector<size_t> filter_part_level(const std::vector<MaskRLE>& masks, double iou_threshold);

// ---------------------------------------------------------------------------
// synthetic scenes

struct SyntheticSceneSpec {
  int64_t canvas = 64;  // square canvas
  std::vector<std::string> shapes = {"circle", "square", "triangle"};
  // palette is the expression color vocabulary; per_category_color ties
  // color to category instead (shape k always gets palette[k % size]).
  bool per_category_color = false;
  int min_objects = 1, max_objects = 3;
  double min_size = 0.18, max_size = 0.38;  // shape side/diameter, canvas fraction
  // which annotations to emit
  bool with_masks = true;
  bool with_categories = true;
  bool with_expressions = false;
  bool class_agnostic = false;
  // expression grammar: "the <color> <shape>" or "<position> <shape>"
  std::string grammar = "color";
  // clips
  int clip_frames = 1;  // > 1 emits VideoClipRecords with track ids
  double max_speed = 0.02, jitter = 0.003;
};

struct PaletteEntry {
  std::string name;
  double r, g, b;
};
const std::vector<PaletteEntry>& color_palette();

// Deterministic per (spec, seed); annotations always pass validate_record.
std::vector<UnifiedRecord> generate_synthetic(const SyntheticSceneSpec& spec, uint64_t seed,
                                              int64_t count);

// Pixels are derived from the record itself: each annotation's mask (or box)
// is filled with a color implied by its label, plus hash-seeded noise, so any
// unified record can be rendered reproducibly.
Tensor render_image(const ImageRecord& rec, uint64_t seed);

}  // namespace uop
