#pragma once

#include <string>

#include "uop/config.hpp"
#include "uop/data.hpp"

namespace uop {

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int64_t steps_done = 0;
  bool nan_abort = false;
};

// Executes the sampling plan end to end: draw dataset -> build batch ->
// forward -> compose losses -> AdamW step, with the lr decayed once at
// decay_frac * steps. Deterministic per (config, seed). On a non-finite loss
// the last good parameters are written out and training stops.
TrainResult train(const RunConfig& cfg, Model* external_model = nullptr);

// Shared batch machinery, used by training and the grounding/prompt evals.
struct StepBatch {
  Tensor image;
  std::vector<std::string> sentences;  // text input (categories or expressions)
  TrainTargets targets;
};

// Target tensors for one image given the dataset semantics. label_of maps an
// annotation to its S_align column (-1 for none).
TrainTargets build_targets(const ImageRecord& rec,
                           const std::vector<int>& labels);

// Rasterized {0,1} rows for losses; empty tensor when no annotation has a
// mask.
Tensor stack_full_masks(const ImageRecord& rec);

}  // namespace uop
