#pragma once

#include <string>
#include <vector>

#include "uop/association.hpp"
#include "uop/losses.hpp"
#include "uop/model.hpp"
#include "uop/nn.hpp"

namespace uop {

struct RunDataset {
  DatasetDescriptor desc;
  std::vector<std::string> categories;  // category id -> name (category datasets)
};

struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";
  std::string stage = "joint";  // "pretrain" restricts to detection losses and
                                // freezes the student text encoder
  ModelConfig model;
  LossWeights losses;
  AdamWConfig adamw;
  int64_t steps = 1000;
  double decay_frac = 0.8;    // lr decays at this fraction of steps
  double decay_factor = 0.1;
  double backbone_lr_mult = 0.1;
  double text_lr_mult = 0.1;
  uint64_t teacher_seed = 42;
  size_t pad_target = 100;    // category padding size for large vocabularies
  int max_gap = 5;            // frame-pair sampling gap
  double lambda_temp = 1.0;   // temporal bonus for referred selection / VOS
  AssociationConfig assoc;
  std::vector<RunDataset> datasets;

  // problems that make the config unusable (unknown stage, inconsistent
  // descriptors, missing datasets...)
  std::vector<std::string> violations() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

}  // namespace uop
