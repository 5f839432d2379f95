#pragma once

#include <optional>
#include <vector>

#include "uop/datamodel.hpp"
#include "uop/tensor.hpp"

namespace uop {

class Model;

struct TrackState {
  int64_t track_id = -1;
  std::vector<double> last_embedding;
  double last_score = 0.0;
  int age = 0;  // frames since last match
};

struct Detection {
  std::vector<double> embedding;
  double score = 0.0;
  Box box;
  std::optional<MaskRLE> mask;
  std::optional<int> category;
};

struct AssociationConfig {
  double theta_sim = 0.3;  // min cosine similarity to accept a match
  double theta_new = 0.3;  // min score to spawn a track
  int max_age = 10;        // retire tracks older than this
};

class Tracker {
 public:
  explicit Tracker(AssociationConfig cfg = {}) : cfg_(cfg) {}

  // Cosine similarity + Hungarian maximization; matched tracks take the
  // current embedding, unmatched detections above theta_new open new tracks,
  // stale tracks retire. Returns one track id per detection, -1 if none.
  std::vector<int64_t> associate_frame(const std::vector<Detection>& detections);

  const std::vector<TrackState>& tracks() const { return tracks_; }
  void reset();

 private:
  AssociationConfig cfg_;
  std::vector<TrackState> tracks_;
  int64_t next_id_ = 0;  // ids are never reused within a video
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Referred-object selection with temporal consistency: first frame is the
// plain argmax of the expression scores; later frames add
// lambda * cos(embedding_i, previous winner).
struct SelectionState {
  std::optional<std::vector<double>> prev_query_embedding;
};

int select_referred_query(const std::vector<double>& expr_scores, SelectionState& state,
                          const Tensor& current_embeddings, double lambda_temp);

// Semi-supervised mask propagation: the first-frame mask prompts the model,
// each later frame is prompted by the previous prediction. Selection score is
// confidence plus the same cosine bonus as select_referred_query.
struct VosFrame {
  MaskRLE mask;
  double confidence = 0.0;
  bool lost = false;  // prediction came up empty; prompt was reused
};

std::vector<VosFrame> propagate_vos(Model& model, const MaskRLE& first_frame_mask,
                                    const std::vector<Tensor>& frames,
                                    double lambda_temp = 1.0);

}  // namespace uop
