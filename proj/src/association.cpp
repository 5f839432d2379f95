#include "uop/association.hpp"

#include <algorithm>
#include <cmath>

#include "uop/matching.hpp"
#include "uop/model.hpp"

namespace uop {

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  UOP_CHECK(a.size() == b.size(), "cosine_similarity: dim mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void Tracker::reset() {
  tracks_.clear();
  next_id_ = 0;
}

std::vector<int64_t> Tracker::associate_frame(const std::vector<Detection>& detections) {
  const size_t nd = detections.size();
  const size_t nt = tracks_.size();
  std::vector<int64_t> ids(nd, -1);
  std::vector<char> track_matched(nt, 0);

  if (nd > 0 && nt > 0) {
    // similarity matrix, then minimize negated cost; targets must be the
    // smaller side for hungarian_match.
    Tensor sim({static_cast<int64_t>(nd), static_cast<int64_t>(nt)});
    for (size_t i = 0; i < nd; ++i)
      for (size_t j = 0; j < nt; ++j)
        sim.at(i, j) = cosine_similarity(detections[i].embedding, tracks_[j].last_embedding);

    std::vector<std::pair<int, int>> pairs;  // (det, track)
    if (nt <= nd) {
      Tensor cost({static_cast<int64_t>(nd), static_cast<int64_t>(nt)});
      for (int64_t i = 0; i < cost.rows(); ++i)
        for (int64_t j = 0; j < cost.cols(); ++j) cost.at(i, j) = -sim.at(i, j);
      for (const auto& [q, tt] : hungarian_match(cost).pairs) pairs.emplace_back(q, tt);
    } else {
      Tensor cost({static_cast<int64_t>(nt), static_cast<int64_t>(nd)});
      for (int64_t i = 0; i < cost.rows(); ++i)
        for (int64_t j = 0; j < cost.cols(); ++j) cost.at(i, j) = -sim.at(j, i);
      for (const auto& [q, tt] : hungarian_match(cost).pairs) pairs.emplace_back(tt, q);
    }
    for (const auto& [det, trk] : pairs) {
      if (sim.at(det, trk) < cfg_.theta_sim) continue;  // below threshold: no match
      ids[det] = tracks_[trk].track_id;
      tracks_[trk].last_embedding = detections[det].embedding;
      tracks_[trk].last_score = detections[det].score;
      tracks_[trk].age = 0;
      track_matched[trk] = 1;
    }
  }

  // unmatched detections above the score gate spawn new tracks
  for (size_t i = 0; i < nd; ++i) {
    if (ids[i] >= 0) continue;
    if (detections[i].score < cfg_.theta_new) continue;
    TrackState ts;
    ts.track_id = next_id_++;
    ts.last_embedding = detections[i].embedding;
    ts.last_score = detections[i].score;
    ts.age = 0;
    tracks_.push_back(std::move(ts));
    ids[i] = tracks_.back().track_id;
  }

  // age and retire unmatched tracks
  std::vector<TrackState> kept;
  kept.reserve(tracks_.size());
  for (size_t j = 0; j < tracks_.size(); ++j) {
    const bool was_existing = j < nt;
    if (was_existing && !track_matched[j]) {
      tracks_[j].age += 1;
      if (tracks_[j].age > cfg_.max_age) continue;
    }
    kept.push_back(std::move(tracks_[j]));
  }
  tracks_ = std::move(kept);
  return ids;
}

int select_referred_query(const std::vector<double>& expr_scores, SelectionState& state,
                          const Tensor& current_embeddings, double lambda_temp) {
  UOP_CHECK(!expr_scores.empty(), "select_referred_query: need at least one query");
  UOP_CHECK(current_embeddings.rows() == static_cast<int64_t>(expr_scores.size()),
            "select_referred_query: embedding/score count mismatch");
  int best = 0;
  double best_score = -1e300;
  for (size_t i = 0; i < expr_scores.size(); ++i) {
    double s = expr_scores[i];
    if (state.prev_query_embedding) {
      std::vector<double> emb(current_embeddings.cols());
      for (int64_t c = 0; c < current_embeddings.cols(); ++c)
        emb[c] = current_embeddings.at(static_cast<int64_t>(i), c);
      s += lambda_temp * cosine_similarity(emb, *state.prev_query_embedding);
    }
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(i);
    }
  }
  std::vector<double> winner(current_embeddings.cols());
  for (int64_t c = 0; c < current_embeddings.cols(); ++c)
    winner[c] = current_embeddings.at(best, c);
  state.prev_query_embedding = std::move(winner);
  return best;
}

std::vector<VosFrame> propagate_vos(Model& model, const MaskRLE& first_frame_mask,
                                    const std::vector<Tensor>& frames, double lambda_temp) {
  UOP_CHECK(!first_frame_mask.empty_mask(), "propagate_vos: first-frame mask empty");
  UOP_CHECK(!frames.empty(), "propagate_vos: no frames");

  std::vector<VosFrame> out;
  SelectionState state;
  MaskRLE prompt_mask = first_frame_mask;
  for (size_t f = 0; f < frames.size(); ++f) {
    PromptSpec prompt;
    prompt.kind = PromptSpec::Kind::Mask;
    prompt.mask = prompt_mask;
    InferenceResult r = model.infer(frames[f], {}, &prompt, /*prompt_seed=*/f);

    const auto conf = predict_confidence(r.confidence);
    const int best = select_referred_query(conf, state, r.queries, lambda_temp);

    // decode the winning mask at full resolution
    Tape t;
    t.grad_enabled = false;
    const int logits = t.leaf(Tensor({1, r.h4, r.w4},
                                     std::vector<double>(r.mask_logits.v.begin() + best * r.h4 * r.w4,
                                                         r.mask_logits.v.begin() + (best + 1) * r.h4 * r.w4)));
    const Tensor up = t.val(t.bilinear_resize(logits, r.h, r.w));
    std::vector<uint8_t> grid(r.h * r.w, 0);
    for (int64_t i = 0; i < r.h * r.w; ++i) grid[i] = up.v[i] > 0.0 ? 1 : 0;

    VosFrame vf;
    vf.confidence = conf[best];
    MaskRLE pred = encode_rle(grid, r.h, r.w);
    if (pred.empty_mask()) {
      // keep prompting with the previous mask and flag the frame
      vf.lost = true;
      vf.mask = prompt_mask;
    } else {
      vf.mask = pred;
      prompt_mask = std::move(pred);
    }
    out.push_back(std::move(vf));
  }
  return out;
}

}  // namespace uop
