#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uop/losses.hpp"
#include "uop/nn.hpp"
#include "uop/prompt.hpp"
#include "uop/text.hpp"

namespace uop {

struct ModelConfig {
  int64_t channels = 64;   // C, decoder width
  int64_t text_dim = 64;   // D, teacher/student width
  int64_t queries = 60;    // N (paper-scale 300 via config)
  int enc_layers = 2;
  int dec_layers = 3;
  int heads = 4;
  int levels = 3;          // strides 4, 8, 16
  int64_t ffn_mult = 4;
  int64_t vocab_size = 1024;
  int text_layers = 1;
  int text_heads = 4;
  int64_t prompt_crop = 32;
  double point_radius_frac = 0.05;
  int64_t max_fine_samples = 256;
  bool backbone_bias = true;
  uint64_t init_seed = 1;
};

uint64_t config_hash(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// plain head math (oracle-checked)

// S_align = (q_d . W_i2t) . e_t^T; q_d [N,C], W [C,D], e_t [K,D] -> [N,K].
Tensor alignment_scores(const Tensor& q_d, const Tensor& w_i2t, const Tensor& e_t);

// Per-query dot of mask embeddings against every spatial location of the
// pixel map; mask_emb [N,C], map [C,H,W] -> logits [N,H,W].
Tensor predict_masks(const Tensor& mask_embeddings, const Tensor& pixel_map);

// sigmoid of a [N,1] logit column -> scores in (0,1).
std::vector<double> predict_confidence(const Tensor& confidence_logits);

// ---------------------------------------------------------------------------

struct ForwardInputs {
  const Tensor* image = nullptr;  // [3,H,W]
  int text_node = -1;             // [K,D] tape node; -1 means K = 0
  const PromptSpec* prompt = nullptr;
  uint64_t prompt_seed = 0;
};

struct ForwardResult {
  std::vector<LayerOutputNodes> layers;  // one per decoder layer, last = final
  int pixel_map = -1;   // [C,h4,w4]
  int memory = -1;      // [T,C]
  int fine = -1;        // [S,C] fine prompt rows
  int text_node = -1;   // e_t used for alignment
  int64_t h = 0, w = 0, h4 = 0, w4 = 0;
};

struct LevelTokens {
  int node = -1;  // [h*w, C]
  int64_t h = 0, w = 0;
};

// Plain inference bundle (values copied off a no-grad tape).
struct InferenceResult {
  Tensor queries;      // [N,C]
  Tensor boxes;        // [N,4]
  Tensor s_align;      // [N,K] (0 cols when no text)
  Tensor mask_logits;  // [N, h4*w4]
  Tensor confidence;   // [N,1] logits; empty when no prompt
  int64_t h = 0, w = 0, h4 = 0, w4 = 0;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  const StudentEncoder& student() const { return student_; }

  void mount(Tape& t, const std::vector<std::string>& frozen_prefixes = {});

  // Multi-scale backbone features; image padded internally to the deepest
  // stride. Requires mount() on the same tape first.
  std::vector<LevelTokens> extract_features(Tape& t, int image_node) const;

  // One bi-directional cross-attention round between flattened features and
  // external embeddings. Returns (features', embeddings').
  std::pair<int, int> early_fusion(Tape& t, int features, int embeddings) const;

  // Level maps -> fused 1/4-resolution pixel tokens [h4*w4, C].
  int build_pixel_tokens(Tape& t, const std::vector<LevelTokens>& levels, int64_t h4,
                         int64_t w4) const;

  // Full forward. Text rows (when any) and prompt embeddings join the decoder
  // self-attention token set; S_align is computed against in.text_node.
  ForwardResult forward(Tape& t, const ForwardInputs& in);

  // Student text embeddings for a sentence list, [K,D] node.
  int encode_text(Tape& t, const std::vector<std::string>& sentences) const;
  Tensor encode_text_values(const std::vector<std::string>& sentences) const;

  // Coarse prompt path: crop -> resize -> backbone -> pooled -> projection.
  int encode_prompt_coarse(Tape& t, const Tensor& image, const PixelRect& rect) const;

  // No-grad forward returning plain tensors.
  InferenceResult infer(const Tensor& image, const std::vector<std::string>& text,
                        const PromptSpec* prompt = nullptr, uint64_t prompt_seed = 0);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  struct EncoderLayer {
    LayerNorm ln1, ln2;
    MultiheadAttention attn;
    Mlp ffn;
  };
  struct DecoderLayer {
    LayerNorm ln_sa, ln_ca, ln_ffn;
    MultiheadAttention self_attn, cross_attn;
    Mlp ffn;
  };

  ModelConfig cfg_;
  ParamStore ps_;
  StudentEncoder student_;

  // backbone
  std::vector<Linear> bb_embed_;
  std::vector<Mlp> bb_block_;
  // fusion
  MultiheadAttention fuse_f2e_, fuse_e2f_;
  Linear text_proj_;
  Linear coarse_proj_;
  int level_embed_ = -1;
  // encoder / decoder
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  LayerNorm enc_final_ln_, dec_final_ln_;
  int query_embed_ = -1;
  // heads
  std::vector<Linear> pixel_proj_;
  Mlp box_head_, mask_head_, conf_head_;
  int w_i2t_ = -1;

  int backbone_level_tokens(Tape& t, int tokens, int64_t h, int64_t w, int level) const;
};

}  // namespace uop
