#include "uop/model.hpp"

#include <cmath>

#include "uop/kernels.hpp"
#include <cstring>
#include <fstream>
#include <sstream>

namespace uop {

uint64_t config_hash(const ModelConfig& cfg) {
  std::ostringstream os;
  os << cfg.channels << "|" << cfg.text_dim << "|" << cfg.queries << "|" << cfg.enc_layers
     << "|" << cfg.dec_layers << "|" << cfg.heads << "|" << cfg.levels << "|" << cfg.ffn_mult
     << "|" << cfg.vocab_size << "|" << cfg.text_layers << "|" << cfg.text_heads << "|"
     << cfg.prompt_crop << "|" << cfg.point_radius_frac << "|" << cfg.max_fine_samples << "|"
     << cfg.backbone_bias;
  return fnv1a(os.str());
}

Tensor alignment_scores(const Tensor& q_d, const Tensor& w_i2t, const Tensor& e_t) {
  UOP_CHECK(q_d.rank() == 2 && w_i2t.rank() == 2 && e_t.rank() == 2,
            "alignment_scores: need matrices");
  UOP_CHECK(q_d.cols() == w_i2t.rows() && w_i2t.cols() == e_t.cols(),
            "alignment_scores: shape mismatch");
  const int64_t n = q_d.rows(), c = q_d.cols(), d = w_i2t.cols(), k = e_t.rows();
  Tensor proj({n, d});
  kernels::active().gemm_nn(n, d, c, q_d.v.data(), w_i2t.v.data(), proj.v.data(), false);
  Tensor out({n, k});
  kernels::active().gemm_nt(n, k, d, proj.v.data(), e_t.v.data(), out.v.data(), false);
  return out;
}

Tensor predict_masks(const Tensor& mask_embeddings, const Tensor& pixel_map) {
  UOP_CHECK(mask_embeddings.rank() == 2 && pixel_map.rank() == 3, "predict_masks: bad ranks");
  UOP_CHECK(mask_embeddings.cols() == pixel_map.shape[0], "predict_masks: channel mismatch");
  const int64_t n = mask_embeddings.rows(), c = mask_embeddings.cols();
  const int64_t h = pixel_map.shape[1], w = pixel_map.shape[2];
  Tensor out({n, h, w});
  for (int64_t q = 0; q < n; ++q)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int64_t ch = 0; ch < c; ++ch)
          acc += mask_embeddings.at(q, ch) * pixel_map.at(ch, y, x);
        out.at(q, y, x) = acc;
      }
  return out;
}

std::vector<double> predict_confidence(const Tensor& confidence_logits) {
  std::vector<double> out(confidence_logits.numel());
  for (int64_t i = 0; i < confidence_logits.numel(); ++i)
    out[i] = sigmoid_scalar(confidence_logits.v[i]);
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  Rng rng(fnv1a("model-init", cfg.init_seed));
  const int64_t c = cfg.channels;

  for (int l = 0; l < cfg.levels; ++l) {
    const int64_t in = l == 0 ? 3 * 16 : c * 4;
    bb_embed_.push_back(Linear::create(ps_, "backbone.embed" + std::to_string(l), in, c,
                                       cfg.backbone_bias, rng));
    bb_block_.push_back(Mlp::create(ps_, "backbone.block" + std::to_string(l), {c, 2 * c, c},
                                    cfg.backbone_bias, rng));
  }
  level_embed_ = ps_.create("encoder.level_embed", Tensor::randn({cfg.levels, c}, rng, 0.02));

  student_ = StudentEncoder(ps_, "text.student", cfg.vocab_size, cfg.text_dim, cfg.text_layers,
                            cfg.text_heads, rng, 1.0);
  text_proj_ = Linear::create(ps_, "fusion.text_proj", cfg.text_dim, c, true, rng);
  coarse_proj_ = Linear::create(ps_, "fusion.coarse_proj", c, c, true, rng);
  // value/output projections bias-free: zero embeddings contribute exactly 0
  fuse_f2e_ = MultiheadAttention::create(ps_, "fusion.f2e", c, cfg.heads, rng, true, false);
  fuse_e2f_ = MultiheadAttention::create(ps_, "fusion.e2f", c, cfg.heads, rng, true, false);

  for (int l = 0; l < cfg.enc_layers; ++l) {
    EncoderLayer e;
    const std::string base = "encoder.layer" + std::to_string(l);
    e.ln1 = LayerNorm::create(ps_, base + ".ln1", c);
    e.ln2 = LayerNorm::create(ps_, base + ".ln2", c);
    e.attn = MultiheadAttention::create(ps_, base + ".attn", c, cfg.heads, rng, true, true);
    e.ffn = Mlp::create(ps_, base + ".ffn", {c, cfg.ffn_mult * c, c}, true, rng);
    enc_.push_back(e);
  }
  enc_final_ln_ = LayerNorm::create(ps_, "encoder.final_ln", c);

  for (int l = 0; l < cfg.dec_layers; ++l) {
    DecoderLayer d;
    const std::string base = "decoder.layer" + std::to_string(l);
    d.ln_sa = LayerNorm::create(ps_, base + ".ln_sa", c);
    d.ln_ca = LayerNorm::create(ps_, base + ".ln_ca", c);
    d.ln_ffn = LayerNorm::create(ps_, base + ".ln_ffn", c);
    d.self_attn = MultiheadAttention::create(ps_, base + ".self", c, cfg.heads, rng, true, true);
    d.cross_attn = MultiheadAttention::create(ps_, base + ".cross", c, cfg.heads, rng, true, true);
    d.ffn = Mlp::create(ps_, base + ".ffn", {c, cfg.ffn_mult * c, c}, true, rng);
    dec_.push_back(d);
  }
  dec_final_ln_ = LayerNorm::create(ps_, "decoder.final_ln", c);
  query_embed_ = ps_.create("decoder.query_embed", Tensor::randn({cfg.queries, c}, rng, 1.0));

  for (int l = 0; l < cfg.levels; ++l)
    pixel_proj_.push_back(
        Linear::create(ps_, "pixel.proj" + std::to_string(l), c, c, false, rng));

  box_head_ = Mlp::create(ps_, "heads.box", {c, c, c, 4}, true, rng);
  mask_head_ = Mlp::create(ps_, "heads.mask", {c, c, c, c}, true, rng);
  conf_head_ = Mlp::create(ps_, "heads.confidence", {c, c, 1}, true, rng);
  w_i2t_ = ps_.create("heads.w_i2t", xavier_init(c, cfg.text_dim, rng));
}

void Model::mount(Tape& t, const std::vector<std::string>& frozen_prefixes) {
  ps_.mount(t, frozen_prefixes);
}

int Model::backbone_level_tokens(Tape& t, int tokens, int64_t h, int64_t w, int level) const {
  // tokens [h*w, in] -> embed -> residual MLP block
  int x = bb_embed_[level].apply(t, ps_, tokens);
  x = t.add(x, bb_block_[level].apply(t, ps_, x));
  return x;
}

std::vector<LevelTokens> Model::extract_features(Tape& t, int image_node) const {
  const auto& img = t.val(image_node);
  UOP_CHECK(img.rank() == 3 && img.shape[0] == 3, "extract_features: need [3,H,W]");
  UOP_CHECK(img.shape[1] > 0 && img.shape[2] > 0, "extract_features: non-positive dims");
  // Padding to the deepest stride happens before the tape (callers use
  // pad_image); here the shape must already divide.
  const int64_t stride = 4LL << (cfg_.levels - 1);
  UOP_CHECK(img.shape[1] % stride == 0 && img.shape[2] % stride == 0,
            "extract_features: image not padded to stride " + std::to_string(stride));

  std::vector<LevelTokens> out;
  // stem: 4x4 patches
  int chw = t.space_to_depth(image_node, 4);  // [48, H/4, W/4]
  int64_t h = img.shape[1] / 4, w = img.shape[2] / 4;
  int tokens = t.transpose(t.reshape(chw, {3 * 16, h * w}));  // [T, 48]
  tokens = backbone_level_tokens(t, tokens, h, w, 0);
  out.push_back({tokens, h, w});
  for (int l = 1; l < cfg_.levels; ++l) {
    // merge 2x2 neighborhoods of the previous level
    int prev_chw = t.reshape(t.transpose(out.back().node), {cfg_.channels, h, w});
    int merged = t.space_to_depth(prev_chw, 2);  // [4C, h/2, w/2]
    h /= 2;
    w /= 2;
    int tok = t.transpose(t.reshape(merged, {cfg_.channels * 4, h * w}));
    tok = backbone_level_tokens(t, tok, h, w, l);
    out.push_back({tok, h, w});
  }
  return out;
}

std::pair<int, int> Model::early_fusion(Tape& t, int features, int embeddings) const {
  if (embeddings < 0 || t.val(embeddings).rows() == 0) return {features, embeddings};
  const int f2e = fuse_f2e_.apply(t, ps_, features, embeddings);
  const int e2f = fuse_e2f_.apply(t, ps_, embeddings, features);
  return {t.add(features, f2e), t.add(embeddings, e2f)};
}

int Model::build_pixel_tokens(Tape& t, const std::vector<LevelTokens>& levels, int64_t h4,
                              int64_t w4) const {
  UOP_CHECK(!levels.empty(), "build_pixel_tokens: no levels");
  int fused = -1;
  for (size_t l = 0; l < levels.size(); ++l) {
    int proj = pixel_proj_[l].apply(t, ps_, levels[l].node);  // [T_l, C]
    int chw = t.reshape(t.transpose(proj), {cfg_.channels, levels[l].h, levels[l].w});
    int up = (levels[l].h == h4 && levels[l].w == w4) ? chw : t.bilinear_resize(chw, h4, w4);
    fused = fused < 0 ? up : t.add(fused, up);
  }
  return t.transpose(t.reshape(fused, {cfg_.channels, h4 * w4}));  // [P, C]
}

namespace {
Tensor pad_image(const Tensor& img, int64_t stride) {
  const int64_t h = img.shape[1], w = img.shape[2];
  const int64_t hp = (h + stride - 1) / stride * stride;
  const int64_t wp = (w + stride - 1) / stride * stride;
  if (hp == h && wp == w) return img;
  Tensor out({img.shape[0], hp, wp});
  for (int64_t c = 0; c < img.shape[0]; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, x);
  return out;
}
}  // namespace

ForwardResult Model::forward(Tape& t, const ForwardInputs& in) {
  UOP_CHECK(in.image, "forward: image required");
  UOP_CHECK(ps_.all().empty() || ps_.all()[0].node >= 0, "forward: model not mounted");
  ForwardResult res;
  res.h = in.image->shape[1];
  res.w = in.image->shape[2];
  res.h4 = (res.h + 3) / 4;
  res.w4 = (res.w + 3) / 4;
  res.text_node = in.text_node;
  const int64_t c = cfg_.channels;
  const int64_t deep_stride = 4LL << (cfg_.levels - 1);

  const Tensor padded = pad_image(*in.image, deep_stride);
  const int image_node = t.leaf(padded);
  auto levels = extract_features(t, image_node);

  // external embeddings for early fusion: projected text rows + coarse prompt
  std::vector<int> ext_parts;
  int64_t text_k = 0;
  if (in.text_node >= 0 && t.val(in.text_node).rows() > 0) {
    text_k = t.val(in.text_node).rows();
    ext_parts.push_back(text_proj_.apply(t, ps_, in.text_node));
  }
  if (in.prompt) {
    const PixelRect rect = prompt_square(*in.prompt, res.h, res.w, cfg_.point_radius_frac);
    ext_parts.push_back(encode_prompt_coarse(t, *in.image, rect));
  }

  // flatten levels, fuse, split back
  std::vector<int> level_nodes;
  for (const auto& lv : levels) level_nodes.push_back(lv.node);
  int features = level_nodes.size() == 1 ? level_nodes[0] : t.concat_rows(level_nodes);
  int fused_ext = -1;
  if (!ext_parts.empty()) {
    const int ext = ext_parts.size() == 1 ? ext_parts[0] : t.concat_rows(ext_parts);
    auto [f2, e2] = early_fusion(t, features, ext);
    features = f2;
    fused_ext = e2;
  }

  // encoder with sine positions + level embedding
  {
    int64_t row = 0;
    std::vector<int> with_pos;
    for (size_t l = 0; l < levels.size(); ++l) {
      const int64_t tl = levels[l].h * levels[l].w;
      int part = t.slice_rows(features, row, row + tl);
      row += tl;
      part = t.add(part, t.leaf(sine_position_encoding(levels[l].h, levels[l].w, c)));
      part = t.add_rowvec(
          part, t.reshape(t.slice_rows(ps_.node(level_embed_), l, l + 1), {c}));
      with_pos.push_back(part);
    }
    features = with_pos.size() == 1 ? with_pos[0] : t.concat_rows(with_pos);
  }
  for (const auto& layer : enc_) {
    const int normed = layer.ln1.apply(t, ps_, features);
    features = t.add(features, layer.attn.apply(t, ps_, normed, normed));
    features = t.add(features, layer.ffn.apply(t, ps_, layer.ln2.apply(t, ps_, features)));
  }
  features = enc_final_ln_.apply(t, ps_, features);
  res.memory = features;

  // refreshed level views of the encoder output
  std::vector<LevelTokens> mem_levels;
  {
    int64_t row = 0;
    for (const auto& lv : levels) {
      const int64_t tl = lv.h * lv.w;
      mem_levels.push_back({t.slice_rows(features, row, row + tl), lv.h, lv.w});
      row += tl;
    }
  }

  // pixel embedding map at padded 1/4 size, cropped to ceil(H/4) x ceil(W/4)
  const int64_t h4p = padded.shape[1] / 4, w4p = padded.shape[2] / 4;
  int mp_tokens = build_pixel_tokens(t, mem_levels, h4p, w4p);
  if (h4p != res.h4 || w4p != res.w4) {
    std::vector<int64_t> keep;
    keep.reserve(res.h4 * res.w4);
    for (int64_t y = 0; y < res.h4; ++y)
      for (int64_t x = 0; x < res.w4; ++x) keep.push_back(y * w4p + x);
    mp_tokens = t.gather_rows(mp_tokens, keep);
  }
  res.pixel_map = t.reshape(t.transpose(mp_tokens), {c, res.h4, res.w4});

  // fine prompt samples from the pixel map
  if (in.prompt) {
    Rng prng(fnv1a("fine-prompt", in.prompt_seed));
    const auto coords = fine_sample_coords(*in.prompt, res.h, res.w, res.h4, res.w4,
                                           cfg_.max_fine_samples, prng);
    res.fine = t.bilinear_sample(res.pixel_map, coords);
  }

  // decoder tokens that queries attend over besides themselves
  std::vector<int> extra_parts;
  if (fused_ext >= 0 && text_k > 0) extra_parts.push_back(t.slice_rows(fused_ext, 0, text_k));
  if (res.fine >= 0) extra_parts.push_back(res.fine);
  const int extras =
      extra_parts.empty() ? -1
                          : (extra_parts.size() == 1 ? extra_parts[0] : t.concat_rows(extra_parts));

  int x = ps_.node(query_embed_);
  const int64_t n = cfg_.queries;
  res.layers.clear();
  for (size_t li = 0; li < dec_.size(); ++li) {
    const auto& d = dec_[li];
    // self-attention over {queries} u {text rows} u {fine prompt rows}
    int sa_in = extras >= 0 ? t.concat_rows({x, extras}) : x;
    int sa_norm = d.ln_sa.apply(t, ps_, sa_in);
    int q_norm = t.slice_rows(sa_norm, 0, n);
    x = t.add(x, d.self_attn.apply(t, ps_, q_norm, sa_norm));
    x = t.add(x, d.cross_attn.apply(t, ps_, d.ln_ca.apply(t, ps_, x), res.memory));
    x = t.add(x, d.ffn.apply(t, ps_, d.ln_ffn.apply(t, ps_, x)));

    LayerOutputNodes lo;
    lo.queries = dec_final_ln_.apply(t, ps_, x);
    lo.boxes = t.sigmoid(box_head_.apply(t, ps_, lo.queries));
    const int mask_emb = mask_head_.apply(t, ps_, lo.queries);
    lo.mask_logits = t.matmul_nt(mask_emb, mp_tokens);
    if (in.text_node >= 0 && t.val(in.text_node).rows() > 0) {
      lo.s_align = t.matmul_nt(t.matmul(lo.queries, ps_.node(w_i2t_)), in.text_node);
    }
    if (in.prompt && li + 1 == dec_.size())
      lo.confidence = conf_head_.apply(t, ps_, lo.queries);
    res.layers.push_back(lo);
  }
  return res;
}

int Model::encode_text(Tape& t, const std::vector<std::string>& sentences) const {
  return encode_categories(t, ps_, student_, sentences);
}

Tensor Model::encode_text_values(const std::vector<std::string>& sentences) const {
  Tape t;
  t.grad_enabled = false;
  const_cast<Model*>(this)->mount(t);
  return t.val(encode_text(t, sentences));
}

int Model::encode_prompt_coarse(Tape& t, const Tensor& image, const PixelRect& rect) const {
  UOP_CHECK(rect.width() > 0 && rect.height() > 0, "degenerate prompt rect");
  UOP_CHECK(rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 <= image.shape[2] &&
                rect.y1 <= image.shape[1],
            "prompt rect outside image");
  // crop + bilinear resize to the configured square, off-tape (the image is
  // input data; gradients flow only through backbone weights)
  Tensor crop({image.shape[0], rect.height(), rect.width()});
  for (int64_t c = 0; c < image.shape[0]; ++c)
    for (int64_t y = 0; y < rect.height(); ++y)
      for (int64_t x = 0; x < rect.width(); ++x)
        crop.at(c, y, x) = image.at(c, rect.y0 + y, rect.x0 + x);
  Tape scratch;
  scratch.grad_enabled = false;
  const int cnode = scratch.leaf(std::move(crop));
  const int resized = scratch.bilinear_resize(cnode, cfg_.prompt_crop, cfg_.prompt_crop);
  const int crop_leaf = t.leaf(scratch.val(resized));

  auto levels = extract_features(t, crop_leaf);
  std::vector<int> nodes;
  for (const auto& lv : levels) nodes.push_back(lv.node);
  const int all = nodes.size() == 1 ? nodes[0] : t.concat_rows(nodes);
  return coarse_proj_.apply(t, ps_, t.mean_rows(all));  // [1,C]
}

InferenceResult Model::infer(const Tensor& image, const std::vector<std::string>& text,
                             const PromptSpec* prompt, uint64_t prompt_seed) {
  Tape t;
  t.grad_enabled = false;
  mount(t);
  ForwardInputs in;
  in.image = &image;
  if (!text.empty()) in.text_node = encode_text(t, text);
  in.prompt = prompt;
  in.prompt_seed = prompt_seed;
  const ForwardResult r = forward(t, in);
  const auto& last = r.layers.back();
  InferenceResult out;
  out.queries = t.val(last.queries);
  out.boxes = t.val(last.boxes);
  out.s_align = last.s_align >= 0 ? t.val(last.s_align) : Tensor({cfg_.queries, 0});
  out.mask_logits = t.val(last.mask_logits);
  if (last.confidence >= 0) out.confidence = t.val(last.confidence);
  out.h = r.h;
  out.w = r.w;
  out.h4 = r.h4;
  out.w4 = r.w4;
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {
constexpr char kMagic[8] = {'U', 'O', 'P', 'C', 'K', 'P', 'T', '1'};
}

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  UOP_CHECK(out.good(), "cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t hash = config_hash(cfg_);
  out.write(reinterpret_cast<const char*>(&hash), sizeof(hash));
  const uint32_t count = static_cast<uint32_t>(ps_.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& e : ps_.all()) {
    const uint32_t name_len = static_cast<uint32_t>(e.name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(e.name.data(), name_len);
    const uint32_t rank = static_cast<uint32_t>(e.value.shape.size());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int64_t d : e.value.shape) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(e.value.v.data()),
              static_cast<std::streamsize>(e.value.v.size() * sizeof(double)));
  }
  UOP_CHECK(out.good(), "checkpoint write failed: " + path);
}

void Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  UOP_CHECK(in.good(), "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  UOP_CHECK(in.good() && std::memcmp(magic, kMagic, sizeof(magic)) == 0,
            "not a checkpoint file: " + path);
  uint64_t hash = 0;
  in.read(reinterpret_cast<char*>(&hash), sizeof(hash));
  UOP_CHECK(hash == config_hash(cfg_),
            "checkpoint config hash mismatch (model built with different config)");
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  UOP_CHECK(count == ps_.size(), "checkpoint parameter count mismatch");
  for (auto& e : ps_.all()) {
    uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    UOP_CHECK(name == e.name, "checkpoint parameter order mismatch at " + e.name);
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) in.read(reinterpret_cast<char*>(&d), sizeof(d));
    UOP_CHECK(shape == e.value.shape, "checkpoint shape mismatch at " + e.name);
    in.read(reinterpret_cast<char*>(e.value.v.data()),
            static_cast<std::streamsize>(e.value.v.size() * sizeof(double)));
  }
  UOP_CHECK(in.good(), "checkpoint truncated: " + path);
}

}  // namespace uop
