#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "uop/kernels.hpp"
#include "uop/model.hpp"

using namespace uop;
using namespace uop::testing;

namespace {
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.channels = 16;
  cfg.text_dim = 16;
  cfg.queries = 8;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.heads = 2;
  cfg.levels = 3;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 64;
  cfg.text_layers = 1;
  cfg.prompt_crop = 16;
  cfg.init_seed = 3;
  return cfg;
}

Rng& rng() {
  static Rng r(5150);
  return r;
}
}  // namespace

TEST_CASE("extract_features produces the declared pyramid shapes") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  Tape t;
  model.mount(t);
  const Tensor img = random_tensor({3, 64, 64}, rng());
  const auto levels = model.extract_features(t, t.leaf(img));
  REQUIRE(levels.size() == 3);
  CHECK(levels[0].h == 16);
  CHECK(levels[0].w == 16);
  CHECK(levels[1].h == 8);
  CHECK(levels[2].h == 4);
  CHECK(t.shape(levels[0].node) == std::vector<int64_t>{256, 16});
  CHECK(t.shape(levels[2].node) == std::vector<int64_t>{16, 16});
}

TEST_CASE("all-zero image through a bias-free backbone gives all-zero features") {
  ModelConfig cfg = tiny_config();
  cfg.backbone_bias = false;
  Model model(cfg);
  Tape t;
  model.mount(t);
  const Tensor img({3, 32, 32});
  const auto levels = model.extract_features(t, t.leaf(img));
  for (const auto& lv : levels)
    for (double x : t.val(lv.node).v) CHECK(x == 0.0);
}

TEST_CASE("extract_features is bit-identical across two same-seed models") {
  const ModelConfig cfg = tiny_config();
  Model m1(cfg), m2(cfg);
  const Tensor img = random_tensor({3, 32, 32}, rng());
  Tape t1, t2;
  m1.mount(t1);
  m2.mount(t2);
  const auto l1 = m1.extract_features(t1, t1.leaf(img));
  const auto l2 = m2.extract_features(t2, t2.leaf(img));
  for (size_t l = 0; l < l1.size(); ++l) {
    const auto& a = t1.val(l1[l].node).v;
    const auto& b = t2.val(l2[l].node).v;
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
  CHECK_THROWS(m1.extract_features(t1, t1.leaf(Tensor({3, 0, 4}))));
}

TEST_CASE("early fusion: empty embedding set returns Z unchanged") {
  Model model(tiny_config());
  Tape t;
  model.mount(t);
  const int f = t.leaf(random_tensor({10, 16}, rng()));
  const auto [f2, e2] = model.early_fusion(t, f, t.leaf(Tensor({0, 16})));
  CHECK(f2 == f);  // the very node, not a copy
  (void)e2;
}

TEST_CASE("early fusion: zero-valued embeddings contribute exactly zero") {
  Model model(tiny_config());
  Tape t;
  model.mount(t);
  const Tensor feats = random_tensor({10, 16}, rng());
  const int f = t.leaf(feats);
  const auto [f2, e2] = model.early_fusion(t, f, t.leaf(Tensor({4, 16})));
  (void)e2;
  const auto& out = t.val(f2).v;
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == feats.v[i]);
}

TEST_CASE("early fusion: zero-init value/output projections give Z' == Z") {
  Model model(tiny_config());
  for (auto& e : model.params().all())
    if (e.name.rfind("fusion.f2e.v", 0) == 0 || e.name.rfind("fusion.f2e.o", 0) == 0)
      for (auto& x : e.value.v) x = 0.0;
  Tape t;
  model.mount(t);
  const Tensor feats = random_tensor({10, 16}, rng());
  const auto [f2, e2] =
      model.early_fusion(t, t.leaf(feats), t.leaf(random_tensor({4, 16}, rng())));
  (void)e2;
  const auto& out = t.val(f2).v;
  for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == feats.v[i]);
}

TEST_CASE("early fusion: permuting embedding rows leaves Z' unchanged") {
  Model model(tiny_config());
  Tape t;
  model.mount(t);
  const Tensor feats = random_tensor({10, 16}, rng());
  const Tensor emb = random_tensor({5, 16}, rng());
  Tensor perm({5, 16});
  const int order[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 16; ++c) perm.at(i, c) = emb.at(order[i], c);
  const auto [fa, ea] = model.early_fusion(t, t.leaf(feats), t.leaf(emb));
  const auto [fb, eb] = model.early_fusion(t, t.leaf(feats), t.leaf(perm));
  (void)ea;
  (void)eb;
  const auto& a = t.val(fa).v;
  const auto& b = t.val(fb).v;
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-10));
}

TEST_CASE("decode output shapes, including the paper-scale 300-query config") {
  ModelConfig cfg = tiny_config();
  cfg.queries = 300;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  Model model(cfg);
  const Tensor img = random_tensor({3, 32, 32}, rng());
  InferenceResult r = model.infer(img, {"a", "b", "c"});
  CHECK(r.queries.shape == std::vector<int64_t>{300, 16});
  CHECK(r.s_align.shape == std::vector<int64_t>{300, 3});
  CHECK(r.boxes.shape == std::vector<int64_t>{300, 4});
  CHECK(r.mask_logits.shape == std::vector<int64_t>{300, 8 * 8});
  for (int64_t q = 0; q < 4; ++q)
    for (int c = 0; c < 4; ++c) {
      CHECK(r.boxes.at(q, c) > 0.0);
      CHECK(r.boxes.at(q, c) < 1.0);
    }
}

TEST_CASE("decode with no text and no prompt still produces boxes and masks") {
  Model model(tiny_config());
  const Tensor img = random_tensor({3, 32, 32}, rng());
  InferenceResult r = model.infer(img, {});
  CHECK(r.s_align.cols() == 0);
  CHECK(r.boxes.rows() == 8);
  CHECK(r.mask_logits.rows() == 8);
  CHECK(r.confidence.numel() == 0);
}

TEST_CASE("shuffling text rows permutes S_align columns and changes nothing else") {
  Model model(tiny_config());
  const Tensor img = random_tensor({3, 32, 32}, rng());
  const std::vector<std::string> names = {"red circle", "green square", "blue triangle"};
  const std::vector<std::string> shuffled = {"blue triangle", "red circle", "green square"};
  const int perm[3] = {2, 0, 1};  // shuffled[j] == names[perm[j]]
  InferenceResult a = model.infer(img, names);
  InferenceResult b = model.infer(img, shuffled);
  for (int64_t q = 0; q < a.s_align.rows(); ++q)
    for (int j = 0; j < 3; ++j)
      CHECK(b.s_align.at(q, j) == doctest::Approx(a.s_align.at(q, perm[j])).epsilon(1e-9));
  for (int64_t i = 0; i < a.boxes.numel(); ++i)
    CHECK(a.boxes.v[i] == doctest::Approx(b.boxes.v[i]).epsilon(1e-9));
  for (int64_t i = 0; i < a.mask_logits.numel(); ++i)
    CHECK(a.mask_logits.v[i] == doctest::Approx(b.mask_logits.v[i]).epsilon(1e-9));
}

TEST_CASE("alignment_scores: orthonormal rows with identity projection give identity") {
  const int64_t d = 4;
  Tensor q({d, d}), w({d, d}), e({d, d});
  for (int64_t i = 0; i < d; ++i) {
    q.at(i, i) = 1.0;
    w.at(i, i) = 1.0;
    e.at(i, i) = 1.0;
  }
  const Tensor s = alignment_scores(q, w, e);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) CHECK(s.at(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("alignment_scores is bilinear and matches the triple-loop oracle") {
  Tensor q = random_tensor({4, 3}, rng());
  Tensor w = random_tensor({3, 3}, rng());
  Tensor e = random_tensor({2, 3}, rng());
  const Tensor s = alignment_scores(q, w, e);
  Tensor e2 = e;
  for (auto& x : e2.v) x *= 2.0;
  const Tensor s2 = alignment_scores(q, w, e2);
  for (int64_t i = 0; i < s.numel(); ++i)
    CHECK(s2.v[i] == doctest::Approx(2.0 * s.v[i]).epsilon(1e-12));
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t k = 0; k < 2; ++k) {
      double acc = 0;
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t dd = 0; dd < 3; ++dd) acc += q.at(n, c) * w.at(c, dd) * e.at(k, dd);
      CHECK(s.at(n, k) == doctest::Approx(acc).epsilon(1e-9));
    }
  CHECK_THROWS(alignment_scores(q, Tensor({4, 3}), e));
}

TEST_CASE("predict_masks: one-hot embedding selects a channel of the pixel map") {
  Tensor mp = random_tensor({5, 6, 7}, rng());
  Tensor emb({2, 5});
  emb.at(0, 3) = 1.0;  // one-hot channel 3
  const Tensor m = predict_masks(emb, mp);
  CHECK(m.shape == std::vector<int64_t>{2, 6, 7});
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 7; ++x) {
      CHECK(m.at(0, y, x) == mp.at(3, y, x));
      CHECK(m.at(1, y, x) == 0.0);  // zero query -> zero logits
    }
}

TEST_CASE("predict_masks matches the per-pixel dot-product loop") {
  Tensor mp = random_tensor({4, 3, 5}, rng());
  Tensor emb = random_tensor({3, 4}, rng());
  const Tensor m = predict_masks(emb, mp);
  for (int64_t q = 0; q < 3; ++q)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 5; ++x) {
        double acc = 0;
        for (int64_t c = 0; c < 4; ++c) acc += emb.at(q, c) * mp.at(c, y, x);
        CHECK(m.at(q, y, x) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("predict_confidence: zero logits give 0.5 and sigmoid is monotone") {
  CHECK(predict_confidence(Tensor({3, 1}))[1] == 0.5);
  const Tensor l({3, 1}, {-1.0, 0.2, 3.0});
  const auto s = predict_confidence(l);
  CHECK(s[0] < s[1]);
  CHECK(s[1] < s[2]);
  for (double x : s) {
    CHECK(x > 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("build_pixel_tokens fuses independently upsampled projected levels") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  Tape t;
  model.mount(t);
  const Tensor img = random_tensor({3, 32, 32}, rng());
  const auto levels = model.extract_features(t, t.leaf(img));
  const int tokens = model.build_pixel_tokens(t, levels, 8, 8);
  CHECK(t.shape(tokens) == std::vector<int64_t>{64, 16});

  // oracle: per level, project with the model's weights, upsample, sum
  Tensor fused({16, 8, 8});
  for (size_t l = 0; l < levels.size(); ++l) {
    const Tensor& w = model.params().find("pixel.proj" + std::to_string(l) + ".w")->value;
    const Tensor& tok = t.val(levels[l].node);
    Tensor proj({tok.rows(), 16});
    kernels::active().gemm_nn(tok.rows(), 16, 16, tok.v.data(), w.v.data(), proj.v.data(),
                              false);
    Tape s;
    s.grad_enabled = false;
    const int chw = s.reshape(s.transpose(s.leaf(proj)), {16, levels[l].h, levels[l].w});
    const Tensor up = s.val(s.bilinear_resize(chw, 8, 8));
    for (int64_t i = 0; i < fused.numel(); ++i) fused.v[i] += up.v[i];
  }
  const Tensor& got = t.val(tokens);
  for (int64_t p = 0; p < 64; ++p)
    for (int64_t c = 0; c < 16; ++c)
      CHECK(got.at(p, c) == doctest::Approx(fused.at(c, p / 8, p % 8)).epsilon(1e-9));
}

TEST_CASE("pixel map spatial size is ceil(H/4) x ceil(W/4) for ragged inputs") {
  Model model(tiny_config());
  const Tensor img = random_tensor({3, 50, 38}, rng());
  InferenceResult r = model.infer(img, {});
  CHECK(r.h4 == 13);
  CHECK(r.w4 == 10);
  CHECK(r.mask_logits.cols() == 13 * 10);
}

TEST_CASE("forward pass stays finite over random inputs") {
  ModelConfig cfg = tiny_config();
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  Model model(cfg);
  for (int seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    Tensor img = random_tensor({3, 16, 16}, r, -2, 2);
    InferenceResult res = model.infer(img, {"thing"});
    CHECK(res.boxes.all_finite());
    CHECK(res.s_align.all_finite());
    CHECK(res.mask_logits.all_finite());
  }
}

TEST_CASE("checkpoints round-trip and refuse config mismatches") {
  const std::string path = (std::filesystem::temp_directory_path() / "uop_ckpt.bin").string();
  ModelConfig cfg = tiny_config();
  Model a(cfg);
  const Tensor img = random_tensor({3, 32, 32}, rng());
  const InferenceResult before = a.infer(img, {"x"});
  a.save_checkpoint(path);

  ModelConfig cfg2 = cfg;
  cfg2.init_seed = 999;  // same architecture, different init
  Model b(cfg2);
  b.load_checkpoint(path);
  const InferenceResult after = b.infer(img, {"x"});
  for (int64_t i = 0; i < before.boxes.numel(); ++i)
    CHECK(before.boxes.v[i] == after.boxes.v[i]);
  for (int64_t i = 0; i < before.s_align.numel(); ++i)
    CHECK(before.s_align.v[i] == after.s_align.v[i]);

  ModelConfig bad = cfg;
  bad.queries = 9;
  Model c(bad);
  CHECK_THROWS_WITH(c.load_checkpoint(path), doctest::Contains("config hash mismatch"));
  std::filesystem::remove(path);
}

TEST_CASE("every trainable parameter receives gradient from some loss") {
  ModelConfig cfg = tiny_config();
  Model model(cfg);
  std::vector<double> norms(model.params().size(), 0.0);

  auto accumulate = [&](bool with_text, bool with_prompt) {
    Tape t;
    model.mount(t);
    const Tensor img = random_tensor({3, 32, 32}, rng());
    ForwardInputs in;
    in.image = &img;
    if (with_text) in.text_node = model.encode_text(t, {"red circle", "blue square"});
    PromptSpec prompt;
    prompt.kind = PromptSpec::Kind::Box;
    prompt.box = Box{0.5, 0.5, 0.4, 0.4};
    if (with_prompt) in.prompt = &prompt;
    const ForwardResult fr = model.forward(t, in);

    int loss = t.mean(t.mul(fr.layers.back().boxes, fr.layers.back().boxes));
    loss = t.add(loss, t.mean(t.mul(fr.layers.back().mask_logits, fr.layers.back().mask_logits)));
    if (fr.layers.back().s_align >= 0)
      loss = t.add(loss, t.mean(t.mul(fr.layers.back().s_align, fr.layers.back().s_align)));
    if (fr.layers.back().confidence >= 0)
      loss = t.add(loss, t.mean(t.mul(fr.layers.back().confidence, fr.layers.back().confidence)));
    if (with_text) loss = t.add(loss, t.mean(t.mul(in.text_node, in.text_node)));
    for (size_t li = 0; li + 1 < fr.layers.size(); ++li)
      loss = t.add(loss, t.mean(t.mul(fr.layers[li].boxes, fr.layers[li].boxes)));
    t.backward(loss);
    for (size_t i = 0; i < model.params().size(); ++i) {
      const auto& e = model.params().all()[i];
      const Tensor& g = t.grad(e.node);
      for (double x : g.v) norms[i] += x * x;
    }
  };
  accumulate(true, true);
  accumulate(true, false);
  for (size_t i = 0; i < norms.size(); ++i) {
    INFO("parameter ", model.params().all()[i].name);
    CHECK(norms[i] > 0.0);
  }
}
