#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "uop/data.hpp"
#include "uop/eval.hpp"
#include "uop/train.hpp"

using namespace uop;
using namespace uop::testing;

namespace {

std::string tmp_dir() {
  const auto d = std::filesystem::temp_directory_path() / "uop_pipeline";
  std::filesystem::create_directories(d);
  return d.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig small_model(uint64_t seed) {
  ModelConfig m;
  m.channels = 16;
  m.text_dim = 16;
  m.queries = 12;
  m.enc_layers = 1;
  m.dec_layers = 2;
  m.heads = 2;
  m.levels = 3;
  m.ffn_mult = 2;
  m.vocab_size = 128;
  m.text_layers = 1;
  m.prompt_crop = 16;
  m.init_seed = seed;
  return m;
}

RunConfig smoke_config(const std::string& data_path, const std::string& out_dir,
                       int64_t steps) {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.out_dir = out_dir;
  cfg.model = small_model(cfg.seed);
  cfg.adamw.lr = 1e-3;
  cfg.adamw.weight_decay = 0.01;
  cfg.steps = steps;
  cfg.decay_frac = 1.0;  // no decay inside the smoke run
  RunDataset ds;
  ds.desc.name = "synth";
  ds.desc.path = data_path;
  ds.desc.sampling_ratio = 1.0;
  ds.desc.granularity.has_box = true;
  ds.desc.granularity.has_mask = true;
  ds.desc.granularity.has_category = true;
  ds.desc.loss_mask.semantic = true;
  ds.desc.loss_mask.box = true;
  ds.desc.loss_mask.mask = true;
  ds.desc.loss_mask.distillation = true;
  ds.categories = {"circle", "square", "triangle"};
  cfg.datasets.push_back(ds);
  return cfg;
}

std::string make_dataset(int64_t count, uint64_t seed, const std::string& name) {
  SyntheticSceneSpec spec;
  spec.canvas = 32;
  spec.per_category_color = true;
  spec.min_objects = 1;
  spec.max_objects = 2;
  const auto records = generate_synthetic(spec, seed, count);
  const std::string path = tmp_dir() + "/" + name;
  write_unified(path, records);
  return path;
}

}  // namespace

TEST_CASE("run config parses nested sections and validates them") {
  const std::string json = R"({
    "seed": 9,
    "out_dir": "x",
    "stage": "pretrain",
    "model": {"channels": 32, "queries": 20},
    "losses": {"w_cls": 3.0},
    "optimizer": {"lr": 0.0005, "steps": 123, "decay_frac": 0.5},
    "datasets": [
      {"name": "d", "path": "p.uop", "ratio": 2.0,
       "granularity": {"box": true, "category": true},
       "loss_mask": ["semantic", "box"],
       "categories": ["a", "b"]}
    ]
  })";
  const RunConfig cfg = parse_run_config(json);
  CHECK(cfg.seed == 9);
  CHECK(cfg.stage == "pretrain");
  CHECK(cfg.model.channels == 32);
  CHECK(cfg.model.init_seed == 9);
  CHECK(cfg.losses.w_cls == 3.0);
  CHECK(cfg.adamw.lr == 0.0005);
  CHECK(cfg.steps == 123);
  CHECK(cfg.datasets.size() == 1);
  CHECK(cfg.datasets[0].desc.loss_mask.semantic);
  CHECK(cfg.violations().empty());

  RunConfig bad = cfg;
  bad.stage = "warmup";
  CHECK(!bad.violations().empty());
  RunConfig bad2 = cfg;
  bad2.datasets[0].desc.loss_mask.mask = true;  // no mask granularity
  CHECK(!bad2.violations().empty());
}

TEST_CASE("average precision: ground truth as predictions scores 1, none scores 0") {
  std::vector<DetGroundTruth> gts;
  std::vector<DetPrediction> preds;
  Rng rng(2);
  for (int img = 0; img < 4; ++img)
    for (int k = 0; k < 3; ++k) {
      DetGroundTruth g;
      g.image = img;
      g.category = 0;
      g.box = Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1};
      gts.push_back(g);
      DetPrediction p;
      p.image = img;
      p.category = 0;
      p.score = rng.uniform(0.1, 1.0);
      p.box = g.box;
      preds.push_back(p);
    }
  CHECK(average_precision(preds, gts, 0.5, false) == doctest::Approx(1.0));
  CHECK(average_precision({}, gts, 0.5, false) == 0.0);
}

TEST_CASE("average precision matches the hand-worked 3-detection ranking") {
  // GT: three boxes; predictions: TP(0.9), FP(0.8), TP(0.7) -> AP = 6/11
  std::vector<DetGroundTruth> gts(3);
  gts[0] = {0, 0, Box{0.2, 0.2, 0.1, 0.1}, std::nullopt};
  gts[1] = {0, 0, Box{0.5, 0.5, 0.1, 0.1}, std::nullopt};
  gts[2] = {0, 0, Box{0.8, 0.8, 0.1, 0.1}, std::nullopt};
  std::vector<DetPrediction> preds(3);
  preds[0] = {0, 0, 0.9, Box{0.2, 0.2, 0.1, 0.1}, std::nullopt};
  preds[1] = {0, 0, 0.8, Box{0.35, 0.65, 0.1, 0.1}, std::nullopt};  // hits nothing
  preds[2] = {0, 0, 0.7, Box{0.5, 0.5, 0.1, 0.1}, std::nullopt};
  CHECK(average_precision(preds, gts, 0.5, false) ==
        doctest::Approx(6.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("average precision never increases when predictions are dropped") {
  Rng rng(15);
  std::vector<DetGroundTruth> gts;
  std::vector<DetPrediction> preds;
  for (int img = 0; img < 3; ++img) {
    for (int k = 0; k < 4; ++k) {
      DetGroundTruth g;
      g.image = img;
      g.category = 0;
      g.box = Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.15, 0.15};
      gts.push_back(g);
      DetPrediction p;
      p.image = img;
      p.category = 0;
      p.score = rng.uniform(0.0, 1.0);
      p.box = rng.uniform() < 0.7 ? g.box
                                  : Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.15, 0.15};
      preds.push_back(p);
    }
  }
  const double full = average_precision(preds, gts, 0.5, false);
  for (int it = 0; it < 10; ++it) {
    auto sub = preds;
    sub.erase(sub.begin() + static_cast<long>(rng.randint(sub.size())));
    CHECK(average_precision(sub, gts, 0.5, false) <= full + 1e-12);
  }
}

namespace {
// Synthetic 2-object clip where detections sit exactly on ground truth.
VideoClipRecord two_object_clip(int frames) {
  VideoClipRecord clip;
  for (int f = 0; f < frames; ++f) {
    ImageRecord rec;
    rec.height = rec.width = 32;
    for (int obj = 0; obj < 2; ++obj) {
      ObjectAnnotation a;
      a.box = Box{0.25 + 0.5 * obj + 0.005 * f, 0.5, 0.2, 0.2};
      a.category = obj;
      a.track_id = obj;
      rec.annotations.push_back(a);
    }
    clip.frames.push_back(rec);
  }
  return clip;
}
}  // namespace

TEST_CASE("tracking metrics: oracle-separated embeddings give perfect identity accuracy") {
  const auto clip = two_object_clip(10);
  Tracker tracker;
  std::vector<FrameDetections> frames;
  std::vector<std::vector<int64_t>> ids;
  for (const auto& frame : clip.frames) {
    FrameDetections fd;
    for (int obj = 0; obj < 2; ++obj) {
      Detection d;
      d.embedding = obj == 0 ? std::vector<double>{1, 0, 0, 0} : std::vector<double>{0, 1, 0, 0};
      d.score = 0.95;
      d.box = frame.annotations[obj].box;
      fd.dets.push_back(d);
    }
    ids.push_back(tracker.associate_frame(fd.dets));
    frames.push_back(std::move(fd));
  }
  const TrackingReport rep = tracking_metrics({frames}, {ids}, {clip});
  CHECK(rep.identity_accuracy == 1.0);
  CHECK(rep.assoc_precision == 1.0);
  CHECK(rep.assoc_recall == 1.0);
}

TEST_CASE("tracking metrics: one wrong id in a 2-object 10-frame clip scores 0.95") {
  const auto clip = two_object_clip(10);
  std::vector<FrameDetections> frames;
  std::vector<std::vector<int64_t>> ids;
  for (int f = 0; f < 10; ++f) {
    FrameDetections fd;
    for (int obj = 0; obj < 2; ++obj) {
      Detection d;
      d.score = 0.9;
      d.box = clip.frames[f].annotations[obj].box;
      fd.dets.push_back(d);
    }
    std::vector<int64_t> frame_ids = {0, 1};
    if (f == 5) frame_ids[0] = 7;  // one mislabeled detection
    ids.push_back(frame_ids);
    frames.push_back(std::move(fd));
  }
  const TrackingReport rep = tracking_metrics({frames}, {ids}, {clip});
  CHECK(rep.identity_accuracy == doctest::Approx(0.95));
}

TEST_CASE("tracking with random embeddings stays near chance level") {
  const auto clip = two_object_clip(10);
  Rng rng(77);
  Tracker tracker;
  std::vector<FrameDetections> frames;
  std::vector<std::vector<int64_t>> ids;
  for (const auto& frame : clip.frames) {
    FrameDetections fd;
    for (int obj = 0; obj < 2; ++obj) {
      Detection d;
      d.embedding.resize(8);
      for (auto& x : d.embedding) x = rng.normal();
      d.score = 0.9;
      d.box = frame.annotations[obj].box;
      fd.dets.push_back(d);
    }
    ids.push_back(tracker.associate_frame(fd.dets));
    frames.push_back(std::move(fd));
  }
  const TrackingReport rep = tracking_metrics({frames}, {ids}, {clip});
  CHECK(rep.identity_accuracy < 0.6);  // far below the separated-embedding case
}

TEST_CASE("train: zero steps leaves the checkpoint at initialization") {
  const std::string data = make_dataset(4, 21, "init.uop");
  RunConfig cfg = smoke_config(data, tmp_dir() + "/run0", 0);
  const TrainResult r = train(cfg);
  Model fresh(cfg.model);
  Model loaded(cfg.model);
  loaded.load_checkpoint(r.checkpoint_path);
  for (size_t i = 0; i < fresh.params().size(); ++i) {
    const auto& a = fresh.params().all()[i].value.v;
    const auto& b = loaded.params().all()[i].value.v;
    for (size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
}

TEST_CASE("train: loss on a fixed batch decreases over the first 50 steps") {
  const std::string data = make_dataset(1, 33, "fixed.uop");  // one record = fixed batch
  RunConfig cfg = smoke_config(data, tmp_dir() + "/run_fixed", 50);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg);
  const auto dt =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  MESSAGE("50 training steps took ", dt.count(), " ms");
  CHECK(!r.nan_abort);
  std::ifstream in(r.metrics_path);
  std::string line;
  std::vector<double> totals;
  while (std::getline(in, line)) {
    const auto pos = line.find("total=");
    REQUIRE(pos != std::string::npos);
    totals.push_back(std::stod(line.substr(pos + 6)));
  }
  REQUIRE(totals.size() == 50);
  // strict decrease of the 5-step smoothed curve
  auto smooth = [&](size_t i) {
    double s = 0;
    for (size_t k = i; k < i + 5; ++k) s += totals[k];
    return s / 5.0;
  };
  for (size_t i = 0; i + 10 < totals.size(); i += 5) CHECK(smooth(i + 5) < smooth(i));
  CHECK(totals.back() < totals.front());
}

TEST_CASE("train runs are byte-identical for identical config and seed") {
  const std::string data = make_dataset(3, 44, "det.uop");
  RunConfig a = smoke_config(data, tmp_dir() + "/run_a", 12);
  RunConfig b = smoke_config(data, tmp_dir() + "/run_b", 12);
  const TrainResult ra = train(a);
  const TrainResult rb = train(b);
  CHECK(read_file(ra.metrics_path) == read_file(rb.metrics_path));
  CHECK(read_file(ra.checkpoint_path) == read_file(rb.checkpoint_path));
}

TEST_CASE("pretrain stage restricts the loss report to detection terms") {
  const std::string data = make_dataset(3, 55, "pre.uop");
  RunConfig cfg = smoke_config(data, tmp_dir() + "/run_pre", 5);
  cfg.stage = "pretrain";
  const TrainResult r = train(cfg);
  std::ifstream in(r.metrics_path);
  std::string line;
  while (std::getline(in, line)) {
    CHECK(line.find("semantic=") != std::string::npos);
    CHECK(line.find("box_l1=") != std::string::npos);
    CHECK(line.find("mask_dice=") == std::string::npos);
    CHECK(line.find("distillation=") == std::string::npos);
  }
}

TEST_CASE("pretrain stage keeps the student text encoder frozen") {
  const std::string data = make_dataset(3, 66, "frozen.uop");
  RunConfig cfg = smoke_config(data, tmp_dir() + "/run_frozen", 8);
  cfg.stage = "pretrain";
  Model model(cfg.model);
  std::vector<double> before;
  for (const auto& e : model.params().all())
    if (e.name.rfind("text.student", 0) == 0)
      before.insert(before.end(), e.value.v.begin(), e.value.v.end());
  train(cfg, &model);
  std::vector<double> after;
  for (const auto& e : model.params().all())
    if (e.name.rfind("text.student", 0) == 0)
      after.insert(after.end(), e.value.v.begin(), e.value.v.end());
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}
