#include "uop/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "uop/text.hpp"

namespace uop {

namespace {

// >= half of the covered pixels foreground
Tensor downsample_masks(const Tensor& full, int64_t h, int64_t w, int64_t h4, int64_t w4) {
  const int64_t t = full.rows();
  Tensor out({t, h4 * w4});
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t gy = 0; gy < h4; ++gy) {
      const int64_t y0 = gy * h / h4, y1 = std::max(y0 + 1, (gy + 1) * h / h4);
      for (int64_t gx = 0; gx < w4; ++gx) {
        const int64_t x0 = gx * w / w4, x1 = std::max(x0 + 1, (gx + 1) * w / w4);
        int64_t fg = 0, tot = 0;
        for (int64_t y = y0; y < y1; ++y)
          for (int64_t x = x0; x < x1; ++x) {
            ++tot;
            fg += full.at(i, y * w + x) > 0.5 ? 1 : 0;
          }
        out.at(i, gy * w4 + gx) = (tot > 0 && 2 * fg >= tot) ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

}  // namespace

Tensor stack_full_masks(const ImageRecord& rec) {
  for (const auto& a : rec.annotations)
    if (!a.mask) return Tensor({0});
  if (rec.annotations.empty()) return Tensor({0});
  Tensor out({static_cast<int64_t>(rec.annotations.size()), rec.height * rec.width});
  for (size_t i = 0; i < rec.annotations.size(); ++i) {
    const auto grid = decode_rle(*rec.annotations[i].mask);
    for (int64_t p = 0; p < rec.height * rec.width; ++p)
      out.at(static_cast<int64_t>(i), p) = grid[p];
  }
  return out;
}

TrainTargets build_targets(const ImageRecord& rec, const std::vector<int>& labels) {
  UOP_CHECK(labels.size() == rec.annotations.size(), "build_targets: label count mismatch");
  TrainTargets tg;
  tg.h = rec.height;
  tg.w = rec.width;
  tg.h4 = (rec.height + 3) / 4;
  tg.w4 = (rec.width + 3) / 4;
  tg.labels = labels;
  for (const auto& a : rec.annotations) {
    tg.boxes.push_back({a.box.cx, a.box.cy, a.box.w, a.box.h});
    tg.track_ids.push_back(a.track_id ? *a.track_id : -1);
  }
  tg.masks_full = stack_full_masks(rec);
  if (tg.masks_full.numel() > 0)
    tg.masks_q = downsample_masks(tg.masks_full, tg.h, tg.w, tg.h4, tg.w4);
  return tg;
}

namespace {

std::vector<MatchResult> match_layers(Tape& t, const ForwardResult& fr,
                                      const TrainTargets& tg, const LossWeights& w,
                                      bool use_masks) {
  std::vector<MatchResult> out;
  for (const auto& lo : fr.layers) {
    CostInputs ci;
    const Tensor& boxes = t.val(lo.boxes);
    ci.boxes = &boxes;
    ci.target_boxes = &tg.boxes;
    ci.labels = &tg.labels;
    const Tensor* sa = nullptr;
    if (lo.s_align >= 0) sa = &t.val(lo.s_align);
    ci.s_align = sa;
    Tensor probs;
    if (use_masks && tg.masks_q.numel() > 0 && lo.mask_logits >= 0) {
      probs = t.val(lo.mask_logits);
      for (auto& x : probs.v) x = sigmoid_scalar(x);
      ci.mask_probs = &probs;
      ci.target_masks = &tg.masks_q;
    }
    out.push_back(hungarian_match(build_match_cost(ci, w)));
  }
  return out;
}

LossMask effective_mask(const std::string& stage, const LossMask& m) {
  if (stage != "pretrain") return m;
  LossMask r;
  r.semantic = m.semantic;
  r.box = m.box;
  return r;
}

struct LoadedDataset {
  const RunDataset* rd = nullptr;
  std::vector<UnifiedRecord> records;
};

// text sentences + per-annotation label columns for one image
struct TextPlan {
  std::vector<std::string> sentences;
  std::vector<int> labels;
};

TextPlan make_text_plan(const RunDataset& rd, const ImageRecord& rec, size_t pad_target,
                        Rng& rng) {
  TextPlan tp;
  const auto& g = rd.desc.granularity;
  if (g.has_category) {
    if (rd.categories.size() > pad_target) {
      std::vector<int> positives;
      for (const auto& a : rec.annotations)
        if (a.category &&
            std::find(positives.begin(), positives.end(), *a.category) == positives.end())
          positives.push_back(*a.category);
      std::vector<int> pool;
      for (int i = 0; i < static_cast<int>(rd.categories.size()); ++i)
        if (std::find(positives.begin(), positives.end(), i) == positives.end())
          pool.push_back(i);
      const auto padded = pad_category_list(positives, pool, pad_target, rng);
      for (int id : padded) tp.sentences.push_back(rd.categories[id]);
      for (const auto& a : rec.annotations) {
        const auto it = std::find(padded.begin(), padded.end(), *a.category);
        tp.labels.push_back(static_cast<int>(it - padded.begin()));
      }
    } else {
      tp.sentences = rd.categories;
      for (const auto& a : rec.annotations) tp.labels.push_back(a.category ? *a.category : -1);
    }
  } else if (g.has_expression) {
    for (const auto& a : rec.annotations) {
      tp.labels.push_back(static_cast<int>(tp.sentences.size()));
      tp.sentences.push_back(a.expression ? *a.expression : "object");
    }
  } else if (g.class_agnostic && rd.desc.loss_mask.semantic) {
    tp.sentences = {"object"};
    tp.labels.assign(rec.annotations.size(), 0);
  } else {
    tp.labels.assign(rec.annotations.size(), -1);
  }
  return tp;
}

PromptSpec prompt_from_annotation(const ObjectAnnotation& a, Rng& rng) {
  const int kinds = a.mask ? 3 : 2;
  const auto pick = rng.randint(kinds);
  PromptSpec p;
  if (pick == 0) {
    p.kind = PromptSpec::Kind::Point;
    p.px = a.box.cx;
    p.py = a.box.cy;
  } else if (pick == 1) {
    p.kind = PromptSpec::Kind::Box;
    p.box = a.box;
  } else {
    p.kind = PromptSpec::Kind::Mask;
    p.mask = *a.mask;
  }
  return p;
}

}  // namespace

TrainResult train(const RunConfig& cfg, Model* external_model) {
  {
    const auto v = cfg.violations();
    UOP_CHECK(v.empty(), "invalid run config: " + (v.empty() ? "" : v[0]));
  }
  std::filesystem::create_directories(cfg.out_dir);

  Model local_model(cfg.model);
  Model& model = external_model ? *external_model : local_model;
  // per-group learning rates
  for (auto& e : model.params().all()) {
    if (e.name.rfind("backbone.", 0) == 0) e.lr_mult = cfg.backbone_lr_mult;
    if (e.name.rfind("text.student", 0) == 0) e.lr_mult = cfg.text_lr_mult;
  }
  const TeacherEncoder teacher(cfg.teacher_seed, cfg.model.text_dim);

  std::vector<LoadedDataset> data;
  std::vector<DatasetDescriptor> descs;
  for (const auto& rd : cfg.datasets) {
    LoadedDataset ld;
    ld.rd = &rd;
    ld.records = read_unified(rd.desc.path);
    UOP_CHECK(!ld.records.empty(), "dataset has no records: " + rd.desc.name);
    data.push_back(std::move(ld));
    descs.push_back(rd.desc);
  }
  const SamplingPlan plan =
      build_sampling_plan(descs, fnv1a("plan", cfg.seed), cfg.steps);

  const std::vector<std::string> frozen =
      cfg.stage == "pretrain" ? std::vector<std::string>{"text.student"}
                              : std::vector<std::string>{};

  AdamW optimizer(cfg.adamw);
  Rng rng(fnv1a("train-steps", cfg.seed));

  TrainResult result;
  result.metrics_path = cfg.out_dir + "/metrics.log";
  result.checkpoint_path = cfg.out_dir + "/checkpoint.uop";
  std::ofstream metrics(result.metrics_path);
  UOP_CHECK(metrics.good(), "cannot open metrics log");

  // last-good parameter snapshot for the NaN abort path
  std::vector<Tensor> snapshot;
  auto take_snapshot = [&] {
    snapshot.clear();
    for (const auto& e : model.params().all()) snapshot.push_back(e.value);
  };
  auto restore_snapshot = [&] {
    for (size_t i = 0; i < snapshot.size(); ++i) model.params().all()[i].value = snapshot[i];
  };
  take_snapshot();

  for (int64_t step = 0; step < cfg.steps; ++step) {
    // draw dataset per plan, record via the step rng
    size_t ds_idx = 0;
    for (size_t i = 0; i < data.size(); ++i)
      if (data[i].rd->desc.name == plan.steps[step]) ds_idx = i;
    auto& ld = data[ds_idx];
    const auto& rd = *ld.rd;
    const LossMask mask = effective_mask(cfg.stage, rd.desc.loss_mask);
    const auto& rec = ld.records[rng.randint(ld.records.size())];

    Tape tape;
    model.mount(tape, frozen);

    ComposeInputs ci;
    std::vector<LayerOutputNodes> key_layers, ref_layers;
    std::vector<MatchResult> key_matches, ref_matches;
    TrainTargets key_tg, ref_tg;
    Tensor teacher_rows;

    auto run_frame = [&](const ImageRecord& frame, const TextPlan& tp, uint64_t render_seed,
                         const PromptSpec* prompt, uint64_t prompt_seed,
                         std::vector<LayerOutputNodes>& layers_out,
                         std::vector<MatchResult>& matches_out, TrainTargets& tg_out) {
      const Tensor image = render_image(frame, render_seed);
      ForwardInputs fi;
      fi.image = &image;
      fi.prompt = prompt;
      fi.prompt_seed = prompt_seed;
      if (!tp.sentences.empty()) {
        fi.text_node = model.encode_text(tape, tp.sentences);
        if (mask.distillation && ci.student_node < 0) {
          ci.student_node = fi.text_node;
          teacher_rows = teacher.encode_all(tp.sentences);
          ci.teacher_rows = &teacher_rows;
        }
      }
      const ForwardResult fr = model.forward(tape, fi);
      tg_out = build_targets(frame, tp.labels);
      matches_out = match_layers(tape, fr, tg_out, cfg.losses, mask.mask);
      layers_out = fr.layers;
    };

    const bool is_clip = std::holds_alternative<VideoClipRecord>(rec);
    const uint64_t rec_seed = record_hash(rec);
    if (is_clip && rd.desc.granularity.has_track) {
      const auto& clip = std::get<VideoClipRecord>(rec);
      const auto [fa, fb] = sample_frame_pair(clip, rng, cfg.max_gap);
      const TextPlan tpa = make_text_plan(rd, clip.frames[fa], cfg.pad_target, rng);
      const TextPlan tpb = make_text_plan(rd, clip.frames[fb], cfg.pad_target, rng);
      run_frame(clip.frames[fa], tpa, rec_seed ^ static_cast<uint64_t>(fa), nullptr, 0,
                key_layers, key_matches, key_tg);
      run_frame(clip.frames[fb], tpb, rec_seed ^ static_cast<uint64_t>(fb), nullptr, 0,
                ref_layers, ref_matches, ref_tg);
      ci.ref = FrameLossInputs{&ref_layers, &ref_tg, &ref_matches};
    } else {
      const auto& frame = std::get<ImageRecord>(rec);
      if (mask.confidence && !frame.annotations.empty()) {
        // visual-prompt step: one prompted object is the only target
        const auto pick = rng.randint(frame.annotations.size());
        const PromptSpec prompt = prompt_from_annotation(frame.annotations[pick], rng);
        const uint64_t pseed = rng.u64();
        ImageRecord sub = frame;
        sub.annotations = {frame.annotations[pick]};
        TextPlan tp;
        tp.labels.assign(1, -1);
        run_frame(sub, tp, rec_seed, &prompt, pseed, key_layers, key_matches, key_tg);
        ci.prompt_target = 0;
      } else {
        const TextPlan tp = make_text_plan(rd, frame, cfg.pad_target, rng);
        run_frame(frame, tp, rec_seed, nullptr, 0, key_layers, key_matches, key_tg);
      }
    }
    ci.key = FrameLossInputs{&key_layers, &key_tg, &key_matches};

    auto [report, total_node] = compose_losses(tape, cfg.losses, mask, ci);

    if (!std::isfinite(report.total)) {
      restore_snapshot();
      model.save_checkpoint(result.checkpoint_path);
      result.nan_abort = true;
      result.steps_done = step;
      metrics << "step=" << step << " dataset=" << rd.desc.name << " aborted=nan\n";
      metrics.flush();
      return result;
    }
    take_snapshot();

    if (total_node >= 0) {
      tape.backward(total_node);
      const double lr_scale =
          static_cast<double>(step) <
                  cfg.decay_frac * static_cast<double>(cfg.steps)
              ? 1.0
              : cfg.decay_factor;
      optimizer.step(model.params(), tape, lr_scale);
    }

    metrics << "step=" << step << " dataset=" << rd.desc.name << report.format() << "\n";
  }

  model.save_checkpoint(result.checkpoint_path);
  result.steps_done = cfg.steps;
  metrics.flush();
  return result;
}

}  // namespace uop
