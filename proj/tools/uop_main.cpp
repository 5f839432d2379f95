// Unified object-perception CLI: training, evaluation, prompting and the data
// pipeline commands.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "uop/data.hpp"
#include "uop/eval.hpp"
#include "uop/kernels.hpp"
#include "uop/train.hpp"

using namespace uop;
using nlohmann::json;

namespace {

SyntheticSceneSpec spec_from_json(const json& j) {
  SyntheticSceneSpec s;
  s.canvas = j.value("canvas", s.canvas);
  if (j.contains("shapes")) s.shapes = j["shapes"].get<std::vector<std::string>>();
  s.per_category_color = j.value("per_category_color", s.per_category_color);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.min_size = j.value("min_size", s.min_size);
  s.max_size = j.value("max_size", s.max_size);
  s.with_masks = j.value("with_masks", s.with_masks);
  s.with_categories = j.value("with_categories", s.with_categories);
  s.with_expressions = j.value("with_expressions", s.with_expressions);
  s.class_agnostic = j.value("class_agnostic", s.class_agnostic);
  s.grammar = j.value("grammar", s.grammar);
  s.clip_frames = j.value("clip_frames", s.clip_frames);
  s.max_speed = j.value("max_speed", s.max_speed);
  s.jitter = j.value("jitter", s.jitter);
  return s;
}

const RunDataset& dataset_by_name(const RunConfig& cfg, const std::string& name) {
  for (const auto& d : cfg.datasets)
    if (d.desc.name == name) return d;
  throw Error("dataset not in config: " + name);
}

std::vector<ImageRecord> images_of(const std::vector<UnifiedRecord>& records) {
  std::vector<ImageRecord> out;
  for (const auto& r : records)
    if (std::holds_alternative<ImageRecord>(r)) out.push_back(std::get<ImageRecord>(r));
  return out;
}

std::vector<VideoClipRecord> clips_of(const std::vector<UnifiedRecord>& records) {
  std::vector<VideoClipRecord> out;
  for (const auto& r : records)
    if (std::holds_alternative<VideoClipRecord>(r)) out.push_back(std::get<VideoClipRecord>(r));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified object perception toolkit"};
  app.require_subcommand(1);

  std::string kernels_backend = "auto";
  app.add_option("--kernels", kernels_backend, "kernel backend: auto|scalar|avx2");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "run the joint training loop");
  std::string cfg_path, out_dir_override;
  uint64_t seed_override = 0;
  bool has_seed = false;
  cmd_train->add_option("--config", cfg_path, "run config (json)")->required();
  cmd_train->add_option("--out-dir", out_dir_override, "override output directory");
  cmd_train->add_option("--seed", seed_override, "override seed")->each([&](const std::string&) {
    has_seed = true;
  });

  // ---- eval-det ----
  auto* cmd_evaldet = app.add_subcommand("eval-det", "detection / instance segmentation AP");
  std::string ed_cfg, ed_ckpt, ed_dataset;
  cmd_evaldet->add_option("--config", ed_cfg)->required();
  cmd_evaldet->add_option("--checkpoint", ed_ckpt)->required();
  cmd_evaldet->add_option("--dataset", ed_dataset, "dataset name from the config")->required();

  // ---- eval-track ----
  auto* cmd_evaltrack = app.add_subcommand("eval-track", "tracking metrics on clips");
  std::string et_cfg, et_ckpt, et_dataset, et_out;
  cmd_evaltrack->add_option("--config", et_cfg)->required();
  cmd_evaltrack->add_option("--checkpoint", et_ckpt)->required();
  cmd_evaltrack->add_option("--dataset", et_dataset)->required();
  cmd_evaltrack->add_option("--out", et_out, "write per-(frame,track) records here");

  // ---- prompt-segment ----
  auto* cmd_prompt = app.add_subcommand("prompt-segment", "segment one prompted object");
  std::string ps_cfg, ps_ckpt, ps_data, ps_prompt, ps_out;
  int64_t ps_index = 0;
  cmd_prompt->add_option("--config", ps_cfg)->required();
  cmd_prompt->add_option("--checkpoint", ps_ckpt)->required();
  cmd_prompt->add_option("--data", ps_data, "unified file; the image is rendered from it")
      ->required();
  cmd_prompt->add_option("--index", ps_index, "record index");
  cmd_prompt
      ->add_option("--prompt", ps_prompt,
                   "point:x,y | box:cx,cy,w,h | scribble:x1,y1;x2,y2;... | mask:<file>")
      ->required();
  cmd_prompt->add_option("--out", ps_out, "write mask json here");

  // ---- generate ----
  auto* cmd_gen = app.add_subcommand("generate", "synthetic scene generator");
  std::string gen_spec, gen_out;
  uint64_t gen_seed = 1;
  int64_t gen_count = 16;
  cmd_gen->add_option("--spec", gen_spec, "scene spec (json)");
  cmd_gen->add_option("--seed", gen_seed);
  cmd_gen->add_option("--count", gen_count);
  cmd_gen->add_option("--out", gen_out)->required();

  // ---- ingest ----
  auto* cmd_ingest = app.add_subcommand("ingest", "convert a source file to unified records");
  std::string in_format, in_path, in_out;
  cmd_ingest->add_option("--format", in_format, "det|inst|ground|video|sa|unified")->required();
  cmd_ingest->add_option("--in", in_path)->required();
  cmd_ingest->add_option("--out", in_out)->required();

  // ---- sample-plan ----
  auto* cmd_plan = app.add_subcommand("sample-plan", "emit the step-wise dataset plan");
  std::string sp_cfg, sp_out;
  int64_t sp_steps = 1000;
  uint64_t sp_seed = 1;
  cmd_plan->add_option("--config", sp_cfg)->required();
  cmd_plan->add_option("--steps", sp_steps);
  cmd_plan->add_option("--seed", sp_seed);
  cmd_plan->add_option("--out", sp_out)->required();

  // ---- filter-parts ----
  auto* cmd_filter = app.add_subcommand("filter-parts", "mask-IoU NMS with area as score");
  std::string fp_in, fp_out;
  double fp_iou = 0.7;
  cmd_filter->add_option("--in", fp_in)->required();
  cmd_filter->add_option("--iou", fp_iou);
  cmd_filter->add_option("--out", fp_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    kernels::set_backend(kernels::backend_from_string(kernels_backend));

    if (*cmd_train) {
      RunConfig cfg = load_run_config(cfg_path);
      if (has_seed) {
        cfg.seed = seed_override;
        cfg.model.init_seed = seed_override;
      }
      if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
      const TrainResult r = train(cfg);
      std::cout << "checkpoint: " << r.checkpoint_path << "\n"
                << "metrics: " << r.metrics_path << "\n"
                << "steps: " << r.steps_done << (r.nan_abort ? " (aborted on nan)" : "")
                << "\n";
      return r.nan_abort ? 1 : 0;
    }

    if (*cmd_evaldet) {
      RunConfig cfg = load_run_config(ed_cfg);
      const auto& ds = dataset_by_name(cfg, ed_dataset);
      Model model(cfg.model);
      model.load_checkpoint(ed_ckpt);
      const auto records = images_of(read_unified(ds.desc.path));
      std::vector<std::string> cats = ds.categories;
      if (cats.empty()) cats = {"object"};
      const ApReport rep = eval_detection(model, records, cats);
      std::cout << rep.format() << "\n";
      for (size_t c = 0; c < rep.box_ap50.size(); ++c)
        std::cout << "  category " << c << " (" << cats[c] << "): box_ap50=" << rep.box_ap50[c]
                  << (c < rep.mask_ap50.size()
                          ? " mask_ap50=" + std::to_string(rep.mask_ap50[c])
                          : "")
                  << "\n";
      return 0;
    }

    if (*cmd_evaltrack) {
      RunConfig cfg = load_run_config(et_cfg);
      const auto& ds = dataset_by_name(cfg, et_dataset);
      Model model(cfg.model);
      model.load_checkpoint(et_ckpt);
      const auto clips = clips_of(read_unified(ds.desc.path));
      std::vector<std::string> cats = ds.categories;
      if (cats.empty()) cats = {"object"};
      const TrackingReport rep = eval_tracking(model, clips, cats, cfg.assoc);
      std::cout << rep.format() << "\n";
      if (!et_out.empty()) write_track_records(et_out, model, clips, cats, cfg.assoc);
      return 0;
    }

    if (*cmd_prompt) {
      RunConfig cfg = load_run_config(ps_cfg);
      Model model(cfg.model);
      model.load_checkpoint(ps_ckpt);
      const auto records = read_unified(ps_data);
      UOP_CHECK(ps_index >= 0 && ps_index < static_cast<int64_t>(records.size()),
                "record index out of range");
      UOP_CHECK(std::holds_alternative<ImageRecord>(records[ps_index]),
                "prompt-segment expects an image record");
      const auto& rec = std::get<ImageRecord>(records[ps_index]);
      const Tensor image = render_image(rec, record_hash(records[ps_index]));
      const PromptSpec prompt = PromptSpec::parse(ps_prompt);
      const auto res = prompt_segment(model, image, prompt);
      json j;
      j["confidence"] = res.confidence;
      j["low_confidence"] = res.low_confidence;
      j["query"] = res.query;
      j["box"] = {res.box.cx, res.box.cy, res.box.w, res.box.h};
      j["mask"] = {{"h", res.mask.height}, {"w", res.mask.width}, {"counts", res.mask.counts}};
      if (ps_out.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::ofstream out(ps_out);
        out << j.dump() << "\n";
        std::cout << "confidence=" << res.confidence
                  << (res.low_confidence ? " (low)" : "") << " -> " << ps_out << "\n";
      }
      return 0;
    }

    if (*cmd_gen) {
      SyntheticSceneSpec spec;
      if (!gen_spec.empty()) {
        std::ifstream in(gen_spec);
        UOP_CHECK(in.good(), "cannot open spec: " + gen_spec);
        json j;
        in >> j;
        spec = spec_from_json(j);
      }
      const auto records = generate_synthetic(spec, gen_seed, gen_count);
      write_unified(gen_out, records);
      std::cout << "wrote " << records.size() << " records to " << gen_out << "\n";
      return 0;
    }

    if (*cmd_ingest) {
      const IngestResult res = ingest(in_format, in_path);
      write_unified(in_out, res.records);
      std::cout << "wrote " << res.records.size() << " records to " << in_out << "\n";
      for (const auto& r : res.rejections) std::cerr << "rejected: " << r << "\n";
      return 0;
    }

    if (*cmd_plan) {
      RunConfig cfg = load_run_config(sp_cfg);
      std::vector<DatasetDescriptor> descs;
      for (const auto& d : cfg.datasets) descs.push_back(d.desc);
      const SamplingPlan plan = build_sampling_plan(descs, sp_seed, sp_steps);
      write_plan(sp_out, plan);
      std::cout << "wrote " << plan.steps.size() << " steps to " << sp_out << "\n";
      return 0;
    }

    if (*cmd_filter) {
      const auto records = read_unified(fp_in);
      std::vector<UnifiedRecord> out;
      for (const auto& r : records) {
        if (!std::holds_alternative<ImageRecord>(r)) {
          out.push_back(r);
          continue;
        }
        const auto& img = std::get<ImageRecord>(r);
        std::vector<MaskRLE> masks;
        bool all_masks = !img.annotations.empty();
        for (const auto& a : img.annotations) {
          if (!a.mask) {
            all_masks = false;
            break;
          }
          masks.push_back(*a.mask);
        }
        if (!all_masks) {
          out.push_back(r);
          continue;
        }
        const auto kept = filter_part_level(masks, fp_iou);
        ImageRecord filtered = img;
        filtered.annotations.clear();
        for (size_t k : kept) filtered.annotations.push_back(img.annotations[k]);
        out.emplace_back(std::move(filtered));
      }
      write_unified(fp_out, out);
      std::cout << "wrote " << out.size() << " records to " << fp_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
