#include "uop/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uop {

using nlohmann::json;

namespace {

void parse_model(const json& j, ModelConfig& m) {
  m.channels = j.value("channels", m.channels);
  m.text_dim = j.value("text_dim", m.text_dim);
  m.queries = j.value("queries", m.queries);
  m.enc_layers = j.value("enc_layers", m.enc_layers);
  m.dec_layers = j.value("dec_layers", m.dec_layers);
  m.heads = j.value("heads", m.heads);
  m.levels = j.value("levels", m.levels);
  m.ffn_mult = j.value("ffn_mult", m.ffn_mult);
  m.vocab_size = j.value("vocab_size", m.vocab_size);
  m.text_layers = j.value("text_layers", m.text_layers);
  m.text_heads = j.value("text_heads", m.text_heads);
  m.prompt_crop = j.value("prompt_crop", m.prompt_crop);
  m.point_radius_frac = j.value("point_radius_frac", m.point_radius_frac);
  m.max_fine_samples = j.value("max_fine_samples", m.max_fine_samples);
  m.backbone_bias = j.value("backbone_bias", m.backbone_bias);
}

void parse_losses(const json& j, LossWeights& w) {
  w.w_cls = j.value("w_cls", w.w_cls);
  w.w_l1 = j.value("w_l1", w.w_l1);
  w.w_giou = j.value("w_giou", w.w_giou);
  w.w_dice = j.value("w_dice", w.w_dice);
  w.w_mask_focal = j.value("w_mask_focal", w.w_mask_focal);
  w.w_conf = j.value("w_conf", w.w_conf);
  w.w_track = j.value("w_track", w.w_track);
  w.w_distill = j.value("w_distill", w.w_distill);
  w.focal_alpha = j.value("focal_alpha", w.focal_alpha);
  w.focal_gamma = j.value("focal_gamma", w.focal_gamma);
  w.dice_eps = j.value("dice_eps", w.dice_eps);
}

LossMask parse_loss_mask(const json& arr) {
  LossMask m;
  for (const auto& t : arr) {
    const std::string s = t.get<std::string>();
    if (s == "semantic")
      m.semantic = true;
    else if (s == "box")
      m.box = true;
    else if (s == "mask")
      m.mask = true;
    else if (s == "confidence")
      m.confidence = true;
    else if (s == "tracking")
      m.tracking = true;
    else if (s == "distillation")
      m.distillation = true;
    else
      throw Error("unknown loss term: " + s);
  }
  return m;
}

Granularity parse_granularity(const json& j) {
  Granularity g;
  g.has_box = j.value("box", false);
  g.has_mask = j.value("mask", false);
  g.has_category = j.value("category", false);
  g.has_expression = j.value("expression", false);
  g.has_track = j.value("track", false);
  g.class_agnostic = j.value("class_agnostic", false);
  return g;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j = json::parse(json_text);
  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.stage = j.value("stage", cfg.stage);
  if (j.contains("model")) parse_model(j["model"], cfg.model);
  cfg.model.init_seed = cfg.seed;
  if (j.contains("losses")) parse_losses(j["losses"], cfg.losses);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    cfg.adamw.lr = o.value("lr", cfg.adamw.lr);
    cfg.adamw.weight_decay = o.value("weight_decay", cfg.adamw.weight_decay);
    cfg.adamw.beta1 = o.value("beta1", cfg.adamw.beta1);
    cfg.adamw.beta2 = o.value("beta2", cfg.adamw.beta2);
    cfg.adamw.eps = o.value("eps", cfg.adamw.eps);
    cfg.adamw.clip_norm = o.value("clip_norm", cfg.adamw.clip_norm);
    cfg.steps = o.value("steps", cfg.steps);
    cfg.decay_frac = o.value("decay_frac", cfg.decay_frac);
    cfg.decay_factor = o.value("decay_factor", cfg.decay_factor);
    cfg.backbone_lr_mult = o.value("backbone_lr_mult", cfg.backbone_lr_mult);
    cfg.text_lr_mult = o.value("text_lr_mult", cfg.text_lr_mult);
  }
  cfg.teacher_seed = j.value("teacher_seed", cfg.teacher_seed);
  cfg.pad_target = j.value("pad_target", cfg.pad_target);
  cfg.max_gap = j.value("max_gap", cfg.max_gap);
  cfg.lambda_temp = j.value("lambda_temp", cfg.lambda_temp);
  if (j.contains("association")) {
    const auto& a = j["association"];
    cfg.assoc.theta_sim = a.value("theta_sim", cfg.assoc.theta_sim);
    cfg.assoc.theta_new = a.value("theta_new", cfg.assoc.theta_new);
    cfg.assoc.max_age = a.value("max_age", cfg.assoc.max_age);
  }
  for (const auto& d : j.value("datasets", json::array())) {
    RunDataset rd;
    rd.desc.name = d.at("name").get<std::string>();
    rd.desc.path = d.value("path", "");
    rd.desc.sampling_ratio = d.value("ratio", 1.0);
    if (d.contains("granularity")) rd.desc.granularity = parse_granularity(d["granularity"]);
    if (d.contains("loss_mask")) rd.desc.loss_mask = parse_loss_mask(d["loss_mask"]);
    if (d.contains("categories"))
      rd.categories = d["categories"].get<std::vector<std::string>>();
    cfg.datasets.push_back(std::move(rd));
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  UOP_CHECK(in.good(), "cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out;
  if (stage != "joint" && stage != "pretrain") out.push_back("unknown stage: " + stage);
  if (datasets.empty()) out.push_back("no datasets configured");
  for (const auto& d : datasets) {
    for (const auto& v : d.desc.consistency_violations())
      out.push_back(d.desc.name + ": " + v);
    if (d.desc.granularity.has_category && d.categories.empty())
      out.push_back(d.desc.name + ": category dataset without category names");
  }
  return out;
}

}  // namespace uop
