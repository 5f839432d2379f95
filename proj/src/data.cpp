#include "uop/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace uop {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ingestion

namespace {

Box box_from_xywh_pixels(const json& arr, int64_t h, int64_t w) {
  UOP_CHECK(arr.is_array() && arr.size() == 4, "box_xywh must have 4 entries");
  const double x = arr[0].get<double>(), y = arr[1].get<double>();
  const double bw = arr[2].get<double>(), bh = arr[3].get<double>();
  Box b;
  b.cx = (x + 0.5 * bw) / static_cast<double>(w);
  b.cy = (y + 0.5 * bh) / static_cast<double>(h);
  b.w = bw / static_cast<double>(w);
  b.h = bh / static_cast<double>(h);
  return b;
}

MaskRLE mask_from_json(const json& j) {
  MaskRLE m;
  m.height = j.at("h").get<int64_t>();
  m.width = j.at("w").get<int64_t>();
  m.counts = j.at("counts").get<std::vector<int64_t>>();
  return m;
}

ImageRecord source_image(const json& j, const std::string& format, size_t lineno,
                         std::vector<std::string>* rejections) {
  ImageRecord rec;
  rec.height = j.at("height").get<int64_t>();
  rec.width = j.at("width").get<int64_t>();
  rec.channels = j.value("channels", 3);
  size_t idx = 0;
  for (const auto& o : j.at("objects")) {
    ObjectAnnotation a;
    a.box = box_from_xywh_pixels(o.at("box_xywh"), rec.height, rec.width);
    if (format == "inst" || format == "sa" || format == "video") {
      if (o.contains("mask")) a.mask = mask_from_json(o["mask"]);
    }
    if (format == "det" || format == "inst" || format == "video") {
      if (o.contains("category")) a.category = o["category"].get<int>();
    }
    if (format == "ground") {
      if (o.contains("expression")) a.expression = o["expression"].get<std::string>();
    }
    if (format == "sa") a.is_class_agnostic = true;
    if (format == "video" && o.contains("track")) a.track_id = o["track"].get<int64_t>();

    ImageRecord probe;
    probe.height = rec.height;
    probe.width = rec.width;
    probe.annotations.push_back(a);
    const auto violations = validate_record(probe);
    if (violations.empty()) {
      rec.annotations.push_back(std::move(a));
    } else {
      rejections->push_back("line " + std::to_string(lineno) + " object " +
                            std::to_string(idx) + ": " + violations.front());
    }
    ++idx;
  }
  return rec;
}

}  // namespace

IngestResult ingest(const std::string& format, const std::string& path) {
  IngestResult res;
  if (format == "unified") {
    auto records = read_unified(path);
    for (auto& r : records) {
      const auto violations = validate_record(r);
      if (violations.empty())
        res.records.push_back(std::move(r));
      else
        res.rejections.push_back("record rejected: " + violations.front());
    }
    return res;
  }
  const bool known = format == "det" || format == "inst" || format == "ground" ||
                     format == "video" || format == "sa";
  UOP_CHECK(known, "unknown ingest format: " + format);

  std::ifstream in(path);
  UOP_CHECK(in.good(), "cannot open: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed line: " + e.what());
    }
    try {
      if (format == "video") {
        VideoClipRecord clip;
        for (const auto& f : j.at("frames"))
          clip.frames.push_back(source_image(f, format, lineno, &res.rejections));
        res.records.emplace_back(std::move(clip));
      } else {
        res.records.emplace_back(source_image(j, format, lineno, &res.rejections));
      }
    } catch (const json::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed line: " + e.what());
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// sampling

SamplingPlan build_sampling_plan(const std::vector<DatasetDescriptor>& descriptors,
                                 uint64_t seed, int64_t steps) {
  UOP_CHECK(!descriptors.empty(), "build_sampling_plan: no datasets");
  double total = 0.0;
  for (const auto& d : descriptors) {
    UOP_CHECK(d.sampling_ratio >= 0.0, "build_sampling_plan: negative ratio");
    total += d.sampling_ratio;
  }
  UOP_CHECK(total > 0.0, "build_sampling_plan: all ratios zero");
  SamplingPlan plan;
  plan.seed = seed;
  plan.steps.reserve(steps);
  Rng rng(fnv1a("sampling-plan", seed));
  for (int64_t t = 0; t < steps; ++t) {
    const double r = rng.uniform() * total;
    double cum = 0.0;
    size_t pick = descriptors.size() - 1;
    for (size_t i = 0; i < descriptors.size(); ++i) {
      cum += descriptors[i].sampling_ratio;
      if (r < cum) {
        pick = i;
        break;
      }
    }
    // guard against r landing on the total due to rounding with a trailing
    // zero-ratio dataset
    while (descriptors[pick].sampling_ratio == 0.0 && pick > 0) --pick;
    plan.steps.push_back(descriptors[pick].name);
  }
  return plan;
}

void write_plan(const std::string& path, const SamplingPlan& plan) {
  std::ofstream out(path);
  UOP_CHECK(out.good(), "cannot open for writing: " + path);
  out << "seed: " << plan.seed << "\n";
  for (const auto& s : plan.steps) out << s << "\n";
}

std::pair<int, int> sample_frame_pair(const VideoClipRecord& clip, Rng& rng, int max_gap) {
  const auto len = static_cast<int>(clip.frames.size());
  UOP_CHECK(len >= 2, "sample_frame_pair: clip must have at least 2 frames");
  UOP_CHECK(max_gap >= 1, "sample_frame_pair: max_gap must be >= 1");
  // eligible pairs (i, i+g) for g in [1, max_gap]
  int64_t count = 0;
  const int gmax = std::min(max_gap, len - 1);
  for (int g = 1; g <= gmax; ++g) count += len - g;
  int64_t k = static_cast<int64_t>(rng.randint(static_cast<uint64_t>(count)));
  for (int g = 1; g <= gmax; ++g) {
    const int64_t n = len - g;
    if (k < n) return {static_cast<int>(k), static_cast<int>(k) + g};
    k -= n;
  }
  throw Error("sample_frame_pair: unreachable");
}

std::vector<size_t> filter_part_level(const std::vector<MaskRLE>& masks, double iou_threshold) {
  if (masks.empty()) return {};
  for (size_t i = 1; i < masks.size(); ++i)
    UOP_CHECK(masks[i].height == masks[0].height && masks[i].width == masks[0].width,
              "filter_part_level: mask shapes differ");
  std::vector<size_t> order(masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int64_t> areas(masks.size());
  for (size_t i = 0; i < masks.size(); ++i) areas[i] = masks[i].area();
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (areas[a] != areas[b]) return areas[a] > areas[b];
    return a < b;
  });
  std::vector<size_t> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (size_t k : kept)
      if (mask_iou(masks[idx], masks[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(idx);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

// ---------------------------------------------------------------------------
// synthetic scenes

const std::vector<PaletteEntry>& color_palette() {
  static const std::vector<PaletteEntry> palette = {
      {"red", 0.90, 0.15, 0.15},    {"green", 0.15, 0.80, 0.20},
      {"blue", 0.20, 0.25, 0.90},   {"yellow", 0.92, 0.88, 0.15},
      {"magenta", 0.85, 0.20, 0.80}, {"cyan", 0.15, 0.80, 0.85},
      {"orange", 0.95, 0.55, 0.10}, {"white", 0.92, 0.92, 0.92},
  };
  return palette;
}

namespace {

struct PlacedShape {
  int shape = 0;      // index into spec.shapes
  int color = 0;      // index into palette
  double cx = 0, cy = 0, size = 0;  // normalized
  double vx = 0, vy = 0;            // per-frame velocity, clips only
};

// Rasterize onto the canvas; returns a row-major {0,1} grid.
std::vector<uint8_t> rasterize_shape(const std::string& kind, double cx, double cy,
                                     double size, int64_t canvas) {
  std::vector<uint8_t> grid(canvas * canvas, 0);
  const double c = static_cast<double>(canvas);
  const double pcx = cx * c, pcy = cy * c, half = 0.5 * size * c;
  for (int64_t y = 0; y < canvas; ++y) {
    for (int64_t x = 0; x < canvas; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      bool inside = false;
      if (kind == "circle") {
        inside = (px - pcx) * (px - pcx) + (py - pcy) * (py - pcy) <= half * half;
      } else if (kind == "square") {
        inside = std::fabs(px - pcx) <= half && std::fabs(py - pcy) <= half;
      } else {  // triangle: upward isoceles in the bounding square
        const double fy = (py - (pcy - half)) / (2.0 * half);  // 0 top .. 1 bottom
        if (fy >= 0.0 && fy <= 1.0) inside = std::fabs(px - pcx) <= half * fy;
      }
      if (inside) grid[y * canvas + x] = 1;
    }
  }
  return grid;
}

std::string position_word(double cx, double cy) {
  // dominant axis quadrant
  const double dx = cx - 0.5, dy = cy - 0.5;
  if (std::fabs(dx) >= std::fabs(dy)) return dx < 0 ? "left" : "right";
  return dy < 0 ? "top" : "bottom";
}

// Visible-pixel ownership: later shapes draw over earlier ones.
struct SceneRaster {
  std::vector<int> owner;  // -1 background
  int64_t canvas;
};

SceneRaster rasterize_scene(const SyntheticSceneSpec& spec,
                            const std::vector<PlacedShape>& shapes) {
  SceneRaster sr;
  sr.canvas = spec.canvas;
  sr.owner.assign(spec.canvas * spec.canvas, -1);
  for (size_t i = 0; i < shapes.size(); ++i) {
    const auto grid = rasterize_shape(spec.shapes[shapes[i].shape], shapes[i].cx, shapes[i].cy,
                                      shapes[i].size, spec.canvas);
    for (size_t p = 0; p < grid.size(); ++p)
      if (grid[p]) sr.owner[p] = static_cast<int>(i);
  }
  return sr;
}

// Build annotations from visible pixels; objects fully occluded are dropped.
std::vector<ObjectAnnotation> annotate(const SyntheticSceneSpec& spec,
                                       const std::vector<PlacedShape>& shapes,
                                       const SceneRaster& sr, bool with_tracks) {
  std::vector<ObjectAnnotation> out;
  const int64_t canvas = sr.canvas;
  for (size_t i = 0; i < shapes.size(); ++i) {
    std::vector<uint8_t> grid(canvas * canvas, 0);
    int64_t x0 = canvas, y0 = canvas, x1 = -1, y1 = -1;
    int64_t area = 0;
    for (int64_t y = 0; y < canvas; ++y)
      for (int64_t x = 0; x < canvas; ++x)
        if (sr.owner[y * canvas + x] == static_cast<int>(i)) {
          grid[y * canvas + x] = 1;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
          ++area;
        }
    if (area == 0) continue;
    ObjectAnnotation a;
    a.box = Box::from_corners(static_cast<double>(x0) / static_cast<double>(canvas),
                              static_cast<double>(y0) / static_cast<double>(canvas),
                              static_cast<double>(x1 + 1) / static_cast<double>(canvas),
                              static_cast<double>(y1 + 1) / static_cast<double>(canvas));
    if (spec.with_masks) a.mask = encode_rle(grid, canvas, canvas);
    if (spec.class_agnostic) {
      a.is_class_agnostic = true;
    } else if (spec.with_expressions) {
      if (spec.grammar == "position") {
        a.expression =
            position_word(shapes[i].cx, shapes[i].cy) + " " + spec.shapes[shapes[i].shape];
      } else {
        a.expression = "the " + color_palette()[shapes[i].color].name + " " +
                       spec.shapes[shapes[i].shape];
      }
    } else if (spec.with_categories) {
      a.category = shapes[i].shape;
    }
    if (with_tracks) a.track_id = static_cast<int64_t>(i);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<PlacedShape> place_shapes(const SyntheticSceneSpec& spec, Rng& rng) {
  UOP_CHECK(!spec.shapes.empty(), "generate_synthetic: shape inventory empty");
  const int count =
      spec.min_objects +
      static_cast<int>(rng.randint(static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1)));
  std::vector<PlacedShape> out;
  std::set<std::pair<int, int>> used_combos;  // (shape, color)
  for (int i = 0; i < count; ++i) {
    PlacedShape s;
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      s.shape = static_cast<int>(rng.randint(spec.shapes.size()));
      s.color = spec.per_category_color
                    ? s.shape % static_cast<int>(color_palette().size())
                    : static_cast<int>(rng.randint(color_palette().size()));
      // expressions must uniquely identify the referent
      if (spec.with_expressions && spec.grammar == "color" &&
          used_combos.count({s.shape, s.color}))
        continue;
      s.size = rng.uniform(spec.min_size, spec.max_size);
      const double margin = 0.5 * s.size + 0.02;
      s.cx = rng.uniform(margin, 1.0 - margin);
      s.cy = rng.uniform(margin, 1.0 - margin);
      bool overlaps = false;
      for (const auto& o : out) {
        const double min_dist = 0.55 * (s.size + o.size);
        if (std::hypot(s.cx - o.cx, s.cy - o.cy) < min_dist) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      if (spec.with_expressions && spec.grammar == "position") {
        // positional grammar: (position, shape) must be unique
        bool clash = false;
        for (const auto& o : out)
          if (o.shape == s.shape &&
              position_word(o.cx, o.cy) == position_word(s.cx, s.cy))
            clash = true;
        if (clash) continue;
      }
      placed = true;
    }
    if (!placed) continue;  // crowded canvas: emit fewer objects
    used_combos.insert({s.shape, s.color});
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double speed = rng.uniform(0.2, 1.0) * spec.max_speed;
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    out.push_back(s);
  }
  return out;
}

}  // namespace

std::vector<UnifiedRecord> generate_synthetic(const SyntheticSceneSpec& spec, uint64_t seed,
                                              int64_t count) {
  UOP_CHECK(!spec.shapes.empty(), "generate_synthetic: shape inventory empty");
  UOP_CHECK(spec.min_objects >= 1 && spec.max_objects >= spec.min_objects,
            "generate_synthetic: bad object count range");
  std::vector<UnifiedRecord> out;
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(fnv1a("synthetic", seed) ^ static_cast<uint64_t>(i) * 0x9e3779b97f4a7c15ULL);
    auto shapes = place_shapes(spec, rng);
    while (shapes.empty()) shapes = place_shapes(spec, rng);  // retry crowded draws
    if (spec.clip_frames <= 1) {
      ImageRecord rec;
      rec.height = rec.width = spec.canvas;
      rec.annotations = annotate(spec, shapes, rasterize_scene(spec, shapes), false);
      out.emplace_back(std::move(rec));
      continue;
    }
    VideoClipRecord clip;
    auto moving = shapes;
    for (int f = 0; f < spec.clip_frames; ++f) {
      ImageRecord frame;
      frame.height = frame.width = spec.canvas;
      frame.annotations = annotate(spec, moving, rasterize_scene(spec, moving), true);
      clip.frames.push_back(std::move(frame));
      // constant velocity + jitter, reflecting at the margins
      for (auto& s : moving) {
        s.cx += s.vx + rng.normal(0.0, spec.jitter);
        s.cy += s.vy + rng.normal(0.0, spec.jitter);
        const double margin = 0.5 * s.size + 0.02;
        if (s.cx < margin) {
          s.cx = 2 * margin - s.cx;
          s.vx = -s.vx;
        }
        if (s.cx > 1 - margin) {
          s.cx = 2 * (1 - margin) - s.cx;
          s.vx = -s.vx;
        }
        if (s.cy < margin) {
          s.cy = 2 * margin - s.cy;
          s.vy = -s.vy;
        }
        if (s.cy > 1 - margin) {
          s.cy = 2 * (1 - margin) - s.cy;
          s.vy = -s.vy;
        }
      }
    }
    out.emplace_back(std::move(clip));
  }
  return out;
}

namespace {
// Color implied by the annotation label; keeps rendering reproducible from
// the record alone.
PaletteEntry annotation_color(const ObjectAnnotation& a, size_t index) {
  const auto& palette = color_palette();
  if (a.expression) {
    for (const auto& e : palette)
      if (a.expression->find(e.name) != std::string::npos) return e;
    return palette[fnv1a(*a.expression) % palette.size()];
  }
  if (a.category) return palette[static_cast<size_t>(*a.category) % palette.size()];
  if (a.track_id) return palette[static_cast<size_t>(*a.track_id) % palette.size()];
  return palette[index % palette.size()];
}
}  // namespace

Tensor render_image(const ImageRecord& rec, uint64_t seed) {
  Tensor img({rec.channels, rec.height, rec.width});
  Rng rng(fnv1a("render", seed));
  const double bg = 0.08;
  for (auto& x : img.v) x = bg + rng.normal(0.0, 0.01);
  for (size_t i = 0; i < rec.annotations.size(); ++i) {
    const auto& a = rec.annotations[i];
    const PaletteEntry col = annotation_color(a, i);
    const double rgb[3] = {col.r, col.g, col.b};
    if (a.mask) {
      const auto grid = decode_rle(*a.mask);
      for (int64_t y = 0; y < rec.height; ++y)
        for (int64_t x = 0; x < rec.width; ++x)
          if (grid[y * rec.width + x])
            for (int64_t c = 0; c < std::min<int64_t>(3, rec.channels); ++c)
              img.at(c, y, x) = rgb[c] + rng.normal(0.0, 0.01);
    } else {
      const auto x0 = static_cast<int64_t>(std::floor(a.box.x0() * rec.width));
      const auto x1 = static_cast<int64_t>(std::ceil(a.box.x1() * rec.width));
      const auto y0 = static_cast<int64_t>(std::floor(a.box.y0() * rec.height));
      const auto y1 = static_cast<int64_t>(std::ceil(a.box.y1() * rec.height));
      for (int64_t y = y0; y < std::min(y1, rec.height); ++y)
        for (int64_t x = x0; x < std::min(x1, rec.width); ++x)
          for (int64_t c = 0; c < std::min<int64_t>(3, rec.channels); ++c)
            img.at(c, y, x) = rgb[c] + rng.normal(0.0, 0.01);
    }
  }
  return img;
}

}  // namespace uop
