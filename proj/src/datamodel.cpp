#include "uop/datamodel.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace uop {

using nlohmann::json;

Box Box::from_corners(double x0, double y0, double x1, double y1) {
  Box b;
  b.cx = 0.5 * (x0 + x1);
  b.cy = 0.5 * (y0 + y1);
  b.w = x1 - x0;
  b.h = y1 - y0;
  return b;
}

double box_iou(const Box& a, const Box& b) {
  const double ax0 = a.cx - 0.5 * a.w, ax1 = a.cx + 0.5 * a.w;
  const double ay0 = a.cy - 0.5 * a.h, ay1 = a.cy + 0.5 * a.h;
  const double bx0 = b.cx - 0.5 * b.w, bx1 = b.cx + 0.5 * b.w;
  const double by0 = b.cy - 0.5 * b.h, by1 = b.cy + 0.5 * b.h;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

int64_t MaskRLE::area() const {
  int64_t a = 0;
  for (size_t i = 1; i < counts.size(); i += 2) a += counts[i];
  return a;
}

MaskRLE encode_rle(const std::vector<uint8_t>& grid, int64_t height, int64_t width) {
  UOP_CHECK(height > 0 && width > 0, "degenerate mask");
  UOP_CHECK(static_cast<int64_t>(grid.size()) == height * width, "encode_rle: grid size mismatch");
  MaskRLE rle;
  rle.height = height;
  rle.width = width;
  uint8_t current = 0;  // runs start with background
  int64_t run = 0;
  for (int64_t x = 0; x < width; ++x) {
    for (int64_t y = 0; y < height; ++y) {
      const uint8_t px = grid[y * width + x] ? 1 : 0;
      if (px == current) {
        ++run;
      } else {
        rle.counts.push_back(run);
        current = px;
        run = 1;
      }
    }
  }
  rle.counts.push_back(run);
  return rle;
}

std::vector<uint8_t> decode_rle(const MaskRLE& rle) {
  UOP_CHECK(rle.height > 0 && rle.width > 0, "degenerate mask");
  int64_t total = 0;
  for (auto c : rle.counts) {
    UOP_CHECK(c >= 0, "decode_rle: negative count");
    total += c;
  }
  UOP_CHECK(total == rle.height * rle.width, "decode_rle: counts do not cover grid");
  std::vector<uint8_t> grid(rle.height * rle.width, 0);
  int64_t pos = 0;
  for (size_t i = 0; i < rle.counts.size(); ++i) {
    const uint8_t value = (i % 2 == 1) ? 1 : 0;
    for (int64_t k = 0; k < rle.counts[i]; ++k, ++pos) {
      const int64_t x = pos / rle.height;
      const int64_t y = pos % rle.height;
      if (value) grid[y * rle.width + x] = 1;
    }
  }
  return grid;
}

namespace {
// Foreground intervals in column-major linear order.
std::vector<std::pair<int64_t, int64_t>> fg_intervals(const MaskRLE& rle) {
  std::vector<std::pair<int64_t, int64_t>> out;
  int64_t pos = 0;
  for (size_t i = 0; i < rle.counts.size(); ++i) {
    if (i % 2 == 1 && rle.counts[i] > 0) out.emplace_back(pos, pos + rle.counts[i]);
    pos += rle.counts[i];
  }
  return out;
}
}  // namespace

double mask_iou(const MaskRLE& a, const MaskRLE& b) {
  UOP_CHECK(a.height == b.height && a.width == b.width, "mask_iou: shape mismatch");
  const auto ia = fg_intervals(a);
  const auto ib = fg_intervals(b);
  int64_t inter = 0;
  size_t i = 0, j = 0;
  while (i < ia.size() && j < ib.size()) {
    const int64_t lo = std::max(ia[i].first, ib[j].first);
    const int64_t hi = std::min(ia[i].second, ib[j].second);
    if (hi > lo) inter += hi - lo;
    if (ia[i].second < ib[j].second)
      ++i;
    else
      ++j;
  }
  const int64_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;  // both empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
void validate_annotation(const ObjectAnnotation& a, int64_t h, int64_t w, size_t idx,
                         std::vector<std::string>& out) {
  const std::string tag = "annotation[" + std::to_string(idx) + "].";
  if (a.box.cx < 0.0 || a.box.cx > 1.0) out.push_back(tag + "box.cx out of [0,1]");
  if (a.box.cy < 0.0 || a.box.cy > 1.0) out.push_back(tag + "box.cy out of [0,1]");
  if (!(a.box.w > 0.0) || a.box.w > 1.0) out.push_back(tag + "box.w out of (0,1]");
  if (!(a.box.h > 0.0) || a.box.h > 1.0) out.push_back(tag + "box.h out of (0,1]");
  if (a.mask) {
    if (a.mask->height != h || a.mask->width != w)
      out.push_back(tag + "mask shape differs from image");
    int64_t total = 0;
    bool neg = false;
    for (auto c : a.mask->counts) {
      total += c;
      neg = neg || c < 0;
    }
    if (neg) out.push_back(tag + "mask.counts has negative run");
    if (total != a.mask->height * a.mask->width)
      out.push_back(tag + "mask.counts do not sum to height*width");
    for (size_t i = 1; i < a.mask->counts.size(); ++i)
      if (a.mask->counts[i] == 0) {
        out.push_back(tag + "mask.counts has internal zero run");
        break;
      }
  }
  if (a.is_class_agnostic) {
    if (a.category || a.expression)
      out.push_back(tag + "class-agnostic annotation carries a label");
  } else {
    if (a.category && a.expression)
      out.push_back(tag + "both category and expression set");
    if (!a.category && !a.expression)
      out.push_back(tag + "neither category nor expression set");
  }
  if (a.category && *a.category < 0) out.push_back(tag + "category negative");
  if (a.expression && a.expression->empty()) out.push_back(tag + "expression empty");
  if (a.track_id && *a.track_id < 0) out.push_back(tag + "track_id negative");
}
}  // namespace

std::vector<std::string> validate_record(const ImageRecord& rec) {
  std::vector<std::string> out;
  if (rec.height <= 0) out.push_back("height not positive");
  if (rec.width <= 0) out.push_back("width not positive");
  if (rec.channels <= 0) out.push_back("channels not positive");
  std::set<int64_t> seen_tracks;
  for (size_t i = 0; i < rec.annotations.size(); ++i) {
    validate_annotation(rec.annotations[i], rec.height, rec.width, i, out);
    if (rec.annotations[i].track_id) {
      if (!seen_tracks.insert(*rec.annotations[i].track_id).second)
        out.push_back("annotation[" + std::to_string(i) + "].track_id duplicated in frame");
    }
  }
  return out;
}

std::vector<std::string> validate_record(const VideoClipRecord& rec) {
  std::vector<std::string> out;
  if (rec.frames.empty()) {
    out.push_back("clip has no frames");
    return out;
  }
  const int64_t h = rec.frames[0].height, w = rec.frames[0].width;
  for (size_t f = 0; f < rec.frames.size(); ++f) {
    if (rec.frames[f].height != h || rec.frames[f].width != w)
      out.push_back("frame[" + std::to_string(f) + "] size differs from frame 0");
    for (const auto& v : validate_record(rec.frames[f]))
      out.push_back("frame[" + std::to_string(f) + "]." + v);
  }
  return out;
}

std::vector<std::string> validate_record(const UnifiedRecord& rec) {
  if (std::holds_alternative<ImageRecord>(rec))
    return validate_record(std::get<ImageRecord>(rec));
  return validate_record(std::get<VideoClipRecord>(rec));
}

std::vector<std::string> DatasetDescriptor::consistency_violations() const {
  std::vector<std::string> out;
  if (sampling_ratio < 0.0) out.push_back("sampling_ratio negative");
  const auto& g = granularity;
  if (loss_mask.mask && !g.has_mask) out.push_back("mask loss requires mask annotations");
  if (loss_mask.box && !g.has_box) out.push_back("box loss requires box annotations");
  if (loss_mask.tracking && !g.has_track) out.push_back("tracking loss requires track ids");
  if (loss_mask.semantic && !(g.has_category || g.has_expression || g.class_agnostic))
    out.push_back("semantic loss requires categories, expressions, or class-agnostic labels");
  if (loss_mask.distillation && !(g.has_category || g.has_expression || g.class_agnostic))
    out.push_back("distillation requires text input");
  if (loss_mask.confidence && !(g.has_mask || g.has_box))
    out.push_back("confidence loss requires boxes or masks to build prompts");
  return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace {
json annotation_to_json(const ObjectAnnotation& a) {
  json j;
  j["box"] = {a.box.cx, a.box.cy, a.box.w, a.box.h};
  if (a.mask) {
    j["mask"] = {{"h", a.mask->height}, {"w", a.mask->width}, {"counts", a.mask->counts}};
  }
  if (a.category) j["category"] = *a.category;
  if (a.expression) j["expression"] = *a.expression;
  if (a.track_id) j["track"] = *a.track_id;
  if (a.is_class_agnostic) j["agnostic"] = true;
  return j;
}

ObjectAnnotation annotation_from_json(const json& j) {
  ObjectAnnotation a;
  const auto& b = j.at("box");
  UOP_CHECK(b.is_array() && b.size() == 4, "annotation box must have 4 entries");
  a.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (j.contains("mask")) {
    MaskRLE m;
    m.height = j["mask"].at("h").get<int64_t>();
    m.width = j["mask"].at("w").get<int64_t>();
    m.counts = j["mask"].at("counts").get<std::vector<int64_t>>();
    a.mask = std::move(m);
  }
  if (j.contains("category")) a.category = j["category"].get<int>();
  if (j.contains("expression")) a.expression = j["expression"].get<std::string>();
  if (j.contains("track")) a.track_id = j["track"].get<int64_t>();
  if (j.contains("agnostic")) a.is_class_agnostic = j["agnostic"].get<bool>();
  return a;
}

json image_to_json(const ImageRecord& r) {
  json j;
  j["type"] = "image";
  j["h"] = r.height;
  j["w"] = r.width;
  j["c"] = r.channels;
  json objs = json::array();
  for (const auto& a : r.annotations) objs.push_back(annotation_to_json(a));
  j["objects"] = std::move(objs);
  return j;
}

ImageRecord image_from_json(const json& j) {
  ImageRecord r;
  r.height = j.at("h").get<int64_t>();
  r.width = j.at("w").get<int64_t>();
  r.channels = j.value("c", 3);
  for (const auto& o : j.at("objects")) r.annotations.push_back(annotation_from_json(o));
  return r;
}
}  // namespace

std::string record_to_json(const UnifiedRecord& rec) {
  json j;
  if (std::holds_alternative<ImageRecord>(rec)) {
    j = image_to_json(std::get<ImageRecord>(rec));
  } else {
    const auto& clip = std::get<VideoClipRecord>(rec);
    j["type"] = "clip";
    json frames = json::array();
    for (const auto& f : clip.frames) frames.push_back(image_to_json(f));
    j["frames"] = std::move(frames);
  }
  return j.dump();
}

UnifiedRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  const std::string type = j.at("type").get<std::string>();
  if (type == "image") return image_from_json(j);
  if (type == "clip") {
    VideoClipRecord clip;
    for (const auto& f : j.at("frames")) clip.frames.push_back(image_from_json(f));
    return clip;
  }
  throw Error("unknown record type: " + type);
}

void write_unified(const std::string& path, const std::vector<UnifiedRecord>& records) {
  std::ofstream out(path);
  UOP_CHECK(out.good(), "cannot open for writing: " + path);
  out << "schema_version: 1\n";
  for (const auto& r : records) out << record_to_json(r) << "\n";
  UOP_CHECK(out.good(), "write failed: " + path);
}

std::vector<UnifiedRecord> read_unified(const std::string& path) {
  std::ifstream in(path);
  UOP_CHECK(in.good(), "cannot open: " + path);
  std::string line;
  UOP_CHECK(std::getline(in, line), "empty unified file: " + path);
  UOP_CHECK(line == "schema_version: 1", "bad or missing schema header in " + path);
  std::vector<UnifiedRecord> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

uint64_t record_hash(const UnifiedRecord& rec) { return fnv1a(record_to_json(rec)); }

}  // namespace uop
