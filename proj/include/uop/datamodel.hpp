#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "uop/common.hpp"

namespace uop {

// Center-format box, normalized to [0,1] relative to image size. Corner
// conversions clamp; everything downstream works in this parameterization.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x0() const { return clamp01(cx - 0.5 * w); }
  double y0() const { return clamp01(cy - 0.5 * h); }
  double x1() const { return clamp01(cx + 0.5 * w); }
  double y1() const { return clamp01(cy + 0.5 * h); }

  static double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }
  static Box from_corners(double x0, double y0, double x1, double y1);
};

// Plain (unclamped-input) IoU on normalized boxes.
double box_iou(const Box& a, const Box& b);

// Uncompressed RLE, column-major scan, first count is the leading background
// run (possibly zero).
struct MaskRLE {
  int64_t height = 0, width = 0;
  std::vector<int64_t> counts;

  int64_t area() const;  // foreground pixels
  bool empty_mask() const { return area() == 0; }
};

// grid is row-major uint8 {0,1}, size height*width.
MaskRLE encode_rle(const std::vector<uint8_t>& grid, int64_t height, int64_t width);
std::vector<uint8_t> decode_rle(const MaskRLE& rle);

// |A n B| / |A u B|; 0 when both masks are empty. Throws on shape mismatch.
double mask_iou(const MaskRLE& a, const MaskRLE& b);

struct ObjectAnnotation {
  Box box;
  std::optional<MaskRLE> mask;
  std::optional<int> category;
  std::optional<std::string> expression;
  std::optional<int64_t> track_id;
  bool is_class_agnostic = false;
};

struct ImageRecord {
  int64_t height = 0, width = 0, channels = 3;
  std::vector<ObjectAnnotation> annotations;
};

struct VideoClipRecord {
  std::vector<ImageRecord> frames;
};

using UnifiedRecord = std::variant<ImageRecord, VideoClipRecord>;

// Pure invariant checks; violations are data, not exceptions.
std::vector<std::string> validate_record(const ImageRecord& rec);
std::vector<std::string> validate_record(const VideoClipRecord& rec);
std::vector<std::string> validate_record(const UnifiedRecord& rec);

struct Granularity {
  bool has_box = false;
  bool has_mask = false;
  bool has_category = false;
  bool has_expression = false;
  bool has_track = false;
  bool class_agnostic = false;
};

struct LossMask {
  bool semantic = false;
  bool box = false;
  bool mask = false;
  bool confidence = false;
  bool tracking = false;
  bool distillation = false;
};

struct DatasetDescriptor {
  std::string name;
  Granularity granularity;
  double sampling_ratio = 0.0;
  LossMask loss_mask;
  std::string path;  // unified annotation file

  // Empty when consistent; otherwise a list of problems
  // (e.g. mask loss without mask annotations).
  std::vector<std::string> consistency_violations() const;
};

// ---------------------------------------------------------------------------
// unified annotation file: "schema_version: 1" header, then one JSON record
// per line.

void write_unified(const std::string& path, const std::vector<UnifiedRecord>& records);
std::vector<UnifiedRecord> read_unified(const std::string& path);

std::string record_to_json(const UnifiedRecord& rec);
UnifiedRecord record_from_json(const std::string& line);

// Stable content hash (render seeds, determinism checks).
uint64_t record_hash(const UnifiedRecord& rec);

}  // namespace uop
