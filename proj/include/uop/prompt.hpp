#pragma once

#include <string>
#include <utility>
#include <vector>

#include "uop/datamodel.hpp"
#include "uop/rng.hpp"
#include "uop/tensor.hpp"

namespace uop {

struct PromptSpec {
  enum class Kind { Point, Box, Scribble, Mask };
  Kind kind = Kind::Point;
  double px = 0, py = 0;                            // point, normalized
  Box box;                                          // box prompt
  std::vector<std::pair<double, double>> scribble;  // (x, y) normalized
  MaskRLE mask;

  std::vector<std::string> violations() const;

  // CLI syntax: point:x,y | box:cx,cy,w,h | scribble:x1,y1;x2,y2;... |
  // mask:<json file with {"h","w","counts"}>
  static PromptSpec parse(const std::string& text);
  std::string to_string() const;
};

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int64_t width() const { return x1 - x0; }
  int64_t height() const { return y1 - y0; }
  bool operator==(const PixelRect&) const = default;
};

// Square region covering the prompt: point -> side 2r with
// r = round(point_radius_frac * max(H,W)); box/scribble/mask -> square of side
// max(bbox_w, bbox_h) on the bbox center. Shift-then-clip keeps the output
// inside bounds, which also makes the op idempotent on its own output box.
PixelRect prompt_square(const PromptSpec& prompt, int64_t image_h, int64_t image_w,
                        double point_radius_frac = 0.05);

// Continuous (y, x) coordinates on the 1/4-resolution grid for fine sampling:
// point -> 1 bilinear sample; box/mask -> covered-cell centers in scan order,
// uniformly subsampled (seeded) down to max_samples; scribble -> unit-spaced
// arc-length samples along the polyline. Throws "prompt outside map"
// when rasterization yields nothing.
std::vector<std::pair<double, double>> fine_sample_coords(const PromptSpec& prompt,
                                                          int64_t image_h, int64_t image_w,
                                                          int64_t map_h, int64_t map_w,
                                                          int64_t max_samples, Rng& rng);

// Plain sampling of a CHW map at grid coordinates -> [S, C]; the tape variant
// is Tape::bilinear_sample.
Tensor sample_map(const Tensor& map_chw,
                  const std::vector<std::pair<double, double>>& coords);

}  // namespace uop
