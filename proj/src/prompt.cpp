#include "uop/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uop {

std::vector<std::string> PromptSpec::violations() const {
  std::vector<std::string> out;
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  switch (kind) {
    case Kind::Point:
      if (!in01(px) || !in01(py)) out.push_back("point coordinates out of [0,1]");
      break;
    case Kind::Box:
      if (!in01(box.cx) || !in01(box.cy)) out.push_back("box center out of [0,1]");
      if (!(box.w > 0.0) || !(box.h > 0.0)) out.push_back("box size not positive");
      break;
    case Kind::Scribble:
      if (scribble.size() < 2) out.push_back("scribble needs at least 2 points");
      for (const auto& [x, y] : scribble)
        if (!in01(x) || !in01(y)) {
          out.push_back("scribble point out of [0,1]");
          break;
        }
      break;
    case Kind::Mask:
      if (mask.height <= 0 || mask.width <= 0 || mask.empty_mask())
        out.push_back("mask prompt empty");
      break;
  }
  return out;
}

PromptSpec PromptSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  UOP_CHECK(colon != std::string::npos, "prompt syntax: expected '<kind>:<payload>'");
  const std::string kind = text.substr(0, colon);
  const std::string payload = text.substr(colon + 1);
  auto parse_nums = [](const std::string& s, char sep) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
      if (!item.empty()) out.push_back(std::stod(item));
    return out;
  };
  PromptSpec p;
  if (kind == "point") {
    const auto v = parse_nums(payload, ',');
    UOP_CHECK(v.size() == 2, "point prompt needs x,y");
    p.kind = Kind::Point;
    p.px = v[0];
    p.py = v[1];
  } else if (kind == "box") {
    const auto v = parse_nums(payload, ',');
    UOP_CHECK(v.size() == 4, "box prompt needs cx,cy,w,h");
    p.kind = Kind::Box;
    p.box = Box{v[0], v[1], v[2], v[3]};
  } else if (kind == "scribble") {
    p.kind = Kind::Scribble;
    std::stringstream ss(payload);
    std::string pt;
    while (std::getline(ss, pt, ';')) {
      const auto v = parse_nums(pt, ',');
      UOP_CHECK(v.size() == 2, "scribble point needs x,y");
      p.scribble.emplace_back(v[0], v[1]);
    }
    UOP_CHECK(p.scribble.size() >= 2, "scribble needs at least 2 points");
  } else if (kind == "mask") {
    std::ifstream in(payload);
    UOP_CHECK(in.good(), "cannot open mask prompt file: " + payload);
    nlohmann::json j;
    in >> j;
    p.kind = Kind::Mask;
    p.mask.height = j.at("h").get<int64_t>();
    p.mask.width = j.at("w").get<int64_t>();
    p.mask.counts = j.at("counts").get<std::vector<int64_t>>();
  } else {
    throw Error("unknown prompt kind: " + kind);
  }
  const auto v = p.violations();
  UOP_CHECK(v.empty(), "invalid prompt: " + (v.empty() ? "" : v[0]));
  return p;
}

std::string PromptSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Point:
      os << "point:" << px << "," << py;
      break;
    case Kind::Box:
      os << "box:" << box.cx << "," << box.cy << "," << box.w << "," << box.h;
      break;
    case Kind::Scribble:
      os << "scribble:" << scribble.size() << " points";
      break;
    case Kind::Mask:
      os << "mask:" << mask.width << "x" << mask.height;
      break;
  }
  return os.str();
}

namespace {
// Normalized bbox of the prompt payload, as pixel coordinates.
void prompt_pixel_bbox(const PromptSpec& p, int64_t h, int64_t w, double* x0, double* y0,
                       double* x1, double* y1) {
  switch (p.kind) {
    case PromptSpec::Kind::Point:
      *x0 = *x1 = p.px * static_cast<double>(w);
      *y0 = *y1 = p.py * static_cast<double>(h);
      break;
    case PromptSpec::Kind::Box:
      *x0 = (p.box.cx - 0.5 * p.box.w) * static_cast<double>(w);
      *x1 = (p.box.cx + 0.5 * p.box.w) * static_cast<double>(w);
      *y0 = (p.box.cy - 0.5 * p.box.h) * static_cast<double>(h);
      *y1 = (p.box.cy + 0.5 * p.box.h) * static_cast<double>(h);
      break;
    case PromptSpec::Kind::Scribble: {
      *x0 = *y0 = 1e30;
      *x1 = *y1 = -1e30;
      for (const auto& [x, y] : p.scribble) {
        *x0 = std::min(*x0, x * static_cast<double>(w));
        *x1 = std::max(*x1, x * static_cast<double>(w));
        *y0 = std::min(*y0, y * static_cast<double>(h));
        *y1 = std::max(*y1, y * static_cast<double>(h));
      }
      break;
    }
    case PromptSpec::Kind::Mask: {
      const auto grid = decode_rle(p.mask);
      int64_t mx0 = p.mask.width, my0 = p.mask.height, mx1 = -1, my1 = -1;
      for (int64_t y = 0; y < p.mask.height; ++y)
        for (int64_t x = 0; x < p.mask.width; ++x)
          if (grid[y * p.mask.width + x]) {
            mx0 = std::min(mx0, x);
            my0 = std::min(my0, y);
            mx1 = std::max(mx1, x);
            my1 = std::max(my1, y);
          }
      UOP_CHECK(mx1 >= 0, "mask prompt empty");
      // Mask grid coordinates map onto the image proportionally.
      const double sx = static_cast<double>(w) / static_cast<double>(p.mask.width);
      const double sy = static_cast<double>(h) / static_cast<double>(p.mask.height);
      *x0 = static_cast<double>(mx0) * sx;
      *x1 = static_cast<double>(mx1 + 1) * sx;
      *y0 = static_cast<double>(my0) * sy;
      *y1 = static_cast<double>(my1 + 1) * sy;
      break;
    }
  }
}
}  // namespace

PixelRect prompt_square(const PromptSpec& prompt, int64_t image_h, int64_t image_w,
                        double point_radius_frac) {
  double x0, y0, x1, y1;
  prompt_pixel_bbox(prompt, image_h, image_w, &x0, &y0, &x1, &y1);
  double side;
  double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  if (prompt.kind == PromptSpec::Kind::Point) {
    const double r =
        std::round(point_radius_frac * static_cast<double>(std::max(image_h, image_w)));
    side = 2.0 * r;
  } else {
    side = std::max(x1 - x0, y1 - y0);
  }
  int64_t s = static_cast<int64_t>(std::llround(side));
  PixelRect r;
  const int64_t sx = std::min<int64_t>(s, image_w);
  const int64_t sy = std::min<int64_t>(s, image_h);
  r.x0 = static_cast<int64_t>(std::llround(cx - 0.5 * side));
  r.y0 = static_cast<int64_t>(std::llround(cy - 0.5 * side));
  // shift inside bounds, then the clip above caps the side
  r.x0 = std::clamp<int64_t>(r.x0, 0, image_w - sx);
  r.y0 = std::clamp<int64_t>(r.y0, 0, image_h - sy);
  r.x1 = r.x0 + sx;
  r.y1 = r.y0 + sy;
  return r;
}

namespace {
// pixel position -> continuous 1/4-grid coordinate (cell centers at integers)
inline double to_grid(double pixel, int64_t image_size, int64_t map_size) {
  const double stride = static_cast<double>(image_size) / static_cast<double>(map_size);
  return pixel / stride - 0.5;
}
}  // namespace

std::vector<std::pair<double, double>> fine_sample_coords(const PromptSpec& prompt,
                                                          int64_t image_h, int64_t image_w,
                                                          int64_t map_h, int64_t map_w,
                                                          int64_t max_samples, Rng& rng) {
  std::vector<std::pair<double, double>> coords;
  switch (prompt.kind) {
    case PromptSpec::Kind::Point: {
      coords.emplace_back(to_grid(prompt.py * static_cast<double>(image_h), image_h, map_h),
                          to_grid(prompt.px * static_cast<double>(image_w), image_w, map_w));
      break;
    }
    case PromptSpec::Kind::Box: {
      const double x0 = (prompt.box.cx - 0.5 * prompt.box.w) * static_cast<double>(image_w);
      const double x1 = (prompt.box.cx + 0.5 * prompt.box.w) * static_cast<double>(image_w);
      const double y0 = (prompt.box.cy - 0.5 * prompt.box.h) * static_cast<double>(image_h);
      const double y1 = (prompt.box.cy + 0.5 * prompt.box.h) * static_cast<double>(image_h);
      const double stride_y = static_cast<double>(image_h) / static_cast<double>(map_h);
      const double stride_x = static_cast<double>(image_w) / static_cast<double>(map_w);
      for (int64_t gy = 0; gy < map_h; ++gy) {
        const double cy = (static_cast<double>(gy) + 0.5) * stride_y;
        if (cy < y0 || cy >= y1) continue;
        for (int64_t gx = 0; gx < map_w; ++gx) {
          const double cx = (static_cast<double>(gx) + 0.5) * stride_x;
          if (cx < x0 || cx >= x1) continue;
          coords.emplace_back(static_cast<double>(gy), static_cast<double>(gx));
        }
      }
      break;
    }
    case PromptSpec::Kind::Mask: {
      const auto grid = decode_rle(prompt.mask);
      // Foreground fraction per map cell; a cell counts when >= half covered.
      const double sy =
          static_cast<double>(prompt.mask.height) / static_cast<double>(map_h);
      const double sx = static_cast<double>(prompt.mask.width) / static_cast<double>(map_w);
      for (int64_t gy = 0; gy < map_h; ++gy) {
        const int64_t py0 = static_cast<int64_t>(std::floor(gy * sy));
        const int64_t py1 =
            std::min<int64_t>(prompt.mask.height, static_cast<int64_t>(std::ceil((gy + 1) * sy)));
        for (int64_t gx = 0; gx < map_w; ++gx) {
          const int64_t px0 = static_cast<int64_t>(std::floor(gx * sx));
          const int64_t px1 =
              std::min<int64_t>(prompt.mask.width, static_cast<int64_t>(std::ceil((gx + 1) * sx)));
          int64_t fg = 0, tot = 0;
          for (int64_t y = py0; y < py1; ++y)
            for (int64_t x = px0; x < px1; ++x) {
              ++tot;
              fg += grid[y * prompt.mask.width + x];
            }
          if (tot > 0 && 2 * fg >= tot)
            coords.emplace_back(static_cast<double>(gy), static_cast<double>(gx));
        }
      }
      break;
    }
    case PromptSpec::Kind::Scribble: {
      // Unit-spaced samples along each segment, in grid units.
      for (size_t s = 0; s + 1 < prompt.scribble.size(); ++s) {
        const double gy0 =
            to_grid(prompt.scribble[s].second * static_cast<double>(image_h), image_h, map_h);
        const double gx0 =
            to_grid(prompt.scribble[s].first * static_cast<double>(image_w), image_w, map_w);
        const double gy1 =
            to_grid(prompt.scribble[s + 1].second * static_cast<double>(image_h), image_h, map_h);
        const double gx1 =
            to_grid(prompt.scribble[s + 1].first * static_cast<double>(image_w), image_w, map_w);
        const double len = std::hypot(gy1 - gy0, gx1 - gx0);
        const auto steps = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(len)));
        for (int64_t i = 0; i <= steps; ++i) {
          if (s > 0 && i == 0) continue;  // avoid duplicating segment joints
          const double f = static_cast<double>(i) / static_cast<double>(steps);
          coords.emplace_back(gy0 + f * (gy1 - gy0), gx0 + f * (gx1 - gx0));
        }
      }
      break;
    }
  }
  UOP_CHECK(!coords.empty(), "prompt outside map");
  if (static_cast<int64_t>(coords.size()) > max_samples) {
    auto keep = rng.sample_without_replacement(coords.size(), max_samples);
    std::sort(keep.begin(), keep.end());  // preserve scan order
    std::vector<std::pair<double, double>> sub;
    sub.reserve(keep.size());
    for (size_t k : keep) sub.push_back(coords[k]);
    coords = std::move(sub);
  }
  return coords;
}

Tensor sample_map(const Tensor& map_chw,
                  const std::vector<std::pair<double, double>>& coords) {
  UOP_CHECK(map_chw.rank() == 3, "sample_map: need CHW");
  const int64_t c = map_chw.shape[0], h = map_chw.shape[1], w = map_chw.shape[2];
  Tensor out({static_cast<int64_t>(coords.size()), c});
  for (size_t i = 0; i < coords.size(); ++i) {
    double y = std::clamp(coords[i].first, 0.0, static_cast<double>(h - 1));
    double x = std::clamp(coords[i].second, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<int64_t>(std::floor(y));
    const auto x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const int64_t x1 = std::min(x0 + 1, w - 1);
    const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
    for (int64_t ch = 0; ch < c; ++ch) {
      out.at(static_cast<int64_t>(i), ch) =
          (1 - wy) * ((1 - wx) * map_chw.at(ch, y0, x0) + wx * map_chw.at(ch, y0, x1)) +
          wy * ((1 - wx) * map_chw.at(ch, y1, x0) + wx * map_chw.at(ch, y1, x1));
    }
  }
  return out;
}

}  // namespace uop
