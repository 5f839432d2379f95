#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "uop/prompt.hpp"

using namespace uop;
using namespace uop::testing;

TEST_CASE("prompt_square: point prompts give a 2r square at the point") {
  PromptSpec p;
  p.kind = PromptSpec::Kind::Point;
  p.px = 0.5;
  p.py = 0.5;
  // r = round(0.05 * 64) = 3 -> side 6 centered at pixel 32
  const PixelRect r = prompt_square(p, 64, 64, 0.05);
  CHECK(r.width() == 6);
  CHECK(r.height() == 6);
  CHECK(r.x0 == 29);
  CHECK(r.y0 == 29);
}

TEST_CASE("prompt_square: square box prompts are fixed points") {
  PromptSpec p;
  p.kind = PromptSpec::Kind::Box;
  p.box = Box{0.5, 0.5, 0.25, 0.25};
  const PixelRect r = prompt_square(p, 64, 64);
  CHECK(r.width() == 16);
  CHECK(r.height() == 16);
  CHECK(r.x0 == 24);
  CHECK(r.y0 == 24);
}

TEST_CASE("prompt_square: scribble bbox 10x30 becomes a 30x30 square at its center") {
  PromptSpec p;
  p.kind = PromptSpec::Kind::Scribble;
  // bbox pixels x in [40, 50], y in [20, 50] on a 100x100 image
  p.scribble = {{0.40, 0.20}, {0.50, 0.50}, {0.45, 0.35}};
  const PixelRect r = prompt_square(p, 100, 100);
  CHECK(r.width() == 30);
  CHECK(r.height() == 30);
  // center (45, 35) -> x0 = 30, y0 = 20
  CHECK(r.x0 == 30);
  CHECK(r.y0 == 20);
}

TEST_CASE("prompt_square clamps by shifting and is idempotent on its own output") {
  Rng rng(8);
  for (int it = 0; it < 200; ++it) {
    PromptSpec p;
    p.kind = PromptSpec::Kind::Box;
    p.box = Box{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.02, 0.9),
                rng.uniform(0.02, 0.9)};
    const int64_t h = 48, w = 80;
    const PixelRect r1 = prompt_square(p, h, w);
    CHECK(r1.x0 >= 0);
    CHECK(r1.y0 >= 0);
    CHECK(r1.x1 <= w);
    CHECK(r1.y1 <= h);
    CHECK(r1.width() > 0);
    // feed the output rect back as a box prompt
    PromptSpec back;
    back.kind = PromptSpec::Kind::Box;
    back.box = Box::from_corners(static_cast<double>(r1.x0) / w, static_cast<double>(r1.y0) / h,
                                 static_cast<double>(r1.x1) / w, static_cast<double>(r1.y1) / h);
    const PixelRect r2 = prompt_square(back, h, w);
    CHECK(r2 == r1);
  }
}

TEST_CASE("fine samples: point at an exact grid center returns that cell") {
  // 64x64 image, 16x16 map: cell (i,j) center is at pixel (4j+2, 4i+2)
  PromptSpec p;
  p.kind = PromptSpec::Kind::Point;
  p.px = (4.0 * 5 + 2) / 64.0;
  p.py = (4.0 * 3 + 2) / 64.0;
  Rng rng(0);
  const auto coords = fine_sample_coords(p, 64, 64, 16, 16, 256, rng);
  REQUIRE(coords.size() == 1);
  CHECK(coords[0].first == doctest::Approx(3.0));
  CHECK(coords[0].second == doctest::Approx(5.0));

  Tensor map = random_tensor({7, 16, 16}, rng);
  const Tensor rows = sample_map(map, coords);
  for (int64_t c = 0; c < 7; ++c) CHECK(rows.at(0, c) == map.at(c, 3, 5));
}

TEST_CASE("fine samples: mask covering exactly 4 cells lists them in scan order") {
  // mask at image resolution 64x64 covering cells (2,2),(2,3),(3,2),(3,3)
  std::vector<uint8_t> grid(64 * 64, 0);
  for (int y = 8; y < 16; ++y)
    for (int x = 8; x < 16; ++x) grid[y * 64 + x] = 1;
  PromptSpec p;
  p.kind = PromptSpec::Kind::Mask;
  p.mask = encode_rle(grid, 64, 64);
  Rng rng(0);
  const auto coords = fine_sample_coords(p, 64, 64, 16, 16, 256, rng);
  REQUIRE(coords.size() == 4);
  CHECK(coords[0] == std::pair<double, double>{2.0, 2.0});
  CHECK(coords[1] == std::pair<double, double>{2.0, 3.0});
  CHECK(coords[2] == std::pair<double, double>{3.0, 2.0});
  CHECK(coords[3] == std::pair<double, double>{3.0, 3.0});
}

TEST_CASE("fine samples: large masks subsample deterministically to the cap") {
  std::vector<uint8_t> grid(256 * 256, 1);
  PromptSpec p;
  p.kind = PromptSpec::Kind::Mask;
  p.mask = encode_rle(grid, 256, 256);  // covers 64x64 = 4096 cells
  Rng r1(123), r2(123), r3(124);
  const auto a = fine_sample_coords(p, 256, 256, 64, 64, 256, r1);
  const auto b = fine_sample_coords(p, 256, 256, 64, 64, 256, r2);
  const auto c = fine_sample_coords(p, 256, 256, 64, 64, 256, r3);
  REQUIRE(a.size() == 256);
  CHECK(a == b);       // same seed, same rows
  CHECK(a != c);       // different seed, different subsample
  // subsampling preserves scan order
  for (size_t i = 1; i < a.size(); ++i)
    CHECK((a[i - 1].first < a[i].first ||
           (a[i - 1].first == a[i].first && a[i - 1].second < a[i].second)));
}

TEST_CASE("fine samples: scribbles sample along the polyline") {
  PromptSpec p;
  p.kind = PromptSpec::Kind::Scribble;
  p.scribble = {{0.1, 0.5}, {0.9, 0.5}};  // horizontal line
  Rng rng(0);
  const auto coords = fine_sample_coords(p, 64, 64, 16, 16, 256, rng);
  CHECK(coords.size() >= 2);
  for (size_t i = 1; i < coords.size(); ++i) {
    CHECK(coords[i].first == doctest::Approx(coords[0].first));  // constant y
    CHECK(coords[i].second > coords[i - 1].second);
  }
}

TEST_CASE("prompts that rasterize to nothing throw") {
  PromptSpec p;
  p.kind = PromptSpec::Kind::Box;
  p.box = Box{0.02, 0.02, 0.001, 0.001};  // falls between cell centers
  Rng rng(0);
  CHECK_THROWS_WITH(fine_sample_coords(p, 64, 64, 16, 16, 256, rng),
                    doctest::Contains("prompt outside map"));
}

TEST_CASE("sampled rows are reconstructible bilinear blends of the map") {
  Rng rng(77);
  Tensor map = random_tensor({4, 8, 8}, rng);
  const std::vector<std::pair<double, double>> pts = {{1.25, 6.5}, {0.0, 0.0}, {6.9, 3.1}};
  const Tensor rows = sample_map(map, pts);
  for (size_t i = 0; i < pts.size(); ++i) {
    const double y = pts[i].first, x = pts[i].second;
    const auto y0 = static_cast<int64_t>(std::floor(y));
    const auto x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y1 = std::min<int64_t>(y0 + 1, 7);
    const int64_t x1 = std::min<int64_t>(x0 + 1, 7);
    const double wy = y - y0, wx = x - x0;
    for (int64_t c = 0; c < 4; ++c) {
      const double expect = (1 - wy) * ((1 - wx) * map.at(c, y0, x0) + wx * map.at(c, y0, x1)) +
                            wy * ((1 - wx) * map.at(c, y1, x0) + wx * map.at(c, y1, x1));
      CHECK(rows.at(static_cast<int64_t>(i), c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("prompt syntax parses every kind and validates payloads") {
  const PromptSpec pt = PromptSpec::parse("point:0.5,0.25");
  CHECK(pt.kind == PromptSpec::Kind::Point);
  CHECK(pt.px == 0.5);
  const PromptSpec bx = PromptSpec::parse("box:0.5,0.5,0.2,0.3");
  CHECK(bx.kind == PromptSpec::Kind::Box);
  CHECK(bx.box.h == 0.3);
  const PromptSpec sc = PromptSpec::parse("scribble:0.1,0.1;0.2,0.2;0.3,0.1");
  CHECK(sc.kind == PromptSpec::Kind::Scribble);
  CHECK(sc.scribble.size() == 3);

  const std::string mask_path =
      (std::filesystem::temp_directory_path() / "uop_maskprompt.json").string();
  {
    std::ofstream out(mask_path);
    out << R"({"h":4,"w":4,"counts":[4,4,8]})";
  }
  const PromptSpec mk = PromptSpec::parse("mask:" + mask_path);
  CHECK(mk.kind == PromptSpec::Kind::Mask);
  CHECK(mk.mask.area() == 4);
  std::filesystem::remove(mask_path);

  CHECK_THROWS(PromptSpec::parse("blob:1,2"));
  CHECK_THROWS(PromptSpec::parse("point:1.5,0.5"));  // out of range
  CHECK_THROWS(PromptSpec::parse("scribble:0.1,0.1"));
}
