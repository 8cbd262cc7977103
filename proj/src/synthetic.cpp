#include "didfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace didfuse {
namespace {

struct Blob {
  double cy, cx, ry, rx, level;
};

struct Rect {
  double y0, x0, y1, x1, level;
};

}  // namespace

SyntheticPair synthetic_pair(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height < 2 || width < 2) throw ShapeError("synthetic images must be at least 2x2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = static_cast<double>(height), w = static_cast<double>(width);

  // Scene layout shared by both modalities.
  std::vector<Rect> rects(3 + rng() % 3);
  for (auto& r : rects) {
    const double y = u(rng) * h, x = u(rng) * w;
    r = {y, x, y + (0.15 + 0.35 * u(rng)) * h, x + (0.15 + 0.35 * u(rng)) * w, u(rng)};
  }
  std::vector<Blob> hot(1 + rng() % 3);
  for (auto& b : hot) b = {u(rng) * h, u(rng) * w, (0.05 + 0.1 * u(rng)) * h, (0.04 + 0.08 * u(rng)) * w, 0.6 + 0.4 * u(rng)};
  const double sky = 0.3 + 0.4 * u(rng);
  const double fy = (1.0 + 3.0 * u(rng)) * 2.0 * std::numbers::pi / h;
  const double fx = (1.0 + 3.0 * u(rng)) * 2.0 * std::numbers::pi / w;
  const double tex_fy = (6.0 + 6.0 * u(rng)) * 2.0 * std::numbers::pi / h;
  const double tex_fx = (6.0 + 6.0 * u(rng)) * 2.0 * std::numbers::pi / w;
  const double phase = 2.0 * std::numbers::pi * u(rng);
  std::normal_distribution<double> noise(0.0, 0.02);

  SyntheticPair p;
  char id[32];
  std::snprintf(id, sizeof(id), "pair%05llu", static_cast<unsigned long long>(seed));
  p.id = id;
  p.ir = Image(height, width);
  p.vis = Image(height, width);
  for (std::size_t yi = 0; yi < height; ++yi) {
    for (std::size_t xi = 0; xi < width; ++xi) {
      const double y = static_cast<double>(yi), x = static_cast<double>(xi);
      double scene = sky * (0.7 + 0.3 * y / h);
      for (const auto& r : rects)
        if (y >= r.y0 && y < r.y1 && x >= r.x0 && x < r.x1) scene = 0.5 * scene + 0.5 * r.level;
      double heat = 0.0;
      for (const auto& b : hot) {
        const double dy = (y - b.cy) / b.ry, dx = (x - b.cx) / b.rx;
        heat = std::max(heat, b.level * std::exp(-0.5 * (dy * dy + dx * dx)));
      }
      const double shading = 0.1 * std::sin(fy * y + phase) * std::cos(fx * x);
      const double texture = 0.08 * std::sin(tex_fy * y) * std::sin(tex_fx * x + phase);
      p.ir.at(yi, xi) = std::clamp(0.25 + 0.35 * scene + 0.6 * heat + noise(rng), 0.0, 1.0);
      p.vis.at(yi, xi) = std::clamp(scene + shading + texture - 0.2 * heat + noise(rng), 0.0, 1.0);
    }
  }
  return p;
}

std::vector<SyntheticPair> synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                           std::uint64_t seed) {
  std::vector<SyntheticPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_pair(height, width, seed * 1000003ULL + i));
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "pair%04zu", i);
    out[i].id = id;
  }
  return out;
}

PairManifest write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t height,
                                    std::size_t width, std::uint64_t seed) {
  PairManifest m;
  for (const auto& p : synthetic_pairs(count, height, width, seed)) {
    PairEntry e{p.id, dir / "ir" / (p.id + ".png"), dir / "vis" / (p.id + ".png")};
    write_image(p.ir, e.ir);
    write_image(p.vis, e.vis);
    m.pairs.push_back(std::move(e));
  }
  return m;
}

}  // namespace didfuse
