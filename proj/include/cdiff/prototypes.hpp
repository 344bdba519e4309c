#pragma once

// Procedural concept prototypes. Shapes are laid out on a 16x16 design grid
// and resampled to the requested size, so same-branch concepts (fruit on a
// table) stay visually close and cross-branch ones stay far apart.

#include <map>
#include <string>
#include <vector>

#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"

namespace cdiff {

namespace detail {

class Canvas {
 public:
  Canvas(int w, int h, double fill) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h), fill) {}

  // Coordinates in 16-unit design space; a pixel is painted when its centre
  // falls inside the shape.
  void rect(double r0, double r1, double c0, double c1, double v) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const double gx = gx_of(x), gy = gy_of(y);
        if (gy >= r0 && gy < r1 && gx >= c0 && gx < c1) at(x, y) = v;
      }
  }

  void ellipse(double cx, double cy, double rx, double ry, double v) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const double dx = (gx_of(x) + 0.5 - cx) / rx;
        const double dy = (gy_of(y) + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) at(x, y) = v;
      }
  }

  void table() {
    rect(11, 13, 1, 15, 0.55);
    rect(13, 16, 2, 4, 0.55);
    rect(13, 16, 12, 14, 0.55);
  }

  std::vector<double> pixels() const { return px_; }

 private:
  // Integer-aligned at 16x16; other sizes sample the design grid at pixel centres.
  double gx_of(int x) const { return w_ == 16 ? x : (x + 0.5) * 16.0 / w_ - 0.5; }
  double gy_of(int y) const { return h_ == 16 ? y : (y + 0.5) * 16.0 / h_ - 0.5; }
  double& at(int x, int y) { return px_[static_cast<std::size_t>(y * w_ + x)]; }

  int w_, h_;
  std::vector<double> px_;
};

}  // namespace detail

inline const std::vector<std::string>& procedural_concepts() {
  static const std::vector<std::string> ids{"apple", "lemon", "bird", "cat", "car"};
  return ids;
}

inline std::vector<double> procedural_prototype(const std::string& concept_id, int width,
                                                int height) {
  require(width > 0 && height > 0, "prototype dimensions must be positive");
  using detail::Canvas;
  if (concept_id == "apple") {
    Canvas c(width, height, 0.15);
    c.ellipse(8, 7.5, 3.5, 3.5, 0.8);
    c.table();
    c.rect(3, 5, 8, 9, 0.4);  // stem
    return c.pixels();
  }
  if (concept_id == "lemon") {
    Canvas c(width, height, 0.15);
    c.ellipse(8, 8, 4.6, 2.8, 0.95);
    c.table();
    return c.pixels();
  }
  if (concept_id == "bird") {
    Canvas c(width, height, 0.7);  // open sky
    c.ellipse(6, 6, 3, 1.8, 0.1);
    c.ellipse(9.5, 4.5, 1.5, 1.2, 0.1);
    c.rect(7, 10, 4, 5, 0.1);
    return c.pixels();
  }
  if (concept_id == "cat") {
    Canvas c(width, height, 0.15);
    c.ellipse(8, 8, 3, 3, 0.35);
    c.ellipse(8, 4, 2, 2, 0.35);
    c.table();
    c.rect(1, 3, 6, 7, 0.35);   // ears
    c.rect(1, 3, 10, 11, 0.35);
    return c.pixels();
  }
  if (concept_id == "car") {
    Canvas c(width, height, 0.3);
    c.rect(6, 10, 2, 14, 0.9);
    c.rect(4, 6, 5, 11, 0.9);
    c.rect(10, 12, 3, 6, 0.0);   // wheels
    c.rect(10, 12, 10, 13, 0.0);
    return c.pixels();
  }
  fail(ErrorKind::config, "no procedural prototype for concept '" + concept_id + "'");
}

/// One equal-weight component per concept, in the given order.
inline MixtureModel prototype_mixture(const std::vector<std::string>& concepts, int width,
                                      int height, double sigma0 = 0.05,
                                      const std::map<std::string, std::vector<double>>& overrides = {}) {
  std::vector<MixtureComponent> comps;
  for (const auto& id : concepts) {
    auto it = overrides.find(id);
    comps.push_back({id, 1.0,
                     it != overrides.end() ? it->second : procedural_prototype(id, width, height),
                     sigma0});
  }
  return MixtureModel(std::move(comps), width, height);
}

inline MixtureModel default_mixture(int width = 16, int height = 16, double sigma0 = 0.05) {
  return prototype_mixture(procedural_concepts(), width, height, sigma0);
}

}  // namespace cdiff
