#pragma once

// Image-quality and task-fidelity measures over single-channel images in
// [0, 1] (finished latents).

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"

namespace cdiff {

inline constexpr double kPsnrCapDb = 120.0;

inline void require_same_shape(const Latent& a, const Latent& b) {
  require(a.width == b.width && a.height == b.height && a.size() == b.size(),
          "image dimensions differ");
}

inline double mse(const Latent& a, const Latent& b) {
  require_same_shape(a, b);
  require(a.size() > 0, "mse of empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

inline double psnr_from_mse(double err, double peak = 1.0) {
  require(peak > 0.0, "PSNR peak must be positive");
  if (err < 1e-12) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / err));
}

inline double psnr(const Latent& a, const Latent& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

struct SsimParams {
  int window = 7;
  double window_std = 1.5;
  double dynamic_range = 1.0;

  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

/// Normalized square Gaussian window, row-major.
inline std::vector<double> gaussian_window(int side, double std_dev) {
  require(side >= 1 && side % 2 == 1, "SSIM window side must be odd");
  require(std_dev > 0.0, "SSIM window std must be positive");
  std::vector<double> w(static_cast<std::size_t>(side * side));
  const double c = (side - 1) / 2.0;
  double total = 0.0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double r2 = (x - c) * (x - c) + (y - c) * (y - c);
      total += w[static_cast<std::size_t>(y * side + x)] = std::exp(-r2 / (2.0 * std_dev * std_dev));
    }
  for (double& v : w) v /= total;
  return w;
}

/// Mean SSIM over every fully interior window position (no padding).
inline double ssim(const Latent& a, const Latent& b, const SsimParams& params = {}) {
  require_same_shape(a, b);
  require(params.dynamic_range > 0.0, "SSIM dynamic range must be positive");
  const int k = params.window;
  require(k <= a.width && k <= a.height, "image smaller than SSIM window");
  const auto w = gaussian_window(k, params.window_std);
  const double c1 = params.c1();
  const double c2 = params.c2();

  double total = 0.0;
  int count = 0;
  for (int oy = 0; oy + k <= a.height; ++oy) {
    for (int ox = 0; ox + k <= a.width; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
          const auto idx = static_cast<std::size_t>((oy + y) * a.width + ox + x);
          const double wt = w[static_cast<std::size_t>(y * k + x)];
          const double va = a.data[idx];
          const double vb = b.data[idx];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / count;
}

struct FidelityVerdict {
  std::string concept_id;
  double distance = 0.0;
  double margin = 0.0;  // runner-up concept distance minus best
};

/// Nearest prototype by Euclidean distance. Concepts with several components
/// use their closest one; exact ties resolve to the lexicographically smaller id.
inline FidelityVerdict classify(const Latent& x, const MixtureModel& prototypes) {
  require(x.size() == prototypes.pixels() && x.width == prototypes.width(),
          "image dimensions do not match prototypes");
  std::vector<std::pair<std::string, double>> best;  // per concept
  for (const auto& comp : prototypes.components()) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x.data[i] - comp.mean[i];
      sq += d * d;
    }
    const double dist = std::sqrt(sq);
    auto it = std::find_if(best.begin(), best.end(),
                           [&](const auto& e) { return e.first == comp.concept_id; });
    if (it == best.end())
      best.emplace_back(comp.concept_id, dist);
    else
      it->second = std::min(it->second, dist);
  }
  std::sort(best.begin(), best.end(), [](const auto& l, const auto& r) {
    return l.second != r.second ? l.second < r.second : l.first < r.first;
  });
  FidelityVerdict v{best[0].first, best[0].second, 0.0};
  if (best.size() > 1) v.margin = best[1].second - best[0].second;
  return v;
}

/// Copy with every value clamped to [0, 1].
inline Latent clamp_unit(Latent x) {
  for (double& v : x.data) v = std::clamp(v, 0.0, 1.0);
  return x;
}

}  // namespace cdiff
