#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "splatgraph/core_math.hpp"

namespace splatgraph {

// Equirectangular sky map. Texels are stored pre-activation; queries return
// bilinearly interpolated softplus(texel), so sky colors are always positive.
// Convention: z-up world, v=0 row faces straight up, u wraps in longitude.
class EnvironmentMap {
 public:
  EnvironmentMap() = default;
  EnvironmentMap(int height, int width, double initial_raw = 0.0)
      : height_(height), width_(width),
        texels_(static_cast<std::size_t>(height) * width * 3, initial_raw) {
    if (height < 1 || width < 2)
      throw std::invalid_argument("EnvironmentMap: degenerate size");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::vector<double>& texels() { return texels_; }
  const std::vector<double>& texels() const { return texels_; }

  // Four bilinear taps for a direction; shared by query and its backward.
  struct Taps {
    int idx[4];       // texel indices (row-major pixel index, not channel)
    double w[4];      // bilinear weights, sum to 1
  };

  Taps taps(const Vec3& dir_in) const {
    Vec3 d = dir_in.normalized();
    double lon = std::atan2(d[1], d[0]);                 // (-pi, pi]
    double lat = std::asin(std::clamp(d[2], -1.0, 1.0));  // [-pi/2, pi/2]
    double uf = (lon + M_PI) / (2.0 * M_PI) * width_ - 0.5;
    double vf = (1.0 - (lat + M_PI / 2.0) / M_PI) * height_ - 0.5;
    double fx = uf - std::floor(uf);
    double fy = vf - std::floor(vf);
    int x0 = static_cast<int>(std::floor(uf));
    int y0 = static_cast<int>(std::floor(vf));
    auto wrap_x = [&](int x) { return ((x % width_) + width_) % width_; };
    auto clamp_y = [&](int y) { return std::min(std::max(y, 0), height_ - 1); };
    int x1 = wrap_x(x0 + 1);
    x0 = wrap_x(x0);
    int y1 = clamp_y(y0 + 1);
    y0 = clamp_y(y0);
    Taps t;
    t.idx[0] = y0 * width_ + x0;
    t.idx[1] = y0 * width_ + x1;
    t.idx[2] = y1 * width_ + x0;
    t.idx[3] = y1 * width_ + x1;
    t.w[0] = (1 - fx) * (1 - fy);
    t.w[1] = fx * (1 - fy);
    t.w[2] = (1 - fx) * fy;
    t.w[3] = fx * fy;
    return t;
  }

  Vec3 query(const Vec3& dir) const {
    Taps t = taps(dir);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 4; ++k)
      for (int ch = 0; ch < 3; ++ch)
        c[ch] += t.w[k] * softplus(texels_[t.idx[k] * 3 + ch]);
    return c;
  }

  // Scatter dL/dcolor into a raw-texel gradient buffer (same layout/size).
  void query_backward(const Vec3& dir, const Vec3& dcolor,
                      std::vector<double>& texel_grad) const {
    Taps t = taps(dir);
    for (int k = 0; k < 4; ++k)
      for (int ch = 0; ch < 3; ++ch) {
        std::size_t j = static_cast<std::size_t>(t.idx[k]) * 3 + ch;
        texel_grad[j] += t.w[k] * softplus_grad(texels_[j]) * dcolor[ch];
      }
  }

  // Seed raw texels so that query returns approximately `color` at `dir`'s
  // texel (exact at texel centers).
  void set_color(int row, int col, const Vec3& color) {
    for (int ch = 0; ch < 3; ++ch)
      texels_[(static_cast<std::size_t>(row) * width_ + col) * 3 + ch] =
          softplus_inverse(std::max(color[ch], 1e-6));
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> texels_;
};

}  // namespace splatgraph
