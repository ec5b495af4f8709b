#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "vitac/image.hpp"
#include "vitac/tensor.hpp"

namespace vitac {

// Contact summary handed from the simulator to the sensor model.
struct ContactState {
  double grip_pressure = 0.0;            // normalized [0,1]
  std::array<double, 2> lateral_force = {0.0, 0.0};  // normalized, |f| <= 1
  bool in_contact = false;
};

struct TactileConfig {
  int height = 24;   // keeps the 3:4 aspect of the full-resolution gel map
  int width = 32;
  double cover_attenuation = 0.6;  // protective topper damping
  double depth_gain = 1.0;         // grip pressure -> peak normal strain
  double shear_gain = 1.0;         // lateral force -> peak marker displacement
  double patch_sigma = 0.22;       // contact bump width, normalized gel units
  double elasticity_limit = 1.5;   // max marker displacement magnitude
};

// Sparse 7x9 grid of marker displacements in normalized gel units.
struct MarkerGrid {
  static constexpr int kRows = 7;
  static constexpr int kCols = 9;
  // [row][col][2] flattened, (dx, dy)
  std::array<double, kRows * kCols * 2> d = {};

  double& dx(int i, int j) { return d[(static_cast<size_t>(i) * kCols + j) * 2]; }
  double& dy(int i, int j) { return d[(static_cast<size_t>(i) * kCols + j) * 2 + 1]; }
  double dx(int i, int j) const { return d[(static_cast<size_t>(i) * kCols + j) * 2]; }
  double dy(int i, int j) const { return d[(static_cast<size_t>(i) * kCols + j) * 2 + 1]; }
};

// Dense per-pixel (x, y, z) strain field; z-strain (depth) is nonnegative.
struct StrainMap {
  int height = 0;
  int width = 0;
  double cover_attenuation = 1.0;
  std::vector<double> s;  // 3 * height * width, channels x, y, z

  double& at(int c, int y, int x) {
    return s[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return s[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct TactileFrame {
  MarkerGrid markers;
  std::vector<double> depth;  // height x width normal strain
  StrainMap strain;
};

// Bilinear interpolation of the marker grid onto an H x W tangential field
// (2 channels: x then y). Exact at marker sites and for any bilinear field.
inline std::vector<double> strain_from_markers(const MarkerGrid& m, int h, int w) {
  require(h >= MarkerGrid::kRows && w >= MarkerGrid::kCols,
          "strain_from_markers: target " + std::to_string(h) + "x" +
              std::to_string(w) + " smaller than marker grid 7x9");
  std::vector<double> out(static_cast<size_t>(2) * h * w);
  for (int y = 0; y < h; ++y) {
    const double gy = static_cast<double>(y) * (MarkerGrid::kRows - 1) / (h - 1);
    const int i0 = std::min(static_cast<int>(gy), MarkerGrid::kRows - 2);
    const double fy = gy - i0;
    for (int x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) * (MarkerGrid::kCols - 1) / (w - 1);
      const int j0 = std::min(static_cast<int>(gx), MarkerGrid::kCols - 2);
      const double fx = gx - j0;
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
      const double w10 = fy * (1 - fx), w11 = fy * fx;
      out[static_cast<size_t>(y) * w + x] =
          w00 * m.dx(i0, j0) + w01 * m.dx(i0, j0 + 1) + w10 * m.dx(i0 + 1, j0) +
          w11 * m.dx(i0 + 1, j0 + 1);
      out[(static_cast<size_t>(h) + y) * w + x] =
          w00 * m.dy(i0, j0) + w01 * m.dy(i0, j0 + 1) + w10 * m.dy(i0 + 1, j0) +
          w11 * m.dy(i0 + 1, j0 + 1);
    }
  }
  return out;
}

// Forward sensor model: a smooth contact-patch bump scales the normal
// strain with grip pressure, and a radially weighted copy of the lateral
// force displaces the markers. The protective cover attenuates both.
inline TactileFrame simulate_sensor(const ContactState& contact,
                                    const TactileConfig& cfg) {
  TactileFrame frame;
  const double att = cfg.cover_attenuation;
  const double s2 = 2.0 * cfg.patch_sigma * cfg.patch_sigma;

  frame.depth.assign(static_cast<size_t>(cfg.height) * cfg.width, 0.0);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const double v = (y + 0.5) / cfg.height - 0.5;
      const double u = (x + 0.5) / cfg.width - 0.5;
      const double bump = std::exp(-(u * u + v * v) / s2);
      frame.depth[static_cast<size_t>(y) * cfg.width + x] =
          contact.grip_pressure * cfg.depth_gain * bump * att;
    }

  for (int i = 0; i < MarkerGrid::kRows; ++i)
    for (int j = 0; j < MarkerGrid::kCols; ++j) {
      const double v = static_cast<double>(i) / (MarkerGrid::kRows - 1) - 0.5;
      const double u = static_cast<double>(j) / (MarkerGrid::kCols - 1) - 0.5;
      const double bump = std::exp(-(u * u + v * v) / s2);
      double dx = contact.lateral_force[0] * cfg.shear_gain * bump * att;
      double dy = contact.lateral_force[1] * cfg.shear_gain * bump * att;
      const double mag = std::hypot(dx, dy);
      if (mag > cfg.elasticity_limit) {
        dx *= cfg.elasticity_limit / mag;
        dy *= cfg.elasticity_limit / mag;
      }
      frame.markers.dx(i, j) = dx;
      frame.markers.dy(i, j) = dy;
    }

  frame.strain.height = cfg.height;
  frame.strain.width = cfg.width;
  frame.strain.cover_attenuation = att;
  frame.strain.s.resize(static_cast<size_t>(3) * cfg.height * cfg.width);
  const auto tangential = strain_from_markers(frame.markers, cfg.height, cfg.width);
  const size_t plane = static_cast<size_t>(cfg.height) * cfg.width;
  for (size_t i = 0; i < plane; ++i) {
    frame.strain.s[i] = tangential[i];                // x
    frame.strain.s[plane + i] = tangential[plane + i];  // y
    frame.strain.s[2 * plane + i] = frame.depth[i];   // z
  }
  return frame;
}

namespace detail {

// CIELAB (D65) -> sRGB.
inline void lab_to_rgb(double L, double a, double b, double& r, double& g,
                       double& bl) {
  auto finv = [](double t) {
    const double d = 6.0 / 29.0;
    return t > d ? t * t * t : 3.0 * d * d * (t - 4.0 / 29.0);
  };
  const double fy = (L + 16.0) / 116.0;
  const double xn = 0.95047, yn = 1.0, zn = 1.08883;
  const double X = xn * finv(fy + a / 500.0);
  const double Y = yn * finv(fy);
  const double Z = zn * finv(fy - b / 200.0);
  double rl = 3.2406 * X - 1.5372 * Y - 0.4986 * Z;
  double gl = -0.9689 * X + 1.8758 * Y + 0.0415 * Z;
  double bb = 0.0557 * X - 0.2040 * Y + 1.0570 * Z;
  auto gamma = [](double c) {
    c = c < 0.0 ? 0.0 : (c > 1.0 ? 1.0 : c);
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
  };
  r = gamma(rl);
  g = gamma(gl);
  bl = gamma(bb);
}

}  // namespace detail

// LAB-space visualization: brightness from normal strain (depth), x-strain
// on the blue-yellow axis (b), y-strain on the red-green axis (a).
inline Image render_lab(const TactileFrame& frame) {
  const int h = frame.strain.height, w = frame.strain.width;
  Image im = Image::filled(h, w, 0, 0, 0);
  const size_t plane = static_cast<size_t>(h) * w;
  constexpr double kLBase = 50.0, kLGain = 40.0, kChromaGain = 120.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const double depth = frame.strain.s[2 * plane + i];
      const double L = kLBase + kLGain * std::min(depth, 1.0);
      const double bch = kChromaGain * frame.strain.s[i];          // x-strain
      const double ach = kChromaGain * frame.strain.s[plane + i];  // y-strain
      double r, g, b;
      detail::lab_to_rgb(L, ach, bch, r, g, b);
      im.set(y, x, r, g, b);
    }
  return im;
}

// Mean over pixels of |x-strain| + |y-strain|.
inline double mean_abs_tangential_strain(const TactileFrame& frame) {
  const size_t plane =
      static_cast<size_t>(frame.strain.height) * frame.strain.width;
  double acc = 0.0;
  for (size_t i = 0; i < plane; ++i)
    acc += std::abs(frame.strain.s[i]) + std::abs(frame.strain.s[plane + i]);
  return acc / static_cast<double>(plane);
}

}  // namespace vitac
