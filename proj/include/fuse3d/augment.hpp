#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>

#include "fuse3d/error.hpp"
#include "fuse3d/preprocess.hpp"
#include "fuse3d/rng.hpp"
#include "fuse3d/tensor.hpp"

namespace fuse3d {

struct AugmentConfig {
  std::array<std::size_t, 3> patch{64, 64, 64};  // (x, y, z), multiples of 8
  double rot_deg = 10.0;      // per-axis rotation range, uniform in +/- this
  double scale_lo = 0.9;      // isotropic scale range
  double scale_hi = 1.1;
  double elastic_amp = 2.0;   // displacement amplitude in voxels, 4^3 grid
  double noise_sigma = 0.05;  // Gaussian noise on image channels
};

namespace detail {

// Row-major 3x3 rotation, R = Rz * Ry * Rx.
inline std::array<double, 9> euler_rotation(double rx, double ry, double rz) {
  const double cx = std::cos(rx), sx = std::sin(rx);
  const double cy = std::cos(ry), sy = std::sin(ry);
  const double cz = std::cos(rz), sz = std::sin(rz);
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

}  // namespace detail

// Seed-deterministic crop + affine + elastic + noise. The RNG stream is
// consumed in a fixed order: crop offsets (x,y,z), Euler angles (x,y,z),
// scale, elastic node displacements (nodes in z,y,x raster order with x,y,z
// components per node), then noise per channel in voxel raster order.
// The geometric transform resamples image channels trilinearly and the mask
// by nearest neighbour; noise touches image channels only. An identity
// configuration (zero rotation, unit scale, zero elastic amplitude, zero
// noise, patch equal to the full extent) returns the inputs unchanged.
inline std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& x,
                                                       const Tensor<float>& m,
                                                       const AugmentConfig& cfg,
                                                       std::uint64_t seed) {
  FUSE3D_CHECK(x.rank() == 4 && x.dim(0) == 2,
               "augment: image must be [2,D,H,W], got ", shape_str(x.shape()));
  FUSE3D_CHECK(m.rank() == 3 && m.dim(0) == x.dim(1) && m.dim(1) == x.dim(2) &&
                   m.dim(2) == x.dim(3),
               "augment: mask shape ", shape_str(m.shape()),
               " does not match image ", shape_str(x.shape()));
  const std::size_t ext[3] = {x.dim(3), x.dim(2), x.dim(1)};  // (x, y, z)
  for (int a = 0; a < 3; ++a) {
    FUSE3D_CHECK_CFG(cfg.patch[a] >= 8 && cfg.patch[a] % 8 == 0,
                     "augment: patch extent must be a positive multiple of 8, "
                     "got ",
                     cfg.patch[a]);
    FUSE3D_CHECK_CFG(cfg.patch[a] <= ext[a],
                     "augment: patch larger than volume on axis ", a, " (",
                     cfg.patch[a], " > ", ext[a], ")");
  }
  FUSE3D_CHECK_CFG(cfg.scale_lo <= cfg.scale_hi && cfg.scale_lo > 0.0,
                   "augment: invalid scale range");
  FUSE3D_CHECK_CFG(cfg.rot_deg >= 0.0 && cfg.elastic_amp >= 0.0 &&
                       cfg.noise_sigma >= 0.0,
                   "augment: ranges must be non-negative");

  Rng rng(seed);
  std::size_t off[3];
  for (int a = 0; a < 3; ++a)
    off[a] = rng.uniform_index(ext[a] - cfg.patch[a] + 1);
  const double rad = cfg.rot_deg * 3.14159265358979323846 / 180.0;
  const double rx = rng.uniform(-rad, rad);
  const double ry = rng.uniform(-rad, rad);
  const double rz = rng.uniform(-rad, rad);
  const double sc = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  std::array<std::array<float, 64>, 3> nodes{};  // 4^3 grid per component
  for (int n = 0; n < 64; ++n)
    for (int a = 0; a < 3; ++a)
      nodes[std::size_t(a)][std::size_t(n)] =
          float(rng.uniform(-cfg.elastic_amp, cfg.elastic_amp));

  const std::size_t pd = cfg.patch[2], ph = cfg.patch[1], pw = cfg.patch[0];
  const std::size_t pvox = pd * ph * pw;
  const bool identity_geom = rx == 0.0 && ry == 0.0 && rz == 0.0 &&
                             sc == 1.0 && cfg.elastic_amp == 0.0 &&
                             off[0] == 0 && off[1] == 0 && off[2] == 0 &&
                             pw == ext[0] && ph == ext[1] && pd == ext[2];

  Tensor<float> xo = Tensor<float>::zeros({2, pd, ph, pw});
  Tensor<float> mo = Tensor<float>::zeros({pd, ph, pw});
  if (identity_geom) {
    std::copy_n(x.data(), x.size(), xo.data());
    std::copy_n(m.data(), m.size(), mo.data());
  } else {
    const auto rot = detail::euler_rotation(rx, ry, rz);
    const double cx = double(pw - 1) / 2.0;
    const double cy = double(ph - 1) / 2.0;
    const double cz = double(pd - 1) / 2.0;
    const float* src0 = x.data();
    const float* src1 = x.data() + ext[2] * ext[1] * ext[0];
    const float* srcm = m.data();
    std::size_t o = 0;
    for (std::size_t iz = 0; iz < pd; ++iz)
      for (std::size_t iy = 0; iy < ph; ++iy)
        for (std::size_t ix = 0; ix < pw; ++ix, ++o) {
          const double px = double(ix) - cx;
          const double py = double(iy) - cy;
          const double pz = double(iz) - cz;
          double q[3] = {
              sc * (rot[0] * px + rot[1] * py + rot[2] * pz) + cx,
              sc * (rot[3] * px + rot[4] * py + rot[5] * pz) + cy,
              sc * (rot[6] * px + rot[7] * py + rot[8] * pz) + cz};
          if (cfg.elastic_amp > 0.0) {
            const double ux = pw > 1 ? double(ix) * 3.0 / double(pw - 1) : 0.0;
            const double uy = ph > 1 ? double(iy) * 3.0 / double(ph - 1) : 0.0;
            const double uz = pd > 1 ? double(iz) * 3.0 / double(pd - 1) : 0.0;
            for (int a = 0; a < 3; ++a)
              q[a] += detail::sample_trilinear(nodes[std::size_t(a)].data(), 4,
                                               4, 4, ux, uy, uz);
          }
          for (int a = 0; a < 3; ++a) q[a] += double(off[a]);
          xo.data()[o] = float(detail::sample_trilinear(
              src0, ext[0], ext[1], ext[2], q[0], q[1], q[2]));
          xo.data()[pvox + o] = float(detail::sample_trilinear(
              src1, ext[0], ext[1], ext[2], q[0], q[1], q[2]));
          mo.data()[o] = detail::sample_nearest(srcm, ext[0], ext[1], ext[2],
                                                q[0], q[1], q[2]);
        }
  }

  if (cfg.noise_sigma > 0.0) {
    float* img = xo.data();
    for (std::size_t i = 0; i < 2 * pvox; ++i)
      img[i] += float(rng.normal() * cfg.noise_sigma);
  }
  return {xo, mo};
}

}  // namespace fuse3d
