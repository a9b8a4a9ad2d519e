#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fuse3d/error.hpp"
#include "fuse3d/tensor.hpp"
#include "fuse3d/volume.hpp"

namespace fuse3d {

namespace detail {

// Continuous input index for a world coordinate, snapped to the nearest
// integer when within 1e-6 so that on-lattice samples read voxels exactly.
inline double sample_coord(double world, double origin, double spacing) {
  const double u = (world - origin) / spacing;
  const double r = std::round(u);
  return std::abs(u - r) < 1e-6 ? r : u;
}

inline double lerp1(double a, double b, double f) {
  if (f <= 0.0) return a;
  if (f >= 1.0) return b;
  return a + (b - a) * f;
}

// Trilinear sample with edge clamping; u/v/w are continuous (x,y,z) indices.
inline double sample_trilinear(const float* vox, std::size_t nx, std::size_t ny,
                               std::size_t nz, double ux, double uy,
                               double uz) {
  const auto prep = [](double u, std::size_t n, std::ptrdiff_t& i0,
                       double& f) {
    u = std::clamp(u, 0.0, double(n - 1));
    i0 = std::min<std::ptrdiff_t>(std::ptrdiff_t(std::floor(u)),
                                  std::ptrdiff_t(n) - 2);
    if (i0 < 0) i0 = 0;
    f = n == 1 ? 0.0 : u - double(i0);
  };
  std::ptrdiff_t x0, y0, z0;
  double fx, fy, fz;
  prep(ux, nx, x0, fx);
  prep(uy, ny, y0, fy);
  prep(uz, nz, z0, fz);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(x0 + 1, std::ptrdiff_t(nx) - 1);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(y0 + 1, std::ptrdiff_t(ny) - 1);
  const std::ptrdiff_t z1 = std::min<std::ptrdiff_t>(z0 + 1, std::ptrdiff_t(nz) - 1);
  const auto at = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
    return double(vox[(std::size_t(z) * ny + std::size_t(y)) * nx +
                      std::size_t(x)]);
  };
  const double c00 = lerp1(at(z0, y0, x0), at(z0, y0, x1), fx);
  const double c01 = lerp1(at(z0, y1, x0), at(z0, y1, x1), fx);
  const double c10 = lerp1(at(z1, y0, x0), at(z1, y0, x1), fx);
  const double c11 = lerp1(at(z1, y1, x0), at(z1, y1, x1), fx);
  return lerp1(lerp1(c00, c01, fy), lerp1(c10, c11, fy), fz);
}

// Nearest-neighbour sample with edge clamping; ties round up.
inline float sample_nearest(const float* vox, std::size_t nx, std::size_t ny,
                            std::size_t nz, double ux, double uy, double uz) {
  const auto pick = [](double u, std::size_t n) {
    const auto i = std::ptrdiff_t(std::floor(u + 0.5));
    return std::size_t(std::clamp<std::ptrdiff_t>(i, 0, std::ptrdiff_t(n) - 1));
  };
  return vox[(pick(uz, nz) * ny + pick(uy, ny)) * nx + pick(ux, nx)];
}

}  // namespace detail

// Shared grid for an aligned CT/PET pair: componentwise max of the origins,
// componentwise min of the voxel counts, isotropic spacing equal to the
// largest spacing component of either input.
inline GridSpec common_grid(const Volume& a, const Volume& b) {
  FUSE3D_CHECK_DATA(detail::direction_identity(a.direction) &&
                        detail::direction_identity(b.direction),
                    "common_grid: volumes must be canonicalized first");
  GridSpec g;
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    g.origin[i] = std::max(a.origin[i], b.origin[i]);
    s = std::max({s, a.spacing[i], b.spacing[i]});
  }
  g.spacing = {s, s, s};
  const GridSpec ga = a.grid();
  const GridSpec gb = b.grid();
  for (int i = 0; i < 3; ++i) {
    g.size[i] = std::min(ga.size[i], gb.size[i]);
    for (const GridSpec* v : {&ga, &gb}) {
      const double last = v->origin[i] + v->spacing[i] * double(v->size[i] - 1);
      FUSE3D_CHECK_DATA(g.origin[i] <= last + 1e-9,
                        "common_grid: empty intersection on axis ", i);
    }
  }
  return g;
}

// Resamples onto g: trilinear for ct/pet/prob, nearest-neighbour for masks.
// Out-of-support samples clamp to edge values.
inline Volume resample(const Volume& v, const GridSpec& g) {
  FUSE3D_CHECK_DATA(detail::direction_identity(v.direction),
                    "resample: volume must be canonicalized first");
  for (std::size_t s : g.size) FUSE3D_CHECK(s >= 1, "resample: empty grid");

  if (grids_match(v.grid(), g)) {
    Volume out = v;
    out.voxels = v.voxels.detach();
    return out;
  }

  Volume out;
  out.voxels = Tensor<float>::zeros({g.size[2], g.size[1], g.size[0]});
  out.origin = g.origin;
  out.spacing = g.spacing;
  out.kind = v.kind;
  const float* src = v.voxels.data();
  float* dst = out.voxels.data();
  const std::size_t nx = v.nx(), ny = v.ny(), nz = v.nz();
  const bool nearest = v.kind == Kind::kMask;
  std::size_t o = 0;
  for (std::size_t iz = 0; iz < g.size[2]; ++iz) {
    const double uz = detail::sample_coord(
        g.origin[2] + g.spacing[2] * double(iz), v.origin[2], v.spacing[2]);
    for (std::size_t iy = 0; iy < g.size[1]; ++iy) {
      const double uy = detail::sample_coord(
          g.origin[1] + g.spacing[1] * double(iy), v.origin[1], v.spacing[1]);
      for (std::size_t ix = 0; ix < g.size[0]; ++ix, ++o) {
        const double ux = detail::sample_coord(
            g.origin[0] + g.spacing[0] * double(ix), v.origin[0],
            v.spacing[0]);
        dst[o] = nearest
                     ? detail::sample_nearest(src, nx, ny, nz, ux, uy, uz)
                     : float(detail::sample_trilinear(src, nx, ny, nz, ux, uy,
                                                      uz));
      }
    }
  }
  return out;
}

// Clamps CT intensities to [-300, 300] and maps them linearly onto [0,1]
// with the fixed bounds, so values are comparable across cases.
inline Volume clip_and_scale_ct(const Volume& v) {
  FUSE3D_CHECK_DATA(v.kind == Kind::kCt, "clip_and_scale_ct: kind must be ct");
  Volume out = v;
  out.voxels = v.voxels.detach();
  for (float& x : out.voxels.values())
    x = (std::clamp(x, -300.0f, 300.0f) + 300.0f) / 600.0f;
  return out;
}

// Per-volume min-max scaling onto [0,1]. A constant volume scales to all
// zeros; `degenerate` is set when that happens.
inline Volume scale_pet(const Volume& v, bool* degenerate = nullptr) {
  FUSE3D_CHECK_DATA(v.kind == Kind::kPet, "scale_pet: kind must be pet");
  Volume out = v;
  out.voxels = v.voxels.detach();
  float lo = v.voxels.values()[0], hi = lo;
  for (float x : v.voxels.values()) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (degenerate) *degenerate = hi == lo;
  if (hi == lo) {
    std::fill(out.voxels.values().begin(), out.voxels.values().end(), 0.0f);
    return out;
  }
  const float inv = 1.0f / (hi - lo);
  for (float& x : out.voxels.values()) x = (x - lo) * inv;
  return out;
}

// Stacks a preprocessed pair into a [2,D,H,W] tensor, CT first.
inline Tensor<float> stack_channels(const Volume& ct, const Volume& pet) {
  FUSE3D_CHECK_DATA(ct.kind == Kind::kCt && pet.kind == Kind::kPet,
                    "stack_channels: expected a (ct, pet) pair");
  FUSE3D_CHECK_DATA(grids_match(ct.grid(), pet.grid()),
                    "stack_channels: grids do not match");
  const std::size_t d = ct.nz(), h = ct.ny(), w = ct.nx();
  Tensor<float> out = Tensor<float>::zeros({2, d, h, w});
  const std::size_t n = d * h * w;
  std::copy_n(ct.voxels.data(), n, out.data());
  std::copy_n(pet.voxels.data(), n, out.data() + n);
  return out;
}

}  // namespace fuse3d
