#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fuse3d/rng.hpp"
#include "fuse3d/volume.hpp"

namespace fuse3d {

struct SynthCase {
  Volume ct;
  Volume pet;
  Volume mask;
};

namespace detail {

struct SynthLesion {
  std::array<double, 3> center;  // (x, y, z), voxel units
  std::array<double, 3> semi;
  double pet_amp = 0.0;
  double ct_amp = 0.0;
  int label = 0;  // 0 = distractor, 1 = GTVp, 2 = GTVn
};

inline double lesion_rho2(const SynthLesion& l, double x, double y,
                          double z) {
  const double dx = (x - l.center[0]) / l.semi[0];
  const double dy = (y - l.center[1]) / l.semi[1];
  const double dz = (z - l.center[2]) / l.semi[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// One synthetic PET/CT case: background noise, one GTVp ellipsoid (large,
// PET-bright, soft CT contrast), 0-2 GTVn ellipsoids placed near the GTVp,
// and 1-2 distractor lesions drawn from the same local signature family as
// the GTVn but placed far from the GTVp and left unlabeled. Only long-range
// position separates a node from a distractor.
//
// Draw order from Rng(seed): GTVp center (x,y,z), GTVp semi-axes (x,y,z),
// GTVp PET and CT amplitudes; node count; per node direction (3 normals),
// distance, semi-axes (x,y,z), PET and CT amplitudes; distractor count; per
// distractor semi-axes (x,y,z), PET and CT amplitudes, then candidate
// centers (x,y,z each try) until accepted; CT noise per voxel in raster
// order; PET noise per voxel in raster order.
inline SynthCase synth_case(std::uint64_t seed,
                            const std::array<std::size_t, 3>& extents,
                            const std::array<double, 3>& spacing) {
  for (int i = 0; i < 3; ++i) {
    FUSE3D_CHECK_CFG(extents[i] >= 16,
                     "synth: extents must be >= 16 per axis, got ",
                     extents[i]);
    FUSE3D_CHECK_CFG(spacing[i] > 0.0, "synth: spacing must be positive");
  }
  Rng rng(seed);
  const double nx = double(extents[0]), ny = double(extents[1]),
               nz = double(extents[2]);
  const double nmin = std::min(nx, std::min(ny, nz));
  const std::array<double, 3> n{nx, ny, nz};

  std::vector<detail::SynthLesion> lesions;
  detail::SynthLesion gtvp;
  for (int i = 0; i < 3; ++i)
    gtvp.center[i] = rng.uniform(0.30, 0.70) * (n[i] - 1.0);
  for (int i = 0; i < 3; ++i)
    gtvp.semi[i] = rng.uniform(0.085, 0.145) * n[i];
  gtvp.pet_amp = rng.uniform(4.0, 7.0);
  gtvp.ct_amp = rng.uniform(40.0, 80.0);
  gtvp.label = 1;
  lesions.push_back(gtvp);

  const std::uint64_t n_nodes = rng.uniform_index(3);
  for (std::uint64_t k = 0; k < n_nodes; ++k) {
    detail::SynthLesion node;
    std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
    const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] +
                                  dir[2] * dir[2]);
    if (norm < 1e-12) dir = {1.0, 0.0, 0.0};
    const double dist = rng.uniform(0.20, 0.32) * nmin;
    for (int i = 0; i < 3; ++i)
      node.semi[i] = rng.uniform(0.05, 0.08) * n[i];
    node.pet_amp = rng.uniform(3.5, 6.0);
    node.ct_amp = rng.uniform(40.0, 70.0);
    for (int i = 0; i < 3; ++i) {
      const double c = gtvp.center[i] +
                       dir[i] / (norm < 1e-12 ? 1.0 : norm) * dist;
      const double lo = node.semi[i] + 1.0;
      const double hi = n[i] - 2.0 - node.semi[i];
      node.center[i] = std::min(std::max(c, lo), hi);
    }
    node.label = 2;
    lesions.push_back(node);
  }

  const std::uint64_t n_distract = 1 + rng.uniform_index(2);
  for (std::uint64_t k = 0; k < n_distract; ++k) {
    detail::SynthLesion d;
    for (int i = 0; i < 3; ++i)
      d.semi[i] = rng.uniform(0.05, 0.08) * n[i];
    d.pet_amp = rng.uniform(3.5, 6.0);
    d.ct_amp = rng.uniform(40.0, 70.0);
    d.label = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      std::array<double, 3> c;
      for (int i = 0; i < 3; ++i)
        c[i] = rng.uniform(0.10, 0.90) * (n[i] - 1.0);
      double dp = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double dd = c[i] - gtvp.center[i];
        dp += dd * dd;
      }
      if (std::sqrt(dp) < 0.42 * nmin) continue;
      bool clear = true;
      for (const auto& other : lesions) {
        double dl = 0.0;
        for (int i = 0; i < 3; ++i) {
          const double dd = c[i] - other.center[i];
          dl += dd * dd;
        }
        if (std::sqrt(dl) < 0.16 * nmin) clear = false;
      }
      if (!clear) continue;
      d.center = c;
      placed = true;
    }
    if (placed) lesions.push_back(d);
  }

  const Shape shape{extents[2], extents[1], extents[0]};
  Volume ct{Tensor<float>::zeros(shape), {0, 0, 0}, spacing,
            {1, 0, 0, 0, 1, 0, 0, 0, 1}, Kind::kCt};
  Volume pet{Tensor<float>::zeros(shape), {0, 0, 0}, spacing,
             {1, 0, 0, 0, 1, 0, 0, 0, 1}, Kind::kPet};
  Volume mask{Tensor<float>::zeros(shape), {0, 0, 0}, spacing,
              {1, 0, 0, 0, 1, 0, 0, 0, 1}, Kind::kMask};
  float* cv = ct.voxels.data();
  float* pv = pet.voxels.data();
  float* mv = mask.voxels.data();
  const std::size_t dnx = extents[0], dny = extents[1], dnz = extents[2];

  std::size_t i = 0;
  for (std::size_t z = 0; z < dnz; ++z)
    for (std::size_t y = 0; y < dny; ++y)
      for (std::size_t x = 0; x < dnx; ++x, ++i) {
        double v = 20.0 + 15.0 * rng.normal();
        for (const auto& l : lesions) {
          const double r2 =
              detail::lesion_rho2(l, double(x), double(y), double(z));
          if (r2 < 1.0) v += l.ct_amp * (1.0 - r2);
        }
        cv[i] = float(v);
      }
  i = 0;
  for (std::size_t z = 0; z < dnz; ++z)
    for (std::size_t y = 0; y < dny; ++y)
      for (std::size_t x = 0; x < dnx; ++x, ++i) {
        double v = 1.0 + 0.12 * rng.normal();
        for (const auto& l : lesions)
          v += l.pet_amp *
               std::exp(-2.0 * detail::lesion_rho2(l, double(x), double(y),
                                                   double(z)));
        pv[i] = float(std::max(v, 0.0));
      }
  i = 0;
  for (std::size_t z = 0; z < dnz; ++z)
    for (std::size_t y = 0; y < dny; ++y)
      for (std::size_t x = 0; x < dnx; ++x, ++i) {
        int label = 0;
        for (const auto& l : lesions) {
          if (l.label == 0) continue;
          if (detail::lesion_rho2(l, double(x), double(y), double(z)) > 1.0)
            continue;
          if (l.label == 1) {
            label = 1;
            break;
          }
          label = 2;
        }
        mv[i] = float(label);
      }
  return SynthCase{ct, pet, mask};
}

}  // namespace fuse3d
