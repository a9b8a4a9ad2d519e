#pragma once

// Brute-force reference implementations used only by tests. Each one is a
// direct transcription of the defining formula with naive index loops and
// bounds checks, kept deliberately independent of the library kernels.

#include <cstddef>
#include <vector>

#include "fuse3d/rng.hpp"
#include "fuse3d/tensor.hpp"

namespace oracles {

using fuse3d::Tensor;

template <typename T>
std::vector<T> conv3d(const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& b, int stride, int pad) {
  const long cin = static_cast<long>(x.dim(0));
  const long d = static_cast<long>(x.dim(1));
  const long h = static_cast<long>(x.dim(2));
  const long wd = static_cast<long>(x.dim(3));
  const long cout = static_cast<long>(w.dim(0));
  const long k = static_cast<long>(w.dim(2));
  const long od = (d + 2 * pad - k) / stride + 1;
  const long oh = (h + 2 * pad - k) / stride + 1;
  const long ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(cout * od * oh * ow), T(0));
  for (long co = 0; co < cout; ++co)
    for (long oz = 0; oz < od; ++oz)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          T acc = b.data()[co];
          for (long ci = 0; ci < cin; ++ci)
            for (long kz = 0; kz < k; ++kz)
              for (long ky = 0; ky < k; ++ky)
                for (long kx = 0; kx < k; ++kx) {
                  const long iz = oz * stride + kz - pad;
                  const long iy = oy * stride + ky - pad;
                  const long ix = ox * stride + kx - pad;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 ||
                      ix >= wd)
                    continue;
                  acc += w.data()[(((co * cin + ci) * k + kz) * k + ky) * k +
                                  kx] *
                         x.data()[((ci * d + iz) * h + iy) * wd + ix];
                }
          out[static_cast<std::size_t>(((co * od + oz) * oh + oy) * ow + ox)] =
              acc;
        }
  return out;
}

template <typename T>
std::vector<T> depthwise_conv3d(const Tensor<T>& x, const Tensor<T>& w,
                                const Tensor<T>& b, int stride, int pad) {
  const long c = static_cast<long>(x.dim(0));
  const long d = static_cast<long>(x.dim(1));
  const long h = static_cast<long>(x.dim(2));
  const long wd = static_cast<long>(x.dim(3));
  const long k = static_cast<long>(w.dim(1));
  const long od = (d + 2 * pad - k) / stride + 1;
  const long oh = (h + 2 * pad - k) / stride + 1;
  const long ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(c * od * oh * ow), T(0));
  for (long ch = 0; ch < c; ++ch)
    for (long oz = 0; oz < od; ++oz)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          T acc = b.data()[ch];
          for (long kz = 0; kz < k; ++kz)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iz = oz * stride + kz - pad;
                const long iy = oy * stride + ky - pad;
                const long ix = ox * stride + kx - pad;
                if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 ||
                    ix >= wd)
                  continue;
                acc += w.data()[((ch * k + kz) * k + ky) * k + kx] *
                       x.data()[((ch * d + iz) * h + iy) * wd + ix];
              }
          out[static_cast<std::size_t>(((ch * od + oz) * oh + oy) * ow + ox)] =
              acc;
        }
  return out;
}

template <typename T>
std::vector<T> avg_pool3d(const Tensor<T>& x, int k) {
  const long c = static_cast<long>(x.dim(0));
  const long d = static_cast<long>(x.dim(1));
  const long h = static_cast<long>(x.dim(2));
  const long wd = static_cast<long>(x.dim(3));
  const long od = d / k, oh = h / k, ow = wd / k;
  std::vector<T> out(static_cast<std::size_t>(c * od * oh * ow), T(0));
  for (long ch = 0; ch < c; ++ch)
    for (long oz = 0; oz < od; ++oz)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          T acc = T(0);
          for (long kz = 0; kz < k; ++kz)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx)
                acc += x.data()[((ch * d + oz * k + kz) * h + oy * k + ky) *
                                    wd +
                                ox * k + kx];
          out[static_cast<std::size_t>(((ch * od + oz) * oh + oy) * ow + ox)] =
              acc / static_cast<T>(k * k * k);
        }
  return out;
}

template <typename T>
std::vector<T> max_pool3d(const Tensor<T>& x, int k) {
  const long c = static_cast<long>(x.dim(0));
  const long d = static_cast<long>(x.dim(1));
  const long h = static_cast<long>(x.dim(2));
  const long wd = static_cast<long>(x.dim(3));
  const long od = d / k, oh = h / k, ow = wd / k;
  std::vector<T> out(static_cast<std::size_t>(c * od * oh * ow), T(0));
  for (long ch = 0; ch < c; ++ch)
    for (long oz = 0; oz < od; ++oz)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          T best = x.data()[((ch * d + oz * k) * h + oy * k) * wd + ox * k];
          for (long kz = 0; kz < k; ++kz)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const T v = x.data()[((ch * d + oz * k + kz) * h + oy * k +
                                      ky) *
                                         wd +
                                     ox * k + kx];
                if (v > best) best = v;
              }
          out[static_cast<std::size_t>(((ch * od + oz) * oh + oy) * ow + ox)] =
              best;
        }
  return out;
}

template <typename T>
std::vector<T> pointwise_linear(const Tensor<T>& x, const Tensor<T>& w,
                                const Tensor<T>& b) {
  const long cin = static_cast<long>(x.dim(0));
  const long s = static_cast<long>(x.dim(1) * x.dim(2) * x.dim(3));
  const long cout = static_cast<long>(w.dim(0));
  std::vector<T> out(static_cast<std::size_t>(cout * s), T(0));
  for (long co = 0; co < cout; ++co)
    for (long p = 0; p < s; ++p) {
      T acc = b.data()[co];
      for (long ci = 0; ci < cin; ++ci)
        acc += w.data()[co * cin + ci] * x.data()[ci * s + p];
      out[static_cast<std::size_t>(co * s + p)] = acc;
    }
  return out;
}

template <typename T>
std::vector<T> global_avg_pool(const Tensor<T>& x) {
  const long c = static_cast<long>(x.dim(0));
  const long s = static_cast<long>(x.dim(1) * x.dim(2) * x.dim(3));
  std::vector<T> out(static_cast<std::size_t>(c), T(0));
  for (long ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (long p = 0; p < s; ++p) acc += x.data()[ch * s + p];
    out[static_cast<std::size_t>(ch)] = acc / static_cast<T>(s);
  }
  return out;
}

// Gated focal aggregation: out[c,p] = sum_l levels[l][c,p] * gates[l,p].
template <typename T>
std::vector<T> aggregate(const std::vector<Tensor<T>>& levels,
                         const Tensor<T>& gates) {
  const long c = static_cast<long>(levels[0].dim(0));
  const long s = static_cast<long>(levels[0].dim(1) * levels[0].dim(2) *
                                   levels[0].dim(3));
  std::vector<T> out(static_cast<std::size_t>(c * s), T(0));
  for (long ch = 0; ch < c; ++ch)
    for (long p = 0; p < s; ++p) {
      T acc = T(0);
      for (std::size_t l = 0; l < levels.size(); ++l)
        acc += levels[l].data()[ch * s + p] *
               gates.data()[static_cast<long>(l) * s + p];
      out[static_cast<std::size_t>(ch * s + p)] = acc;
    }
  return out;
}

// Aggregated DSC by explicit voxel counting over a case list.
inline double dsc_aggregated(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& cases,
    int class_id) {
  long long inter = 0, psum = 0, gsum = 0;
  for (const auto& [pred, gt] : cases) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == class_id;
      const bool g = gt[i] == class_id;
      inter += (p && g) ? 1 : 0;
      psum += p ? 1 : 0;
      gsum += g ? 1 : 0;
    }
  }
  if (psum + gsum == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(psum + gsum);
}

template <typename T>
void fill_uniform(Tensor<T>& t, fuse3d::Rng& rng, double lo = -1.0,
                  double hi = 1.0) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double av = static_cast<double>(a[i]);
    const double bv = static_cast<double>(b[i]);
    const double rel = std::abs(av - bv) /
                       std::max({1.0, std::abs(av), std::abs(bv)});
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace oracles
