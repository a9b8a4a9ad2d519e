#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "fuse3d/encoder.hpp"
#include "fuse3d/focal_fuse.hpp"
#include "fuse3d/msf_dense.hpp"

namespace fuse3d {

enum class Variant { kFocal, kMsf };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFocal: return "focal";
    case Variant::kMsf: return "msf";
  }
  raise("variant_name: invalid variant");
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "focal") return Variant::kFocal;
  if (s == "msf") return Variant::kMsf;
  raise<ConfigError>("unknown variant '", s, "', expected focal or msf");
}

struct ModelConfig {
  Variant variant = Variant::kFocal;
  std::size_t base_filters = 16;
  FocalFuseConfig focal{};
  DenseMsfConfig dense{};
  std::array<std::size_t, 3> patch{64, 64, 64};  // (x, y, z)
  std::uint64_t seed = 7;
};

inline void check_model_config(const ModelConfig& cfg) {
  FUSE3D_CHECK_CFG(cfg.base_filters >= 1, "model: base_filters must be >= 1");
  for (int i = 0; i < 3; ++i)
    FUSE3D_CHECK_CFG(cfg.patch[i] >= 8 && cfg.patch[i] % 8 == 0,
                     "model: patch extents must be positive multiples of 8, "
                     "got ", cfg.patch[i]);
  if (cfg.variant == Variant::kFocal)
    check_focal_config(cfg.focal);
  else
    check_dense_config(cfg.dense);
}

// Decoder stage a fuses the upsampled stage below with the fused skip at a:
// in = 2*width(a) + width(a) channels, out = width(a).
template <typename T>
void register_decoder(ParamStore<T>& ps, std::size_t base, Rng& rng) {
  for (int a = 3; a >= 1; --a) {
    const std::size_t out = stream_width(base, a);
    const std::size_t in = 3 * out;
    const std::string pre = "dec.s" + std::to_string(a);
    ps.add(pre + ".w", fanin_uniform<T>({out, in, 3, 3, 3}, in * 27, rng));
    ps.add(pre + ".b", Tensor<T>::zeros({out}));
  }
  register_linear(ps, "head", 2, stream_width(base, 1), rng);
}

template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> params;

  // Zeroes and freezes every cross-stream projection, reducing the fusion
  // block to independent per-scale paths (the no-fusion ablation).
  void freeze_cross_scale_fusion() { params.freeze_cross_scale(); }
};

// Parameter registration order (encoder, fusion block, decoder, head) is the
// canonical order for init draws, optimizer state, and checkpoint layout.
template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  check_model_config(cfg);
  Model<T> m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  const std::array<std::size_t, 4> widths = stream_widths(cfg.base_filters);
  register_encoder(m.params, cfg.base_filters, rng);
  if (cfg.variant == Variant::kFocal)
    register_focal_block(m.params, "foc", widths, cfg.focal, rng);
  else
    register_dense_block(m.params, "msf", widths, cfg.dense, rng);
  register_decoder(m.params, cfg.base_filters, rng);
  return m;
}

// encoder -> one fusion block -> top-down decoder -> 1x1x1 head -> sigmoid.
// Output is [2,D,H,W] in (0,1), channel 0 GTVp, channel 1 GTVn.
template <typename T>
Tensor<T> model_forward(Model<T>& m, const Tensor<T>& x) {
  std::vector<Tensor<T>> streams =
      encoder_forward(x, m.params, m.cfg.base_filters);
  std::vector<Tensor<T>> fused =
      m.cfg.variant == Variant::kFocal
          ? focal_fuse_block(streams, m.params, "foc", m.cfg.focal)
          : dense_msf_block(streams, m.params, "msf", m.cfg.dense);
  Tensor<T> d = fused[3];
  for (int a = 3; a >= 1; --a) {
    const std::string pre = "dec.s" + std::to_string(a);
    Tensor<T> up = resize_trilinear(d, 2, ResizeDir::kUp);
    Tensor<T> cat = concat_channels({up, fused[std::size_t(a - 1)]});
    d = gelu(conv3d(cat, m.params.at(pre + ".w"), m.params.at(pre + ".b"),
                    1, 1));
  }
  return sigmoid(linear(d, m.params, "head"));
}

// Hard labels from channel probabilities: background when both channels are
// below threshold, otherwise argmax + 1 with ties going to GTVp.
template <typename T>
Tensor<T> predict_mask(const Tensor<T>& probs, T threshold = T(0.5)) {
  FUSE3D_CHECK(probs.rank() == 4 && probs.dim(0) == 2,
               "predict_mask: expected [2,D,H,W], got ",
               shape_str(probs.shape()));
  Tensor<T> mask =
      Tensor<T>::zeros({probs.dim(1), probs.dim(2), probs.dim(3)});
  const T* p = probs.data();
  T* mv = mask.data();
  const std::size_t n = mask.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T p1 = p[i];
    const T p2 = p[n + i];
    if (p1 < threshold && p2 < threshold) continue;
    mv[i] = p1 >= p2 ? T(1) : T(2);
  }
  return mask;
}

// Binary target channels from a {0,1,2} label volume: ch0 = GTVp, ch1 = GTVn.
template <typename T>
Tensor<T> label_channels(const Tensor<T>& mask) {
  FUSE3D_CHECK(mask.rank() == 3, "label_channels: expected [D,H,W], got ",
               shape_str(mask.shape()));
  Tensor<T> y = Tensor<T>::zeros({2, mask.dim(0), mask.dim(1), mask.dim(2)});
  const T* mv = mask.data();
  T* yv = y.data();
  const std::size_t n = mask.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (mv[i] == T(1)) yv[i] = T(1);
    if (mv[i] == T(2)) yv[n + i] = T(1);
  }
  return y;
}

namespace detail {

template <typename T>
Tensor<T> crop_window(const Tensor<T>& vol, std::size_t z0, std::size_t y0,
                      std::size_t x0, std::size_t pd, std::size_t ph,
                      std::size_t pw) {
  const std::size_t c = vol.dim(0), d = vol.dim(1), h = vol.dim(2),
                    w = vol.dim(3);
  Tensor<T> out = Tensor<T>::zeros({c, pd, ph, pw});
  const T* iv = vol.data();
  T* ov = out.data();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t z = 0; z < pd; ++z)
      for (std::size_t y = 0; y < ph; ++y)
        std::memcpy(ov + ((ci * pd + z) * ph + y) * pw,
                    iv + ((ci * d + z0 + z) * h + y0 + y) * w + x0,
                    pw * sizeof(T));
  return out;
}

// Tile starts covering [0, n) with windows of p: a fixed stride of
// p*(1-overlap), plus a final window flush with the end.
inline std::vector<std::size_t> tile_starts(std::size_t n, std::size_t p,
                                            double overlap) {
  const std::size_t step = std::max<std::size_t>(
      1, p - std::size_t(std::floor(double(p) * overlap)));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += step) {
    if (s + p >= n) {
      starts.push_back(n - p);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

}  // namespace detail

// Tiled application of a patch forward function over a whole volume, mean
// blending where windows overlap. Volumes smaller than the patch are
// zero-padded, processed, and cropped back.
template <typename T, typename Fn>
Tensor<T> sliding_window_apply(Fn&& fwd, const Tensor<T>& vol,
                               const std::array<std::size_t, 3>& patch,
                               double overlap) {
  FUSE3D_CHECK(vol.rank() == 4 && vol.dim(0) == 2,
               "sliding window: expected [2,D,H,W], got ",
               shape_str(vol.shape()));
  FUSE3D_CHECK_CFG(overlap >= 0.0 && overlap < 1.0,
                   "sliding window: overlap must be in [0,1), got ", overlap);
  const std::size_t d = vol.dim(1), h = vol.dim(2), w = vol.dim(3);
  const std::size_t pd = patch[2], ph = patch[1], pw = patch[0];
  if (d < pd || h < ph || w < pw) {
    Tensor<T> padded = Tensor<T>::zeros(
        {2, std::max(d, pd), std::max(h, ph), std::max(w, pw)});
    const T* iv = vol.data();
    T* pv = padded.data();
    const std::size_t hd = padded.dim(1), hh = padded.dim(2),
                      hw = padded.dim(3);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t z = 0; z < d; ++z)
        for (std::size_t y = 0; y < h; ++y)
          std::memcpy(pv + ((c * hd + z) * hh + y) * hw,
                      iv + ((c * d + z) * h + y) * w, w * sizeof(T));
    Tensor<T> full = sliding_window_apply(fwd, padded, patch, overlap);
    return detail::crop_window(full, 0, 0, 0, d, h, w);
  }
  Tensor<T> sum = Tensor<T>::zeros({2, d, h, w});
  std::vector<T> hits(d * h * w, T(0));
  const std::vector<std::size_t> zs = detail::tile_starts(d, pd, overlap);
  const std::vector<std::size_t> ys = detail::tile_starts(h, ph, overlap);
  const std::vector<std::size_t> xs = detail::tile_starts(w, pw, overlap);
  T* sv = sum.data();
  for (std::size_t z0 : zs)
    for (std::size_t y0 : ys)
      for (std::size_t x0 : xs) {
        Tensor<T> tile = detail::crop_window(vol, z0, y0, x0, pd, ph, pw);
        Tensor<T> out = fwd(tile);
        FUSE3D_CHECK(out.shape() == tile.shape(),
                     "sliding window: forward changed shape, got ",
                     shape_str(out.shape()));
        const T* ov = out.data();
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t z = 0; z < pd; ++z)
            for (std::size_t y = 0; y < ph; ++y) {
              T* srow = sv + ((c * d + z0 + z) * h + y0 + y) * w + x0;
              const T* orow = ov + ((c * pd + z) * ph + y) * pw;
              for (std::size_t x = 0; x < pw; ++x) srow[x] += orow[x];
            }
        for (std::size_t z = 0; z < pd; ++z)
          for (std::size_t y = 0; y < ph; ++y) {
            T* hrow = hits.data() + ((z0 + z) * h + y0 + y) * w + x0;
            for (std::size_t x = 0; x < pw; ++x) hrow[x] += T(1);
          }
      }
  const std::size_t n = d * h * w;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < n; ++i) sv[c * n + i] /= hits[i];
  return sum;
}

template <typename T>
Tensor<T> sliding_window_infer(Model<T>& m, const Tensor<T>& vol,
                               double overlap = 0.5) {
  return sliding_window_apply(
      [&m](const Tensor<T>& tile) { return model_forward(m, tile); }, vol,
      m.cfg.patch, overlap);
}

}  // namespace fuse3d
