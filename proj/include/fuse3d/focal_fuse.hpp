#pragma once

#include <array>
#include <string>
#include <vector>

#include "fuse3d/conv.hpp"
#include "fuse3d/encoder.hpp"
#include "fuse3d/error.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/params.hpp"
#include "fuse3d/rescale.hpp"

namespace fuse3d {

struct FocalFuseConfig {
  std::size_t num_levels = 2;  // N, focal levels before the global level
  std::size_t kernel = 3;      // depthwise kernel per level, odd
};

inline void check_focal_config(const FocalFuseConfig& cfg) {
  FUSE3D_CHECK_CFG(cfg.num_levels >= 1, "focal: num_levels must be >= 1");
  FUSE3D_CHECK_CFG(cfg.kernel % 2 == 1 && cfg.kernel >= 1,
                   "focal: kernel must be odd, got ", cfg.kernel);
}

namespace detail {

inline std::string focal_level_prefix(const std::string& prefix,
                                      std::size_t l) {
  return prefix + ".lvl" + std::to_string(l);
}

}  // namespace detail

template <typename T>
void register_focal_block(ParamStore<T>& ps, const std::string& prefix,
                          const std::array<std::size_t, 4>& widths,
                          const FocalFuseConfig& cfg, Rng& rng) {
  check_focal_config(cfg);
  register_embed(ps, prefix, widths, rng);
  const std::size_t k = cfg.kernel;
  for (std::size_t l = 1; l <= cfg.num_levels; ++l) {
    const std::string lp = detail::focal_level_prefix(prefix, l);
    for (int a = 1; a <= 4; ++a) {
      const std::size_t ca = widths[std::size_t(a - 1)];
      for (int b = 1; b <= 4; ++b)
        if (b != a)
          register_rescale(ps, lp, b, a, widths[std::size_t(b - 1)], ca, rng);
      const std::string sp = lp + ".s" + std::to_string(a);
      register_linear(ps, sp + ".pw", ca, 4 * ca, rng);
      ps.add(sp + ".dw.w", fanin_uniform<T>({ca, k, k, k}, k * k * k, rng));
      ps.add(sp + ".dw.b", Tensor<T>::zeros({ca}));
    }
  }
  for (int a = 1; a <= 4; ++a) {
    const std::size_t ca = widths[std::size_t(a - 1)];
    const std::string sa = ".s" + std::to_string(a);
    register_linear(ps, prefix + ".gate" + sa, cfg.num_levels + 1, ca, rng);
    register_linear(ps, prefix + ".q" + sa, ca, ca, rng);
    register_linear(ps, prefix + ".out" + sa, ca, ca, rng);
  }
}

// One focal level for stream a: foreign streams are rescaled onto scale a,
// all four are concatenated (own stream first, foreigns in ascending scale
// order), then pointwise back to stream width, depthwise conv, GeLU.
template <typename T>
Tensor<T> focal_level(const std::vector<Tensor<T>>& prev, int a,
                      ParamStore<T>& ps, const std::string& level_prefix,
                      const FocalFuseConfig& cfg) {
  FUSE3D_CHECK(prev.size() == 4, "focal_level: expected 4 streams");
  const Tensor<T>& own = prev[std::size_t(a - 1)];
  std::vector<Tensor<T>> cat;
  cat.reserve(4);
  cat.push_back(own);
  for (int b = 1; b <= 4; ++b) {
    if (b == a) continue;
    Tensor<T> f = rescale_cross(prev[std::size_t(b - 1)], b, a, ps,
                                level_prefix);
    FUSE3D_CHECK(f.shape()[1] == own.shape()[1] &&
                     f.shape()[2] == own.shape()[2] &&
                     f.shape()[3] == own.shape()[3],
                 "focal_level: rescale produced ", shape_str(f.shape()),
                 " against ", shape_str(own.shape()));
    cat.push_back(f);
  }
  const std::string sp = level_prefix + ".s" + std::to_string(a);
  Tensor<T> h = linear(concat_channels(cat), ps, sp + ".pw");
  h = depthwise_conv3d(h, ps.at(sp + ".dw.w"), ps.at(sp + ".dw.b"), 1,
                       int(cfg.kernel - 1) / 2);
  return gelu(h);
}

// Unbounded per-voxel gates over the embedding, one channel per level.
template <typename T>
Tensor<T> gate(const Tensor<T>& f0, int a, ParamStore<T>& ps,
               const std::string& prefix) {
  return linear(f0, ps, prefix + ".gate.s" + std::to_string(a));
}

// MOD_a = out(F_a * q(X_a)); the query projection runs on the block input.
template <typename T>
Tensor<T> modulate(const Tensor<T>& fa, const Tensor<T>& xa, int a,
                   ParamStore<T>& ps, const std::string& prefix) {
  const std::string sa = ".s" + std::to_string(a);
  Tensor<T> q = linear(xa, ps, prefix + ".q" + sa);
  return linear(mul(fa, q), ps, prefix + ".out" + sa);
}

// embed -> N focal levels -> global level -> gate -> aggregate -> modulate.
// Output shapes equal input shapes at every scale.
template <typename T>
std::vector<Tensor<T>> focal_fuse_block(const std::vector<Tensor<T>>& streams,
                                        ParamStore<T>& ps,
                                        const std::string& prefix,
                                        const FocalFuseConfig& cfg) {
  check_focal_config(cfg);
  FUSE3D_CHECK(streams.size() == 4, "focal block: expected 4 streams");
  std::vector<Tensor<T>> f0 = embed(streams, ps, prefix);

  std::array<std::vector<Tensor<T>>, 4> levels;
  std::vector<Tensor<T>> cur = f0;
  for (std::size_t l = 1; l <= cfg.num_levels; ++l) {
    const std::string lp = detail::focal_level_prefix(prefix, l);
    std::vector<Tensor<T>> next;
    next.reserve(4);
    for (int a = 1; a <= 4; ++a) next.push_back(focal_level(cur, a, ps, lp, cfg));
    for (int a = 0; a < 4; ++a) levels[std::size_t(a)].push_back(next[std::size_t(a)]);
    cur = std::move(next);
  }
  for (int a = 0; a < 4; ++a) {
    const Tensor<T>& top = levels[std::size_t(a)].back();
    Tensor<T> g = gelu(global_avg_pool(top));
    levels[std::size_t(a)].push_back(
        broadcast_spatial(g, top.dim(1), top.dim(2), top.dim(3)));
  }

  std::vector<Tensor<T>> out;
  out.reserve(4);
  for (int a = 1; a <= 4; ++a) {
    const std::size_t i = std::size_t(a - 1);
    Tensor<T> ga = gate(f0[i], a, ps, prefix);
    Tensor<T> fa = aggregate(levels[i], ga);
    out.push_back(modulate(fa, streams[i], a, ps, prefix));
  }
  return out;
}

}  // namespace fuse3d
