#pragma once

#include <array>
#include <string>
#include <vector>

#include "fuse3d/conv.hpp"
#include "fuse3d/error.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/params.hpp"
#include "fuse3d/rescale.hpp"

namespace fuse3d {

struct DenseMsfConfig {
  std::size_t layers = 3;  // L, dense layers per block
  std::size_t growth = 8;  // g, channels added per layer
};

inline void check_dense_config(const DenseMsfConfig& cfg) {
  FUSE3D_CHECK_CFG(cfg.layers >= 1, "dense: layers must be >= 1");
  FUSE3D_CHECK_CFG(cfg.growth >= 1, "dense: growth must be >= 1");
}

namespace detail {

inline std::string dense_layer_prefix(const std::string& prefix,
                                      std::size_t l) {
  return prefix + ".lay" + std::to_string(l);
}

}  // namespace detail

// Input channel count of dense layer l on stream a: the stream input plus
// l-1 own growth outputs plus three foreign growth projections.
inline std::size_t dense_layer_in_channels(std::size_t stream_ch,
                                           std::size_t l, std::size_t growth) {
  return stream_ch + (l - 1) * growth + 3 * growth;
}

template <typename T>
void register_dense_block(ParamStore<T>& ps, const std::string& prefix,
                          const std::array<std::size_t, 4>& widths,
                          const DenseMsfConfig& cfg, Rng& rng) {
  check_dense_config(cfg);
  const std::size_t g = cfg.growth;
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const std::string lp = detail::dense_layer_prefix(prefix, l);
    for (int a = 1; a <= 4; ++a) {
      for (int b = 1; b <= 4; ++b) {
        if (b == a) continue;
        const std::size_t in_b = l == 1 ? widths[std::size_t(b - 1)] : g;
        register_rescale(ps, lp, b, a, in_b, g, rng);
      }
      const std::string sp = lp + ".s" + std::to_string(a);
      const std::size_t in_cat =
          dense_layer_in_channels(widths[std::size_t(a - 1)], l, g);
      register_linear(ps, sp + ".pw", g, in_cat, rng);
      ps.add(sp + ".dw.w", fanin_uniform<T>({g, 3, 3, 3}, 27, rng));
      ps.add(sp + ".dw.b", Tensor<T>::zeros({g}));
    }
  }
  for (int a = 1; a <= 4; ++a) {
    const std::size_t ca = widths[std::size_t(a - 1)];
    register_linear(ps, prefix + ".trans.s" + std::to_string(a), ca,
                    ca + cfg.layers * g, rng);
  }
}

// One dense layer for stream a: own history [X_{a,0..l-1}] plus the three
// foreign previous-layer outputs rescaled and projected to g channels, then
// pointwise to g, depthwise conv, GeLU.
template <typename T>
Tensor<T> dense_layer(const std::array<std::vector<Tensor<T>>, 4>& history,
                      int a, std::size_t l, ParamStore<T>& ps,
                      const std::string& prefix) {
  const auto& own = history[std::size_t(a - 1)];
  FUSE3D_CHECK(own.size() == l, "dense_layer: history has ", own.size(),
               " entries, expected ", l);
  std::vector<Tensor<T>> cat(own.begin(), own.end());
  const std::string lp = detail::dense_layer_prefix(prefix, l);
  for (int b = 1; b <= 4; ++b) {
    if (b == a) continue;
    Tensor<T> f = rescale_cross(history[std::size_t(b - 1)].back(), b, a, ps,
                                lp);
    FUSE3D_CHECK(f.shape()[1] == own[0].shape()[1] &&
                     f.shape()[2] == own[0].shape()[2] &&
                     f.shape()[3] == own[0].shape()[3],
                 "dense_layer: rescale produced ", shape_str(f.shape()),
                 " against ", shape_str(own[0].shape()));
    cat.push_back(f);
  }
  const std::string sp = lp + ".s" + std::to_string(a);
  Tensor<T> h = linear(concat_channels(cat), ps, sp + ".pw");
  h = depthwise_conv3d(h, ps.at(sp + ".dw.w"), ps.at(sp + ".dw.b"), 1, 1);
  return gelu(h);
}

// L dense layers with cross-scale exchange every layer; the transition
// projection restores each stream to its input width.
template <typename T>
std::vector<Tensor<T>> dense_msf_block(const std::vector<Tensor<T>>& streams,
                                       ParamStore<T>& ps,
                                       const std::string& prefix,
                                       const DenseMsfConfig& cfg) {
  check_dense_config(cfg);
  FUSE3D_CHECK(streams.size() == 4, "dense block: expected 4 streams");
  std::array<std::vector<Tensor<T>>, 4> history;
  for (int a = 0; a < 4; ++a)
    history[std::size_t(a)].push_back(streams[std::size_t(a)]);
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    std::array<Tensor<T>, 4> next;
    for (int a = 1; a <= 4; ++a)
      next[std::size_t(a - 1)] = dense_layer(history, a, l, ps, prefix);
    for (int a = 0; a < 4; ++a)
      history[std::size_t(a)].push_back(next[std::size_t(a)]);
  }
  std::vector<Tensor<T>> out;
  out.reserve(4);
  for (int a = 1; a <= 4; ++a)
    out.push_back(linear(concat_channels(history[std::size_t(a - 1)]), ps,
                         prefix + ".trans.s" + std::to_string(a)));
  return out;
}

}  // namespace fuse3d
