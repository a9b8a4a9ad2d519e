#pragma once

#include <string>

#include "fuse3d/conv.hpp"
#include "fuse3d/error.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/params.hpp"

namespace fuse3d {

namespace detail {

inline void check_scale(int s) {
  FUSE3D_CHECK_CFG(s >= 1 && s <= 4, "scale must be in 1..4, got ", s);
}

inline std::string rescale_prefix(const std::string& prefix, int from,
                                  int to) {
  return prefix + ".re" + std::to_string(from) + "to" + std::to_string(to);
}

}  // namespace detail

// Registers the parameters of one directed cross-stream rescale path.
// Down paths: depthwise stride-2 conv (averaging init) plus avg-pool for the
// remaining factor, then a pointwise projection at the coarse end. Up paths:
// pointwise projection first, then a transposed depthwise k=2 stride-2 conv
// (all-ones init, so constants survive) plus trilinear for the remainder.
// Every parameter sits on a cross-stream edge and carries the cross_scale tag.
template <typename T>
void register_rescale(ParamStore<T>& ps, const std::string& prefix, int from,
                      int to, std::size_t in_ch, std::size_t out_ch,
                      Rng& rng) {
  detail::check_scale(from);
  detail::check_scale(to);
  if (from == to) return;
  const std::string base = detail::rescale_prefix(prefix, from, to);
  if (to > from) {
    ps.add(base + ".dw.w", Tensor<T>::full({in_ch, 3, 3, 3}, T(1) / T(27)),
           true, true);
    ps.add(base + ".dw.b", Tensor<T>::zeros({in_ch}), true, true);
    ps.add(base + ".proj.w", fanin_uniform<T>({out_ch, in_ch}, in_ch, rng),
           true, true);
    ps.add(base + ".proj.b", Tensor<T>::zeros({out_ch}), true, true);
  } else {
    ps.add(base + ".proj.w", fanin_uniform<T>({out_ch, in_ch}, in_ch, rng),
           true, true);
    ps.add(base + ".proj.b", Tensor<T>::zeros({out_ch}), true, true);
    ps.add(base + ".tdw.w", Tensor<T>::full({out_ch, 2, 2, 2}, T(1)), true,
           true);
  }
}

// Carries a stream from one scale to another (extent ratio 2^|to-from|).
// from == to is the identity.
template <typename T>
Tensor<T> rescale_cross(const Tensor<T>& x, int from, int to,
                        ParamStore<T>& ps, const std::string& prefix) {
  detail::check_scale(from);
  detail::check_scale(to);
  if (from == to) return x;
  const std::string base = detail::rescale_prefix(prefix, from, to);
  if (to > from) {
    Tensor<T> y =
        depthwise_conv3d(x, ps.at(base + ".dw.w"), ps.at(base + ".dw.b"), 2, 1);
    const int rest = 1 << (to - from - 1);
    if (rest > 1) y = pool3d(y, PoolMode::kAvg, rest, rest);
    return pointwise_linear(y, ps.at(base + ".proj.w"),
                            ps.at(base + ".proj.b"));
  }
  Tensor<T> y =
      pointwise_linear(x, ps.at(base + ".proj.w"), ps.at(base + ".proj.b"));
  y = transposed_depthwise_conv3d(y, ps.at(base + ".tdw.w"), 2);
  const int rest = 1 << (from - to - 1);
  if (rest > 1) y = resize_trilinear(y, rest, ResizeDir::kUp);
  return y;
}

}  // namespace fuse3d
