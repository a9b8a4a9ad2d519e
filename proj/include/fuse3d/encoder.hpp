#pragma once

#include <array>
#include <string>
#include <vector>

#include "fuse3d/conv.hpp"
#include "fuse3d/error.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/params.hpp"

namespace fuse3d {

inline std::size_t stream_width(std::size_t base, int scale) {
  return base << (scale - 1);
}

inline std::array<std::size_t, 4> stream_widths(std::size_t base) {
  return {base, base * 2, base * 4, base * 8};
}

// Four scales, each two (conv3 -> GeLU) layers wide; avg-pool k=2 feeds the
// next scale. The per-scale output is the pre-pool activation X_a.
template <typename T>
void register_encoder(ParamStore<T>& ps, std::size_t base, Rng& rng) {
  for (int a = 1; a <= 4; ++a) {
    const std::size_t in = a == 1 ? 2 : stream_width(base, a - 1);
    const std::size_t out = stream_width(base, a);
    const std::string pre = "enc.s" + std::to_string(a);
    ps.add(pre + ".c1.w", fanin_uniform<T>({out, in, 3, 3, 3}, in * 27, rng));
    ps.add(pre + ".c1.b", Tensor<T>::zeros({out}));
    ps.add(pre + ".c2.w",
           fanin_uniform<T>({out, out, 3, 3, 3}, out * 27, rng));
    ps.add(pre + ".c2.b", Tensor<T>::zeros({out}));
  }
}

template <typename T>
std::vector<Tensor<T>> encoder_forward(const Tensor<T>& x, ParamStore<T>& ps,
                                       std::size_t base) {
  FUSE3D_CHECK(x.rank() == 4 && x.dim(0) == 2,
               "encoder: input must be [2,D,H,W], got ", shape_str(x.shape()));
  for (int i = 1; i <= 3; ++i)
    FUSE3D_CHECK_CFG(x.dim(std::size_t(i)) % 8 == 0,
                     "encoder: extents must be divisible by 8, got ",
                     shape_str(x.shape()));
  std::vector<Tensor<T>> streams;
  streams.reserve(4);
  Tensor<T> cur = x;
  for (int a = 1; a <= 4; ++a) {
    const std::string pre = "enc.s" + std::to_string(a);
    Tensor<T> h =
        gelu(conv3d(cur, ps.at(pre + ".c1.w"), ps.at(pre + ".c1.b"), 1, 1));
    h = gelu(conv3d(h, ps.at(pre + ".c2.w"), ps.at(pre + ".c2.b"), 1, 1));
    streams.push_back(h);
    if (a < 4) cur = pool3d(h, PoolMode::kAvg, 2, 2);
  }
  return streams;
}

// Width-preserving per-scale linear embedding, F_{a,0}.
template <typename T>
void register_embed(ParamStore<T>& ps, const std::string& prefix,
                    const std::array<std::size_t, 4>& widths, Rng& rng) {
  for (int a = 1; a <= 4; ++a) {
    const std::size_t c = widths[std::size_t(a - 1)];
    register_linear(ps, prefix + ".embed.s" + std::to_string(a), c, c, rng);
  }
}

template <typename T>
std::vector<Tensor<T>> embed(const std::vector<Tensor<T>>& streams,
                             ParamStore<T>& ps, const std::string& prefix) {
  FUSE3D_CHECK(streams.size() == 4, "embed: expected 4 streams, got ",
               streams.size());
  std::vector<Tensor<T>> out;
  out.reserve(4);
  for (int a = 1; a <= 4; ++a)
    out.push_back(linear(streams[std::size_t(a - 1)], ps,
                         prefix + ".embed.s" + std::to_string(a)));
  return out;
}

}  // namespace fuse3d
