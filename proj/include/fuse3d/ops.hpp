#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fuse3d/tensor.hpp"

namespace fuse3d {

namespace detail {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace detail

// Exact GeLU, x * Phi(x) with the Gaussian CDF (no tanh approximation).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(xv[i]);
    ov[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2)));
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < xn->values.size(); ++i) {
        const double v = static_cast<double>(xn->values[i]);
        const double phi = 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2));
        const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*gx)[i] += static_cast<T>((phi + v * pdf) *
                                   static_cast<double>((*gout)[i]));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(xv[i]);
    if (v >= 0.0) {
      ov[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
    } else {
      const double e = std::exp(v);
      ov[i] = static_cast<T>(e / (1.0 + e));
    }
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < on->values.size(); ++i) {
        const T s = on->values[i];
        (*gx)[i] += (*gout)[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  FUSE3D_CHECK(x.shape() == y.shape(), "add: shape mismatch ",
               shape_str(x.shape()), " vs ", shape_str(y.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  const T* yv = y.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) ov[i] = xv[i] + yv[i];
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad() || y.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto yn = y.node();
    auto on = out.node();
    tp->record([xn, yn, on] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      if (auto* gx = detail::grad_sink(xn))
        for (std::size_t i = 0; i < gout->size(); ++i) (*gx)[i] += (*gout)[i];
      if (auto* gy = detail::grad_sink(yn))
        for (std::size_t i = 0; i < gout->size(); ++i) (*gy)[i] += (*gout)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  FUSE3D_CHECK(x.shape() == y.shape(), "mul: shape mismatch ",
               shape_str(x.shape()), " vs ", shape_str(y.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  const T* yv = y.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) ov[i] = xv[i] * yv[i];
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad() || y.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto yn = y.node();
    auto on = out.node();
    tp->record([xn, yn, on] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      if (auto* gx = detail::grad_sink(xn))
        for (std::size_t i = 0; i < gout->size(); ++i)
          (*gx)[i] += (*gout)[i] * yn->values[i];
      if (auto* gy = detail::grad_sink(yn))
        for (std::size_t i = 0; i < gout->size(); ++i)
          (*gy)[i] += (*gout)[i] * xn->values[i];
    });
  }
  return out;
}

// Multiply by a compile-time-constant scalar (not a learnable input).
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) ov[i] = xv[i] * factor;
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on, factor] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < gout->size(); ++i)
        (*gx)[i] += (*gout)[i] * factor;
    });
  }
  return out;
}

// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  const T* xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += xv[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      const T g = (*gout)[0];
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
    });
  }
  return out;
}

// Channel concatenation of [C_i,D,H,W] tensors with shared spatial extents.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  FUSE3D_CHECK(!xs.empty(), "concat_channels: empty input list");
  detail::check_feature(xs[0], "concat_channels");
  const std::size_t d = xs[0].dim(1), h = xs[0].dim(2), w = xs[0].dim(3);
  std::size_t c_total = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    detail::check_feature(x, "concat_channels");
    FUSE3D_CHECK(x.dim(1) == d && x.dim(2) == h && x.dim(3) == w,
                 "concat_channels: spatial mismatch ", shape_str(x.shape()),
                 " vs ", shape_str(xs[0].shape()));
    c_total += x.dim(0);
    any_grad = any_grad || x.requires_grad();
  }
  const std::size_t spatial = d * h * w;
  Tensor<T> out = Tensor<T>::zeros({c_total, d, h, w});
  T* ov = out.data();
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t n = x.size();
    const T* xv = x.data();
    for (std::size_t i = 0; i < n; ++i) ov[offset + i] = xv[i];
    offset += n;
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, any_grad)) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> nodes;
    nodes.reserve(xs.size());
    for (const auto& x : xs) nodes.push_back(x.node());
    auto on = out.node();
    tp->record([nodes, on, spatial] {
      (void)spatial;
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      std::size_t off = 0;
      for (const auto& xn : nodes) {
        const std::size_t n = xn->values.size();
        if (auto* gx = detail::grad_sink(xn))
          for (std::size_t i = 0; i < n; ++i) (*gx)[i] += (*gout)[off + i];
        off += n;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> xs) {
  return concat_channels(std::vector<Tensor<T>>(xs));
}

// Per-voxel affine map across channels: out[co] = b[co] + sum_ci w[co,ci] x[ci].
// Equivalent to conv3d with a 1x1x1 kernel.
template <typename T>
Tensor<T> pointwise_linear(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b) {
  detail::check_feature(x, "pointwise_linear");
  FUSE3D_CHECK(w.rank() == 2, "pointwise_linear: weight must be [Cout,Cin], got ",
               shape_str(w.shape()));
  const std::size_t cin = x.dim(0), cout = w.dim(0);
  FUSE3D_CHECK(w.dim(1) == cin, "pointwise_linear: weight Cin ", w.dim(1),
               " does not match input channels ", cin);
  FUSE3D_CHECK(b.rank() == 1 && b.dim(0) == cout,
               "pointwise_linear: bias must be [", cout, "], got ",
               shape_str(b.shape()));
  const std::size_t d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t s = d * h * wd;
  Tensor<T> out = Tensor<T>::zeros({cout, d, h, wd});
  const T* xv = x.data();
  const T* wv = w.data();
  const T* bv = b.data();
  T* ov = out.data();
  for (std::size_t co = 0; co < cout; ++co) {
    T* orow = ov + co * s;
    const T bias = bv[co];
    for (std::size_t i = 0; i < s; ++i) orow[i] = bias;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T wc = wv[co * cin + ci];
      const T* xrow = xv + ci * s;
      for (std::size_t i = 0; i < s; ++i) orow[i] += wc * xrow[i];
    }
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad() || w.requires_grad() ||
                              b.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    auto on = out.node();
    tp->record([xn, wn, bn, on, cin, cout, s] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const T* gov = gout->data();
      if (auto* gx = detail::grad_sink(xn)) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
          T* gxrow = gx->data() + ci * s;
          for (std::size_t co = 0; co < cout; ++co) {
            const T wc = wn->values[co * cin + ci];
            const T* grow = gov + co * s;
            for (std::size_t i = 0; i < s; ++i) gxrow[i] += wc * grow[i];
          }
        }
      }
      if (auto* gw = detail::grad_sink(wn)) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T* grow = gov + co * s;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xrow = xn->values.data() + ci * s;
            T acc = T(0);
            for (std::size_t i = 0; i < s; ++i) acc += grow[i] * xrow[i];
            (*gw)[co * cin + ci] += acc;
          }
        }
      }
      if (auto* gb = detail::grad_sink(bn)) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T* grow = gov + co * s;
          T acc = T(0);
          for (std::size_t i = 0; i < s; ++i) acc += grow[i];
          (*gb)[co] += acc;
        }
      }
    });
  }
  return out;
}

// Per-channel spatial mean, [C,D,H,W] -> [C,1,1,1].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::check_feature(x, "global_avg_pool");
  const std::size_t c = x.dim(0);
  const std::size_t s = x.dim(1) * x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({c, 1, 1, 1});
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    const T* row = xv + ch * s;
    for (std::size_t i = 0; i < s; ++i) acc += row[i];
    ov[ch] = acc / static_cast<T>(s);
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on, c, s] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T g = (*gout)[ch] / static_cast<T>(s);
        T* row = gx->data() + ch * s;
        for (std::size_t i = 0; i < s; ++i) row[i] += g;
      }
    });
  }
  return out;
}

// Broadcast [C,1,1,1] to [C,D,H,W]; adjoint of the per-channel spatial sum.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& x, std::size_t d, std::size_t h,
                            std::size_t w) {
  detail::check_feature(x, "broadcast_spatial");
  FUSE3D_CHECK(x.dim(1) == 1 && x.dim(2) == 1 && x.dim(3) == 1,
               "broadcast_spatial: expected [C,1,1,1], got ",
               shape_str(x.shape()));
  const std::size_t c = x.dim(0);
  const std::size_t s = d * h * w;
  Tensor<T> out = Tensor<T>::zeros({c, d, h, w});
  const T* xv = x.data();
  T* ov = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T v = xv[ch];
    T* row = ov + ch * s;
    for (std::size_t i = 0; i < s; ++i) row[i] = v;
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on, c, s] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* row = gout->data() + ch * s;
        T acc = T(0);
        for (std::size_t i = 0; i < s; ++i) acc += row[i];
        (*gx)[ch] += acc;
      }
    });
  }
  return out;
}

// Gated sum over focal levels: out[c,p] = sum_l levels[l][c,p] * gates[l,p].
// Gate channel l is broadcast across the feature channels of level l.
template <typename T>
Tensor<T> aggregate(const std::vector<Tensor<T>>& levels,
                    const Tensor<T>& gates) {
  FUSE3D_CHECK(!levels.empty(), "aggregate: empty level list");
  detail::check_feature(gates, "aggregate");
  const std::size_t nl = levels.size();
  FUSE3D_CHECK(gates.dim(0) == nl, "aggregate: ", nl, " levels but ",
               gates.dim(0), " gate channels");
  const std::size_t c = levels[0].dim(0);
  const std::size_t d = levels[0].dim(1), h = levels[0].dim(2),
                    w = levels[0].dim(3);
  bool any_grad = gates.requires_grad();
  for (const auto& lev : levels) {
    detail::check_feature(lev, "aggregate");
    FUSE3D_CHECK(lev.shape() == levels[0].shape(),
                 "aggregate: level shape mismatch ", shape_str(lev.shape()),
                 " vs ", shape_str(levels[0].shape()));
    any_grad = any_grad || lev.requires_grad();
  }
  FUSE3D_CHECK(gates.dim(1) == d && gates.dim(2) == h && gates.dim(3) == w,
               "aggregate: gate extents ", shape_str(gates.shape()),
               " do not match levels ", shape_str(levels[0].shape()));
  const std::size_t s = d * h * w;
  Tensor<T> out = Tensor<T>::zeros({c, d, h, w});
  T* ov = out.data();
  const T* gv = gates.data();
  for (std::size_t l = 0; l < nl; ++l) {
    const T* lv = levels[l].data();
    const T* gate = gv + l * s;
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* orow = ov + ch * s;
      const T* lrow = lv + ch * s;
      for (std::size_t i = 0; i < s; ++i) orow[i] += lrow[i] * gate[i];
    }
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, any_grad)) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> lnodes;
    lnodes.reserve(nl);
    for (const auto& lev : levels) lnodes.push_back(lev.node());
    auto gn = gates.node();
    auto on = out.node();
    tp->record([lnodes, gn, on, c, s] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const T* gov = gout->data();
      auto* ggate = detail::grad_sink(gn);
      for (std::size_t l = 0; l < lnodes.size(); ++l) {
        const T* gate = gn->values.data() + l * s;
        if (auto* glev = detail::grad_sink(lnodes[l])) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* grow = gov + ch * s;
            T* out_row = glev->data() + ch * s;
            for (std::size_t i = 0; i < s; ++i) out_row[i] += grow[i] * gate[i];
          }
        }
        if (ggate) {
          const T* lv = lnodes[l]->values.data();
          T* grow = ggate->data() + l * s;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* go = gov + ch * s;
            const T* lrow = lv + ch * s;
            for (std::size_t i = 0; i < s; ++i) grow[i] += go[i] * lrow[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> aggregate(std::initializer_list<Tensor<T>> levels,
                    const Tensor<T>& gates) {
  return aggregate(std::vector<Tensor<T>>(levels), gates);
}

}  // namespace fuse3d
