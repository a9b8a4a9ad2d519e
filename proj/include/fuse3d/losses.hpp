#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fuse3d/ops.hpp"

namespace fuse3d {

template <typename T>
struct LossValue {
  T total;
  T bce;
  T dice;
};

// Mean binary cross-entropy over all voxels and channels, with predictions
// clamped to [eps, 1-eps]. Gradients are zero in the clamped region.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& y, const Tensor<T>& p) {
  FUSE3D_CHECK(y.shape() == p.shape(), "bce: shape mismatch ",
               shape_str(y.shape()), " vs ", shape_str(p.shape()));
  constexpr T kEps = T(1e-7);
  const T* yv = y.data();
  const T* pv = p.data();
  const std::size_t n = y.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T pc = std::min(std::max(pv[i], kEps), T(1) - kEps);
    acc -= double(yv[i]) * std::log(double(pc)) +
           (1.0 - double(yv[i])) * std::log(1.0 - double(pc));
  }
  Tensor<T> out = Tensor<T>::scalar(T(acc / double(n)));
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, y.requires_grad() || p.requires_grad())) {
    out.set_requires_grad(true);
    auto yn = y.node();
    auto pn = p.node();
    auto on = out.node();
    tp->record([yn, pn, on, n] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      constexpr T kEps = T(1e-7);
      const T g = (*gout)[0] / T(n);
      const T* yv = yn->values.data();
      const T* pv = pn->values.data();
      if (auto* gp = detail::grad_sink(pn)) {
        for (std::size_t i = 0; i < n; ++i) {
          if (pv[i] < kEps || pv[i] > T(1) - kEps) continue;
          (*gp)[i] += g * ((T(1) - yv[i]) / (T(1) - pv[i]) - yv[i] / pv[i]);
        }
      }
      if (auto* gy = detail::grad_sink(yn)) {
        for (std::size_t i = 0; i < n; ++i) {
          const T pc = std::min(std::max(pv[i], kEps), T(1) - kEps);
          (*gy)[i] += g * T(std::log(1.0 - double(pc)) - std::log(double(pc)));
        }
      }
    });
  }
  return out;
}

// Soft Dice loss per channel, 1 - (2*sum(y*p)+1)/(sum(y)+sum(p)+1) with
// voxelwise sums, mean-reduced over channels. The +1 smoothing keeps empty
// masks well defined.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& y, const Tensor<T>& p) {
  FUSE3D_CHECK(y.shape() == p.shape(), "dice: shape mismatch ",
               shape_str(y.shape()), " vs ", shape_str(p.shape()));
  FUSE3D_CHECK(y.rank() == 4, "dice: expected [C,D,H,W], got ",
               shape_str(y.shape()));
  const std::size_t c = y.dim(0);
  const std::size_t n = y.size() / c;
  const T* yv = y.data();
  const T* pv = p.data();
  std::vector<double> syp(c, 0.0), sy(c, 0.0), sp(c, 0.0);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* yc = yv + ci * n;
    const T* pc = pv + ci * n;
    for (std::size_t i = 0; i < n; ++i) {
      syp[ci] += double(yc[i]) * double(pc[i]);
      sy[ci] += double(yc[i]);
      sp[ci] += double(pc[i]);
    }
  }
  double loss = 0.0;
  for (std::size_t ci = 0; ci < c; ++ci)
    loss += 1.0 - (2.0 * syp[ci] + 1.0) / (sy[ci] + sp[ci] + 1.0);
  Tensor<T> out = Tensor<T>::scalar(T(loss / double(c)));
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, y.requires_grad() || p.requires_grad())) {
    out.set_requires_grad(true);
    auto yn = y.node();
    auto pn = p.node();
    auto on = out.node();
    tp->record([yn, pn, on, c, n, syp, sy, sp] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const T g = (*gout)[0] / T(c);
      const T* yv = yn->values.data();
      const T* pv = pn->values.data();
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double den = sy[ci] + sp[ci] + 1.0;
        const double num = 2.0 * syp[ci] + 1.0;
        if (auto* gp = detail::grad_sink(pn)) {
          T* gc = gp->data() + ci * n;
          const T* yc = yv + ci * n;
          for (std::size_t i = 0; i < n; ++i)
            gc[i] += g * T((num - 2.0 * double(yc[i]) * den) / (den * den));
        }
        if (auto* gy = detail::grad_sink(yn)) {
          T* gc = gy->data() + ci * n;
          const T* pc = pv + ci * n;
          for (std::size_t i = 0; i < n; ++i)
            gc[i] += g * T((num - 2.0 * double(pc[i]) * den) / (den * den));
        }
      }
    });
  }
  return out;
}

template <typename T>
struct LossNodes {
  Tensor<T> total;
  Tensor<T> bce;
  Tensor<T> dice;

  LossValue<T> value() const {
    return LossValue<T>{total.values()[0], bce.values()[0], dice.values()[0]};
  }
};

// Equally weighted BCE + Dice, components kept for reporting.
template <typename T>
LossNodes<T> combined_loss(const Tensor<T>& y, const Tensor<T>& p) {
  Tensor<T> b = bce_loss(y, p);
  Tensor<T> d = dice_loss(y, p);
  Tensor<T> total = add(scale(b, T(0.5)), scale(d, T(0.5)));
  return LossNodes<T>{total, b, d};
}

}  // namespace fuse3d
