#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fuse3d/params.hpp"

namespace fuse3d {

// Standard Adam with bias correction. Moments are laid out per parameter in
// registration order; frozen entries keep zero moments and are skipped.
template <typename T>
struct AdamState {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One update over every trainable parameter. A non-finite gradient aborts
// with the parameter name and the caller's iteration counter.
template <typename T>
void adam_step(ParamStore<T>& ps, AdamState<T>& st, T lr,
               std::int64_t iteration) {
  if (st.m.empty()) {
    st.m.resize(ps.count());
    st.v.resize(ps.count());
    for (std::size_t i = 0; i < ps.count(); ++i) {
      st.m[i].assign(ps.entries()[i].tensor.size(), T(0));
      st.v[i].assign(ps.entries()[i].tensor.size(), T(0));
    }
  }
  FUSE3D_CHECK(st.m.size() == ps.count(),
               "adam_step: state does not match the param store");
  ++st.step;
  const T bc1 = T(1) - T(std::pow(double(st.beta1), double(st.step)));
  const T bc2 = T(1) - T(std::pow(double(st.beta2), double(st.step)));
  for (std::size_t ei = 0; ei < ps.count(); ++ei) {
    auto& e = ps.entries()[ei];
    if (!e.trainable) continue;
    const std::size_t n = e.tensor.size();
    const bool has_grad = e.tensor.has_grad();
    const T* g = has_grad ? e.tensor.grad_ref().data() : nullptr;
    T* p = e.tensor.data();
    T* mv = st.m[ei].data();
    T* vv = st.v[ei].data();
    for (std::size_t i = 0; i < n; ++i) {
      const T gi = g ? g[i] : T(0);
      if (!std::isfinite(double(gi)))
        raise<NumericError>("non-finite gradient in '", e.name,
                            "' at iteration ", iteration);
      mv[i] = st.beta1 * mv[i] + (T(1) - st.beta1) * gi;
      vv[i] = st.beta2 * vv[i] + (T(1) - st.beta2) * gi * gi;
      const T mhat = mv[i] / bc1;
      const T vhat = vv[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace fuse3d
