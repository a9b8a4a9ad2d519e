#pragma once

#include <cstddef>
#include <vector>

#include "fuse3d/tensor.hpp"

namespace fuse3d {

namespace detail {

using idx = std::ptrdiff_t;

inline idx ceil_div(idx a, idx b) {
  const idx q = a / b, r = a % b;
  return q + (r > 0 ? 1 : 0);
}

// Range of output indices o with 0 <= o*stride + offset < ext_in,
// intersected with [0, ext_out).
inline void tap_range(idx ext_in, idx ext_out, idx stride, idx offset,
                      idx& lo, idx& hi) {
  lo = ceil_div(-offset, stride);
  if (lo < 0) lo = 0;
  hi = ceil_div(ext_in - offset, stride);
  if (hi > ext_out) hi = ext_out;
  if (hi < lo) hi = lo;
}

inline idx conv_out_extent(idx ext, idx k, idx stride, idx pad) {
  return (ext + 2 * pad - k) / stride + 1;
}

// One kernel tap accumulated over a full output channel slab:
//   out[oz,oy,ox] += w * in[oz*s+dz, oy*s+dy, ox*s+dx]
// The x loop is contiguous on both sides when stride is 1, which is what
// the compiler vectorizes; everything above it is bounds bookkeeping.
template <typename T>
void tap_axpy(T* out, const T* in, T w, idx od, idx oh, idx ow, idx id, idx ih,
              idx iw, idx stride, idx dz, idx dy, idx dx) {
  idx zlo, zhi, ylo, yhi, xlo, xhi;
  tap_range(id, od, stride, dz, zlo, zhi);
  tap_range(ih, oh, stride, dy, ylo, yhi);
  tap_range(iw, ow, stride, dx, xlo, xhi);
  for (idx oz = zlo; oz < zhi; ++oz) {
    const idx iz = oz * stride + dz;
    for (idx oy = ylo; oy < yhi; ++oy) {
      const idx iy = oy * stride + dy;
      T* orow = out + (oz * oh + oy) * ow;
      const T* irow = in + (iz * ih + iy) * iw;
      if (stride == 1) {
        const T* ishift = irow + dx;
        for (idx ox = xlo; ox < xhi; ++ox) orow[ox] += w * ishift[ox];
      } else {
        for (idx ox = xlo; ox < xhi; ++ox)
          orow[ox] += w * irow[ox * stride + dx];
      }
    }
  }
}

// Adjoint of tap_axpy with the same bounds: gin[i] += w * gout[o].
template <typename T>
void tap_axpy_adj(T* gin, const T* gout, T w, idx od, idx oh, idx ow, idx id,
                  idx ih, idx iw, idx stride, idx dz, idx dy, idx dx) {
  idx zlo, zhi, ylo, yhi, xlo, xhi;
  tap_range(id, od, stride, dz, zlo, zhi);
  tap_range(ih, oh, stride, dy, ylo, yhi);
  tap_range(iw, ow, stride, dx, xlo, xhi);
  for (idx oz = zlo; oz < zhi; ++oz) {
    const idx iz = oz * stride + dz;
    for (idx oy = ylo; oy < yhi; ++oy) {
      const idx iy = oy * stride + dy;
      const T* grow = gout + (oz * oh + oy) * ow;
      T* irow = gin + (iz * ih + iy) * iw;
      if (stride == 1) {
        T* ishift = irow + dx;
        for (idx ox = xlo; ox < xhi; ++ox) ishift[ox] += w * grow[ox];
      } else {
        for (idx ox = xlo; ox < xhi; ++ox)
          irow[ox * stride + dx] += w * grow[ox];
      }
    }
  }
}

// Fixed-lane dot product: partial sums land in a constant number of
// accumulators in a fixed order, so the result is bit-reproducible run to
// run while the lane loop still vectorizes.
template <typename T>
T dot_lanes(const T* __restrict__ a, const T* __restrict__ b, idx n) {
  constexpr idx L = static_cast<idx>(64 / sizeof(T));
  T acc[L] = {};
  const idx nb = n - n % L;
  for (idx i = 0; i < nb; i += L)
    for (idx j = 0; j < L; ++j) acc[j] += a[i + j] * b[i + j];
  T tail = T(0);
  for (idx i = nb; i < n; ++i) tail += a[i] * b[i];
  T s = tail;
  for (idx j = 0; j < L; ++j) s += acc[j];
  return s;
}

// Weight gradient for one tap: sum over outputs of gout[o] * in[i(o)].
template <typename T>
T tap_dot(const T* gout, const T* in, idx od, idx oh, idx ow, idx id, idx ih,
          idx iw, idx stride, idx dz, idx dy, idx dx) {
  idx zlo, zhi, ylo, yhi, xlo, xhi;
  tap_range(id, od, stride, dz, zlo, zhi);
  tap_range(ih, oh, stride, dy, ylo, yhi);
  tap_range(iw, ow, stride, dx, xlo, xhi);
  T acc = T(0);
  for (idx oz = zlo; oz < zhi; ++oz) {
    const idx iz = oz * stride + dz;
    for (idx oy = ylo; oy < yhi; ++oy) {
      const idx iy = oy * stride + dy;
      const T* grow = gout + (oz * oh + oy) * ow;
      const T* irow = in + (iz * ih + iy) * iw;
      if (stride == 1) {
        acc += dot_lanes(grow + xlo, irow + dx + xlo, xhi - xlo);
      } else {
        for (idx ox = xlo; ox < xhi; ++ox) acc += grow[ox] * irow[ox * stride + dx];
      }
    }
  }
  return acc;
}

// acc[x] += w * row[x + shift] over the range where both sides are in
// bounds. Contiguous on both sides; this is the vectorized inner loop of
// the stride-1 convolution paths.
template <typename T>
void shifted_axpy(T* __restrict__ acc, const T* __restrict__ row, T w,
                  idx n_acc, idx n_row, idx shift) {
  const idx lo = shift < 0 ? -shift : 0;
  idx hi = n_row - shift;
  if (hi > n_acc) hi = n_acc;
  const T* r = row + shift;
  for (idx x = lo; x < hi; ++x) acc[x] += w * r[x];
}

// Fused 3-tap row update for the k=3, pad=1, stride=1 case:
// acc[x] += w0*row[x-1] + w1*row[x] + w2*row[x+1] with zero-padded ends.
template <typename T>
void row3_axpy(T* __restrict__ acc, const T* __restrict__ row, T w0, T w1,
               T w2, idx n) {
  if (n == 1) {
    acc[0] += w1 * row[0];
    return;
  }
  acc[0] += w1 * row[0] + w2 * row[1];
  for (idx x = 1; x < n - 1; ++x)
    acc[x] += w0 * row[x - 1] + w1 * row[x] + w2 * row[x + 1];
  acc[n - 1] += w0 * row[n - 2] + w1 * row[n - 1];
}

// Weight-gradient partner of row3_axpy for the k=3, pad=1, stride=1 case.
// Computes the three kx taps of one (kz,ky) kernel row over a whole slab
// pair: out3[kx] = sum over (oz,oy,ox) of g[oz,oy,ox]*r[oz+dz,oy+dy,ox+kx-1].
// Lane accumulators survive across rows (one reduction per slab, not per
// row) and tails spread over lanes, so the sum order is fixed and the
// result bit-reproducible.
template <typename T>
void row3_dot_slab(const T* __restrict__ g, const T* __restrict__ r, idx d,
                   idx h, idx w, idx dz, idx dy, T* __restrict__ out3) {
  constexpr idx L = static_cast<idx>(64 / sizeof(T));
  T a0[L] = {}, a1[L] = {}, a2[L] = {};
  const idx zlo = dz < 0 ? -dz : 0, zhi = dz > 0 ? d - dz : d;
  const idx ylo = dy < 0 ? -dy : 0, yhi = dy > 0 ? h - dy : h;
  const idx nb1 = w - w % L;            // kx=1: x in [0,w)
  const idx nb0 = 1 + (w - 1) - (w - 1) % L;  // kx=0: x in [1,w)
  const idx nb2 = (w - 1) - (w - 1) % L;      // kx=2: x in [0,w-1)
  for (idx oz = zlo; oz < zhi; ++oz)
    for (idx oy = ylo; oy < yhi; ++oy) {
      const T* __restrict__ grow = g + (oz * h + oy) * w;
      const T* __restrict__ irow = r + ((oz + dz) * h + oy + dy) * w;
      for (idx i = 0; i < nb1; i += L)
        for (idx j = 0; j < L; ++j) a1[j] += grow[i + j] * irow[i + j];
      for (idx i = nb1; i < w; ++i) a1[i - nb1] += grow[i] * irow[i];
      for (idx i = 1; i < nb0; i += L)
        for (idx j = 0; j < L; ++j) a0[j] += grow[i + j] * irow[i + j - 1];
      for (idx i = nb0; i < w; ++i) a0[i - nb0] += grow[i] * irow[i - 1];
      for (idx i = 0; i < nb2; i += L)
        for (idx j = 0; j < L; ++j) a2[j] += grow[i + j] * irow[i + j + 1];
      for (idx i = nb2; i < w - 1; ++i) a2[i - nb2] += grow[i] * irow[i + 1];
    }
  T s0 = T(0), s1 = T(0), s2 = T(0);
  for (idx j = 0; j < L; ++j) {
    s0 += a0[j];
    s1 += a1[j];
    s2 += a2[j];
  }
  out3[0] = s0;
  out3[1] = s1;
  out3[2] = s2;
}

// Stride-1 convolution of one input slab into one output row buffer:
// buf[ox] += sum over taps of w[tap] * in[oz+kz-pad, oy+ky-pad, ox+kx-pad].
template <typename T>
void conv_row_s1(T* __restrict__ buf, const T* __restrict__ islab,
                 const T* __restrict__ wtaps, idx k, idx pad, idx oz, idx oy,
                 idx id, idx ih, idx iw, idx ow) {
  if (k == 3 && pad == 1) {
    for (idx kz = 0; kz < 3; ++kz) {
      const idx iz = oz + kz - 1;
      if (iz < 0 || iz >= id) continue;
      for (idx ky = 0; ky < 3; ++ky) {
        const idx iy = oy + ky - 1;
        if (iy < 0 || iy >= ih) continue;
        const T* irow = islab + (iz * ih + iy) * iw;
        const T* wrow = wtaps + (kz * 3 + ky) * 3;
        row3_axpy(buf, irow, wrow[0], wrow[1], wrow[2], ow);
      }
    }
    return;
  }
  for (idx kz = 0; kz < k; ++kz) {
    const idx iz = oz + kz - pad;
    if (iz < 0 || iz >= id) continue;
    for (idx ky = 0; ky < k; ++ky) {
      const idx iy = oy + ky - pad;
      if (iy < 0 || iy >= ih) continue;
      const T* irow = islab + (iz * ih + iy) * iw;
      const T* wrow = wtaps + (kz * k + ky) * k;
      for (idx kx = 0; kx < k; ++kx)
        shifted_axpy(buf, irow, wrow[kx], ow, iw, kx - pad);
    }
  }
}

// Adjoint row: buf[ix] += sum over taps of w[tap] * gout[iz-kz+pad, ...].
// This is conv_row_s1 with the kernel flipped and the slabs swapped.
template <typename T>
void conv_row_s1_adj(T* __restrict__ buf, const T* __restrict__ goslab,
                     const T* __restrict__ wtaps, idx k, idx pad, idx iz,
                     idx iy, idx od, idx oh, idx ow, idx iw) {
  if (k == 3 && pad == 1 && iw == ow) {
    for (idx kz = 0; kz < 3; ++kz) {
      const idx oz = iz - kz + 1;
      if (oz < 0 || oz >= od) continue;
      for (idx ky = 0; ky < 3; ++ky) {
        const idx oy = iy - ky + 1;
        if (oy < 0 || oy >= oh) continue;
        const T* grow = goslab + (oz * oh + oy) * ow;
        const T* wrow = wtaps + (kz * 3 + ky) * 3;
        row3_axpy(buf, grow, wrow[2], wrow[1], wrow[0], iw);
      }
    }
    return;
  }
  for (idx kz = 0; kz < k; ++kz) {
    const idx oz = iz - kz + pad;
    if (oz < 0 || oz >= od) continue;
    for (idx ky = 0; ky < k; ++ky) {
      const idx oy = iy - ky + pad;
      if (oy < 0 || oy >= oh) continue;
      const T* grow = goslab + (oz * oh + oy) * ow;
      const T* wrow = wtaps + (kz * k + ky) * k;
      for (idx kx = 0; kx < k; ++kx)
        shifted_axpy(buf, grow, wrow[kx], iw, ow, pad - kx);
    }
  }
}

}  // namespace detail

// Dense 3-D convolution with zero padding.
// x: [Cin,D,H,W], w: [Cout,Cin,k,k,k], b: [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride, int pad) {
  using detail::idx;
  detail::check_feature(x, "conv3d");
  FUSE3D_CHECK(w.rank() == 5, "conv3d: weight must be [Cout,Cin,k,k,k], got ",
               shape_str(w.shape()));
  const idx cin = static_cast<idx>(x.dim(0));
  const idx cout = static_cast<idx>(w.dim(0));
  const idx k = static_cast<idx>(w.dim(2));
  FUSE3D_CHECK(static_cast<idx>(w.dim(1)) == cin, "conv3d: weight Cin ",
               w.dim(1), " does not match input channels ", cin);
  FUSE3D_CHECK(w.dim(3) == w.dim(2) && w.dim(4) == w.dim(2),
               "conv3d: kernel must be cubic, got ", shape_str(w.shape()));
  FUSE3D_CHECK(k % 2 == 1, "conv3d: kernel size must be odd, got ", k);
  FUSE3D_CHECK(b.rank() == 1 && static_cast<idx>(b.dim(0)) == cout,
               "conv3d: bias must be [", cout, "], got ", shape_str(b.shape()));
  FUSE3D_CHECK(stride >= 1, "conv3d: stride must be >= 1, got ", stride);
  FUSE3D_CHECK(pad >= 0, "conv3d: pad must be >= 0, got ", pad);
  const idx id = static_cast<idx>(x.dim(1));
  const idx ih = static_cast<idx>(x.dim(2));
  const idx iw = static_cast<idx>(x.dim(3));
  const idx od = detail::conv_out_extent(id, k, stride, pad);
  const idx oh = detail::conv_out_extent(ih, k, stride, pad);
  const idx ow = detail::conv_out_extent(iw, k, stride, pad);
  FUSE3D_CHECK(od >= 1 && oh >= 1 && ow >= 1,
               "conv3d: empty output for input ", shape_str(x.shape()),
               " with k=", k, " stride=", stride, " pad=", pad);
  const idx ispatial = id * ih * iw;
  const idx ospatial = od * oh * ow;
  Tensor<T> out = Tensor<T>::zeros({static_cast<std::size_t>(cout),
                                    static_cast<std::size_t>(od),
                                    static_cast<std::size_t>(oh),
                                    static_cast<std::size_t>(ow)});
  const T* xv = x.data();
  const T* wv = w.data();
  const T* bv = b.data();
  T* ov = out.data();
  if (stride == 1) {
    std::vector<T> buf(static_cast<std::size_t>(ow));
    for (idx co = 0; co < cout; ++co) {
      T* oslab = ov + co * ospatial;
      const T* wbase = wv + co * cin * k * k * k;
      const T bias = bv[co];
      for (idx oz = 0; oz < od; ++oz)
        for (idx oy = 0; oy < oh; ++oy) {
          for (idx i = 0; i < ow; ++i) buf[static_cast<std::size_t>(i)] = bias;
          for (idx ci = 0; ci < cin; ++ci)
            detail::conv_row_s1(buf.data(), xv + ci * ispatial,
                                wbase + ci * k * k * k, k, pad, oz, oy, id, ih,
                                iw, ow);
          T* orow = oslab + (oz * oh + oy) * ow;
          for (idx i = 0; i < ow; ++i) orow[i] = buf[static_cast<std::size_t>(i)];
        }
    }
  } else {
    for (idx co = 0; co < cout; ++co) {
      T* oslab = ov + co * ospatial;
      for (idx i = 0; i < ospatial; ++i) oslab[i] = bv[co];
      for (idx ci = 0; ci < cin; ++ci) {
        const T* islab = xv + ci * ispatial;
        const T* wslab = wv + (co * cin + ci) * k * k * k;
        for (idx kz = 0; kz < k; ++kz)
          for (idx ky = 0; ky < k; ++ky)
            for (idx kx = 0; kx < k; ++kx)
              detail::tap_axpy(oslab, islab, wslab[(kz * k + ky) * k + kx], od,
                               oh, ow, id, ih, iw, stride, kz - pad, ky - pad,
                               kx - pad);
      }
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
    const int s = stride, p = pad;
    tp->record([xn, wn, bn, on, cin, cout, k, id, ih, iw, od, oh, ow, s, p] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const idx ispatial = id * ih * iw;
      const idx ospatial = od * oh * ow;
      auto* gx = detail::grad_sink(xn);
      auto* gw = detail::grad_sink(wn);
      auto* gb = detail::grad_sink(bn);
      if (gb) {
        for (idx co = 0; co < cout; ++co) {
          const T* goslab = gout->data() + co * ospatial;
          T acc = T(0);
          for (idx i = 0; i < ospatial; ++i) acc += goslab[i];
          (*gb)[co] += acc;
        }
      }
      if (gx && s == 1) {
        std::vector<T> buf(static_cast<std::size_t>(iw));
        for (idx ci = 0; ci < cin; ++ci) {
          T* gxslab = gx->data() + ci * ispatial;
          for (idx iz = 0; iz < id; ++iz)
            for (idx iy = 0; iy < ih; ++iy) {
              for (auto& v : buf) v = T(0);
              for (idx co = 0; co < cout; ++co)
                detail::conv_row_s1_adj(
                    buf.data(), gout->data() + co * ospatial,
                    wn->values.data() + (co * cin + ci) * k * k * k, k, p, iz,
                    iy, od, oh, ow, iw);
              T* grow = gxslab + (iz * ih + iy) * iw;
              for (idx i = 0; i < iw; ++i)
                grow[i] += buf[static_cast<std::size_t>(i)];
            }
        }
      }
      for (idx co = 0; co < cout; ++co) {
        const T* goslab = gout->data() + co * ospatial;
        for (idx ci = 0; ci < cin; ++ci) {
          const T* wslab = wn->values.data() + (co * cin + ci) * k * k * k;
          const T* islab = xn->values.data() + ci * ispatial;
          T* gxslab = (gx && s != 1) ? gx->data() + ci * ispatial : nullptr;
          T* gwslab = gw ? gw->data() + (co * cin + ci) * k * k * k : nullptr;
          if (!gxslab && !gwslab) continue;
          if (gwslab && !gxslab && s == 1 && k == 3 && p == 1) {
            for (idx kz = 0; kz < 3; ++kz)
              for (idx ky = 0; ky < 3; ++ky) {
                T out3[3];
                detail::row3_dot_slab(goslab, islab, od, oh, ow, kz - 1,
                                      ky - 1, out3);
                T* gwrow = gwslab + (kz * 3 + ky) * 3;
                gwrow[0] += out3[0];
                gwrow[1] += out3[1];
                gwrow[2] += out3[2];
              }
            continue;
          }
          for (idx kz = 0; kz < k; ++kz)
            for (idx ky = 0; ky < k; ++ky)
              for (idx kx = 0; kx < k; ++kx) {
                const idx tap = (kz * k + ky) * k + kx;
                if (gxslab)
                  detail::tap_axpy_adj(gxslab, goslab, wslab[tap], od, oh, ow,
                                       id, ih, iw, s, kz - p, ky - p, kx - p);
                if (gwslab)
                  gwslab[tap] += detail::tap_dot(goslab, islab, od, oh, ow, id,
                                                 ih, iw, s, kz - p, ky - p,
                                                 kx - p);
              }
        }
      }
    });
  }
  return out;
}

// Depthwise 3-D convolution: channel c of the output depends only on
// channel c of the input. x: [C,D,H,W], w: [C,k,k,k], b: [C].
template <typename T>
Tensor<T> depthwise_conv3d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, int stride, int pad) {
  using detail::idx;
  detail::check_feature(x, "depthwise_conv3d");
  FUSE3D_CHECK(w.rank() == 4, "depthwise_conv3d: weight must be [C,k,k,k], got ",
               shape_str(w.shape()));
  const idx c = static_cast<idx>(x.dim(0));
  const idx k = static_cast<idx>(w.dim(1));
  FUSE3D_CHECK(static_cast<idx>(w.dim(0)) == c, "depthwise_conv3d: weight C ",
               w.dim(0), " does not match input channels ", c);
  FUSE3D_CHECK(w.dim(2) == w.dim(1) && w.dim(3) == w.dim(1),
               "depthwise_conv3d: kernel must be cubic, got ",
               shape_str(w.shape()));
  // k = 2 is admitted as the adjoint partner of the stride-2 transposed
  // convolution; every other kernel must be odd.
  FUSE3D_CHECK(k == 2 || k % 2 == 1,
               "depthwise_conv3d: kernel size must be 2 or odd, got ", k);
  FUSE3D_CHECK(b.rank() == 1 && static_cast<idx>(b.dim(0)) == c,
               "depthwise_conv3d: bias must be [", c, "], got ",
               shape_str(b.shape()));
  FUSE3D_CHECK(stride >= 1, "depthwise_conv3d: stride must be >= 1, got ",
               stride);
  FUSE3D_CHECK(pad >= 0, "depthwise_conv3d: pad must be >= 0, got ", pad);
  const idx id = static_cast<idx>(x.dim(1));
  const idx ih = static_cast<idx>(x.dim(2));
  const idx iw = static_cast<idx>(x.dim(3));
  const idx od = detail::conv_out_extent(id, k, stride, pad);
  const idx oh = detail::conv_out_extent(ih, k, stride, pad);
  const idx ow = detail::conv_out_extent(iw, k, stride, pad);
  FUSE3D_CHECK(od >= 1 && oh >= 1 && ow >= 1,
               "depthwise_conv3d: empty output for input ",
               shape_str(x.shape()), " with k=", k, " stride=", stride,
               " pad=", pad);
  const idx ispatial = id * ih * iw;
  const idx ospatial = od * oh * ow;
  Tensor<T> out = Tensor<T>::zeros({static_cast<std::size_t>(c),
                                    static_cast<std::size_t>(od),
                                    static_cast<std::size_t>(oh),
                                    static_cast<std::size_t>(ow)});
  const T* xv = x.data();
  const T* wv = w.data();
  const T* bv = b.data();
  T* ov = out.data();
  if (stride == 1) {
    std::vector<T> buf(static_cast<std::size_t>(ow));
    for (idx ch = 0; ch < c; ++ch) {
      T* oslab = ov + ch * ospatial;
      const T* islab = xv + ch * ispatial;
      const T* wslab = wv + ch * k * k * k;
      const T bias = bv[ch];
      for (idx oz = 0; oz < od; ++oz)
        for (idx oy = 0; oy < oh; ++oy) {
          for (idx i = 0; i < ow; ++i) buf[static_cast<std::size_t>(i)] = bias;
          detail::conv_row_s1(buf.data(), islab, wslab, k, pad, oz, oy, id, ih,
                              iw, ow);
          T* orow = oslab + (oz * oh + oy) * ow;
          for (idx i = 0; i < ow; ++i) orow[i] = buf[static_cast<std::size_t>(i)];
        }
    }
  } else {
    for (idx ch = 0; ch < c; ++ch) {
      T* oslab = ov + ch * ospatial;
      for (idx i = 0; i < ospatial; ++i) oslab[i] = bv[ch];
      const T* islab = xv + ch * ispatial;
      const T* wslab = wv + ch * k * k * k;
      for (idx kz = 0; kz < k; ++kz)
        for (idx ky = 0; ky < k; ++ky)
          for (idx kx = 0; kx < k; ++kx)
            detail::tap_axpy(oslab, islab, wslab[(kz * k + ky) * k + kx], od,
                             oh, ow, id, ih, iw, stride, kz - pad, ky - pad,
                             kx - pad);
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
    const int s = stride, p = pad;
    tp->record([xn, wn, bn, on, c, k, id, ih, iw, od, oh, ow, s, p] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const idx ispatial = id * ih * iw;
      const idx ospatial = od * oh * ow;
      auto* gx = detail::grad_sink(xn);
      auto* gw = detail::grad_sink(wn);
      auto* gb = detail::grad_sink(bn);
      std::vector<T> buf;
      if (gx && s == 1) buf.assign(static_cast<std::size_t>(iw), T(0));
      for (idx ch = 0; ch < c; ++ch) {
        const T* goslab = gout->data() + ch * ospatial;
        if (gb) {
          T acc = T(0);
          for (idx i = 0; i < ospatial; ++i) acc += goslab[i];
          (*gb)[ch] += acc;
        }
        const T* wslab = wn->values.data() + ch * k * k * k;
        const T* islab = xn->values.data() + ch * ispatial;
        T* gwslab = gw ? gw->data() + ch * k * k * k : nullptr;
        if (gx && s == 1) {
          T* gxslab = gx->data() + ch * ispatial;
          for (idx iz = 0; iz < id; ++iz)
            for (idx iy = 0; iy < ih; ++iy) {
              for (auto& v : buf) v = T(0);
              detail::conv_row_s1_adj(buf.data(), goslab, wslab, k, p, iz, iy,
                                      od, oh, ow, iw);
              T* grow = gxslab + (iz * ih + iy) * iw;
              for (idx i = 0; i < iw; ++i)
                grow[i] += buf[static_cast<std::size_t>(i)];
            }
        }
        T* gxslab = (gx && s != 1) ? gx->data() + ch * ispatial : nullptr;
        if (!gxslab && !gwslab) continue;
        if (gwslab && !gxslab && s == 1 && k == 3 && p == 1) {
          for (idx kz = 0; kz < 3; ++kz)
            for (idx ky = 0; ky < 3; ++ky) {
              T out3[3];
              detail::row3_dot_slab(goslab, islab, od, oh, ow, kz - 1, ky - 1,
                                    out3);
              T* gwrow = gwslab + (kz * 3 + ky) * 3;
              gwrow[0] += out3[0];
              gwrow[1] += out3[1];
              gwrow[2] += out3[2];
            }
          continue;
        }
        for (idx kz = 0; kz < k; ++kz)
          for (idx ky = 0; ky < k; ++ky)
            for (idx kx = 0; kx < k; ++kx) {
              const idx tap = (kz * k + ky) * k + kx;
              if (gxslab)
                detail::tap_axpy_adj(gxslab, goslab, wslab[tap], od, oh, ow,
                                     id, ih, iw, s, kz - p, ky - p, kx - p);
              if (gwslab)
                gwslab[tap] += detail::tap_dot(goslab, islab, od, oh, ow, id,
                                               ih, iw, s, kz - p, ky - p,
                                               kx - p);
            }
      }
    });
  }
  return out;
}

// Transposed depthwise convolution, the adjoint of depthwise_conv3d at
// stride 2. Output extents are exactly 2x the input extents. Kernel size 2
// pairs with adjoint pad 0, odd kernels with adjoint pad (k-1)/2.
template <typename T>
Tensor<T> transposed_depthwise_conv3d(const Tensor<T>& x, const Tensor<T>& w,
                                      int stride) {
  using detail::idx;
  detail::check_feature(x, "transposed_depthwise_conv3d");
  FUSE3D_CHECK(stride == 2, "transposed_depthwise_conv3d: stride must be 2, got ",
               stride);
  FUSE3D_CHECK(w.rank() == 4,
               "transposed_depthwise_conv3d: weight must be [C,k,k,k], got ",
               shape_str(w.shape()));
  const idx c = static_cast<idx>(x.dim(0));
  const idx k = static_cast<idx>(w.dim(1));
  FUSE3D_CHECK(static_cast<idx>(w.dim(0)) == c,
               "transposed_depthwise_conv3d: weight C ", w.dim(0),
               " does not match input channels ", c);
  FUSE3D_CHECK(w.dim(2) == w.dim(1) && w.dim(3) == w.dim(1),
               "transposed_depthwise_conv3d: kernel must be cubic, got ",
               shape_str(w.shape()));
  FUSE3D_CHECK(k == 2 || k % 2 == 1,
               "transposed_depthwise_conv3d: kernel size must be 2 or odd, got ",
               k);
  const idx pad = (k == 2) ? 0 : (k - 1) / 2;
  const idx id = static_cast<idx>(x.dim(1));
  const idx ih = static_cast<idx>(x.dim(2));
  const idx iw = static_cast<idx>(x.dim(3));
  const idx od = id * 2, oh = ih * 2, ow = iw * 2;
  FUSE3D_CHECK(od * oh * ow < (idx(1) << 40),
               "transposed_depthwise_conv3d: output extent overflow for input ",
               shape_str(x.shape()));
  const idx ispatial = id * ih * iw;
  const idx ospatial = od * oh * ow;
  Tensor<T> out = Tensor<T>::zeros({static_cast<std::size_t>(c),
                                    static_cast<std::size_t>(od),
                                    static_cast<std::size_t>(oh),
                                    static_cast<std::size_t>(ow)});
  const T* xv = x.data();
  const T* wv = w.data();
  T* ov = out.data();
  // Scatter form: the adjoint of tap_axpy with (in, out) roles swapped,
  // i.e. out[i*2 + tap - pad] += w * in[i], which is exactly the transpose
  // of the strided forward convolution.
  for (idx ch = 0; ch < c; ++ch) {
    const T* islab = xv + ch * ispatial;
    T* oslab = ov + ch * ospatial;
    const T* wslab = wv + ch * k * k * k;
    for (idx kz = 0; kz < k; ++kz)
      for (idx ky = 0; ky < k; ++ky)
        for (idx kx = 0; kx < k; ++kx)
          detail::tap_axpy_adj(oslab, islab, wslab[(kz * k + ky) * k + kx], id,
                               ih, iw, od, oh, ow, 2, kz - pad, ky - pad,
                               kx - pad);
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad() || w.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto wn = w.node();
    auto on = out.node();
    tp->record([xn, wn, on, c, k, pad, id, ih, iw, od, oh, ow] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      const idx ispatial = id * ih * iw;
      const idx ospatial = od * oh * ow;
      auto* gx = detail::grad_sink(xn);
      auto* gw = detail::grad_sink(wn);
      for (idx ch = 0; ch < c; ++ch) {
        const T* goslab = gout->data() + ch * ospatial;
        const T* wslab = wn->values.data() + ch * k * k * k;
        const T* islab = xn->values.data() + ch * ispatial;
        T* gxslab = gx ? gx->data() + ch * ispatial : nullptr;
        T* gwslab = gw ? gw->data() + ch * k * k * k : nullptr;
        for (idx kz = 0; kz < k; ++kz)
          for (idx ky = 0; ky < k; ++ky)
            for (idx kx = 0; kx < k; ++kx) {
              const idx tap = (kz * k + ky) * k + kx;
              // dL/dx is the strided forward convolution of dL/dout.
              if (gxslab)
                detail::tap_axpy(gxslab, goslab, wslab[tap], id, ih, iw, od,
                                 oh, ow, 2, kz - pad, ky - pad, kx - pad);
              if (gwslab)
                gwslab[tap] += detail::tap_dot(islab, goslab, id, ih, iw, od,
                                               oh, ow, 2, kz - pad, ky - pad,
                                               kx - pad);
            }
      }
    });
  }
  return out;
}

enum class PoolMode { kAvg, kMax };

// Non-overlapping window pooling; k must equal stride and divide every
// spatial extent (no implicit padding). Max ties break to the lowest
// linear index.
template <typename T>
Tensor<T> pool3d(const Tensor<T>& x, PoolMode mode, int k, int stride) {
  using detail::idx;
  detail::check_feature(x, "pool3d");
  FUSE3D_CHECK(k >= 1 && stride == k,
               "pool3d: non-overlapping pooling requires k == stride, got k=",
               k, " stride=", stride);
  const idx c = static_cast<idx>(x.dim(0));
  const idx id = static_cast<idx>(x.dim(1));
  const idx ih = static_cast<idx>(x.dim(2));
  const idx iw = static_cast<idx>(x.dim(3));
  FUSE3D_CHECK(id % k == 0 && ih % k == 0 && iw % k == 0,
               "pool3d: extents ", shape_str(x.shape()),
               " not divisible by window ", k);
  const idx od = id / k, oh = ih / k, ow = iw / k;
  const idx ispatial = id * ih * iw;
  const idx ospatial = od * oh * ow;
  Tensor<T> out = Tensor<T>::zeros({static_cast<std::size_t>(c),
                                    static_cast<std::size_t>(od),
                                    static_cast<std::size_t>(oh),
                                    static_cast<std::size_t>(ow)});
  const T* xv = x.data();
  T* ov = out.data();
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kMax) argmax.assign(static_cast<std::size_t>(c * ospatial), 0);
  const T inv_win = T(1) / static_cast<T>(k * k * k);
  for (idx ch = 0; ch < c; ++ch) {
    const T* islab = xv + ch * ispatial;
    T* oslab = ov + ch * ospatial;
    for (idx oz = 0; oz < od; ++oz)
      for (idx oy = 0; oy < oh; ++oy)
        for (idx ox = 0; ox < ow; ++ox) {
          const idx o = (oz * oh + oy) * ow + ox;
          if (mode == PoolMode::kAvg) {
            T acc = T(0);
            for (idx kz = 0; kz < k; ++kz)
              for (idx ky = 0; ky < k; ++ky) {
                const T* irow =
                    islab + ((oz * k + kz) * ih + oy * k + ky) * iw + ox * k;
                for (idx kx = 0; kx < k; ++kx) acc += irow[kx];
              }
            oslab[o] = acc * inv_win;
          } else {
            idx best = ((oz * k) * ih + oy * k) * iw + ox * k;
            T best_v = islab[best];
            for (idx kz = 0; kz < k; ++kz)
              for (idx ky = 0; ky < k; ++ky)
                for (idx kx = 0; kx < k; ++kx) {
                  const idx i =
                      ((oz * k + kz) * ih + oy * k + ky) * iw + ox * k + kx;
                  if (islab[i] > best_v) {
                    best_v = islab[i];
                    best = i;
                  }
                }
            oslab[o] = best_v;
            argmax[static_cast<std::size_t>(ch * ospatial + o)] =
                static_cast<std::size_t>(best);
          }
        }
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    if (mode == PoolMode::kAvg) {
      const idx kk = k;
      tp->record([xn, on, c, kk, id, ih, iw, od, oh, ow, inv_win] {
        const auto* gout = detail::grad_source(on);
        if (!gout) return;
        auto* gx = detail::grad_sink(xn);
        if (!gx) return;
        const idx ispatial = id * ih * iw;
        const idx ospatial = od * oh * ow;
        for (idx ch = 0; ch < c; ++ch) {
          const T* goslab = gout->data() + ch * ospatial;
          T* gxslab = gx->data() + ch * ispatial;
          for (idx oz = 0; oz < od; ++oz)
            for (idx oy = 0; oy < oh; ++oy)
              for (idx ox = 0; ox < ow; ++ox) {
                const T g = goslab[(oz * oh + oy) * ow + ox] * inv_win;
                for (idx kz = 0; kz < kk; ++kz)
                  for (idx ky = 0; ky < kk; ++ky) {
                    T* irow = gxslab +
                              ((oz * kk + kz) * ih + oy * kk + ky) * iw +
                              ox * kk;
                    for (idx kx = 0; kx < kk; ++kx) irow[kx] += g;
                  }
              }
        }
      });
    } else {
      tp->record([xn, on, c, ospatial, ispatial, am = std::move(argmax)] {
        const auto* gout = detail::grad_source(on);
        if (!gout) return;
        auto* gx = detail::grad_sink(xn);
        if (!gx) return;
        for (idx ch = 0; ch < c; ++ch) {
          const T* goslab = gout->data() + ch * ospatial;
          T* gxslab = gx->data() + ch * ispatial;
          for (idx o = 0; o < ospatial; ++o)
            gxslab[am[static_cast<std::size_t>(ch * ospatial + o)]] +=
                goslab[o];
        }
      });
    }
  }
  return out;
}

enum class ResizeDir { kUp, kDown };

namespace detail {

struct LerpTap {
  idx i0;
  idx i1;
  double frac;
};

inline std::vector<LerpTap> resize_axis(idx ext_in, idx ext_out, double scale) {
  // Align-corners-false sampling with edge clamping: output voxel o reads
  // input position (o + 0.5) * scale - 0.5.
  std::vector<LerpTap> taps(static_cast<std::size_t>(ext_out));
  for (idx o = 0; o < ext_out; ++o) {
    double pos = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (pos < 0.0) pos = 0.0;
    const double last = static_cast<double>(ext_in - 1);
    if (pos > last) pos = last;
    idx i0 = static_cast<idx>(pos);
    if (i0 > ext_in - 1) i0 = ext_in - 1;
    idx i1 = i0 + 1 < ext_in ? i0 + 1 : ext_in - 1;
    taps[static_cast<std::size_t>(o)] = {i0, i1, pos - static_cast<double>(i0)};
  }
  return taps;
}

inline double lerp(double a, double b, double f) { return a + f * (b - a); }

}  // namespace detail

// Power-of-two trilinear resize, align-corners-false, edge-clamped.
// Implemented as nested lerps so constant fields are preserved exactly.
template <typename T>
Tensor<T> resize_trilinear(const Tensor<T>& x, int factor, ResizeDir dir) {
  using detail::idx;
  detail::check_feature(x, "resize_trilinear");
  FUSE3D_CHECK_CFG(factor == 2 || factor == 4 || factor == 8,
                   "resize_trilinear: factor must be 2, 4 or 8, got ", factor);
  const idx c = static_cast<idx>(x.dim(0));
  const idx id = static_cast<idx>(x.dim(1));
  const idx ih = static_cast<idx>(x.dim(2));
  const idx iw = static_cast<idx>(x.dim(3));
  idx od, oh, ow;
  double s;
  if (dir == ResizeDir::kUp) {
    od = id * factor;
    oh = ih * factor;
    ow = iw * factor;
    s = 1.0 / static_cast<double>(factor);
  } else {
    FUSE3D_CHECK(id % factor == 0 && ih % factor == 0 && iw % factor == 0,
                 "resize_trilinear: extents ", shape_str(x.shape()),
                 " not divisible by factor ", factor);
    od = id / factor;
    oh = ih / factor;
    ow = iw / factor;
    s = static_cast<double>(factor);
  }
  const auto tz = detail::resize_axis(id, od, s);
  const auto ty = detail::resize_axis(ih, oh, s);
  const auto tx = detail::resize_axis(iw, ow, s);
  const idx ispatial = id * ih * iw;
  const idx ospatial = od * oh * ow;
  Tensor<T> out = Tensor<T>::zeros({static_cast<std::size_t>(c),
                                    static_cast<std::size_t>(od),
                                    static_cast<std::size_t>(oh),
                                    static_cast<std::size_t>(ow)});
  const T* xv = x.data();
  T* ov = out.data();
  for (idx ch = 0; ch < c; ++ch) {
    const T* islab = xv + ch * ispatial;
    T* oslab = ov + ch * ospatial;
    for (idx oz = 0; oz < od; ++oz) {
      const auto& z = tz[static_cast<std::size_t>(oz)];
      for (idx oy = 0; oy < oh; ++oy) {
        const auto& y = ty[static_cast<std::size_t>(oy)];
        const T* r00 = islab + (z.i0 * ih + y.i0) * iw;
        const T* r01 = islab + (z.i0 * ih + y.i1) * iw;
        const T* r10 = islab + (z.i1 * ih + y.i0) * iw;
        const T* r11 = islab + (z.i1 * ih + y.i1) * iw;
        T* orow = oslab + (oz * oh + oy) * ow;
        for (idx ox = 0; ox < ow; ++ox) {
          const auto& xx = tx[static_cast<std::size_t>(ox)];
          const double v00 = detail::lerp(r00[xx.i0], r00[xx.i1], xx.frac);
          const double v01 = detail::lerp(r01[xx.i0], r01[xx.i1], xx.frac);
          const double v10 = detail::lerp(r10[xx.i0], r10[xx.i1], xx.frac);
          const double v11 = detail::lerp(r11[xx.i0], r11[xx.i1], xx.frac);
          const double v0 = detail::lerp(v00, v01, y.frac);
          const double v1 = detail::lerp(v10, v11, y.frac);
          orow[ox] = static_cast<T>(detail::lerp(v0, v1, z.frac));
        }
      }
    }
  }
  Tape<T>* tp = active_tape<T>();
  if (detail::tracing(tp, x.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto on = out.node();
    tp->record([xn, on, c, id, ih, iw, od, oh, ow, tz, ty, tx] {
      const auto* gout = detail::grad_source(on);
      if (!gout) return;
      auto* gx = detail::grad_sink(xn);
      if (!gx) return;
      const idx ispatial = id * ih * iw;
      const idx ospatial = od * oh * ow;
      for (idx ch = 0; ch < c; ++ch) {
        const T* goslab = gout->data() + ch * ospatial;
        T* gxslab = gx->data() + ch * ispatial;
        for (idx oz = 0; oz < od; ++oz) {
          const auto& z = tz[static_cast<std::size_t>(oz)];
          const double wz1 = z.frac, wz0 = 1.0 - z.frac;
          for (idx oy = 0; oy < oh; ++oy) {
            const auto& y = ty[static_cast<std::size_t>(oy)];
            const double wy1 = y.frac, wy0 = 1.0 - y.frac;
            const T* grow = goslab + (oz * oh + oy) * ow;
            T* g00 = gxslab + (z.i0 * ih + y.i0) * iw;
            T* g01 = gxslab + (z.i0 * ih + y.i1) * iw;
            T* g10 = gxslab + (z.i1 * ih + y.i0) * iw;
            T* g11 = gxslab + (z.i1 * ih + y.i1) * iw;
            for (idx ox = 0; ox < ow; ++ox) {
              const auto& xx = tx[static_cast<std::size_t>(ox)];
              const double wx1 = xx.frac, wx0 = 1.0 - xx.frac;
              const double g = static_cast<double>(grow[ox]);
              g00[xx.i0] += static_cast<T>(g * wz0 * wy0 * wx0);
              g00[xx.i1] += static_cast<T>(g * wz0 * wy0 * wx1);
              g01[xx.i0] += static_cast<T>(g * wz0 * wy1 * wx0);
              g01[xx.i1] += static_cast<T>(g * wz0 * wy1 * wx1);
              g10[xx.i0] += static_cast<T>(g * wz1 * wy0 * wx0);
              g10[xx.i1] += static_cast<T>(g * wz1 * wy0 * wx1);
              g11[xx.i0] += static_cast<T>(g * wz1 * wy1 * wx0);
              g11[xx.i1] += static_cast<T>(g * wz1 * wy1 * wx1);
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace fuse3d
