// Finite-difference audit of every differentiable op and both fusion
// blocks, run in 64-bit mode on several small random shapes per case.
// Backs the `gradcheck` CLI subcommand.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fuse3d/conv.hpp"
#include "fuse3d/focal_fuse.hpp"
#include "fuse3d/gradcheck.hpp"
#include "fuse3d/losses.hpp"
#include "fuse3d/msf_dense.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/rng.hpp"

namespace fuse3d {

struct GradcheckCaseResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

struct GradcheckSuiteResult {
  std::vector<GradcheckCaseResult> cases;
  bool all_pass = true;
  double worst_rel_err = 0.0;
  std::string worst_case;
};

namespace detail {

inline Tensor<double> gc_random(Shape shape, Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<Tensor<double>> gc_pyramid(
    const std::array<std::size_t, 4>& widths, std::size_t top_extent,
    Rng& rng) {
  std::vector<Tensor<double>> streams;
  for (int a = 0; a < 4; ++a) {
    const std::size_t e = top_extent >> a;
    streams.push_back(gc_random({widths[std::size_t(a)], e, e, e}, rng));
  }
  return streams;
}

inline void gc_run(GradcheckSuiteResult& out, const std::string& name,
                   double tol, const std::function<Tensor<double>()>& fn,
                   std::vector<Tensor<double>> inputs,
                   std::size_t max_coords, std::uint64_t seed,
                   std::ostream* log) {
  GradcheckReport rep = gradcheck(fn, std::move(inputs), max_coords, seed);
  GradcheckCaseResult r;
  r.name = name;
  r.max_rel_err = rep.max_rel_err;
  r.tol = tol;
  r.checked = rep.checked;
  r.pass = rep.pass(tol);
  if (!r.pass) out.all_pass = false;
  if (r.max_rel_err >= out.worst_rel_err) {
    out.worst_rel_err = r.max_rel_err;
    out.worst_case = name;
  }
  if (log)
    *log << (r.pass ? "  ok   " : "  FAIL ") << name << "  rel_err "
         << r.max_rel_err << " (tol " << tol << ", " << r.checked
         << " coords)\n";
  out.cases.push_back(std::move(r));
}

}  // namespace detail

// Runs the full audit. Deterministic: fixed seeds, fixed shapes.
inline GradcheckSuiteResult run_gradcheck_suite(std::ostream* log = nullptr) {
  using detail::gc_pyramid;
  using detail::gc_random;
  constexpr double kOpTol = 1e-5;
  constexpr double kBlockTol = 1e-4;
  GradcheckSuiteResult out;
  std::uint64_t seed = 5000;

  const Shape elementwise_shapes[] = {
      {2, 3, 3, 3}, {1, 4, 2, 2}, {3, 2, 4, 1}};

  for (const Shape& s : elementwise_shapes) {
    ++seed;
    Rng rng(seed);
    auto x = gc_random(s, rng);
    auto y = gc_random(s, rng);
    detail::gc_run(
        out, "add " + shape_str(s), kOpTol,
        [x, y, seed] { return project_to_scalar(add(x, y), seed); }, {x, y},
        4, seed, log);
    detail::gc_run(
        out, "mul " + shape_str(s), kOpTol,
        [x, y, seed] { return project_to_scalar(mul(x, y), seed); }, {x, y},
        4, seed, log);
    detail::gc_run(
        out, "scale " + shape_str(s), kOpTol,
        [x, seed] { return project_to_scalar(scale(x, 1.7), seed); }, {x}, 4,
        seed, log);
    detail::gc_run(
        out, "sum_all " + shape_str(s), kOpTol, [x] { return sum_all(x); },
        {x}, 4, seed, log);
    detail::gc_run(
        out, "gelu " + shape_str(s), kOpTol,
        [x, seed] { return project_to_scalar(gelu(x), seed); }, {x}, 4, seed,
        log);
    detail::gc_run(
        out, "sigmoid " + shape_str(s), kOpTol,
        [x, seed] { return project_to_scalar(sigmoid(x), seed); }, {x}, 4,
        seed, log);
  }

  {
    struct ConcatCase {
      Shape a, b;
    };
    const ConcatCase cases[] = {{{2, 3, 3, 3}, {1, 3, 3, 3}},
                                {{1, 2, 2, 4}, {3, 2, 2, 4}},
                                {{2, 1, 4, 2}, {2, 1, 4, 2}}};
    for (const auto& c : cases) {
      ++seed;
      Rng rng(seed);
      auto a = gc_random(c.a, rng);
      auto b = gc_random(c.b, rng);
      detail::gc_run(
          out, "concat_channels " + shape_str(c.a) + "+" + shape_str(c.b),
          kOpTol,
          [a, b, seed] {
            return project_to_scalar(concat_channels({a, b}), seed);
          },
          {a, b}, 4, seed, log);
    }
  }

  {
    struct LinCase {
      Shape x;
      std::size_t out_ch;
    };
    const LinCase cases[] = {
        {{3, 2, 2, 2}, 2}, {{2, 3, 1, 3}, 4}, {{4, 2, 3, 2}, 3}};
    for (const auto& c : cases) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(c.x, rng);
      auto w = gc_random({c.out_ch, c.x[0]}, rng);
      auto b = gc_random({c.out_ch}, rng);
      detail::gc_run(
          out, "pointwise_linear " + shape_str(c.x), kOpTol,
          [x, w, b, seed] {
            return project_to_scalar(pointwise_linear(x, w, b), seed);
          },
          {x, w, b}, 4, seed, log);
    }
  }

  for (const Shape& s : elementwise_shapes) {
    ++seed;
    Rng rng(seed);
    auto x = gc_random(s, rng);
    detail::gc_run(
        out, "global_avg_pool " + shape_str(s), kOpTol,
        [x, seed] { return project_to_scalar(global_avg_pool(x), seed); },
        {x}, 4, seed, log);
    auto g = gc_random({s[0], 1, 1, 1}, rng);
    detail::gc_run(
        out, "broadcast_spatial " + shape_str(s), kOpTol,
        [g, s, seed] {
          return project_to_scalar(broadcast_spatial(g, s[1], s[2], s[3]),
                                   seed);
        },
        {g}, 4, seed, log);
  }

  {
    const std::size_t channels[] = {2, 3, 1};
    for (std::size_t c : channels) {
      ++seed;
      Rng rng(seed);
      auto l0 = gc_random({c, 2, 2, 2}, rng);
      auto l1 = gc_random({c, 2, 2, 2}, rng);
      auto l2 = gc_random({c, 2, 2, 2}, rng);
      auto gates = gc_random({3, 2, 2, 2}, rng);
      detail::gc_run(
          out, "aggregate c=" + std::to_string(c), kOpTol,
          [l0, l1, l2, gates, seed] {
            return project_to_scalar(aggregate({l0, l1, l2}, gates), seed);
          },
          {l0, l1, l2, gates}, 4, seed, log);
    }
  }

  {
    struct ConvCase {
      Shape x;
      std::size_t cout, k;
      int stride, pad;
    };
    const ConvCase cases[] = {{{2, 3, 3, 3}, 3, 3, 1, 1},
                              {{1, 4, 4, 4}, 2, 3, 2, 1},
                              {{3, 2, 2, 2}, 2, 1, 1, 0}};
    for (const auto& c : cases) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(c.x, rng);
      auto w = gc_random({c.cout, c.x[0], c.k, c.k, c.k}, rng);
      auto b = gc_random({c.cout}, rng);
      detail::gc_run(
          out, "conv3d " + shape_str(c.x) + " k" + std::to_string(c.k),
          kOpTol,
          [x, w, b, c, seed] {
            return project_to_scalar(conv3d(x, w, b, c.stride, c.pad), seed);
          },
          {x, w, b}, 4, seed, log);
    }
  }

  {
    struct DwCase {
      Shape x;
      std::size_t k;
      int stride, pad;
    };
    const DwCase cases[] = {
        {{2, 3, 3, 3}, 3, 1, 1}, {{3, 4, 4, 4}, 3, 2, 1}, {{1, 2, 2, 2}, 1, 1, 0}};
    for (const auto& c : cases) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(c.x, rng);
      auto w = gc_random({c.x[0], c.k, c.k, c.k}, rng);
      auto b = gc_random({c.x[0]}, rng);
      detail::gc_run(
          out, "depthwise_conv3d " + shape_str(c.x), kOpTol,
          [x, w, b, c, seed] {
            return project_to_scalar(
                depthwise_conv3d(x, w, b, c.stride, c.pad), seed);
          },
          {x, w, b}, 4, seed, log);
    }
  }

  {
    const Shape shapes[] = {{2, 2, 2, 2}, {1, 3, 3, 3}, {3, 2, 3, 2}};
    for (const Shape& s : shapes) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(s, rng);
      auto w = gc_random({s[0], 2, 2, 2}, rng);
      detail::gc_run(
          out, "transposed_depthwise " + shape_str(s), kOpTol,
          [x, w, seed] {
            return project_to_scalar(transposed_depthwise_conv3d(x, w, 2),
                                     seed);
          },
          {x, w}, 4, seed, log);
    }
  }

  {
    const Shape shapes[] = {{2, 4, 4, 4}, {1, 2, 4, 2}, {3, 2, 2, 2}};
    for (const Shape& s : shapes) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(s, rng);
      detail::gc_run(
          out, "pool3d avg " + shape_str(s), kOpTol,
          [x, seed] {
            return project_to_scalar(pool3d(x, PoolMode::kAvg, 2, 2), seed);
          },
          {x}, 4, seed, log);
      detail::gc_run(
          out, "pool3d max " + shape_str(s), kOpTol,
          [x, seed] {
            return project_to_scalar(pool3d(x, PoolMode::kMax, 2, 2), seed);
          },
          {x}, 4, seed, log);
    }
  }

  {
    const Shape shapes[] = {{2, 2, 2, 2}, {1, 3, 2, 3}, {3, 4, 4, 4}};
    for (const Shape& s : shapes) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(s, rng);
      detail::gc_run(
          out, "resize_trilinear up " + shape_str(s), kOpTol,
          [x, seed] {
            return project_to_scalar(resize_trilinear(x, 2, ResizeDir::kUp),
                                     seed);
          },
          {x}, 4, seed, log);
    }
    const Shape down_shapes[] = {{2, 4, 4, 4}, {1, 2, 4, 2}, {3, 2, 2, 2}};
    for (const Shape& s : down_shapes) {
      ++seed;
      Rng rng(seed);
      auto x = gc_random(s, rng);
      detail::gc_run(
          out, "resize_trilinear down " + shape_str(s), kOpTol,
          [x, seed] {
            return project_to_scalar(resize_trilinear(x, 2, ResizeDir::kDown),
                                     seed);
          },
          {x}, 4, seed, log);
    }
  }

  {
    const Shape shapes[] = {{2, 2, 2, 2}, {1, 3, 3, 3}, {2, 1, 4, 2}};
    for (const Shape& s : shapes) {
      ++seed;
      Rng rng(seed);
      auto y = gc_random(s, rng, 0.15, 0.85);
      auto p = gc_random(s, rng, 0.15, 0.85);
      detail::gc_run(
          out, "bce_loss " + shape_str(s), kOpTol,
          [y, p] { return bce_loss(y, p); }, {y, p}, 4, seed, log);
      detail::gc_run(
          out, "dice_loss " + shape_str(s), kOpTol,
          [y, p] { return dice_loss(y, p); }, {y, p}, 4, seed, log);
      detail::gc_run(
          out, "combined_loss " + shape_str(s), kOpTol,
          [y, p] { return combined_loss(y, p).total; }, {y, p}, 4, seed,
          log);
    }
  }

  {
    const std::array<std::size_t, 4> width_sets[] = {
        {2, 3, 4, 5}, {1, 2, 2, 3}, {3, 2, 4, 2}};
    const std::size_t extents[] = {8, 8, 16};
    for (int i = 0; i < 3; ++i) {
      ++seed;
      Rng prng(seed);
      Rng srng(seed + 100);
      FocalFuseConfig cfg;
      ParamStore<double> ps;
      register_focal_block(ps, "foc", width_sets[i], cfg, prng);
      auto streams = gc_pyramid(width_sets[i], extents[i], srng);
      std::vector<Tensor<double>> inputs = streams;
      for (const auto& e : ps.entries()) inputs.push_back(e.tensor);
      detail::gc_run(
          out, "focal_fuse_block widths " + std::to_string(i + 1), kBlockTol,
          [&streams, &ps, &cfg, seed] {
            auto ys = focal_fuse_block(streams, ps, "foc", cfg);
            Tensor<double> s = project_to_scalar(ys[0], seed);
            for (int a = 1; a < 4; ++a)
              s = add(s, project_to_scalar(ys[std::size_t(a)],
                                           seed + std::uint64_t(a)));
            return s;
          },
          inputs, 2, seed, log);
    }
    for (int i = 0; i < 3; ++i) {
      ++seed;
      Rng prng(seed);
      Rng srng(seed + 100);
      DenseMsfConfig cfg;
      cfg.layers = 2;
      cfg.growth = 2 + std::size_t(i);
      ParamStore<double> ps;
      register_dense_block(ps, "msf", width_sets[i], cfg, prng);
      auto streams = gc_pyramid(width_sets[i], extents[i], srng);
      std::vector<Tensor<double>> inputs = streams;
      for (const auto& e : ps.entries()) inputs.push_back(e.tensor);
      detail::gc_run(
          out, "dense_msf_block widths " + std::to_string(i + 1), kBlockTol,
          [&streams, &ps, &cfg, seed] {
            auto ys = dense_msf_block(streams, ps, "msf", cfg);
            Tensor<double> s = project_to_scalar(ys[0], seed);
            for (int a = 1; a < 4; ++a)
              s = add(s, project_to_scalar(ys[std::size_t(a)],
                                           seed + std::uint64_t(a)));
            return s;
          },
          inputs, 2, seed, log);
    }
  }

  return out;
}

}  // namespace fuse3d
