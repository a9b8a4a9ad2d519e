#pragma once

#include <cstdint>

#include "fuse3d/error.hpp"

namespace fuse3d {

struct TrainConfig {
  std::int64_t iterations = 10000;
  std::int64_t val_every = 500;
  double lr_base = 5e-4;
  double lr_max = 3e-3;
  std::int64_t batch = 1;
  double split = 0.8;
  std::uint64_t seed = 7;
};

inline void check_train_config(const TrainConfig& cfg) {
  FUSE3D_CHECK_CFG(cfg.lr_base > 0.0 && cfg.lr_base <= cfg.lr_max,
                   "train: need 0 < lr_base <= lr_max, got ", cfg.lr_base,
                   " and ", cfg.lr_max);
  FUSE3D_CHECK_CFG(cfg.iterations >= 0, "train: iterations must be >= 0");
  FUSE3D_CHECK_CFG(cfg.val_every >= 1, "train: val_every must be >= 1");
  FUSE3D_CHECK_CFG(cfg.iterations % cfg.val_every == 0,
                   "train: val_every (", cfg.val_every,
                   ") must divide iterations (", cfg.iterations, ")");
  FUSE3D_CHECK_CFG(cfg.batch == 1, "train: batch is fixed at 1, got ",
                   cfg.batch);
  FUSE3D_CHECK_CFG(cfg.split > 0.0 && cfg.split < 1.0,
                   "train: split must be in (0,1), got ", cfg.split);
}

// Triangular cyclic schedule with a fixed 500-iteration half cycle: linear
// base -> max over 500 steps, max -> base over the next 500, repeating.
// Returns the configured endpoints exactly at the turning points.
inline double cyclic_lr(std::int64_t iteration, const TrainConfig& cfg) {
  FUSE3D_CHECK(iteration >= 0, "cyclic_lr: iteration must be >= 0");
  constexpr std::int64_t kHalf = 500;
  const std::int64_t pos = iteration % (2 * kHalf);
  const std::int64_t up = pos <= kHalf ? pos : 2 * kHalf - pos;
  if (up == 0) return cfg.lr_base;
  if (up == kHalf) return cfg.lr_max;
  return cfg.lr_base +
         (cfg.lr_max - cfg.lr_base) * (double(up) / double(kHalf));
}

}  // namespace fuse3d
