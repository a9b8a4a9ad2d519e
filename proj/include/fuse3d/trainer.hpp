#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fuse3d/adam.hpp"
#include "fuse3d/augment.hpp"
#include "fuse3d/checkpoint.hpp"
#include "fuse3d/losses.hpp"
#include "fuse3d/metrics.hpp"
#include "fuse3d/model.hpp"
#include "fuse3d/preprocess.hpp"
#include "fuse3d/schedule.hpp"

namespace fuse3d {

struct TrainCase {
  std::string id;
  Tensor<float> img;   // [2,D,H,W], CT and PET scaled to [0,1]
  Tensor<float> mask;  // [D,H,W], labels {0,1,2}
};

// Loads <id>.ct.h3v / <id>.pet.h3v / <id>.mask.h3v triples: CT and PET are
// resampled onto their common grid and intensity-scaled, the mask follows
// with nearest-neighbor sampling. Raw intensities are expected (HU and
// SUV-like); prep output is for inspection, not for feeding back in.
inline TrainCase load_case(const std::string& dir, const std::string& id) {
  namespace fs = std::filesystem;
  const Volume ct = read_volume((fs::path(dir) / (id + ".ct.h3v")).string());
  const Volume pet =
      read_volume((fs::path(dir) / (id + ".pet.h3v")).string());
  const Volume mask =
      read_volume((fs::path(dir) / (id + ".mask.h3v")).string());
  FUSE3D_CHECK_DATA(ct.kind == Kind::kCt, "case '", id,
                    "': ct file has kind ", kind_name(ct.kind));
  FUSE3D_CHECK_DATA(pet.kind == Kind::kPet, "case '", id,
                    "': pet file has kind ", kind_name(pet.kind));
  FUSE3D_CHECK_DATA(mask.kind == Kind::kMask, "case '", id,
                    "': mask file has kind ", kind_name(mask.kind));
  const GridSpec g = common_grid(ct, pet);
  const Volume cts = clip_and_scale_ct(resample(ct, g));
  const Volume pets = scale_pet(resample(pet, g));
  const Volume maskr = resample(mask, g);
  return TrainCase{id, stack_channels(cts, pets), maskr.voxels};
}

inline std::vector<TrainCase> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  FUSE3D_CHECK_DATA(fs::is_directory(dir), "data dir '", dir,
                    "' is not a directory");
  const std::string suffix = ".ct.h3v";
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  FUSE3D_CHECK_DATA(!ids.empty(), "no cases (*.ct.h3v) found in '", dir, "'");
  std::vector<TrainCase> cases;
  cases.reserve(ids.size());
  for (const std::string& id : ids) cases.push_back(load_case(dir, id));
  return cases;
}

// Mean aggregated DSC over the validation cases, the model-selection metric.
inline double validation_score(Model<float>& m,
                               const std::vector<TrainCase>& cases,
                               const std::vector<std::size_t>& val_idx,
                               double overlap = 0.5) {
  std::vector<std::pair<Tensor<float>, Tensor<float>>> pairs;
  pairs.reserve(val_idx.size());
  for (std::size_t idx : val_idx) {
    Tensor<float> probs = sliding_window_infer(m, cases[idx].img, overlap);
    pairs.emplace_back(predict_mask(probs), cases[idx].mask);
  }
  return 0.5 * (dsc_aggregated(pairs, 1) + dsc_aggregated(pairs, 2));
}

struct TrainResult {
  std::string checkpoint_path;
  std::string history_path;
  double best_score = -1.0;
  std::int64_t best_iteration = 0;
  std::vector<double> val_scores;
};

// One optimization run: per iteration sample a training case (seeded, with
// replacement), augment, forward, combined loss, backward, Adam with the
// cyclic schedule; every val_every iterations run sliding-window validation
// and keep the checkpoint iff the score improved. The initial parameters are
// saved up front with score -1 so a 0-iteration run still yields a
// checkpoint. Fully deterministic for a fixed seed.
inline TrainResult train(const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::vector<TrainCase>& dataset,
                         const std::string& out_dir,
                         bool ablate_fusion = false,
                         std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  check_train_config(tcfg);
  FUSE3D_CHECK_CFG(dataset.size() >= 2,
                   "train: need at least 2 cases for a train/val split, got ",
                   dataset.size());
  for (const TrainCase& c : dataset) {
    FUSE3D_CHECK_CFG(mcfg.patch[0] <= c.img.dim(3) &&
                         mcfg.patch[1] <= c.img.dim(2) &&
                         mcfg.patch[2] <= c.img.dim(1),
                     "train: patch exceeds extents of case '", c.id, "'");
  }

  Model<float> model = build_model<float>(mcfg);
  if (ablate_fusion) model.freeze_cross_scale_fusion();

  // Case-level split: seeded shuffle, first round(split*n) cases train.
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng split_rng(derive_seed(tcfg.seed, 1));
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = split_rng.uniform_index(i + 1);
    std::swap(order[i], order[j]);
  }
  const std::size_t n_train = std::min(
      n - 1,
      std::max<std::size_t>(
          1, std::size_t(std::llround(tcfg.split * double(n)))));
  const std::vector<std::size_t> train_idx(order.begin(),
                                           order.begin() + n_train);
  const std::vector<std::size_t> val_idx(order.begin() + n_train,
                                         order.end());

  fs::create_directories(out_dir);
  TrainResult result;
  result.checkpoint_path = (fs::path(out_dir) / "best.h3ck").string();
  result.history_path = (fs::path(out_dir) / "history.csv").string();
  save_checkpoint(result.checkpoint_path, model, 0, -1.0);
  std::ofstream hist(result.history_path, std::ios::trunc);
  FUSE3D_CHECK_DATA(hist.good(), "cannot open '", result.history_path,
                    "' for writing");
  hist << "iteration,lr,loss,bce,dice\n";

  AugmentConfig acfg;
  acfg.patch = mcfg.patch;
  AdamState<float> astate;
  Rng sample_rng(derive_seed(tcfg.seed, 2));

  for (std::int64_t it = 0; it < tcfg.iterations; ++it) {
    const double lr = cyclic_lr(it, tcfg);
    const std::size_t ci =
        train_idx[sample_rng.uniform_index(train_idx.size())];
    const std::uint64_t aug_seed = sample_rng.next_u64();
    auto [x, mk] = augment(dataset[ci].img, dataset[ci].mask, acfg, aug_seed);
    const Tensor<float> y = label_channels(mk);
    LossValue<float> lv;
    {
      TapeScope<float> scope;
      Tensor<float> p = model_forward(model, x);
      LossNodes<float> ln = combined_loss(y, p);
      lv = ln.value();
      if (!std::isfinite(double(lv.total)))
        raise<NumericError>("non-finite loss at iteration ", it, " (bce=",
                            lv.bce, ", dice=", lv.dice, ")");
      model.params.zero_grads();
      scope.backward(ln.total);
    }
    adam_step(model.params, astate, float(lr), it);

    char line[160];
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(it), lr, double(lv.total),
                  double(lv.bce), double(lv.dice));
    hist << line;

    if ((it + 1) % tcfg.val_every == 0) {
      const double score = validation_score(model, dataset, val_idx);
      result.val_scores.push_back(score);
      if (score > result.best_score) {
        result.best_score = score;
        result.best_iteration = it + 1;
        save_checkpoint(result.checkpoint_path, model, it + 1, score);
      }
      hist.flush();
      if (log)
        *log << "iter " << (it + 1) << " loss " << lv.total << " val "
             << score << " best " << result.best_score << "\n";
    } else if (log && (it + 1) % 100 == 0) {
      *log << "iter " << (it + 1) << " loss " << lv.total << "\n";
    }
  }
  return result;
}

}  // namespace fuse3d
