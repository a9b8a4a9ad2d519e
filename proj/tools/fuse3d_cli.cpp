// Command-line front end: synth, prep, train, predict, eval, gradcheck.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fuse3d/checkpoint.hpp"
#include "fuse3d/config.hpp"
#include "fuse3d/gradcheck_suite.hpp"
#include "fuse3d/metrics.hpp"
#include "fuse3d/model.hpp"
#include "fuse3d/preprocess.hpp"
#include "fuse3d/synth.hpp"
#include "fuse3d/trainer.hpp"

namespace {

using namespace fuse3d;

struct PreppedPair {
  Tensor<float> img;  // [2,D,H,W], scaled
  Volume ct;          // resampled, scaled; carries the common grid
  Volume pet;
};

// Resamples a raw CT/PET pair onto their common grid and scales both.
PreppedPair preprocess_pair(const std::string& ct_path,
                            const std::string& pet_path) {
  Volume ct = read_volume(ct_path);
  Volume pet = read_volume(pet_path);
  FUSE3D_CHECK_DATA(ct.kind == Kind::kCt, ct_path, ": expected a ct volume");
  FUSE3D_CHECK_DATA(pet.kind == Kind::kPet, pet_path,
                    ": expected a pet volume");
  const GridSpec g = common_grid(ct, pet);
  PreppedPair p;
  p.ct = clip_and_scale_ct(resample(ct, g));
  p.pet = scale_pet(resample(pet, g));
  p.img = stack_channels(p.ct, p.pet);
  return p;
}

Volume channel_volume(const Tensor<float>& chw, std::size_t channel,
                      const Volume& like, Kind kind) {
  Volume v;
  v.voxels = Tensor<float>::zeros({chw.dim(1), chw.dim(2), chw.dim(3)});
  const std::size_t n = v.voxels.size();
  std::copy_n(chw.data() + channel * n, n, v.voxels.data());
  v.origin = like.origin;
  v.spacing = like.spacing;
  v.direction = like.direction;
  v.kind = kind;
  return v;
}

int run_synth(const std::string& out_dir, int cases, std::size_t extent,
              double spacing, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < cases; ++i) {
    const SynthCase c = synth_case(seed + std::uint64_t(i),
                                   {extent, extent, extent},
                                   {spacing, spacing, spacing});
    char id[16];
    std::snprintf(id, sizeof id, "case%03d", i);
    write_volume(c.ct, out_dir + "/" + id + ".ct.h3v");
    write_volume(c.pet, out_dir + "/" + id + ".pet.h3v");
    write_volume(c.mask, out_dir + "/" + id + ".mask.h3v");
  }
  std::cout << "wrote " << cases << " cases to " << out_dir << "\n";
  return 0;
}

int run_prep(const std::string& ct_path, const std::string& pet_path,
             const std::string& mask_path, const std::string& out_dir,
             const std::string& id) {
  const PreppedPair p = preprocess_pair(ct_path, pet_path);
  std::filesystem::create_directories(out_dir);
  write_volume(p.ct, out_dir + "/" + id + ".ct.h3v");
  write_volume(p.pet, out_dir + "/" + id + ".pet.h3v");
  if (!mask_path.empty()) {
    Volume mask = read_volume(mask_path);
    FUSE3D_CHECK_DATA(mask.kind == Kind::kMask, mask_path,
                      ": expected a mask volume");
    write_volume(resample(mask, p.ct.grid()), out_dir + "/" + id + ".mask.h3v");
  }
  std::cout << "prepped " << id << " onto a " << p.ct.nx() << "x" << p.ct.ny()
            << "x" << p.ct.nz() << " grid\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, bool ablate) {
  const auto [mcfg, tcfg] = load_config(config_path);
  const std::vector<TrainCase> cases = load_dataset(data_dir);
  const TrainResult r = train(mcfg, tcfg, cases, out_dir, ablate, &std::cout);
  std::cout << "best val score " << r.best_score << " at iteration "
            << r.best_iteration << "\ncheckpoint " << r.checkpoint_path
            << "\nhistory " << r.history_path << "\n";
  return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& ct_path,
                const std::string& pet_path, const std::string& out_dir,
                const std::string& id, double overlap, double threshold) {
  Model<float> m = load_checkpoint(ckpt_path);
  const PreppedPair p = preprocess_pair(ct_path, pet_path);
  const Tensor<float> probs = sliding_window_infer(m, p.img, float(overlap));
  const Tensor<float> mask = predict_mask(probs, float(threshold));
  std::filesystem::create_directories(out_dir);
  write_volume(channel_volume(probs, 0, p.ct, Kind::kProb),
               out_dir + "/" + id + ".prob_gtvp.h3v");
  write_volume(channel_volume(probs, 1, p.ct, Kind::kProb),
               out_dir + "/" + id + ".prob_gtvn.h3v");
  Volume mv;
  mv.voxels = mask;
  mv.origin = p.ct.origin;
  mv.spacing = p.ct.spacing;
  mv.direction = p.ct.direction;
  mv.kind = Kind::kMask;
  write_volume(mv, out_dir + "/" + id + ".pred_mask.h3v");
  std::cout << "predicted " << id << "\n";
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_dir) {
  std::vector<std::string> ids;
  const std::string suffix = ".mask.h3v";
  for (const auto& entry : std::filesystem::directory_iterator(gt_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  FUSE3D_CHECK_DATA(!ids.empty(), "no *.mask.h3v files in ", gt_dir);

  std::vector<std::pair<Tensor<float>, Tensor<float>>> cases;
  for (const std::string& id : ids) {
    const Volume gt = read_volume(gt_dir + "/" + id + suffix);
    std::string pred_path = pred_dir + "/" + id + ".pred_mask.h3v";
    if (!std::filesystem::exists(pred_path))
      pred_path = pred_dir + "/" + id + suffix;
    const Volume pred = read_volume(pred_path);
    FUSE3D_CHECK_DATA(pred.voxels.shape() == gt.voxels.shape(),
                      "extent mismatch for case ", id);
    cases.emplace_back(pred.voxels, gt.voxels);
  }
  const EvalReport report = evaluate_cases(ids, cases);
  std::filesystem::create_directories(out_dir);
  std::ofstream js(out_dir + "/report.json", std::ios::binary);
  js << report_json(report).dump(2) << "\n";
  std::ofstream cs(out_dir + "/report.csv", std::ios::binary);
  cs << report_csv(report);
  std::printf("aggregated DSC: GTVp %.4f  GTVn %.4f  mean %.4f (%zu cases)\n",
              report.agg_gtvp, report.agg_gtvn, report.mean_agg, ids.size());
  return 0;
}

int run_gradcheck(bool quiet) {
  const GradcheckSuiteResult r = run_gradcheck_suite(quiet ? nullptr
                                                           : &std::cout);
  std::printf("%zu cases, worst rel err %.3g (%s): %s\n", r.cases.size(),
              r.worst_rel_err, r.worst_case.c_str(),
              r.all_pass ? "all pass" : "FAILURES");
  if (!r.all_pass) raise<NumericError>("gradient verification failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D CT/PET tumor segmentation with cross-scale fusion"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  int synth_cases = 5;
  std::size_t synth_extent = 48;
  double synth_spacing = 1.0;
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--cases", synth_cases, "number of cases");
  synth->add_option("--extent", synth_extent, "cubic extent in voxels");
  synth->add_option("--spacing", synth_spacing, "isotropic spacing in mm");
  synth->add_option("--seed", synth_seed, "base seed");

  auto* prep = app.add_subcommand("prep", "preprocess a raw CT/PET pair");
  std::string prep_ct, prep_pet, prep_mask, prep_out, prep_id = "case";
  prep->add_option("--ct", prep_ct, "raw CT volume")->required();
  prep->add_option("--pet", prep_pet, "raw PET volume")->required();
  prep->add_option("--mask", prep_mask, "optional ground-truth mask");
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--id", prep_id, "case id for output names");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  std::string train_config, train_data, train_out;
  bool train_ablate = false;
  train_cmd->add_option("--config", train_config, "JSON config")->required();
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_flag("--ablate-fusion", train_ablate,
                      "zero and freeze cross-scale fusion paths");

  auto* predict = app.add_subcommand("predict", "segment a CT/PET pair");
  std::string pr_ckpt, pr_ct, pr_pet, pr_out, pr_id = "case";
  double pr_overlap = 0.5, pr_threshold = 0.5;
  predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
  predict->add_option("--ct", pr_ct, "raw CT volume")->required();
  predict->add_option("--pet", pr_pet, "raw PET volume")->required();
  predict->add_option("--out", pr_out, "output directory")->required();
  predict->add_option("--id", pr_id, "case id for output names");
  predict->add_option("--overlap", pr_overlap, "sliding-window overlap");
  predict->add_option("--threshold", pr_threshold, "foreground threshold");

  auto* eval = app.add_subcommand("eval", "score predictions against masks");
  std::string ev_pred, ev_gt, ev_out;
  eval->add_option("--pred", ev_pred, "prediction directory")->required();
  eval->add_option("--gt", ev_gt, "ground-truth directory")->required();
  eval->add_option("--out", ev_out, "report directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit");
  bool gc_quiet = false;
  gc->add_flag("--quiet", gc_quiet, "summary line only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return run_synth(synth_out, synth_cases, synth_extent, synth_spacing,
                       synth_seed);
    if (prep->parsed())
      return run_prep(prep_ct, prep_pet, prep_mask, prep_out, prep_id);
    if (train_cmd->parsed())
      return run_train(train_config, train_data, train_out, train_ablate);
    if (predict->parsed())
      return run_predict(pr_ckpt, pr_ct, pr_pet, pr_out, pr_id, pr_overlap,
                         pr_threshold);
    if (eval->parsed()) return run_eval(ev_pred, ev_gt, ev_out);
    if (gc->parsed()) return run_gradcheck(gc_quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
