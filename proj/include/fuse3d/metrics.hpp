#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuse3d/tensor.hpp"

namespace fuse3d {

namespace detail {

struct DscCounts {
  std::uint64_t inter = 0;
  std::uint64_t pred = 0;
  std::uint64_t gt = 0;
};

inline DscCounts dsc_counts(const Tensor<float>& pred,
                            const Tensor<float>& gt, int class_id) {
  FUSE3D_CHECK(pred.shape() == gt.shape(), "dsc: extent mismatch ",
               shape_str(pred.shape()), " vs ", shape_str(gt.shape()));
  const float label = float(class_id);
  const float* pv = pred.data();
  const float* gv = gt.data();
  DscCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_p = pv[i] == label;
    const bool in_g = gv[i] == label;
    c.pred += in_p;
    c.gt += in_g;
    c.inter += in_p && in_g;
  }
  return c;
}

}  // namespace detail

// Hard Dice for one class, 2|P∩G| / (|P|+|G|); 1.0 when both sets are empty.
inline double dsc_case(const Tensor<float>& pred, const Tensor<float>& gt,
                       int class_id) {
  const detail::DscCounts c = detail::dsc_counts(pred, gt, class_id);
  const std::uint64_t den = c.pred + c.gt;
  if (den == 0) return 1.0;
  return 2.0 * double(c.inter) / double(den);
}

// Pooled Dice: intersections and set sizes are summed over all cases before
// the ratio. An all-empty pool is reported as 1.0 with the degenerate flag.
inline double dsc_aggregated(
    const std::vector<std::pair<Tensor<float>, Tensor<float>>>& cases,
    int class_id, bool* degenerate = nullptr) {
  FUSE3D_CHECK(!cases.empty(), "dsc_aggregated: empty case list");
  std::uint64_t inter = 0, den = 0;
  for (const auto& [pred, gt] : cases) {
    const detail::DscCounts c = detail::dsc_counts(pred, gt, class_id);
    inter += c.inter;
    den += c.pred + c.gt;
  }
  if (degenerate) *degenerate = den == 0;
  if (den == 0) return 1.0;
  return 2.0 * double(inter) / double(den);
}

struct CaseEval {
  std::string id;
  double dsc_gtvp = 0.0;
  double dsc_gtvn = 0.0;
};

struct EvalReport {
  std::vector<CaseEval> cases;
  double agg_gtvp = 0.0;
  double agg_gtvn = 0.0;
  double mean_agg = 0.0;
  bool degenerate_gtvp = false;
  bool degenerate_gtvn = false;
};

inline EvalReport evaluate_cases(
    const std::vector<std::string>& ids,
    const std::vector<std::pair<Tensor<float>, Tensor<float>>>& cases) {
  FUSE3D_CHECK(ids.size() == cases.size(),
               "evaluate_cases: ids and cases length mismatch");
  EvalReport r;
  for (std::size_t i = 0; i < cases.size(); ++i)
    r.cases.push_back(CaseEval{ids[i],
                               dsc_case(cases[i].first, cases[i].second, 1),
                               dsc_case(cases[i].first, cases[i].second, 2)});
  r.agg_gtvp = dsc_aggregated(cases, 1, &r.degenerate_gtvp);
  r.agg_gtvn = dsc_aggregated(cases, 2, &r.degenerate_gtvn);
  r.mean_agg = 0.5 * (r.agg_gtvp + r.agg_gtvn);
  return r;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const CaseEval& c : r.cases)
    cases.push_back({{"case_id", c.id},
                     {"dsc_gtvp", c.dsc_gtvp},
                     {"dsc_gtvn", c.dsc_gtvn}});
  return nlohmann::json{{"cases", cases},
                        {"aggregated_dsc_gtvp", r.agg_gtvp},
                        {"aggregated_dsc_gtvn", r.agg_gtvn},
                        {"mean_aggregated_dsc", r.mean_agg},
                        {"degenerate_gtvp", r.degenerate_gtvp},
                        {"degenerate_gtvn", r.degenerate_gtvn}};
}

// One row per case per class, fixed header and %.6f values.
inline std::string report_csv(const EvalReport& r) {
  std::string out = "case_id,class,dsc\n";
  char buf[64];
  for (const CaseEval& c : r.cases) {
    std::snprintf(buf, sizeof buf, "%.6f", c.dsc_gtvp);
    out += c.id + ",GTVp," + buf + "\n";
    std::snprintf(buf, sizeof buf, "%.6f", c.dsc_gtvn);
    out += c.id + ",GTVn," + buf + "\n";
  }
  return out;
}

}  // namespace fuse3d
