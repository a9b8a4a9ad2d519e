#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "fuse3d/gradcheck.hpp"
#include "fuse3d/losses.hpp"
#include "fuse3d/metrics.hpp"

using namespace fuse3d;

namespace {

template <typename T>
Tensor<T> random_probs(const Shape& shape, std::uint64_t seed) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  Rng rng(seed);
  for (T& v : t.values()) v = T(rng.uniform(0.1, 0.9));
  return t;
}

template <typename T>
Tensor<T> random_binary(const Shape& shape, std::uint64_t seed) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  Rng rng(seed);
  for (T& v : t.values()) v = T(rng.uniform_index(2));
  return t;
}

Tensor<float> random_mask(const Shape& shape, std::uint64_t seed) {
  Tensor<float> t = Tensor<float>::zeros(shape);
  Rng rng(seed);
  for (float& v : t.values()) v = float(rng.uniform_index(3));
  return t;
}

}  // namespace

TEST(Bce, MatchesAnalyticAnchors) {
  const Tensor<double> y = Tensor<double>::full({2, 1, 1, 1}, 1.0);
  const Tensor<double> p_half = Tensor<double>::full({2, 1, 1, 1}, 0.5);
  EXPECT_NEAR(bce_loss(y, p_half).values()[0], 0.693147, 1e-5);

  const Tensor<double> p_sure =
      Tensor<double>::full({2, 1, 1, 1}, 1.0 - 1e-7);
  EXPECT_NEAR(bce_loss(y, p_sure).values()[0], 0.0, 1e-6);
}

TEST(Bce, MatchesPerVoxelFormulaOracle) {
  const Shape shape{2, 2, 2, 2};
  const Tensor<double> y = random_binary<double>(shape, 3);
  const Tensor<double> p = random_probs<double>(shape, 4);
  double expected = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yi = y.values()[i];
    const double pi = p.values()[i];
    expected += (yi - 1.0) * std::log(1.0 - pi) - yi * std::log(pi);
  }
  expected /= double(y.size());
  EXPECT_NEAR(bce_loss(y, p).values()[0], expected, 1e-12);
}

TEST(Dice, MatchesTheThreeWorkedExamples) {
  // All-empty prediction and target: the +1 smoothing gives loss 0.
  const Tensor<double> zero = Tensor<double>::zeros({2, 2, 2, 2});
  EXPECT_NEAR(dice_loss(zero, zero).values()[0], 0.0, 1e-6);

  // Perfect binary prediction: loss 0 for any foreground count.
  const Tensor<double> y = random_binary<double>({2, 2, 2, 2}, 5);
  EXPECT_NEAR(dice_loss(y, y).values()[0], 0.0, 1e-6);

  // 4 target and 4 disjoint predicted voxels per channel:
  // 1 - 1/9 per channel, 0.8889 to four decimals.
  Tensor<double> gt = Tensor<double>::zeros({2, 1, 2, 8});
  Tensor<double> pd = Tensor<double>::zeros({2, 1, 2, 8});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4; ++i) {
      gt.values()[c * 16 + i] = 1.0;
      pd.values()[c * 16 + 8 + i] = 1.0;
    }
  EXPECT_NEAR(dice_loss(gt, pd).values()[0], 1.0 - 1.0 / 9.0, 1e-6);
}

TEST(Dice, StaysInUnitRange) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor<double> y = random_binary<double>({2, 3, 3, 3}, seed * 2);
    const Tensor<double> p = random_probs<double>({2, 3, 3, 3}, seed * 2 + 1);
    const double loss = dice_loss(y, p).values()[0];
    EXPECT_GE(loss, 0.0);
    EXPECT_LT(loss, 1.0);
  }
}

TEST(Combined, ComponentsMatchStandaloneOps) {
  const Tensor<double> y = random_binary<double>({2, 2, 2, 2}, 7);
  const Tensor<double> p = random_probs<double>({2, 2, 2, 2}, 8);
  const LossNodes<double> nodes = combined_loss(y, p);
  const LossValue<double> v = nodes.value();
  EXPECT_EQ(v.bce, bce_loss(y, p).values()[0]);
  EXPECT_EQ(v.dice, dice_loss(y, p).values()[0]);
  EXPECT_NEAR(v.total, 0.5 * v.bce + 0.5 * v.dice, 1e-15);
}

TEST(Combined, PerfectPredictionIsNearZero) {
  Tensor<double> y = random_binary<double>({2, 2, 2, 2}, 9);
  Tensor<double> p = y.detach();
  for (double& v : p.values()) v = v > 0.5 ? 1.0 - 1e-7 : 1e-7;
  EXPECT_NEAR(combined_loss(y, p).value().total, 0.0, 1e-5);
}

TEST(Combined, GradientMatchesFiniteDifferences) {
  const Tensor<double> y = random_binary<double>({2, 2, 2, 2}, 11);
  Tensor<double> p = random_probs<double>({2, 2, 2, 2}, 12);
  auto fn = [&]() { return combined_loss(y, p).total; };
  GradcheckReport rep = gradcheck(fn, {p}, 6, 13);
  EXPECT_LT(rep.max_rel_err, 1e-5) << "coord " << rep.worst_coord;
}

TEST(Losses, ShapeMismatchIsAnError) {
  const Tensor<double> y = Tensor<double>::zeros({2, 2, 2, 2});
  const Tensor<double> p = Tensor<double>::zeros({2, 2, 2, 4});
  EXPECT_THROW(bce_loss(y, p), Error);
  EXPECT_THROW(dice_loss(y, p), Error);
}

TEST(DscCase, MatchesWorkedExamples) {
  Tensor<float> a = Tensor<float>::zeros({2, 4, 5});
  Tensor<float> b = Tensor<float>::zeros({2, 4, 5});
  for (std::size_t i = 0; i < 20; ++i) a.values()[i] = 1.0f;
  for (std::size_t i = 10; i < 30; ++i) b.values()[i] = 1.0f;
  // |P|=|G|=20, overlap 10 -> 0.5.
  EXPECT_EQ(dsc_case(a, b, 1), 0.5);
  EXPECT_EQ(dsc_case(a, a, 1), 1.0);

  Tensor<float> c = Tensor<float>::zeros({2, 4, 5});
  for (std::size_t i = 30; i < 34; ++i) c.values()[i] = 1.0f;
  EXPECT_EQ(dsc_case(a, c, 1), 0.0);
}

TEST(DscCase, EmptyVersusEmptyIsOne) {
  const Tensor<float> empty = Tensor<float>::zeros({2, 2, 2});
  EXPECT_EQ(dsc_case(empty, empty, 1), 1.0);
  EXPECT_EQ(dsc_case(empty, empty, 2), 1.0);
}

TEST(DscCase, IsSymmetric) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Tensor<float> a = random_mask({3, 3, 3}, seed * 2);
    const Tensor<float> b = random_mask({3, 3, 3}, seed * 2 + 1);
    EXPECT_EQ(dsc_case(a, b, 1), dsc_case(b, a, 1));
    EXPECT_EQ(dsc_case(a, b, 2), dsc_case(b, a, 2));
  }
}

TEST(DscCase, ExtentMismatchIsAnError) {
  const Tensor<float> a = Tensor<float>::zeros({2, 2, 2});
  const Tensor<float> b = Tensor<float>::zeros({2, 2, 3});
  EXPECT_THROW(dsc_case(a, b, 1), Error);
}

TEST(DscAggregated, SingleCaseReducesToDscCase) {
  const Tensor<float> a = random_mask({3, 3, 3}, 21);
  const Tensor<float> b = random_mask({3, 3, 3}, 22);
  EXPECT_EQ(dsc_aggregated({{a, b}}, 1), dsc_case(a, b, 1));
}

TEST(DscAggregated, PoolsCountsAcrossCases) {
  // case 1: overlap 10 of 20/20; case 2: empty prediction, 10 target voxels.
  // Pooled: 2*10 / (20+20+0+10) = 0.4.
  Tensor<float> p1 = Tensor<float>::zeros({1, 5, 8});
  Tensor<float> g1 = Tensor<float>::zeros({1, 5, 8});
  for (std::size_t i = 0; i < 20; ++i) p1.values()[i] = 1.0f;
  for (std::size_t i = 10; i < 30; ++i) g1.values()[i] = 1.0f;
  Tensor<float> p2 = Tensor<float>::zeros({1, 5, 8});
  Tensor<float> g2 = Tensor<float>::zeros({1, 5, 8});
  for (std::size_t i = 0; i < 10; ++i) g2.values()[i] = 1.0f;
  EXPECT_EQ(dsc_aggregated({{p1, g1}, {p2, g2}}, 1), 0.4);
}

TEST(DscAggregated, AllEmptyPoolIsDegenerateOne) {
  const Tensor<float> empty = Tensor<float>::zeros({2, 2, 2});
  bool degenerate = false;
  EXPECT_EQ(dsc_aggregated({{empty, empty}}, 2, &degenerate), 1.0);
  EXPECT_TRUE(degenerate);
}

TEST(DscAggregated, MatchesVoxelCountingOracleExactly) {
  for (int cls : {1, 2}) {
    std::vector<std::pair<Tensor<float>, Tensor<float>>> cases;
    std::uint64_t inter = 0, den = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Tensor<float> p = random_mask({4, 3, 5}, 100 + seed * 2);
      Tensor<float> g = random_mask({4, 3, 5}, 101 + seed * 2);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const bool ip = p.values()[i] == float(cls);
        const bool ig = g.values()[i] == float(cls);
        inter += ip && ig;
        den += std::uint64_t(ip) + std::uint64_t(ig);
      }
      cases.emplace_back(p, g);
    }
    EXPECT_EQ(dsc_aggregated(cases, cls),
              2.0 * double(inter) / double(den));
  }
}

TEST(EvalReport, JsonAndCsvCarryPerCaseAndAggregateValues) {
  Tensor<float> p = Tensor<float>::zeros({1, 2, 4});
  Tensor<float> g = Tensor<float>::zeros({1, 2, 4});
  p.values() = {1, 1, 0, 0, 2, 0, 0, 0};
  g.values() = {1, 0, 0, 0, 2, 2, 0, 0};
  const EvalReport r = evaluate_cases({"case_a"}, {{p, g}});
  ASSERT_EQ(r.cases.size(), 1u);
  EXPECT_NEAR(r.cases[0].dsc_gtvp, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.cases[0].dsc_gtvn, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.mean_agg, 2.0 / 3.0, 1e-12);

  const nlohmann::json j = report_json(r);
  EXPECT_EQ(j["cases"].size(), 1u);
  EXPECT_EQ(j["cases"][0]["case_id"], "case_a");
  EXPECT_NEAR(j["mean_aggregated_dsc"].get<double>(), 2.0 / 3.0, 1e-12);

  const std::string csv = report_csv(r);
  EXPECT_EQ(csv,
            "case_id,class,dsc\n"
            "case_a,GTVp,0.666667\n"
            "case_a,GTVn,0.666667\n");
}
