// Statistical-layer tests. The paired t-test is checked against a frozen
// sign-flip permutation oracle (computed offline, see ttest_oracle.inc); the
// sequential stopping rule is checked against direct numerical quadrature of
// its mixture integral.
#include <gtest/gtest.h>

#include <cmath>

#include "auditbench/stats/stats.hpp"

#include "ttest_oracle.inc"

using namespace auditbench;

TEST(PairedTTest, MatchesPermutationOracleWithinTolerance) {
  const auto cases = paired_oracle_cases();
  ASSERT_EQ(cases.size(), 20u);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const TestResult r = paired_t_test_one_sided(cases[i].a, cases[i].b, 0.0);
    EXPECT_NEAR(r.p_value, cases[i].perm_p, 0.02)
        << "oracle case " << i << " t=" << r.statistic;
    EXPECT_EQ(r.n, cases[i].a.size());
  }
}

TEST(PairedTTest, ZeroVarianceDegenerateRule) {
  // All differences identical: p = 0 when mean difference beats the margin,
  // p = 1 otherwise.
  std::vector<double> a{2.0, 3.0, 4.0}, b{1.0, 2.0, 3.0};  // d == 1 everywhere
  EXPECT_EQ(paired_t_test_one_sided(a, b, 0.5).p_value, 0.0);
  EXPECT_EQ(paired_t_test_one_sided(a, b, 1.0).p_value, 1.0);  // not strictly above
  EXPECT_EQ(paired_t_test_one_sided(a, b, 1.5).p_value, 1.0);
  EXPECT_EQ(paired_t_test_one_sided(b, a, 0.0).p_value, 1.0);
}

TEST(PairedTTest, MarginShiftsTheNull) {
  std::vector<double> a{1.2, 1.4, 1.1, 1.3, 1.25, 1.35}, b{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  const double p0 = paired_t_test_one_sided(a, b, 0.0).p_value;
  const double p_margin = paired_t_test_one_sided(a, b, 0.2).p_value;
  EXPECT_LT(p0, p_margin);
  EXPECT_LT(p0, 0.01);
}

TEST(PairedTTest, InputValidation) {
  EXPECT_THROW(paired_t_test_one_sided({1.0, 2.0}, {1.0}, 0.0), std::invalid_argument);
  EXPECT_THROW(paired_t_test_one_sided({1.0}, {0.5}, 0.0), std::invalid_argument);
}

TEST(WelchTTest, SymmetricSamplesGiveHalfish) {
  std::vector<double> a{0.1, -0.2, 0.3, -0.1, 0.05, -0.15, 0.2, -0.25};
  std::vector<double> b = a;
  const TestResult r = welch_t_test_one_sided(a, b, 0.0);
  EXPECT_NEAR(r.p_value, 0.5, 1e-9);  // identical samples, t == 0
}

TEST(WelchTTest, SeparatedSamplesAndMargin) {
  std::vector<double> a{5.0, 5.1, 4.9, 5.2, 5.05, 4.95};
  std::vector<double> b{1.0, 1.1, 0.9, 1.2, 1.05, 0.95};
  EXPECT_LT(welch_t_test_one_sided(a, b, 0.0).p_value, 1e-6);
  EXPECT_GT(welch_t_test_one_sided(a, b, 5.0).p_value, 0.5);  // margin beyond the gap
  EXPECT_GT(welch_t_test_one_sided(b, a, 0.0).p_value, 1.0 - 1e-6);
}

TEST(WelchTTest, ZeroVarianceDegenerateRule) {
  std::vector<double> a{2.0, 2.0, 2.0}, b{1.0, 1.0, 1.0};
  EXPECT_EQ(welch_t_test_one_sided(a, b, 0.5).p_value, 0.0);
  EXPECT_EQ(welch_t_test_one_sided(a, b, 1.5).p_value, 1.0);
  EXPECT_THROW(welch_t_test_one_sided({1.0}, b, 0.0), std::invalid_argument);
}

TEST(Wsr, AllThreeModes) {
  std::vector<int> pred{4, 4, 2, 4};
  EXPECT_DOUBLE_EQ(wsr(pred, WsrExpectation::equals_target(4)), 75.0);
  EXPECT_DOUBLE_EQ(wsr(pred, WsrExpectation::equals_target(9)), 0.0);
  std::vector<int> truth{4, 1, 2, 3};
  EXPECT_DOUBLE_EQ(wsr(pred, WsrExpectation::equals_true(truth)), 50.0);
  EXPECT_DOUBLE_EQ(wsr(pred, WsrExpectation::differs_from_true(truth)), 50.0);
}

TEST(Wsr, InputValidation) {
  EXPECT_THROW(wsr({}, WsrExpectation::equals_target(0)), std::invalid_argument);
  EXPECT_THROW(wsr({1, 2}, WsrExpectation::equals_true({1})), std::invalid_argument);
}

namespace {

// Independent evaluation of the mixture e-value by Simpson quadrature:
//   e = 2 * 2^n * Int_{1/2}^{1} p^wins (1-p)^{n-wins} dp
// computed point-wise in log space to avoid underflow.
double quadrature_log_e(std::size_t wins, std::size_t n) {
  const int grid = 4000;  // even
  const double lo = 0.5, hi = 1.0 - 1e-12;
  const double h = (hi - lo) / grid;
  auto log_f = [&](double p) {
    return double(wins) * std::log(p) + double(n - wins) * std::log1p(-p);
  };
  // log-sum-exp Simpson rule
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(grid + 1);
  for (int i = 0; i <= grid; ++i) {
    logs[i] = log_f(lo + h * i);
    max_log = std::max(max_log, logs[i]);
  }
  double acc = 0.0;
  for (int i = 0; i <= grid; ++i) {
    const double w = (i == 0 || i == grid) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * std::exp(logs[i] - max_log);
  }
  const double log_integral = max_log + std::log(acc * h / 3.0);
  return std::log(2.0) + double(n) * std::log(2.0) + log_integral;
}

}  // namespace

TEST(BetaMixtureRule, CrossingAgreesWithQuadrature) {
  BetaMixtureRule rule;
  for (double alpha : {0.05, 0.01}) {
    const double log_thresh = std::log(1.0 / alpha);
    for (std::size_t n : {1u, 2u, 5u, 10u, 20u, 40u, 80u}) {
      for (std::size_t wins = 0; wins <= n; ++wins) {
        const double log_e = quadrature_log_e(wins, n);
        // skip knife-edge cases where quadrature error could flip the decision
        if (std::fabs(log_e - log_thresh) < 1e-3) continue;
        EXPECT_EQ(rule.crossed(wins, n, alpha), log_e >= log_thresh)
            << "wins=" << wins << " n=" << n << " alpha=" << alpha
            << " log_e=" << log_e;
      }
    }
  }
}

TEST(BetaMixtureRule, OneSidedness) {
  BetaMixtureRule rule;
  // losing or balanced streams must never cross, at any length
  for (std::size_t n : {10u, 50u, 200u}) {
    EXPECT_FALSE(rule.crossed(0, n, 0.05));
    EXPECT_FALSE(rule.crossed(n / 2, n, 0.05));
  }
  EXPECT_FALSE(rule.crossed(0, 0, 0.05));
}

TEST(SequentialAuditTest, AllWinsStopsEarly) {
  std::vector<std::pair<double, double>> pairs(100, {1.0, 0.0});
  const double cost = sequential_audit_test(pairs, 0.05, 100);
  EXPECT_LT(cost, 15.0);
  EXPECT_GT(cost, 0.0);
  // consumed count must match the rule's own first crossing index
  BetaMixtureRule rule;
  std::size_t first = 0;
  for (std::size_t i = 1; i <= 100; ++i)
    if (rule.crossed(i, i, 0.05)) { first = i; break; }
  ASSERT_GT(first, 0u);
  EXPECT_DOUBLE_EQ(cost, 100.0 * double(first) / 100.0);
}

TEST(SequentialAuditTest, TiesCountAsLosses) {
  // published == hidden on every query: must exhaust the budget
  std::vector<std::pair<double, double>> ties(200, {0.7, 0.7});
  EXPECT_DOUBLE_EQ(sequential_audit_test(ties, 0.05, 200), 100.0);
  std::vector<std::pair<double, double>> losing(200, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(sequential_audit_test(losing, 0.05, 200), 100.0);
}

TEST(SequentialAuditTest, BudgetCapsConsumption) {
  // a short stream against a larger budget also reports 100 (no crossing)
  std::vector<std::pair<double, double>> pairs(5, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(sequential_audit_test(pairs, 0.05, 50), 100.0);
}

TEST(SequentialAuditTest, InputValidation) {
  std::vector<std::pair<double, double>> pairs(3, {1.0, 0.0});
  EXPECT_THROW(sequential_audit_test(pairs, 0.05, 0), std::invalid_argument);
  EXPECT_THROW(sequential_audit_test(pairs, 0.0, 10), std::invalid_argument);
  EXPECT_THROW(sequential_audit_test(pairs, 1.0, 10), std::invalid_argument);
  EXPECT_THROW(sequential_audit_test({}, 0.05, 10), std::invalid_argument);
}

TEST(CosineSimilarityTest, AlignedGradientsDetected) {
  Rng rng = make_rng(99);
  Tensor pattern({3, 4, 4});
  for (float& v : pattern.data) v = gaussian(rng, 0.0f, 1.0f);
  std::vector<Tensor> grads, nulls;
  for (int i = 0; i < 20; ++i) {
    Tensor g = pattern;  // pattern plus small noise: strongly aligned
    for (float& v : g.data) v += gaussian(rng, 0.0f, 0.3f);
    grads.push_back(std::move(g));
    Tensor z({3, 4, 4});
    for (float& v : z.data) v = gaussian(rng, 0.0f, 1.0f);
    nulls.push_back(std::move(z));
  }
  EXPECT_LT(cosine_similarity_test(grads, pattern, nulls).p_value, 1e-6);
  // swapped roles: random vectors are not aligned better than the pattern copies
  EXPECT_GT(cosine_similarity_test(nulls, pattern, grads).p_value, 0.5);
}

TEST(CosineSimilarityTest, ZeroNormVectorsExcluded) {
  Tensor pattern({2, 2, 2}, 1.0f);
  std::vector<Tensor> grads{pattern, pattern, Tensor({2, 2, 2})};  // one zero vector
  std::vector<Tensor> nulls;
  Rng rng = make_rng(7);
  for (int i = 0; i < 4; ++i) {
    Tensor z({2, 2, 2});
    for (float& v : z.data) v = gaussian(rng, 0.0f, 1.0f);
    nulls.push_back(std::move(z));
  }
  const TestResult r = cosine_similarity_test(grads, pattern, nulls);
  EXPECT_EQ(r.n, 2u + nulls.size());  // zero-norm gradient dropped
  std::vector<Tensor> too_few{pattern, Tensor({2, 2, 2}), Tensor({2, 2, 2})};
  EXPECT_THROW(cosine_similarity_test(too_few, pattern, nulls), std::invalid_argument);
}
