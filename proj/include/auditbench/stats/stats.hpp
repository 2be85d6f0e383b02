#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "auditbench/core/tensor.hpp"

namespace auditbench {

struct TestResult {
  double p_value = 1.0;
  double statistic = 0.0;
  std::size_t n = 0;
};

namespace detail {
inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}
inline double sample_var(const std::vector<double>& v, double m) {
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}
inline double t_upper_p(double t, double dof) {
  boost::math::students_t dist(dof);
  return boost::math::cdf(boost::math::complement(dist, t));
}
}  // namespace detail

/// One-sided paired t-test of H1: mean(a - b) > margin.
/// Zero-variance differences use the documented degenerate rule:
/// p = 0 if mean(a-b) > margin, else p = 1.
inline TestResult paired_t_test_one_sided(const std::vector<double>& a,
                                          const std::vector<double>& b,
                                          double margin = 0.0) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired t-test: need n >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = detail::mean_of(d);
  const double var = detail::sample_var(d, m);
  TestResult r;
  r.n = a.size();
  if (var <= 0.0) {
    r.statistic = m > margin ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
    r.p_value = m > margin ? 0.0 : 1.0;
    return r;
  }
  r.statistic = (m - margin) / std::sqrt(var / double(d.size()));
  r.p_value = detail::t_upper_p(r.statistic, double(d.size() - 1));
  return r;
}

/// One-sided Welch two-sample t-test of H1: mean(a) > mean(b) + margin.
inline TestResult welch_t_test_one_sided(const std::vector<double>& a,
                                         const std::vector<double>& b,
                                         double margin = 0.0) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch t-test: need n >= 2");
  const double ma = detail::mean_of(a), mb = detail::mean_of(b);
  const double va = detail::sample_var(a, ma), vb = detail::sample_var(b, mb);
  TestResult r;
  r.n = a.size() + b.size();
  const double se2 = va / double(a.size()) + vb / double(b.size());
  if (se2 <= 0.0) {
    r.statistic = (ma - mb) > margin ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity();
    r.p_value = (ma - mb) > margin ? 0.0 : 1.0;
    return r;
  }
  r.statistic = (ma - mb - margin) / std::sqrt(se2);
  const double dof = se2 * se2 /
                     (va * va / (double(a.size()) * double(a.size()) * double(a.size() - 1)) +
                      vb * vb / (double(b.size()) * double(b.size()) * double(b.size() - 1)));
  r.p_value = detail::t_upper_p(r.statistic, std::max(1.0, dof));
  return r;
}

/// Expected-prediction modes for the watermark success rate.
struct WsrExpectation {
  enum class Mode { equals_target, differs_from_true, equals_true };
  Mode mode = Mode::equals_target;
  int target = 0;
  std::vector<int> truth;  // required for the *_true modes

  static WsrExpectation equals_target(int t) { return {Mode::equals_target, t, {}}; }
  static WsrExpectation differs_from_true(std::vector<int> y) {
    return {Mode::differs_from_true, 0, std::move(y)};
  }
  static WsrExpectation equals_true(std::vector<int> y) {
    return {Mode::equals_true, 0, std::move(y)};
  }
};

/// Percentage of predictions matching the expectation, in [0,100].
inline double wsr(const std::vector<int>& predictions, const WsrExpectation& e) {
  if (predictions.empty()) throw std::invalid_argument("wsr: empty predictions");
  if (e.mode != WsrExpectation::Mode::equals_target &&
      e.truth.size() != predictions.size())
    throw std::invalid_argument("wsr: expectation length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    switch (e.mode) {
      case WsrExpectation::Mode::equals_target: hits += predictions[i] == e.target; break;
      case WsrExpectation::Mode::differs_from_true: hits += predictions[i] != e.truth[i]; break;
      case WsrExpectation::Mode::equals_true: hits += predictions[i] == e.truth[i]; break;
    }
  }
  return 100.0 * double(hits) / double(predictions.size());
}

/// Stopping rule for the sequential audit. The default is a Beta(1,1)-mixture
/// e-process over win indicators: stop when the e-value reaches 1/alpha.
class SequentialRule {
 public:
  virtual ~SequentialRule() = default;
  virtual bool crossed(std::size_t wins, std::size_t n, double alpha) const = 0;
};

class BetaMixtureRule final : public SequentialRule {
 public:
  bool crossed(std::size_t wins, std::size_t n, double alpha) const override {
    if (n == 0) return false;
    // One-sided mixture e-value for H1: win probability > 1/2, uniform prior
    // on p in (1/2, 1):
    //   e = 2 * Int_{1/2}^{1} p^k (1-p)^{n-k} dp / 0.5^n
    //     = 2 * B(k+1, n-k+1) * Q(k+1, n-k+1; 1/2) * 2^n
    // where Q is the complemented regularized incomplete beta. One-sidedness
    // matters: tie-heavy or losing streams must not grow the e-value.
    const double a = double(wins) + 1.0, b = double(n - wins) + 1.0;
    const double tail = boost::math::ibetac(a, b, 0.5);
    if (tail <= 0.0) return false;
    const double log_e = std::log(2.0) + std::lgamma(a) + std::lgamma(b) -
                         std::lgamma(double(n) + 2.0) + std::log(tail) +
                         double(n) * std::log(2.0);
    return log_e >= std::log(1.0 / alpha);
  }
};

/// Consumes (published_score, hidden_score) pairs until the boundary for
/// "published beats hidden" is crossed or the budget is exhausted. Returns
/// consumed/budget * 100; 100.00 signals non-trained.
inline double sequential_audit_test(
    const std::vector<std::pair<double, double>>& score_pairs, double alpha,
    std::size_t budget, const SequentialRule& rule = BetaMixtureRule{}) {
  if (budget < 1) throw std::invalid_argument("sequential test: budget >= 1 required");
  if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("sequential test: alpha in (0,1)");
  if (score_pairs.empty()) throw std::invalid_argument("sequential test: empty stream");
  std::size_t wins = 0;
  const std::size_t limit = std::min(budget, score_pairs.size());
  for (std::size_t i = 0; i < limit; ++i) {
    wins += score_pairs[i].first > score_pairs[i].second ? 1 : 0;
    if (rule.crossed(wins, i + 1, alpha))
      return 100.0 * double(i + 1) / double(budget);
  }
  return 100.0;
}

/// One-sided test that mean cosine(gradients, pattern) exceeds mean
/// cosine(null_samples, pattern). Zero-norm vectors are excluded.
inline TestResult cosine_similarity_test(const std::vector<Tensor>& gradients,
                                         const Tensor& pattern,
                                         const std::vector<Tensor>& null_samples) {
  if (gradients.size() < 2) throw std::invalid_argument("cosine test: need >= 2 gradients");
  std::vector<double> cos_g, cos_n;
  for (const Tensor& g : gradients) {
    if (g.l2_norm() == 0.0f) continue;  // excluded with warning upstream
    cos_g.push_back(cosine(g, pattern));
  }
  for (const Tensor& s : null_samples) {
    if (s.l2_norm() == 0.0f) continue;
    cos_n.push_back(cosine(s, pattern));
  }
  if (cos_g.size() < 2 || cos_n.size() < 2)
    throw std::invalid_argument("cosine test: too few non-degenerate vectors");
  return welch_t_test_one_sided(cos_g, cos_n, 0.0);
}

}  // namespace auditbench
