#include "oodlab/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

using namespace oodlab;

namespace {

std::vector<double> normal_sample(std::size_t n, double mean, std::mt19937_64& rng) {
  std::normal_distribution<double> d(mean, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double pairwise_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double o : ood)
    for (double i : id) wins += o > i ? 1.0 : o == i ? 0.5 : 0.0;
  return wins / static_cast<double>(id.size() * ood.size());
}

double sweep_fpr95(const std::vector<double>& id, const std::vector<double>& ood) {
  std::vector<double> thresholds = id;
  thresholds.insert(thresholds.end(), ood.begin(), ood.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  const auto need = static_cast<long>(std::ceil(0.95 * static_cast<double>(ood.size())));
  for (double t : thresholds) {
    const long tp = std::count_if(ood.begin(), ood.end(), [&](double s) { return s >= t; });
    if (tp >= need) {
      const long fp = std::count_if(id.begin(), id.end(), [&](double s) { return s >= t; });
      return static_cast<double>(fp) / static_cast<double>(id.size());
    }
  }
  return 1.0;
}

// Midpoint rule on a grid aligned with every jump of both step quantile
// functions.
double quantile_grid_w1(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t cells = a.size() * b.size() * 1000;
  auto q = [](const std::vector<double>& s, double p) {
    return s[std::min(s.size() - 1, static_cast<std::size_t>(p * static_cast<double>(s.size())))];
  };
  double total = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    const double p = (static_cast<double>(k) + 0.5) / static_cast<double>(cells);
    total += std::abs(q(a, p) - q(b, p));
  }
  return total / static_cast<double>(cells);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("balanced accuracy") {
  const std::vector<int> y{0, 1, 2, 1};
  CHECK(balanced_accuracy(y, y) == 1.0);
  CHECK(balanced_accuracy(std::vector<int>{0, 0, 1, 0}, std::vector<int>{0, 0, 1, 1}) == 0.75);

  std::mt19937_64 rng(1);
  std::discrete_distribution<int> cls({0.7, 0.2, 0.1});
  std::uniform_int_distribution<int> guess(0, 2);
  std::vector<int> labels(500), preds(500);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = cls(rng);
    preds[i] = guess(rng) == 0 ? labels[i] : guess(rng);
  }
  std::map<int, std::pair<int, int>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    counts[labels[i]].second += 1;
    counts[labels[i]].first += preds[i] == labels[i];
  }
  double expect = 0.0;
  for (const auto& [c, hits] : counts) expect += static_cast<double>(hits.first) / hits.second;
  expect /= static_cast<double>(counts.size());
  CHECK(balanced_accuracy(preds, labels) == expect);
  CHECK_THROWS(balanced_accuracy(std::vector<int>{0}, std::vector<int>{0, 1}));
}

TEST_CASE("auroc closed forms") {
  CHECK(auroc(std::vector<double>{0, 1}, std::vector<double>{2, 3}) == 1.0);
  CHECK(auroc(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == 0.5);
  CHECK_THROWS(auroc(std::vector<double>{}, std::vector<double>{1}));
}

TEST_CASE("auroc matches the pairwise oracle") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    auto id = normal_sample(200, 0.0, rng);
    auto ood = normal_sample(200, 0.7, rng);
    for (double& x : id) x = std::round(x * 8.0) / 8.0;  // force ties
    for (double& x : ood) x = std::round(x * 8.0) / 8.0;
    CHECK(std::abs(auroc(id, ood) - pairwise_auroc(id, ood)) <= 1e-12);
    CHECK(std::abs(roc_curve(id, ood).auroc - pairwise_auroc(id, ood)) <= 1e-12);
    CHECK(std::abs(auroc(id, ood) + auroc(ood, id) - 1.0) <= 1e-12);
  }
}

TEST_CASE("auroc is invariant to increasing transforms") {
  std::mt19937_64 rng(3);
  const auto id = normal_sample(150, 0.0, rng);
  const auto ood = normal_sample(120, 0.5, rng);
  auto f = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(2.0 * x) + std::atan(x);
    return v;
  };
  CHECK(auroc(f(id), f(ood)) == doctest::Approx(auroc(id, ood)).epsilon(1e-14));
}

TEST_CASE("roc curve endpoints") {
  std::mt19937_64 rng(4);
  const auto id = normal_sample(50, 0.0, rng);
  const auto ood = normal_sample(40, 1.0, rng);
  const auto roc = roc_curve(id, ood);
  CHECK(roc.points.front().fpr == 0.0);
  CHECK(roc.points.front().tpr == 0.0);
  CHECK(roc.points.back().fpr == 1.0);
  CHECK(roc.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);
    CHECK(roc.points[i].tpr >= roc.points[i - 1].tpr);
  }
}

TEST_CASE("fpr at 95 tpr") {
  CHECK(fpr_at_95_tpr(std::vector<double>{0, 1, 2}, std::vector<double>{5, 6, 7}) == 0.0);
  std::mt19937_64 rng(5);
  const auto shared = normal_sample(400, 0.0, rng);
  const double same = fpr_at_95_tpr(shared, shared);
  CHECK(same >= 0.90);
  CHECK(same <= 1.0);
  // Saturated softmax: every ID and OOD sample scores at the floor.
  CHECK(fpr_at_95_tpr(std::vector<double>(50, -1.0), std::vector<double>(50, -1.0)) == 1.0);

  for (int t = 0; t < 5; ++t) {
    auto id = normal_sample(200, 0.0, rng);
    auto ood = normal_sample(180, 1.0, rng);
    for (double& x : id) x = std::round(x * 4.0) / 4.0;
    CHECK(fpr_at_95_tpr(id, ood) == sweep_fpr95(id, ood));
    auto up = ood;
    for (double& x : up) x += 0.3;
    CHECK(fpr_at_95_tpr(id, up) <= fpr_at_95_tpr(id, ood));
  }
}

TEST_CASE("wasserstein closed forms") {
  const std::vector<double> a{1, 2, 3};
  CHECK(wasserstein1(a, a) == 0.0);
  CHECK(wasserstein1(std::vector<double>{2.0}, std::vector<double>{-1.5}) == doctest::Approx(3.5));
  CHECK(wasserstein1(std::vector<double>{0, 1}, std::vector<double>{2, 3}) == doctest::Approx(2.0));
  CHECK(wasserstein1(std::vector<double>{0, 1}, std::vector<double>{0}) == doctest::Approx(0.5));
}

TEST_CASE("wasserstein matches quantile-grid integration") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 4; ++t) {
    const auto a = normal_sample(13, 0.0, rng);
    const auto b = normal_sample(t % 2 ? 13 : 9, 0.4, rng);
    CHECK(std::abs(wasserstein1(a, b) - quantile_grid_w1(a, b)) <= 1e-6);
  }
}

TEST_CASE("wasserstein metric properties") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const auto a = normal_sample(20, 0.0, rng);
    const auto b = normal_sample(20, 0.5, rng);
    const auto c = normal_sample(20, -0.3, rng);
    const double ab = wasserstein1(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(wasserstein1(b, a)).epsilon(1e-14));
    CHECK(ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-12);
    auto shuffled = a;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(wasserstein1(a, shuffled) == 0.0);
  }
}

TEST_CASE("paired histogram uses pooled range") {
  const std::vector<double> a{0.0, 1.0, 2.0};
  const std::vector<double> b{4.0, 5.0};
  const auto h = paired_histogram(a, b, 50);
  CHECK(h.edges.size() == 51);
  CHECK(h.lo == 0.0);
  CHECK(h.hi == 5.0);
  long na = 0, nb = 0;
  for (long c : h.counts_a) na += c;
  for (long c : h.counts_b) nb += c;
  CHECK(na == 3);
  CHECK(nb == 2);
  CHECK(h.counts_b.back() == 1);
}

}
