#include "oodlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

namespace oodlab {

double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("balanced_accuracy: length mismatch (" +
                                std::to_string(predictions.size()) + " vs " +
                                std::to_string(labels.size()) + ")");
  if (labels.empty()) throw std::invalid_argument("balanced_accuracy: no labels");
  std::map<int, std::pair<long, long>> per_class;  // label -> (hits, total)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [hits, total] = per_class[labels[i]];
    ++total;
    if (predictions[i] == labels[i]) ++hits;
  }
  double sum = 0.0;
  for (const auto& [label, ht] : per_class)
    sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return sum / static_cast<double>(per_class.size());
}

namespace {

void require_nonempty(const char* what, std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(what) + ": empty score array");
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty("auroc", id_scores, ood_scores);
  const std::size_t n_id = id_scores.size();
  const std::size_t n_ood = ood_scores.size();
  std::vector<std::pair<double, bool>> pooled;  // (score, is_ood)
  pooled.reserve(n_id + n_ood);
  for (double s : id_scores) pooled.emplace_back(s, false);
  for (double s : ood_scores) pooled.emplace_back(s, true);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  // Sum of (1-based, tie-averaged) ranks of the OOD scores.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    long ood_in_group = 0;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) {
      ood_in_group += pooled[j].second ? 1 : 0;
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(ood_in_group);
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(n_ood) * static_cast<double>(n_ood + 1);
  return u / (static_cast<double>(n_id) * static_cast<double>(n_ood));
}

RocCurve roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty("roc_curve", id_scores, ood_scores);
  std::vector<std::pair<double, bool>> pooled;
  for (double s : id_scores) pooled.emplace_back(s, false);
  for (double s : ood_scores) pooled.emplace_back(s, true);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first > y.first; });

  const double n_id = static_cast<double>(id_scores.size());
  const double n_ood = static_cast<double>(ood_scores.size());
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  long fp = 0;
  long tp = 0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) {
      (pooled[j].second ? tp : fp) += 1;
      ++j;
    }
    curve.points.push_back({static_cast<double>(fp) / n_id, static_cast<double>(tp) / n_ood});
    i = j;
  }
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    curve.auroc += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return curve;
}

double fpr_at_95_tpr(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty("fpr_at_95_tpr", id_scores, ood_scores);
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end(), std::greater<>());
  // ceil(0.95 n) in exact integer arithmetic.
  const std::size_t needed = (95 * ood.size() + 99) / 100;
  const double threshold = ood[std::max<std::size_t>(needed, 1) - 1];
  const auto flagged = std::count_if(id_scores.begin(), id_scores.end(),
                                     [threshold](double s) { return s >= threshold; });
  return static_cast<double>(flagged) / static_cast<double>(id_scores.size());
}

double interpolated_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("interpolated_quantile: empty input");
  if (sorted.size() == 1) return sorted[0];
  const double h = std::clamp(p, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double wasserstein1(std::span<const double> samples_a, std::span<const double> samples_b) {
  require_nonempty("wasserstein1", samples_a, samples_b);
  std::vector<double> a(samples_a.begin(), samples_a.end());
  std::vector<double> b(samples_b.begin(), samples_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  // Integral of |F_a - F_b| over the merged support.
  std::size_t i = 0, j = 0;
  double prev = std::min(a[0], b[0]);
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double x = j == b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    prev = x;
  }
  return total;
}

Histogram paired_histogram(std::span<const double> a, std::span<const double> b, int bins) {
  require_nonempty("paired_histogram", a, b);
  if (bins < 1) throw std::invalid_argument("paired_histogram: bins must be >= 1");
  Histogram h;
  h.lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
  h.hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  const double width = h.hi > h.lo ? (h.hi - h.lo) / bins : 1.0;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(h.lo + width * i);
  h.counts_a.assign(static_cast<std::size_t>(bins), 0);
  h.counts_b.assign(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double v) {
    const auto k = static_cast<long>(std::floor((v - h.lo) / width));
    return static_cast<std::size_t>(std::clamp<long>(k, 0, bins - 1));
  };
  for (double v : a) ++h.counts_a[bin_of(v)];
  for (double v : b) ++h.counts_b[bin_of(v)];
  return h;
}

}  // namespace oodlab
