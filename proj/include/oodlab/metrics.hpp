#pragma once

// Evaluation metrics. OOD is the positive class and larger scores mean
// "more OOD" throughout.

#include <span>
#include <vector>

namespace oodlab {

/// Unweighted mean of per-class recall over classes present in `labels`.
double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels);

/// P(ood > id) + 0.5 P(ood == id), via average ranks (Mann-Whitney U).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct RocPoint {
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1), nondecreasing in both
  double auroc = 0.0;            // trapezoidal area of `points`
};

RocCurve roc_curve(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Fraction of ID scores >= t at the largest threshold t that keeps at least
/// ceil(0.95 n_ood) OOD scores >= t.
double fpr_at_95_tpr(std::span<const double> id_scores, std::span<const double> ood_scores);

/// 1-D Wasserstein-1 between empirical samples: the integral of
/// |F_a - F_b|. For equal sizes this is mean |a_(i) - b_(i)|.
double wasserstein1(std::span<const double> samples_a, std::span<const double> samples_b);

/// Linearly interpolated empirical quantile of sorted data at level p in [0, 1].
double interpolated_quantile(std::span<const double> sorted, double p);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> edges;  // bins + 1 entries
  std::vector<long> counts_a;
  std::vector<long> counts_b;
};

/// Two histograms over the pooled [min, max] of both samples.
Histogram paired_histogram(std::span<const double> a, std::span<const double> b, int bins = 50);

}  // namespace oodlab
