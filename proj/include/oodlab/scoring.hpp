#pragma once

// Test-time OOD scores. Every score is oriented so that larger means more
// OOD-like.

#include "oodlab/diffcore.hpp"

#include <string>

namespace oodlab {

enum class ScoreKind { msp, max_sigmoid, ood_class, energy, knn_cosine };

std::string_view to_string(ScoreKind kind);

struct ScoreSet {
  std::string method;
  std::string dataset;
  ScoreKind kind = ScoreKind::msp;
  std::vector<long long> sample_ids;
  Vector scores;
};

/// -max_c softmax(z)_c, in [-1, -1/C].
Vector msp_score(const Matrix& logits);

/// 1 - max_c sigmoid(z_c), in (0, 1).
Vector max_sigmoid_score(const Matrix& logits);

/// sigmoid of the last logit; `logits` must have num_classes + 1 columns.
Vector ood_class_score(const Matrix& logits, Eigen::Index num_classes);

/// Free energy -T logsumexp(z / T).
Vector energy_score(const Matrix& logits, double temperature = 1.0);

/// Training-ID embeddings with unit-normalized rows cached for cosine search.
class EmbeddingBank {
 public:
  explicit EmbeddingBank(Matrix embeddings);

  Eigen::Index rows() const { return raw_.rows(); }
  Eigen::Index dim() const { return raw_.cols(); }
  const Matrix& embeddings() const { return raw_; }
  const Matrix& normalized() const { return unit_; }
  const Vector& norms() const { return norms_; }

 private:
  Matrix raw_;
  Matrix unit_;
  Vector norms_;
};

/// Mean of the k smallest cosine distances (1 - cos) from `embedding` to the
/// bank rows. Ties are broken by bank row index.
double knn_cosine_score(const Eigen::Ref<const RowVector>& embedding, const EmbeddingBank& bank,
                        Eigen::Index k = 5);

/// Row-wise knn_cosine_score.
Vector knn_cosine_scores(const Matrix& embeddings, const EmbeddingBank& bank, Eigen::Index k = 5);

}  // namespace oodlab
