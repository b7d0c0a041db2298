#include "oodlab/scoring.hpp"

#include "oodlab/objectives.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace oodlab {

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::msp: return "msp";
    case ScoreKind::max_sigmoid: return "max_sigmoid";
    case ScoreKind::ood_class: return "ood_class";
    case ScoreKind::energy: return "energy";
    case ScoreKind::knn_cosine: return "knn_cosine";
  }
  return "?";
}

Vector msp_score(const Matrix& logits) {
  if (logits.cols() == 0) throw ShapeError("msp_score: zero-width logits");
  const Vector lse = detail::logsumexp_rows<double>(logits);
  Vector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    out(i) = -std::exp(logits.row(i).maxCoeff() - lse(i));
  return out;
}

Vector max_sigmoid_score(const Matrix& logits) {
  if (logits.cols() == 0) throw ShapeError("max_sigmoid_score: zero-width logits");
  Vector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    // 1 - sigmoid(m) = sigmoid(-m), which keeps precision when m is large.
    out(i) = detail::sigmoid(-logits.row(i).maxCoeff());
  }
  return out;
}

Vector ood_class_score(const Matrix& logits, Eigen::Index num_classes) {
  if (logits.cols() != num_classes + 1) {
    throw ShapeError("ood_class_score: expected " + std::to_string(num_classes + 1) +
                     " columns, got " + std::to_string(logits.cols()));
  }
  return logits.col(num_classes).unaryExpr([](double z) { return detail::sigmoid(z); });
}

Vector energy_score(const Matrix& logits, double temperature) {
  return free_energy(logits, temperature);
}

EmbeddingBank::EmbeddingBank(Matrix embeddings) : raw_(std::move(embeddings)) {
  if (raw_.rows() == 0) throw std::invalid_argument("EmbeddingBank: empty bank");
  norms_ = raw_.rowwise().norm();
  for (Eigen::Index i = 0; i < norms_.size(); ++i) {
    if (!(norms_(i) > 0))
      throw std::invalid_argument("EmbeddingBank: zero-norm row " + std::to_string(i));
  }
  unit_ = norms_.cwiseInverse().asDiagonal() * raw_;
}

namespace {

double knn_from_unit(const Eigen::Ref<const RowVector>& unit_query, const EmbeddingBank& bank,
                     Eigen::Index k, std::vector<std::pair<double, Eigen::Index>>& scratch) {
  const Vector sims = bank.normalized() * unit_query.transpose();
  scratch.resize(static_cast<std::size_t>(sims.size()));
  for (Eigen::Index j = 0; j < sims.size(); ++j) scratch[static_cast<std::size_t>(j)] = {1.0 - sims(j), j};
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) total += scratch[static_cast<std::size_t>(j)].first;
  return total / static_cast<double>(k);
}

void check_k(Eigen::Index k, const EmbeddingBank& bank) {
  if (k < 1 || k > bank.rows())
    throw std::invalid_argument("knn_cosine_score: k must be in [1, bank rows]");
}

}  // namespace

double knn_cosine_score(const Eigen::Ref<const RowVector>& embedding, const EmbeddingBank& bank,
                        Eigen::Index k) {
  check_k(k, bank);
  if (embedding.size() != bank.dim()) throw ShapeError("knn_cosine_score: dimension mismatch");
  const double norm = embedding.norm();
  if (!(norm > 0)) throw std::invalid_argument("knn_cosine_score: zero embedding");
  std::vector<std::pair<double, Eigen::Index>> scratch;
  return knn_from_unit(embedding / norm, bank, k, scratch);
}

Vector knn_cosine_scores(const Matrix& embeddings, const EmbeddingBank& bank, Eigen::Index k) {
  check_k(k, bank);
  if (embeddings.cols() != bank.dim()) throw ShapeError("knn_cosine_scores: dimension mismatch");
  Vector out(embeddings.rows());
  std::vector<std::pair<double, Eigen::Index>> scratch;
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const double norm = embeddings.row(i).norm();
    if (!(norm > 0))
      throw std::invalid_argument("knn_cosine_scores: zero embedding at row " + std::to_string(i));
    out(i) = knn_from_unit(embeddings.row(i) / norm, bank, k, scratch);
  }
  return out;
}

}  // namespace oodlab
