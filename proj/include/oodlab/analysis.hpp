#pragma once
// Embedding-space comparison between two checkpoints.

#include "oodlab/data.hpp"
#include "oodlab/metrics.hpp"
#include "oodlab/model.hpp"
#include "oodlab/scoring.hpp"

#include <string>

namespace oodlab {

struct EmbeddingSide {
  std::string label;
  Vector knn_id;    // ID test kNN distances to the ID train bank
  Vector knn_near;  // near-OOD kNN distances
  double knn_w1 = 0.0;
  RocCurve knn_roc;
  RocCurve primary_roc;
};

EmbeddingSide analyze_embeddings(const std::string& label, const ModelParams& params, ScoreKind primary,
                                 const BenchmarkData& data, Eigen::Index k, double temperature);

struct EmbeddingComparison {
  EmbeddingSide a;
  EmbeddingSide b;
  double w1_difference() const { return b.knn_w1 - a.knn_w1; }
};

EmbeddingComparison compare_embeddings(const std::string& label_a, const ModelParams& a, ScoreKind kind_a,
                                       const std::string& label_b, const ModelParams& b, ScoreKind kind_b,
                                       const BenchmarkData& data, Eigen::Index k, double temperature);

}  // namespace oodlab
