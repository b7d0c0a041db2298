#include "oodlab/analysis.hpp"

#include "oodlab/runner.hpp"

namespace oodlab {

namespace {

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

EmbeddingSide analyze_embeddings(const std::string& label, const ModelParams& params, ScoreKind primary,
                                 const BenchmarkData& data, Eigen::Index k, double temperature) {
  const FeatureSet& near = data.test_ood.at("near");
  const EmbeddingBank bank(forward(params, data.id_train.x).embeddings);
  EmbeddingSide side;
  side.label = label;
  side.knn_id = knn_cosine_scores(forward(params, data.id_test.x).embeddings, bank, k);
  side.knn_near = knn_cosine_scores(forward(params, near.x).embeddings, bank, k);
  side.knn_w1 = wasserstein1(as_span(side.knn_id), as_span(side.knn_near));
  side.knn_roc = roc_curve(as_span(side.knn_id), as_span(side.knn_near));
  const Vector p_id = score_batch(params, primary, data.id_test.x, temperature);
  const Vector p_near = score_batch(params, primary, near.x, temperature);
  side.primary_roc = roc_curve(as_span(p_id), as_span(p_near));
  return side;
}

EmbeddingComparison compare_embeddings(const std::string& label_a, const ModelParams& a, ScoreKind kind_a,
                                       const std::string& label_b, const ModelParams& b, ScoreKind kind_b,
                                       const BenchmarkData& data, Eigen::Index k, double temperature) {
  return {analyze_embeddings(label_a, a, kind_a, data, k, temperature),
          analyze_embeddings(label_b, b, kind_b, data, k, temperature)};
}

}  // namespace oodlab
