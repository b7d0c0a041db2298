#pragma once

#include "oodlab/diffcore.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace oodlab {

enum class HeadKind : std::uint32_t {
  softmax_c = 0,
  sigmoid_c = 1,
  sigmoid_c_plus_1 = 2,
};

std::string_view to_string(HeadKind kind);
HeadKind head_kind_from_string(std::string_view s);

/// Width of the head output for `num_classes` ID classes.
inline Eigen::Index head_width(HeadKind kind, Eigen::Index num_classes) {
  return kind == HeadKind::sigmoid_c_plus_1 ? num_classes + 1 : num_classes;
}

/// MLP feature stack dims.front() -> ... -> dims.back() (the embedding) plus
/// a linear head. Hidden layers use relu; the embedding layer is linear.
/// Weights are stored (fan_in x fan_out) so a batch is X * W + b.
struct ModelParams {
  HeadKind head_kind = HeadKind::softmax_c;
  Eigen::Index num_classes = 0;
  std::vector<Eigen::Index> dims;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;  // each 1 x fan_out
  Matrix head_weight;
  Matrix head_bias;

  Eigen::Index input_dim() const { return dims.front(); }
  Eigen::Index embedding_dim() const { return dims.back(); }
  Eigen::Index output_dim() const { return head_width(head_kind, num_classes); }

  /// Throws if layer shapes do not chain.
  void validate() const;

  /// Exact (bitwise-value) equality of shapes and all arrays.
  friend bool operator==(const ModelParams&, const ModelParams&);
};

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
ModelParams init_params(std::vector<Eigen::Index> dims, Eigen::Index num_classes,
                        HeadKind head_kind, std::uint64_t seed);

struct ForwardResult {
  Matrix embeddings;
  Matrix logits;
};

ForwardResult forward(const ModelParams& params, const Eigen::Ref<const Matrix>& batch);

/// Parameters registered as leaves on a graph, in the checkpoint order
/// (w0, b0, w1, b1, ..., head_w, head_b).
struct ModelVars {
  std::vector<Var> leaves;

  Var weight(std::size_t layer) const { return leaves[2 * layer]; }
  Var bias(std::size_t layer) const { return leaves[2 * layer + 1]; }
  std::size_t num_layers() const { return leaves.size() / 2 - 1; }
  Var head_weight() const { return leaves[leaves.size() - 2]; }
  Var head_bias() const { return leaves.back(); }
};

ModelVars attach(Graph& graph, const ModelParams& params);

struct ForwardVars {
  Var embeddings;
  Var logits;
};

ForwardVars forward(const ModelVars& vars, const Eigen::Ref<const Matrix>& batch);

/// Flat views of the parameter arrays in checkpoint order.
std::vector<Matrix*> parameter_arrays(ModelParams& params);
std::vector<const Matrix*> parameter_arrays(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

/// FNV-1a over the serialized checkpoint bytes.
std::uint64_t param_hash(const ModelParams& params);

enum class CheckpointCriterion : std::uint32_t {
  best_train_loss = 0,
  best_val_loss = 1,
  best_val_balanced_accuracy = 2,
};

std::string_view to_string(CheckpointCriterion c);

struct Checkpoint {
  ModelParams params;
  CheckpointCriterion criterion = CheckpointCriterion::best_val_balanced_accuracy;
  int epoch = -1;
  double metric = 0.0;
};

/// Binary layout (little-endian):
///   "OODLABCK" | u32 version | u32 head_kind | u32 criterion | i32 epoch
///   | f64 metric | u64 num_classes | u64 n_dims | u64 dims[n_dims]
///   | for each array in checkpoint order: u64 rows | u64 cols | f64 data (column-major)
std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace oodlab
