#pragma once

#include "oodlab/alm.hpp"
#include "oodlab/data.hpp"
#include "oodlab/objectives.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace oodlab {

enum class Method { e1, e2, e3, e4, e5a, e5b, e6 };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
const std::vector<Method>& all_methods();

/// Methods that start from an E1 checkpoint.
inline bool needs_e1(Method m) {
  return m == Method::e4 || m == Method::e5a || m == Method::e5b || m == Method::e6;
}

struct ModelConfig {
  std::vector<Eigen::Index> hidden{64, 64};
  Eigen::Index embedding = 16;
};

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 25;
  int batch_size = 32;
  // Warmup steps are 4000 * n_train / 8527, keeping the warmup share of
  // the schedule at the reference scale.
  double warmup_reference_steps = 4000;
  double warmup_reference_size = 8527;
  double finetune_lr_factor = 0.1;
  int warmup_epochs = 2;
};

struct DetectorConfig {
  double collapse_epsilon = 0.05;  // OE collapse: mean max-softmax < 1/C + eps
  int stall_epochs = 3;            // energy hinge stall window
  int knn_k = 5;
};

struct ExperimentConfig {
  Method method = Method::e1;
  std::uint64_t seed = 1;
  GenConfig data;
  ModelConfig model;
  OptimConfig optim;
  LossWeights weights;
  std::optional<MarginPair> margins_override;
  AlmConfig alm;
  std::optional<double> tau_override;  // default 1.1 x E1 validation CE
  double tau_factor = 1.1;
  DetectorConfig detectors;
  std::string e1_checkpoint;  // path; not part of the config hash

  void validate() const;
  /// Sorted key = value lines; the config hash is computed over this text.
  std::string canonical() const;
  std::uint64_t hash() const;
};

/// Parses INI-style text: `[section]` headers and `key = value` lines.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies a single `section.key=value` override.
void apply_override(ExperimentConfig& config, std::string_view assignment);

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace oodlab
