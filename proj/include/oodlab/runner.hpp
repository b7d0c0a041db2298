#pragma once

#include "oodlab/alm.hpp"
#include "oodlab/config.hpp"
#include "oodlab/data.hpp"
#include "oodlab/model.hpp"
#include "oodlab/scoring.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oodlab {

struct OodResult {
  double auroc = 0.0;
  double fpr95 = 0.0;
};

/// One row of the results table.
struct MethodReport {
  std::string method;
  std::string score;
  double balanced_accuracy = 0.0;
  std::map<std::string, OodResult> ood;  // keyed by test OOD set name
  std::optional<MarginPair> margins;
  std::vector<AlmState> alm_trajectory;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_balanced_accuracy = 0.0;
  double val_balanced_accuracy = 0.0;
  std::optional<AlmState> alm;
  std::optional<double> hinge_loss;  // e5b training hinge term
  std::optional<double> val_energy_gap;
  std::optional<double> val_violating_fraction;
};

struct CheckpointMeta {
  CheckpointCriterion criterion = CheckpointCriterion::best_val_balanced_accuracy;
  int epoch = -1;
  double metric = 0.0;
  double val_balanced_accuracy = 0.0;
};

/// Energy statistics on the validation pair (ID val, aux OOD val).
struct EnergyStats {
  double mean_id = 0.0;
  double mean_ood = 0.0;
  double median_id = 0.0;
  double violating_fraction = 0.0;  // share of samples with an active hinge
  double gap() const { return mean_ood - mean_id; }
};

struct RunRecord {
  Method method = Method::e1;
  std::uint64_t config_hash = 0;
  std::string status = "ok";
  std::vector<std::string> flags;
  std::vector<EpochStats> epochs;
  std::vector<CheckpointMeta> checkpoints;
  CheckpointMeta selected;
  Checkpoint checkpoint;
  std::uint64_t init_hash = 0;
  std::optional<std::uint64_t> parent_hash;
  std::vector<std::string> training_splits;
  std::vector<ScoreSet> scores;
  MethodReport report;
  std::optional<EnergyStats> energy_before;
  std::optional<EnergyStats> energy_after;

  bool has_flag(std::string_view f) const;
};

ScoreKind primary_score(Method m);
HeadKind head_for(Method m);

/// Scores `params` with `kind` on one feature matrix.
Vector score_batch(const ModelParams& params, ScoreKind kind, const Matrix& x, double temperature);

/// Argmax over the first num_classes logits.
std::vector<int> predict(const ModelParams& params, const Matrix& x);

/// Balanced accuracy on ID test plus AUROC/FPR95 per test OOD set.
MethodReport evaluate(const ModelParams& params, Method method, const BenchmarkData& data,
                      const ExperimentConfig& config, std::vector<ScoreSet>* scores = nullptr);

EnergyStats energy_stats(const ModelParams& params, const BenchmarkData& data,
                         const MarginPair& margins, double temperature);

/// Margins from the E1 checkpoint's validation energies.
MarginPair e1_margins(const ModelParams& e1, const BenchmarkData& data, double temperature);

RunRecord train_e1(const ExperimentConfig& config, const BenchmarkData& data);
RunRecord train_e2(const ExperimentConfig& config, const BenchmarkData& data);
RunRecord train_e3(const ExperimentConfig& config, const BenchmarkData& data);
RunRecord train_e4(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1);
RunRecord rescore_e5a(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1);
MethodReport run_e5a(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1);
RunRecord train_e5b(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1);
RunRecord train_e6(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1);

/// Dispatches on config.method; `e1` is required for fine-tuning methods.
RunRecord run_method(const ExperimentConfig& config, const BenchmarkData& data,
                     const Checkpoint* e1 = nullptr);

/// Grid of `key=value` overrides (at most 8). Each candidate is run and the
/// best is chosen by validation balanced accuracy, then aux-OOD-val AUROC.
struct SweepResult {
  std::vector<std::string> candidates;
  std::vector<double> val_balanced_accuracy;
  std::vector<double> aux_val_auroc;
  std::size_t best = 0;
  RunRecord best_record;
};

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<std::vector<std::string>>& grid,
                      const BenchmarkData& data, const Checkpoint* e1 = nullptr);

}  // namespace oodlab
