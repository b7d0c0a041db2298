#pragma once

// Synthetic benchmark with the topology of an imbalanced ID classification
// task plus auxiliary, wild, and graded-distance test OOD sets.

#include "oodlab/diffcore.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace oodlab {

/// Rows of features with globally unique sample identities. `labels` is
/// empty for unlabeled sets.
struct FeatureSet {
  Matrix x;
  std::vector<int> labels;
  std::vector<long long> ids;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return ids.size(); }
  FeatureSet subset(std::span<const std::size_t> rows) const;
  /// Same rows with labels dropped.
  FeatureSet unlabeled() const;
};

FeatureSet concat(const FeatureSet& a, const FeatureSet& b);

struct GenConfig {
  int num_classes = 5;
  int dim = 8;
  int total_id = 20000;
  std::vector<double> class_proportions{0.31, 0.29, 0.20, 0.12, 0.08};
  double class_radius = 4.0;
  double cluster_scale = 1.0;
  // Near-OOD: Gaussian at (1 - f) mu_a + f mu_b with the ID covariance.
  double near_factor = 0.5;
  int near_class_a = 0;
  int near_class_b = 1;
  // Two classes pulled toward each other by this fraction of their distance.
  double confusable_pull = 0.6;
  int confusable_a = 2;
  int confusable_b = 3;
  // Far-OOD A: Gaussian displaced into the nuisance subspace (the directions
  // orthogonal to every class mean). Far-OOD B: hypercube shell across the
  // nuisance coordinates.
  double far_displacement = 7.0;
  double far_b_halfwidth = 6.0;
  // Auxiliary OOD: Gaussian, center displaced from the ID centroid.
  double aux_displacement = 0.0;
  double aux_scale = 2.0;
  // Aux spread along the class-mean span; 0 uses aux_scale.
  double aux_class_scale = 1.0;
  // Aux draws closer than this to any class mean are rejected; 0 disables.
  double aux_exclusion_radius = 3.5;
  int aux_count = 2500;
  int test_ood_count = 500;
  double wild_ratio = 0.5;
  std::uint64_t seed = 2024;

  void validate() const;
  std::vector<int> class_counts() const;
};

struct WildComposition {
  long n_id = 0;
  long n_ood = 0;
  double id_fraction() const { return static_cast<double>(n_id) / static_cast<double>(n_id + n_ood); }
};

struct BenchmarkData {
  int num_classes = 0;
  int dim = 0;
  FeatureSet id_train;
  FeatureSet id_wild_pool;
  FeatureSet id_val;
  FeatureSet id_test;
  FeatureSet aux_ood_train;
  FeatureSet aux_ood_val;
  std::map<std::string, FeatureSet> test_ood;  // far_a, far_b, near
  FeatureSet wild_train;                       // unlabeled
  WildComposition wild_composition;
};

/// Test OOD set names in report order.
const std::vector<std::string>& test_ood_names();

/// Identity offsets per sample family.
inline constexpr long long kAuxIdBase = 10'000'000;
inline constexpr long long kFarAIdBase = 20'000'000;
inline constexpr long long kFarBIdBase = 30'000'000;
inline constexpr long long kNearIdBase = 40'000'000;

BenchmarkData generate(const GenConfig& config);

/// Per-class stratified split. Within each class, samples are ordered by
/// identity and shuffled with `seed`, so membership does not depend on input
/// order. Counts per class use largest-remainder rounding.
std::vector<FeatureSet> stratified_split(const FeatureSet& data, std::span<const double> fractions,
                                         std::uint64_t seed);

/// Union of the ID wild pool and aux OOD with `ratio` of ID samples.
FeatureSet make_wild(const FeatureSet& id_pool, const FeatureSet& aux_ood, double ratio,
                     std::uint64_t seed, WildComposition* composition = nullptr);

/// Draws a class uniformly, then a sample uniformly within it; equivalent to
/// sampling each index with probability proportional to 1 / class count.
class InverseFrequencySampler {
 public:
  InverseFrequencySampler(std::span<const int> labels, std::uint64_t seed);

  std::size_t next();
  std::vector<std::size_t> draw(std::size_t n);

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::mt19937_64 rng_;
};

struct BatchPair {
  std::vector<std::size_t> id;
  std::vector<std::size_t> ood;
};

/// Pairs consecutive batches of `id_order` with batches drawn cyclically
/// from `ood_order`; the OOD stream restarts whenever it is exhausted.
std::vector<BatchPair> cycle_shorter(std::span<const std::size_t> id_order,
                                     std::span<const std::size_t> ood_order,
                                     std::size_t batch_size);

struct CsvSchema {
  bool labeled = true;
  int dim = 0;
};

/// Columns: sample_id[,label],f0..f{dim-1}. Values use shortest round-trip
/// formatting, so export followed by ingest is exact.
void write_csv(const FeatureSet& data, const std::filesystem::path& path);
FeatureSet ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);

void write_benchmark(const BenchmarkData& data, const std::filesystem::path& dir);

}  // namespace oodlab
