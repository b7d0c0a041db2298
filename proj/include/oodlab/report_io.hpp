#pragma once
// On-disk run outputs and the aggregated results table.

#include "oodlab/analysis.hpp"
#include "oodlab/config.hpp"
#include "oodlab/runner.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace oodlab {

std::string hex64(std::uint64_t v);

nlohmann::json to_json(const MethodReport& report);
MethodReport method_report_from_json(const nlohmann::json& j);
nlohmann::json run_record_json(const RunRecord& rec);

/// Per-run directory name inside an output root.
std::string run_dir_name(Method method, std::uint64_t seed);

/// Writes report.json, run.json, trajectory.csv, checkpoint.bin and the
/// scores/, roc/, hist/ CSVs for one run.
void write_run(const RunRecord& rec, const std::filesystem::path& dir);

void write_trajectory(const RunRecord& rec, const std::filesystem::path& path);
void write_scores(const ScoreSet& s, const std::filesystem::path& path);
void write_roc(const RocCurve& roc, const std::filesystem::path& path);
void write_histogram(const Histogram& h, const std::filesystem::path& path);

/// analysis/ directory: kNN distance lists, ROC curves and summary.json.
void write_embedding_analysis(const EmbeddingComparison& cmp, const std::filesystem::path& dir);

/// One row per method, averaged over seeds, in method order.
struct ResultsRow {
  std::string method;
  double balanced_accuracy = 0.0;
  std::map<std::string, OodResult> ood;
  int runs = 0;
};

std::vector<ResultsRow> aggregate_reports(const std::vector<MethodReport>& reports);
std::vector<MethodReport> collect_reports(const std::filesystem::path& root);
void write_results_table(const std::vector<ResultsRow>& rows, const std::filesystem::path& root);

/// Output root: the OODLAB_OUT_ROOT environment variable if set, else "runs".
std::filesystem::path default_output_root();

}  // namespace oodlab
