#include "oodlab/analysis.hpp"
#include "oodlab/config.hpp"
#include "oodlab/data.hpp"
#include "oodlab/gradcheck_suite.hpp"
#include "oodlab/report_io.hpp"
#include "oodlab/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace oodlab;

namespace {

struct RunArgs {
  std::string config;
  std::string method;
  std::uint64_t seed = 1;
  std::string out;
  std::string e1_checkpoint;
  std::vector<std::string> overrides;
};

fs::path resolve_e1(const RunArgs& args, const ExperimentConfig& cfg, const fs::path& root) {
  if (!args.e1_checkpoint.empty()) return args.e1_checkpoint;
  if (!cfg.e1_checkpoint.empty()) return cfg.e1_checkpoint;
  return root / run_dir_name(Method::e1, cfg.seed) / "checkpoint.bin";
}

int cmd_run(const RunArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  for (const auto& o : args.overrides) apply_override(cfg, o);
  if (!args.method.empty()) cfg.method = method_from_string(args.method);
  cfg.seed = args.seed;
  cfg.validate();

  const fs::path root = args.out.empty() ? default_output_root() : fs::path(args.out);
  const BenchmarkData data = generate(cfg.data);

  std::optional<Checkpoint> e1;
  if (needs_e1(cfg.method)) {
    const fs::path path = resolve_e1(args, cfg, root);
    if (!fs::exists(path))
      throw std::runtime_error("method " + std::string(to_string(cfg.method)) +
                               " needs an E1 checkpoint; not found at " + path.string());
    e1 = load_checkpoint(path);
  }

  const RunRecord rec = run_method(cfg, data, e1 ? &*e1 : nullptr);
  const fs::path dir = root / run_dir_name(cfg.method, cfg.seed);
  write_run(rec, dir);
  if (cfg.method == Method::e5b) {
    const auto cmp = compare_embeddings("e1", e1->params, primary_score(Method::e1), "e5b",
                                        rec.checkpoint.params, primary_score(Method::e5b), data,
                                        cfg.detectors.knn_k, cfg.weights.temperature);
    write_embedding_analysis(cmp, dir / "analysis");
  }

  std::cout << to_string(cfg.method) << " seed " << cfg.seed << " status " << rec.status
            << " bacc " << rec.report.balanced_accuracy;
  for (const auto& [name, r] : rec.report.ood) std::cout << ' ' << name << ' ' << r.auroc;
  std::cout << '\n';
  for (const auto& f : rec.flags) std::cout << "flag: " << f << '\n';
  return rec.status == "ok" ? 0 : 3;
}

int cmd_report(const std::string& out) {
  const fs::path root = out.empty() ? default_output_root() : fs::path(out);
  const auto rows = aggregate_reports(collect_reports(root));
  if (rows.empty()) throw std::runtime_error("no report.json files under " + root.string());
  write_results_table(rows, root);
  std::cout << "method bacc";
  for (const auto& s : test_ood_names()) std::cout << " auroc_" << s;
  std::cout << '\n';
  for (const auto& r : rows) {
    std::printf("%-4s %.4f", r.method.c_str(), r.balanced_accuracy);
    for (const auto& s : test_ood_names()) std::printf(" %.4f", r.ood.at(s).auroc);
    std::printf("\n");
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int points) {
  bool ok = true;
  for (const auto& e : run_gradcheck_suite(seed, points)) {
    std::printf("%-16s max_rel_error %.3e points %d\n", e.objective.c_str(), e.max_rel_error, e.points);
    ok = ok && e.max_rel_error <= 1e-4;
  }
  return ok ? 0 : 1;
}

int cmd_gen_data(const std::string& config, const std::string& out, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = config.empty() ? ExperimentConfig{} : load_config(config);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  write_benchmark(generate(cfg.data), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OOD detection lab"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "train or rescore one method");
  run->add_option("--config", run_args.config, "INI config file")->required();
  run->add_option("--method", run_args.method, "e1 e2 e3 e4 e5a e5b e6");
  run->add_option("--seed", run_args.seed, "run seed");
  run->add_option("--out", run_args.out, "output root");
  run->add_option("--e1-checkpoint", run_args.e1_checkpoint, "E1 checkpoint for fine-tuning methods");
  run->add_option("--set", run_args.overrides, "section.key=value override");

  std::string report_out;
  auto* report = app.add_subcommand("report", "aggregate run reports into the results table");
  report->add_option("--out", report_out, "output root");

  std::uint64_t gc_seed = 7;
  int gc_points = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--points", gc_points);

  std::string gen_config, gen_out;
  std::vector<std::string> gen_overrides;
  auto* gen = app.add_subcommand("gen-data", "write the synthetic benchmark as CSV");
  gen->add_option("--config", gen_config, "INI config file");
  gen->add_option("--out", gen_out, "directory")->required();
  gen->add_option("--set", gen_overrides, "section.key=value override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    bool known = false;
    for (const auto* sub : app.get_subcommands({}))
      known = known || (argc > 1 && sub->get_name() == argv[1]);
    if (argc > 1 && argv[1][0] != '-' && !known)
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n";
    else
      std::cerr << "error: " << e.what() << '\n';
    std::cerr << app.help();
    return e.get_exit_code() ? e.get_exit_code() : 1;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*report) return cmd_report(report_out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_points);
    if (*gen) return cmd_gen_data(gen_config, gen_out, gen_overrides);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
