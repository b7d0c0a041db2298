#include "oodlab/report_io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace oodlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

json alm_json(const AlmState& s) {
  return {{"lambda1", s.lambda1}, {"lambda2", s.lambda2}, {"beta1", s.beta1},
          {"beta2", s.beta2},     {"c1", s.c1},           {"c2", s.c2}};
}

json energy_json(const EnergyStats& e) {
  return {{"mean_id", e.mean_id},
          {"mean_ood", e.mean_ood},
          {"median_id", e.median_id},
          {"gap", e.gap()},
          {"violating_fraction", e.violating_fraction}};
}

json meta_json(const CheckpointMeta& m) {
  return {{"criterion", std::string(to_string(m.criterion))},
          {"epoch", m.epoch},
          {"metric", m.metric},
          {"val_balanced_accuracy", m.val_balanced_accuracy}};
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json to_json(const MethodReport& r) {
  json j;
  j["method"] = r.method;
  j["score"] = r.score;
  j["balanced_accuracy"] = r.balanced_accuracy;
  json ood = json::object();
  for (const auto& [name, res] : r.ood) ood[name] = {{"auroc", res.auroc}, {"fpr95", res.fpr95}};
  j["ood"] = ood;
  j["margins"] = r.margins ? json{{"m_in", r.margins->m_in}, {"m_out", r.margins->m_out}} : json(nullptr);
  json traj = json::array();
  for (const auto& s : r.alm_trajectory) traj.push_back(alm_json(s));
  j["alm_trajectory"] = traj;
  j["seed"] = r.seed;
  j["config_hash"] = hex64(r.config_hash);
  return j;
}

MethodReport method_report_from_json(const json& j) {
  MethodReport r;
  r.method = j.at("method").get<std::string>();
  r.score = j.at("score").get<std::string>();
  r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
  for (const auto& [name, res] : j.at("ood").items())
    r.ood[name] = {res.at("auroc").get<double>(), res.at("fpr95").get<double>()};
  if (!j.at("margins").is_null())
    r.margins = MarginPair{j["margins"].at("m_in").get<double>(), j["margins"].at("m_out").get<double>()};
  for (const auto& s : j.at("alm_trajectory"))
    r.alm_trajectory.push_back({s.at("lambda1").get<double>(), s.at("lambda2").get<double>(),
                                s.at("beta1").get<double>(), s.at("beta2").get<double>(),
                                s.at("c1").get<double>(), s.at("c2").get<double>()});
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  return r;
}

json run_record_json(const RunRecord& rec) {
  json j;
  j["method"] = std::string(to_string(rec.method));
  j["status"] = rec.status;
  j["config_hash"] = hex64(rec.config_hash);
  j["flags"] = rec.flags;
  j["training_splits"] = rec.training_splits;
  j["init_hash"] = hex64(rec.init_hash);
  j["parent_hash"] = rec.parent_hash ? json(hex64(*rec.parent_hash)) : json(nullptr);
  j["checkpoint_hash"] = hex64(param_hash(rec.checkpoint.params));
  json cps = json::array();
  for (const auto& m : rec.checkpoints) cps.push_back(meta_json(m));
  j["checkpoints"] = cps;
  j["selected"] = meta_json(rec.selected);
  j["energy_before"] = rec.energy_before ? energy_json(*rec.energy_before) : json(nullptr);
  j["energy_after"] = rec.energy_after ? energy_json(*rec.energy_after) : json(nullptr);
  return j;
}

std::string run_dir_name(Method method, std::uint64_t seed) {
  return std::string(to_string(method)) + "_seed" + std::to_string(seed);
}

void write_trajectory(const RunRecord& rec, const fs::path& path) {
  auto out = open_out(path);
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  out << "epoch,lr,train_loss,val_loss,train_balanced_accuracy,val_balanced_accuracy,hinge_loss,"
         "val_energy_gap,val_violating_fraction,lambda1,lambda2,beta1,beta2,c1,c2\n";
  for (const auto& e : rec.epochs) {
    out << e.epoch << ',' << num(e.lr) << ',' << num(e.train_loss) << ',' << num(e.val_loss) << ','
        << num(e.train_balanced_accuracy) << ',' << num(e.val_balanced_accuracy) << ',';
    out << opt(e.hinge_loss) << ',' << opt(e.val_energy_gap) << ',' << opt(e.val_violating_fraction);
    if (e.alm) {
      const auto& a = *e.alm;
      out << ',' << num(a.lambda1) << ',' << num(a.lambda2) << ',' << num(a.beta1) << ',' << num(a.beta2)
          << ',' << num(a.c1) << ',' << num(a.c2);
    } else {
      out << ",,,,,,";
    }
    out << '\n';
  }
}

void write_scores(const ScoreSet& s, const fs::path& path) {
  auto out = open_out(path);
  out << "sample_id,score\n";
  for (std::size_t i = 0; i < s.sample_ids.size(); ++i)
    out << s.sample_ids[i] << ',' << num(s.scores(static_cast<Eigen::Index>(i))) << '\n';
}

void write_roc(const RocCurve& roc, const fs::path& path) {
  auto out = open_out(path);
  out << "fpr,tpr\n";
  for (const auto& p : roc.points) out << num(p.fpr) << ',' << num(p.tpr) << '\n';
}

void write_histogram(const Histogram& h, const fs::path& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count_id,count_ood\n";
  for (std::size_t i = 0; i < h.counts_a.size(); ++i)
    out << num(h.edges[i]) << ',' << num(h.edges[i + 1]) << ',' << h.counts_a[i] << ',' << h.counts_b[i] << '\n';
}

void write_run(const RunRecord& rec, const fs::path& dir) {
  fs::create_directories(dir);
  open_out(dir / "report.json") << to_json(rec.report).dump(2) << '\n';
  open_out(dir / "run.json") << run_record_json(rec).dump(2) << '\n';
  write_trajectory(rec, dir / "trajectory.csv");
  save_checkpoint(rec.checkpoint, dir / "checkpoint.bin");

  const ScoreSet* id = nullptr;
  for (const auto& s : rec.scores) {
    write_scores(s, dir / "scores" / (s.method + "_" + s.dataset + ".csv"));
    if (s.dataset == "id_test") id = &s;
  }
  if (!id) return;
  for (const auto& s : rec.scores) {
    if (&s == id) continue;
    const std::string stem = s.method + "_" + s.dataset + ".csv";
    write_roc(roc_curve(as_span(id->scores), as_span(s.scores)), dir / "roc" / stem);
    write_histogram(paired_histogram(as_span(id->scores), as_span(s.scores)), dir / "hist" / stem);
  }
}

void write_embedding_analysis(const EmbeddingComparison& cmp, const fs::path& dir) {
  json summary = json::array();
  for (const EmbeddingSide* side : {&cmp.a, &cmp.b}) {
    const std::string& l = side->label;
    write_roc(side->knn_roc, dir / (l + "_knn_roc.csv"));
    write_roc(side->primary_roc, dir / (l + "_primary_roc.csv"));
    write_histogram(paired_histogram(as_span(side->knn_id), as_span(side->knn_near)),
                    dir / (l + "_knn_hist.csv"));
    auto out = open_out(dir / (l + "_knn_distances.csv"));
    out << "set,distance\n";
    for (double v : side->knn_id.reshaped()) out << "id_test," << num(v) << '\n';
    for (double v : side->knn_near.reshaped()) out << "near," << num(v) << '\n';
    summary.push_back({{"label", l},
                       {"knn_w1", side->knn_w1},
                       {"knn_auroc", side->knn_roc.auroc},
                       {"primary_auroc", side->primary_roc.auroc}});
  }
  open_out(dir / "summary.json") << summary.dump(2) << '\n';
}

std::vector<ResultsRow> aggregate_reports(const std::vector<MethodReport>& reports) {
  std::vector<ResultsRow> rows;
  for (Method m : all_methods()) {
    const std::string tag(to_string(m));
    ResultsRow row;
    row.method = tag;
    for (const auto& r : reports) {
      if (r.method != tag) continue;
      ++row.runs;
      row.balanced_accuracy += r.balanced_accuracy;
      for (const auto& [name, res] : r.ood) {
        row.ood[name].auroc += res.auroc;
        row.ood[name].fpr95 += res.fpr95;
      }
    }
    if (row.runs == 0) continue;
    row.balanced_accuracy /= row.runs;
    for (auto& [name, res] : row.ood) {
      res.auroc /= row.runs;
      res.fpr95 /= row.runs;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MethodReport> collect_reports(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("no such output directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "report.json")) files.push_back(entry.path() / "report.json");
  std::sort(files.begin(), files.end());
  std::vector<MethodReport> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      out.push_back(method_report_from_json(json::parse(in)));
    } catch (const json::exception& e) {
      throw std::runtime_error(f.string() + ": " + e.what());
    }
  }
  return out;
}

void write_results_table(const std::vector<ResultsRow>& rows, const fs::path& root) {
  const auto& sets = test_ood_names();
  json table = json::array();
  auto csv = open_out(root / "results_table.csv");
  csv << "method,balanced_accuracy";
  for (const auto& s : sets) csv << ",auroc_" << s;
  for (const auto& s : sets) csv << ",fpr95_" << s;
  csv << '\n';
  for (const auto& row : rows) {
    json j;
    j["method"] = row.method;
    j["balanced_accuracy"] = row.balanced_accuracy;
    csv << row.method << ',' << num(row.balanced_accuracy);
    for (const auto& s : sets) {
      const double v = row.ood.count(s) ? row.ood.at(s).auroc : 0.0;
      j["auroc_" + s] = v;
      csv << ',' << num(v);
    }
    for (const auto& s : sets) {
      const double v = row.ood.count(s) ? row.ood.at(s).fpr95 : 0.0;
      j["fpr95_" + s] = v;
      csv << ',' << num(v);
    }
    csv << '\n';
    table.push_back(j);
  }
  open_out(root / "results_table.json") << table.dump(2) << '\n';
}

fs::path default_output_root() {
  if (const char* env = std::getenv("OODLAB_OUT_ROOT"); env && *env) return env;
  return "runs";
}

}  // namespace oodlab
