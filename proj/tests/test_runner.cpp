#include "oodlab/analysis.hpp"
#include "oodlab/metrics.hpp"
#include "oodlab/report_io.hpp"
#include "oodlab/runner.hpp"

#include <doctest.h>

#include <algorithm>

using namespace oodlab;

namespace {

ExperimentConfig small_config(Method m, std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.method = m;
  c.seed = seed;
  c.data.total_id = 2500;
  c.data.aux_count = 500;
  c.data.test_ood_count = 300;
  c.optim.epochs = 5;
  c.optim.warmup_epochs = 1;
  return c;
}

ExperimentConfig e1_config() {
  auto c = small_config(Method::e1);
  c.optim.epochs = 15;
  return c;
}

const BenchmarkData& small_data() {
  static const BenchmarkData d = generate(small_config(Method::e1).data);
  return d;
}

const RunRecord& small_e1() {
  static const RunRecord r = train_e1(e1_config(), small_data());
  return r;
}

bool touched(const RunRecord& r, const std::string& split) {
  return std::find(r.training_splits.begin(), r.training_splits.end(), split) != r.training_splits.end();
}

double val_bacc(const ModelParams& p, const BenchmarkData& d) {
  return balanced_accuracy(predict(p, d.id_val.x), d.id_val.labels);
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("e1 learns the benchmark and is deterministic") {
  const RunRecord& a = small_e1();
  CHECK(a.status == "ok");
  CHECK(a.report.balanced_accuracy >= 0.90);
  const RunRecord b = train_e1(e1_config(), small_data());
  CHECK(param_hash(a.checkpoint.params) == param_hash(b.checkpoint.params));
  CHECK(to_json(a.report).dump() == to_json(b.report).dump());
  CHECK(a.report.ood.size() == test_ood_names().size());
  CHECK(a.report.score == "msp");
}

TEST_CASE("selected checkpoint reproduces its metric") {
  const RunRecord& r = small_e1();
  const Checkpoint back = deserialize(serialize(r.checkpoint));
  CHECK(val_bacc(back.params, small_data()) == r.selected.val_balanced_accuracy);
  CHECK(r.checkpoints.size() == 3);
  for (const auto& c : r.checkpoints) CHECK(c.val_balanced_accuracy <= r.selected.val_balanced_accuracy);
}

TEST_CASE("e2 touches only ID splits") {
  const RunRecord r = train_e2(small_config(Method::e2), small_data());
  for (const auto& s : r.training_splits) CHECK(s.rfind("id_", 0) == 0);
  CHECK(r.checkpoint.params.head_kind == HeadKind::sigmoid_c);
  CHECK(r.report.score == "max_sigmoid");
}

TEST_CASE("e3 trains with an extra output on aux data") {
  const RunRecord r = train_e3(small_config(Method::e3), small_data());
  CHECK(touched(r, "aux_ood_train"));
  CHECK(r.checkpoint.params.output_dim() == small_data().num_classes + 1);
  CHECK(r.report.score == "ood_class");
}

TEST_CASE("fine-tunes start from the e1 checkpoint") {
  for (Method m : {Method::e4, Method::e5b, Method::e6}) {
    auto c = small_config(m);
    c.optim.epochs = 3;
    const RunRecord r = run_method(c, small_data(), &small_e1().checkpoint);
    CHECK(r.init_hash == param_hash(small_e1().checkpoint.params));
    REQUIRE(r.parent_hash.has_value());
    CHECK(*r.parent_hash == r.init_hash);
  }
  CHECK_THROWS(run_method(small_config(Method::e4), small_data(), nullptr));
}

TEST_CASE("e4 with zero weight stays close to e1") {
  auto c = small_config(Method::e4);
  c.weights.lambda_oe = 0.0;
  const RunRecord r = train_e4(c, small_data(), small_e1().checkpoint);
  for (const auto& name : test_ood_names()) {
    const double oe = r.report.ood.at(name).auroc;
    const double base = small_e1().report.ood.at(name).auroc;
    CHECK(std::abs(oe - base) <= 0.05);
  }
}

TEST_CASE("oversized outlier weight and learning rate trigger the collapse flag") {
  auto c = small_config(Method::e4);
  c.weights.lambda_oe = 50.0;
  c.optim.lr = 0.5;
  c.optim.finetune_lr_factor = 1.0;
  c.optim.epochs = 4;
  const RunRecord r = train_e4(c, small_data(), small_e1().checkpoint);
  CHECK((r.has_flag("oe_collapse") || r.status == "diverged"));
}

TEST_CASE("e5a rescoring does not touch parameters") {
  const Checkpoint& e1 = small_e1().checkpoint;
  const auto before = serialize(e1);
  const RunRecord r = rescore_e5a(small_config(Method::e5a), small_data(), e1);
  CHECK(serialize(e1) == before);
  CHECK(r.checkpoint.params == e1.params);
  CHECK(r.report.score == "energy");
  CHECK(r.report.balanced_accuracy == small_e1().report.balanced_accuracy);
  const MethodReport m = run_e5a(small_config(Method::e5a), small_data(), e1);
  CHECK(to_json(m).dump() == to_json(r.report).dump());
}

TEST_CASE("e5b with zero energy weight stays close to e1") {
  auto c = small_config(Method::e5b);
  c.weights.lambda_energy = 0.0;
  const RunRecord r = train_e5b(c, small_data(), small_e1().checkpoint);
  const RunRecord e5a = rescore_e5a(small_config(Method::e5a), small_data(), small_e1().checkpoint);
  REQUIRE(r.report.margins.has_value());
  for (const auto& name : test_ood_names())
    CHECK(std::abs(r.report.ood.at(name).auroc - e5a.report.ood.at(name).auroc) <= 0.05);
  REQUIRE(r.energy_before.has_value());
  REQUIRE(r.energy_after.has_value());
}

TEST_CASE("e5b margins come from e1 validation energies") {
  const auto m = e1_margins(small_e1().checkpoint.params, small_data(), 1.0);
  const Vector e_id = energy_score(forward(small_e1().checkpoint.params, small_data().id_val.x).logits);
  std::vector<double> v(e_id.data(), e_id.data() + e_id.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double expect = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  CHECK(m.m_in == expect);
  auto c = small_config(Method::e5b);
  c.optim.epochs = 2;
  c.margins_override = MarginPair{-1.0, -2.0};
  const RunRecord r = train_e5b(c, small_data(), small_e1().checkpoint);
  CHECK(r.has_flag("margins_inverted"));
  CHECK(r.report.margins->m_in == -1.0);
}

TEST_CASE("e6 logs an alm trajectory and never needs wild labels") {
  CHECK_FALSE(small_data().wild_train.labeled());
  const RunRecord r = train_e6(small_config(Method::e6), small_data(), small_e1().checkpoint);
  CHECK(touched(r, "wild_train"));
  CHECK(r.report.alm_trajectory.size() == static_cast<std::size_t>(small_config(Method::e6).optim.epochs));
  for (const auto& s : r.report.alm_trajectory) CHECK(s.valid(small_config(Method::e6).alm));
}

TEST_CASE("sweep picks among at most eight candidates") {
  auto c = small_config(Method::e1);
  c.optim.epochs = 2;
  const auto result = run_sweep(c, {{"optim.lr=0.001"}, {"optim.lr=0.003"}}, small_data());
  CHECK(result.candidates.size() == 2);
  CHECK(result.val_balanced_accuracy[result.best] ==
        *std::max_element(result.val_balanced_accuracy.begin(), result.val_balanced_accuracy.end()));
  std::vector<std::vector<std::string>> big(9, {"optim.lr=0.001"});
  CHECK_THROWS(run_sweep(c, big, small_data()));
}

TEST_CASE("embedding comparison of a checkpoint with itself is symmetric") {
  const auto& p = small_e1().checkpoint.params;
  const auto cmp = compare_embeddings("a", p, ScoreKind::msp, "b", p, ScoreKind::msp, small_data(), 5, 1.0);
  CHECK(cmp.a.knn_w1 == cmp.b.knn_w1);
  CHECK(cmp.a.knn_id == cmp.b.knn_id);
  CHECK(cmp.a.knn_roc.auroc == cmp.b.knn_roc.auroc);
  CHECK(cmp.w1_difference() == 0.0);
}

}
