#include "oodlab/data.hpp"
#include "oodlab/metrics.hpp"

#include <doctest.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace oodlab;

namespace {

std::set<long long> id_set(const FeatureSet& s) { return {s.ids.begin(), s.ids.end()}; }

FeatureSet one_class(std::size_t n) {
  FeatureSet s;
  s.x = Matrix::Zero(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    s.ids.push_back(static_cast<long long>(i));
    s.labels.push_back(0);
    s.x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
  }
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation is deterministic") {
  GenConfig c;
  c.total_id = 2000;
  c.aux_count = 300;
  const auto a = generate(c);
  const auto b = generate(c);
  CHECK(a.id_train.x == b.id_train.x);
  CHECK(a.id_train.ids == b.id_train.ids);
  CHECK(a.aux_ood_train.x == b.aux_ood_train.x);
  CHECK(a.wild_train.x == b.wild_train.x);
  for (const auto& name : test_ood_names()) CHECK(a.test_ood.at(name).x == b.test_ood.at(name).x);
  c.seed += 1;
  CHECK_FALSE(generate(c).id_train.x == a.id_train.x);
}

TEST_CASE("class proportions follow the config") {
  GenConfig c;
  const auto d = generate(c);
  const auto counts = c.class_counts();
  std::vector<int> seen(static_cast<std::size_t>(c.num_classes), 0);
  for (const auto* s : {&d.id_train, &d.id_wild_pool, &d.id_val, &d.id_test})
    for (int y : s->labels) ++seen[static_cast<std::size_t>(y)];
  for (std::size_t k = 0; k < seen.size(); ++k) {
    CHECK(seen[k] == counts[k]);
    CHECK(std::abs(seen[k] - c.class_proportions[k] * c.total_id) <= 1.0);
  }
}

TEST_CASE("splits follow the reference layout") {
  GenConfig c;
  const auto d = generate(c);
  const double n = c.total_id;
  CHECK(d.id_train.size() / n == doctest::Approx(0.544).epsilon(0.01));
  CHECK(d.id_wild_pool.size() / n == doctest::Approx(0.096).epsilon(0.02));
  CHECK(d.id_val.size() / n == doctest::Approx(0.16).epsilon(0.01));
  CHECK(d.id_test.size() / n == doctest::Approx(0.20).epsilon(0.01));
}

TEST_CASE("identities are disjoint across splits and families") {
  GenConfig c;
  c.total_id = 3000;
  const auto d = generate(c);
  std::set<long long> all;
  std::size_t total = 0;
  for (const auto* s : {&d.id_train, &d.id_wild_pool, &d.id_val, &d.id_test, &d.aux_ood_train, &d.aux_ood_val}) {
    total += s->size();
    for (long long id : s->ids) all.insert(id);
  }
  for (const auto& [name, s] : d.test_ood) {
    total += s.size();
    for (long long id : s.ids) all.insert(id);
  }
  CHECK(all.size() == total);
}

TEST_CASE("wild mixture is unlabeled with the configured ratio") {
  GenConfig c;
  const auto d = generate(c);
  CHECK_FALSE(d.wild_train.labeled());
  CHECK(std::abs(d.wild_composition.id_fraction() - c.wild_ratio) <= 0.02);
  const auto pool = id_set(d.id_wild_pool);
  const auto aux = id_set(d.aux_ood_train);
  long n_id = 0;
  for (long long id : d.wild_train.ids) {
    const bool in_pool = pool.count(id) > 0;
    CHECK((in_pool || aux.count(id) > 0));
    n_id += in_pool;
  }
  CHECK(n_id == d.wild_composition.n_id);
}

TEST_CASE("a linear discriminant separates the default benchmark") {
  const auto d = generate(GenConfig{});
  const int C = d.num_classes;
  Matrix means = Matrix::Zero(C, d.dim);
  std::vector<int> n(static_cast<std::size_t>(C), 0);
  for (std::size_t i = 0; i < d.id_train.size(); ++i) {
    means.row(d.id_train.labels[i]) += d.id_train.x.row(static_cast<Eigen::Index>(i));
    ++n[static_cast<std::size_t>(d.id_train.labels[i])];
  }
  for (int k = 0; k < C; ++k) means.row(k) /= n[static_cast<std::size_t>(k)];
  Matrix cov = Matrix::Zero(d.dim, d.dim);
  for (std::size_t i = 0; i < d.id_train.size(); ++i) {
    const RowVector r = d.id_train.x.row(static_cast<Eigen::Index>(i)) - means.row(d.id_train.labels[i]);
    cov += r.transpose() * r;
  }
  cov /= static_cast<double>(d.id_train.size() - static_cast<std::size_t>(C));
  const Eigen::LLT<Matrix> llt(cov);
  const Matrix w = llt.solve(means.transpose());  // dim x C
  std::vector<int> pred;
  for (Eigen::Index i = 0; i < d.id_test.x.rows(); ++i) {
    Eigen::Index best = 0;
    RowVector s = d.id_test.x.row(i) * w;
    for (int k = 0; k < C; ++k) s(k) -= 0.5 * means.row(k).dot(w.col(k));
    s.maxCoeff(&best);
    pred.push_back(static_cast<int>(best));
  }
  CHECK(balanced_accuracy(pred, d.id_test.labels) > 0.90);
}

TEST_CASE("stratified split counts and order independence") {
  const double f[] = {0.64, 0.16, 0.20};
  const auto parts = stratified_split(one_class(100), f, 7);
  REQUIRE(parts.size() == 3);
  CHECK(parts[0].size() == 64);
  CHECK(parts[1].size() == 16);
  CHECK(parts[2].size() == 20);

  GenConfig c;
  c.total_id = 1500;
  const auto d = generate(c);
  std::vector<std::size_t> perm(d.id_test.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto shuffled = d.id_test.subset(perm);
  const double g[] = {0.5, 0.5};
  const auto a = stratified_split(d.id_test, g, 11);
  const auto b = stratified_split(shuffled, g, 11);
  CHECK(id_set(a[0]) == id_set(b[0]));
  CHECK(id_set(a[1]) == id_set(b[1]));
}

TEST_CASE("inverse frequency sampler") {
  std::vector<int> labels(1000, 0);
  std::fill(labels.begin() + 900, labels.end(), 1);
  InverseFrequencySampler s(labels, 5);
  int minority = 0;
  for (std::size_t i : s.draw(10000)) minority += labels[i] == 1;
  CHECK(minority >= 4800);
  CHECK(minority <= 5200);

  std::vector<int> single(10, 0);
  InverseFrequencySampler u(single, 6);
  std::vector<int> hits(10, 0);
  for (std::size_t i : u.draw(20000)) ++hits[i];
  for (int h : hits) CHECK(std::abs(h - 2000) < 200);

  InverseFrequencySampler again(labels, 5);
  InverseFrequencySampler again2(labels, 5);
  CHECK(again.draw(100) == again2.draw(100));
}

TEST_CASE("cycle shorter pairing") {
  std::vector<std::size_t> a(10), b(3);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = i;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = i;
  const auto pairs = cycle_shorter(a, b, 1);
  REQUIRE(pairs.size() == 10);
  const std::size_t expect[] = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  for (std::size_t i = 0; i < 10; ++i) CHECK(pairs[i].ood.front() == expect[i]);

  std::vector<std::size_t> c(8), e(4);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = i;
  std::vector<int> uses(4, 0);
  for (const auto& p : cycle_shorter(c, e, 2))
    for (std::size_t j : p.ood) ++uses[j];
  for (int u : uses) CHECK(u == 2);

  const auto same = cycle_shorter(e, e, 1);
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i].id == same[i].ood);
}

TEST_CASE("csv round trip and fixtures") {
  GenConfig c;
  c.total_id = 500;
  c.aux_count = 50;
  const auto d = generate(c);
  const auto path = temp_file("oodlab_test_rt.csv");
  write_csv(d.id_val, path);
  const auto back = ingest_csv(path, {true, d.dim});
  CHECK(back.x == d.id_val.x);
  CHECK(back.ids == d.id_val.ids);
  CHECK(back.labels == d.id_val.labels);

  write_csv(d.aux_ood_val, path);
  CHECK(ingest_csv(path, {false, d.dim}).x == d.aux_ood_val.x);
  CHECK_THROWS(ingest_csv(path, {true, d.dim}));

  {
    std::ofstream f(path);
    f << "sample_id,label,f0,f1\n1,0,0.5,-1.25\n2,1,3,4e-3\n7,0,1e2,0\n";
  }
  const auto fx = ingest_csv(path, {true, 2});
  REQUIRE(fx.size() == 3);
  CHECK(fx.ids == std::vector<long long>{1, 2, 7});
  CHECK(fx.labels == std::vector<int>{0, 1, 0});
  CHECK(fx.x(0, 1) == -1.25);
  CHECK(fx.x(1, 1) == 0.004);
  CHECK(fx.x(2, 0) == 100.0);
  std::filesystem::remove(path);
}

TEST_CASE("invalid generator settings are rejected") {
  GenConfig c;
  c.wild_ratio = 1.0;
  CHECK_THROWS(generate(c));
  c = GenConfig{};
  c.near_class_b = c.near_class_a;
  CHECK_THROWS(generate(c));
  c = GenConfig{};
  c.confusable_pull = 1.0;
  CHECK_THROWS(generate(c));
}

}
