#include "oodlab/objectives.hpp"
#include "oodlab/scoring.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace oodlab;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double value_of(const std::function<Var(Graph&)>& f) {
  Graph g;
  return f(g).scalar();
}

double log_softmax(const Matrix& z, Eigen::Index i, Eigen::Index c) {
  const double mx = z.row(i).maxCoeff();
  return z(i, c) - mx - std::log((z.row(i).array() - mx).exp().sum());
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("cross entropy") {
  const Matrix y = one_hot(std::vector<int>{3}, 5);
  CHECK(value_of([&](Graph& g) { return cross_entropy(g.constant(Matrix::Zero(1, 5)), y); }) ==
        doctest::Approx(std::log(5.0)));
  Matrix confident = Matrix::Constant(1, 5, -10.0);
  confident(0, 0) = 10.0;
  CHECK(value_of([&](Graph& g) { return cross_entropy(g.constant(confident), one_hot(std::vector<int>{0}, 5)); }) < 1e-4);

  std::mt19937_64 rng(1);
  const Matrix z = random_matrix(4, 3, rng, 2.0);
  const std::vector<int> labels{2, 0, 1, 1};
  double expect = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) expect -= log_softmax(z, i, labels[static_cast<std::size_t>(i)]);
  expect /= 4.0;
  CHECK(value_of([&](Graph& g) { return cross_entropy(g.constant(z), one_hot(labels, 3)); }) ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(cross_entropy_value(z, labels) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("binary cross entropy") {
  CHECK(value_of([](Graph& g) { return bce_multi(g.scalar(0.0), Matrix::Ones(1, 1)); }) ==
        doctest::Approx(std::log(2.0)));
  CHECK(value_of([](Graph& g) { return bce_multi(g.scalar(20.0), Matrix::Ones(1, 1)); }) < 1e-8);
  Matrix z(2, 2);
  z << 0.5, -1.0, 2.0, 0.0;
  Matrix y(2, 2);
  y << 1, 0, 0, 1;
  double expect = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
    expect -= y.data()[i] * std::log(p) + (1 - y.data()[i]) * std::log(1 - p);
  }
  CHECK(value_of([&](Graph& g) { return bce_multi(g.constant(z), y); }) == doctest::Approx(expect / 4.0).epsilon(1e-12));
  CHECK(std::isfinite(value_of([](Graph& g) { return bce_multi(g.scalar(-800.0), Matrix::Ones(1, 1)); })));
}

TEST_CASE("uniform outlier loss") {
  CHECK(value_of([](Graph& g) { return oe_uniform_loss(g.constant(Matrix::Zero(1, 5))); }) ==
        doctest::Approx(std::log(5.0)));
  Matrix z = Matrix::Zero(1, 5);
  z(0, 0) = 10.0;
  const double lse = 10.0 + std::log(1.0 + 4.0 * std::exp(-10.0));
  const double expect = (1.0 / 5.0) * (lse - 10.0) + (4.0 / 5.0) * lse;
  CHECK(value_of([&](Graph& g) { return oe_uniform_loss(g.constant(z)); }) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(8.0003).epsilon(1e-4));

  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const Matrix r = random_matrix(1, 5, rng, 3.0);
    const double v = value_of([&](Graph& g) { return oe_uniform_loss(g.constant(r)); });
    CHECK(v >= std::log(5.0) - 1e-9);
    const Matrix shifted = r.array() + 4.2;
    CHECK(value_of([&](Graph& g) { return oe_uniform_loss(g.constant(shifted)); }) == doctest::Approx(v).epsilon(1e-12));
  }
  const Matrix flat = Matrix::Constant(1, 5, 3.3);
  CHECK(std::abs(value_of([&](Graph& g) { return oe_uniform_loss(g.constant(flat)); }) - std::log(5.0)) <= 1e-9);
}

TEST_CASE("free energy") {
  CHECK(free_energy(Matrix::Zero(1, 5), 1.0)(0) == doctest::Approx(-std::log(5.0)));
  CHECK(free_energy(Matrix::Constant(1, 1, 2.5), 1.0)(0) == doctest::Approx(-2.5));
  Matrix id_like = Matrix::Zero(1, 5);
  id_like(0, 2) = 9.0;
  CHECK(free_energy(id_like, 1.0)(0) < free_energy(Matrix::Zero(1, 5), 1.0)(0) - 5.0);
  CHECK_THROWS(free_energy(Matrix::Zero(1, 5), 0.0));
  Graph g;
  CHECK(free_energy(g.constant(id_like), 2.0).scalar() == doctest::Approx(free_energy(id_like, 2.0)(0)));
}

TEST_CASE("energy shifts with logits while softmax does not") {
  std::mt19937_64 rng(4);
  const Matrix z = random_matrix(6, 5, rng, 2.0);
  const Matrix shifted = z.array() + 3.0;
  CHECK(((free_energy(shifted, 1.0) - free_energy(z, 1.0)).array() + 3.0).abs().maxCoeff() <= 1e-12);
  CHECK((msp_score(shifted) - msp_score(z)).cwiseAbs().maxCoeff() <= 1e-12);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double fmax = z.row(i).maxCoeff();
    const double residual = std::log((z.row(i).array() - fmax).exp().sum());
    CHECK(free_energy(z, 1.0)(i) == doctest::Approx(-(fmax + residual)));
  }
}

TEST_CASE("energy hinge") {
  const MarginPair m{-5.0, -1.0};
  auto hinge = [&](std::vector<double> id, std::vector<double> ood) {
    Graph g;
    const Var a = g.constant(Eigen::Map<Matrix>(id.data(), static_cast<Eigen::Index>(id.size()), 1));
    const Var b = g.constant(Eigen::Map<Matrix>(ood.data(), static_cast<Eigen::Index>(ood.size()), 1));
    return energy_hinge_loss(a, b, m).scalar();
  };
  CHECK(hinge({-7, -5}, {-1, 3}) == 0.0);
  CHECK(hinge({-3}, {0}) == doctest::Approx(4.0));
  CHECK(hinge({-4, -6, -2}, {-3, 0}) == doctest::Approx((1.0 + 0.0 + 9.0) / 3.0 + (4.0 + 0.0) / 2.0));
  CHECK(hinge({-5.0 + 1e-9}, {0}) > 0.0);
  CHECK_THROWS(hinge({}, {0}));
  Graph g;
  CHECK_THROWS(energy_hinge_loss(g.scalar(0.0), g.scalar(0.0), MarginPair{NAN, 0.0}));
}

TEST_CASE("margins from medians") {
  const std::vector<double> id{3, 1, 2};
  const std::vector<double> ood{7, 5, 6};
  const auto m = derive_margins(id, ood);
  CHECK(m.m_in == 2.0);
  CHECK(m.m_out == 6.0);
  CHECK(derive_margins(std::vector<double>{4, 1, 3, 2}, ood).m_in == 2.5);
  CHECK_THROWS(derive_margins(std::vector<double>{}, ood));
  CHECK(MarginPair{3.0, 1.0}.inverted());

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(101), b(64);
  for (double& v : a) v = n(rng);
  for (double& v : b) v = n(rng);
  const auto base = derive_margins(a, b);
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  CHECK(base.m_in == sa[50]);
  CHECK(base.m_out == 0.5 * (sb[31] + sb[32]));
  for (int t = 0; t < 10; ++t) {
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    const auto p = derive_margins(a, b);
    CHECK(p.m_in == base.m_in);
    CHECK(p.m_out == base.m_out);
  }
}

TEST_CASE("combined objectives") {
  Graph g;
  CHECK(combined_oe_objective(g.scalar(1.0), g.scalar(2.0), 0.5).scalar() == 2.0);
  CHECK(combined_oe_objective(g.scalar(1.5), g.scalar(9.0), 0.0).scalar() == 1.5);
  CHECK(combined_energy_objective(g.scalar(1.0), g.scalar(2.0), 0.1).scalar() == doctest::Approx(1.2));
  CHECK_THROWS(combined_oe_objective(g.scalar(1.0), g.scalar(2.0), -0.1));
  CHECK_THROWS(combined_energy_objective(g.scalar(1.0), g.scalar(2.0), -0.1));

  std::mt19937_64 rng(6);
  const Matrix z0 = random_matrix(4, 3, rng);
  const Matrix y = one_hot(std::vector<int>{0, 1, 2, 1}, 3);
  auto grad = [&](int which) {
    Graph h;
    const Var z = h.parameter(z0);
    const Var ce = cross_entropy(z, y);
    const Var oe = oe_uniform_loss(z);
    h.backward(which == 0 ? ce : which == 1 ? oe : combined_oe_objective(ce, oe, 0.5));
    return Matrix(z.grad());
  };
  CHECK((grad(2) - (grad(0) + 0.5 * grad(1))).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("one hot") {
  const Matrix y = one_hot(std::vector<int>{1, 0}, 3);
  CHECK(y(0, 1) == 1.0);
  CHECK(y.sum() == 2.0);
  CHECK_THROWS(one_hot(std::vector<int>{3}, 3));
}

}
