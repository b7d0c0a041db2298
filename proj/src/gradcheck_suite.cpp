#include "oodlab/gradcheck_suite.hpp"

#include "oodlab/alm.hpp"
#include "oodlab/model.hpp"
#include "oodlab/objectives.hpp"

#include <random>

namespace oodlab {

namespace {

constexpr double kStep = 1e-5;
constexpr double kMinKink = 1e-3;

struct Fixture {
  Matrix x_id;
  Matrix x_ood;
  Matrix y_id;
  Matrix y_id_plus;  // C+1 wide, OOD rows appended
  Matrix y_bin;
};

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

ForwardVars forward_leaves(std::span<const Var> leaves, const Matrix& x) {
  ModelVars vars;
  vars.leaves.assign(leaves.begin(), leaves.end());
  return forward(vars, x);
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, int points) {
  constexpr Eigen::Index C = 3;
  const std::vector<Eigen::Index> dims{4, 6, 5, 4};
  std::mt19937_64 rng(seed);

  Fixture f;
  f.x_id = gaussian(6, dims.front(), rng);
  f.x_ood = gaussian(5, dims.front(), rng) * 2.0;
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  f.y_id = one_hot(labels, C);
  f.y_id_plus = one_hot(labels, C + 1);
  f.y_bin = f.y_id;

  AlmConfig alm;
  AlmState state{0.7, 0.3, 1.5, 2.0, 0.0, 0.0};
  alm.tau = 0.9;

  struct Objective {
    std::string name;
    HeadKind head;
    std::function<Var(std::span<const Var>)> loss;
    std::function<void(std::span<const Var>)> prepare;
  };
  const double T = 1.3;
  std::vector<Objective> objectives;
  auto ce = [&](std::span<const Var> v) {
    return cross_entropy(forward_leaves(v, f.x_id).logits, f.y_id);
  };
  objectives.push_back({"cross_entropy", HeadKind::softmax_c, ce});
  objectives.push_back({"bce_multi", HeadKind::sigmoid_c, [&](std::span<const Var> v) {
                          return bce_multi(forward_leaves(v, f.x_id).logits, f.y_bin);
                        }});
  objectives.push_back({"bce_ood_class", HeadKind::sigmoid_c_plus_1,
                        [&](std::span<const Var> v) {
                          Matrix x(f.x_id.rows() + f.x_ood.rows(), f.x_id.cols());
                          x << f.x_id, f.x_ood;
                          Matrix y = Matrix::Zero(x.rows(), C + 1);
                          y.topRows(f.x_id.rows()) = f.y_id_plus;
                          y.bottomRows(f.x_ood.rows()).col(C).setOnes();
                          return bce_multi(forward_leaves(v, x).logits, y);
                        }});
  objectives.push_back({"oe_uniform", HeadKind::softmax_c, [&](std::span<const Var> v) {
                          return oe_uniform_loss(forward_leaves(v, f.x_ood).logits);
                        }});
  objectives.push_back({"combined_oe", HeadKind::softmax_c, [&](std::span<const Var> v) {
                          return combined_oe_objective(ce(v), oe_uniform_loss(forward_leaves(v, f.x_ood).logits),
                                                       0.5);
                        }});
  objectives.push_back({"free_energy", HeadKind::softmax_c, [&](std::span<const Var> v) {
                          return mean(free_energy(forward_leaves(v, f.x_id).logits, T));
                        }});
  MarginPair margins;
  // Margins sit below every ID energy and above every OOD energy at the
  // unperturbed point so each sample is strictly inside the active region.
  auto set_margins = [&](std::span<const Var> v) {
    const Vector e_id = free_energy(forward_leaves(v, f.x_id).logits, T).value();
    const Vector e_ood = free_energy(forward_leaves(v, f.x_ood).logits, T).value();
    margins = {e_id.minCoeff() - 0.5, e_ood.maxCoeff() + 0.5};
  };
  auto hinge = [&](std::span<const Var> v) {
    return energy_hinge_loss(free_energy(forward_leaves(v, f.x_id).logits, T),
                             free_energy(forward_leaves(v, f.x_ood).logits, T), margins);
  };
  objectives.push_back({"energy_hinge", HeadKind::softmax_c, hinge, set_margins});
  objectives.push_back({"combined_energy", HeadKind::softmax_c, [&](std::span<const Var> v) {
                          return combined_energy_objective(ce(v), hinge(v), 0.1);
                        },
                        set_margins});
  objectives.push_back({"alm_objective", HeadKind::softmax_c, [&](std::span<const Var> v) {
                          const Var id_logits = forward_leaves(v, f.x_id).logits;
                          const Var wild = ood_detector_loss(
                              free_energy(forward_leaves(v, f.x_ood).logits, T), Side::out, -1.0);
                          const Var fa = ood_detector_loss(free_energy(id_logits, T), Side::in, -1.0);
                          return alm_objective(wild, fa, cross_entropy(id_logits, f.y_id), state, alm);
                        }});

  std::vector<GradCheckEntry> out;
  for (std::size_t oi = 0; oi < objectives.size(); ++oi) {
    const Objective& obj = objectives[oi];
    GradCheckEntry entry;
    entry.objective = obj.name;
    std::uint64_t draw = seed * 1000 + oi * 100;
    while (entry.points < points) {
      const ModelParams p = init_params(dims, C, obj.head, ++draw);
      std::vector<Matrix> arrays;
      for (const Matrix* a : parameter_arrays(p)) arrays.push_back(*a);
      // Glorot draws put biases at zero; perturb them so every leaf is exercised.
      for (std::size_t i = 1; i < arrays.size(); i += 2) arrays[i] = gaussian(1, arrays[i].cols(), rng) * 0.1;
      if (obj.prepare) {
        Graph g;
        std::vector<Var> leaves;
        for (const auto& a : arrays) leaves.push_back(g.constant(a));
        obj.prepare(leaves);
      }
      const LossBuilder fn = [&](Graph&, std::span<const Var> leaves) { return obj.loss(leaves); };
      const GradCheckResult r = finite_difference_check(fn, arrays, kStep);
      if (r.kink_distance < kMinKink) {
        ++entry.rejected;
        continue;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, r.max_rel_error);
      ++entry.points;
    }
    out.push_back(entry);
  }
  return out;
}

}  // namespace oodlab
