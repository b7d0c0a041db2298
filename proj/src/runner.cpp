#include "oodlab/runner.hpp"

#include "oodlab/metrics.hpp"
#include "oodlab/objectives.hpp"
#include "oodlab/optim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace oodlab {

bool RunRecord::has_flag(std::string_view f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

ScoreKind primary_score(Method m) {
  switch (m) {
    case Method::e1:
    case Method::e4: return ScoreKind::msp;
    case Method::e2: return ScoreKind::max_sigmoid;
    case Method::e3: return ScoreKind::ood_class;
    case Method::e5a:
    case Method::e5b:
    case Method::e6: return ScoreKind::energy;
  }
  return ScoreKind::msp;
}

HeadKind head_for(Method m) {
  switch (m) {
    case Method::e2: return HeadKind::sigmoid_c;
    case Method::e3: return HeadKind::sigmoid_c_plus_1;
    default: return HeadKind::softmax_c;
  }
}

Vector score_batch(const ModelParams& params, ScoreKind kind, const Matrix& x, double temperature) {
  const Matrix logits = forward(params, x).logits;
  switch (kind) {
    case ScoreKind::msp: return msp_score(logits);
    case ScoreKind::max_sigmoid: return max_sigmoid_score(logits.leftCols(params.num_classes));
    case ScoreKind::ood_class: return ood_class_score(logits, params.num_classes);
    case ScoreKind::energy: return energy_score(logits, temperature);
    case ScoreKind::knn_cosine: break;
  }
  throw std::invalid_argument("score_batch: knn scores need an embedding bank");
}

std::vector<int> predict(const ModelParams& params, const Matrix& x) {
  const Matrix logits = forward(params, x).logits;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).leftCols(params.num_classes).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

namespace {

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

Matrix gather(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::vector<BatchPair> chunk(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<BatchPair> out;
  for (std::size_t s = 0; s < order.size(); s += batch) {
    BatchPair b;
    b.id.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch, order.size())));
    out.push_back(std::move(b));
  }
  return out;
}

std::uint64_t salted(const ExperimentConfig& c, std::uint64_t salt) {
  std::uint64_t z = c.seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<Eigen::Index> model_dims(const ExperimentConfig& c, const BenchmarkData& data) {
  std::vector<Eigen::Index> dims{data.dim};
  dims.insert(dims.end(), c.model.hidden.begin(), c.model.hidden.end());
  dims.push_back(c.model.embedding);
  return dims;
}

double bacc_of(const ModelParams& p, const FeatureSet& s) {
  return balanced_accuracy(predict(p, s.x), s.labels);
}

/// Argmax over every head output (C+1 for the OOD-class head).
double bacc_all_outputs(const ModelParams& p, const FeatureSet& s) {
  const Matrix logits = forward(p, s.x).logits;
  std::vector<int> pred(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return balanced_accuracy(pred, s.labels);
}

double bce_value(const Matrix& logits, const Matrix& labels) {
  Graph g;
  return bce_multi(g.constant(logits), labels).scalar();
}

double oe_value(const Matrix& logits) {
  Graph g;
  return oe_uniform_loss(g.constant(logits)).scalar();
}

/// Records which splits the training procedure reads.
class TrainingView {
 public:
  TrainingView(const BenchmarkData& data, RunRecord& rec) : data_(data), rec_(rec) {}

  const FeatureSet& id_train() { return log("id_train", data_.id_train); }
  const FeatureSet& id_val() { return log("id_val", data_.id_val); }
  const FeatureSet& aux_ood_train() { return log("aux_ood_train", data_.aux_ood_train); }
  const FeatureSet& aux_ood_val() { return log("aux_ood_val", data_.aux_ood_val); }
  const FeatureSet& wild_train() { return log("wild_train", data_.wild_train); }

 private:
  const FeatureSet& log(const char* name, const FeatureSet& s) {
    auto& v = rec_.training_splits;
    if (std::find(v.begin(), v.end(), name) == v.end()) v.emplace_back(name);
    return s;
  }
  const BenchmarkData& data_;
  RunRecord& rec_;
};

struct ValResult {
  double loss = 0.0;
  double balanced_accuracy = 0.0;
};

struct LoopHooks {
  std::function<std::vector<BatchPair>(int epoch)> batches;
  std::function<Var(const ModelVars&, const BatchPair&, int epoch)> loss;
  std::function<ValResult(const ModelParams&)> validate;
  std::function<double(const ModelParams&)> train_bacc;
  std::function<void(int epoch, const ModelParams&, EpochStats&)> after_epoch;
  // Fine-tuning skips its classification-only warmup epochs when saving
  // checkpoints.
  int first_checkpoint_epoch = 1;
  // Fine-tuning warms the learning rate up over the classification-only
  // epochs instead of the full-training warmup.
  std::optional<long> warmup_steps;
};

long warmup_steps(const OptimConfig& o, std::size_t n_train) {
  const double w = o.warmup_reference_steps * static_cast<double>(n_train) / o.warmup_reference_size;
  return std::max(1L, std::lround(w));
}

RunRecord start_record(const ExperimentConfig& config, Method method) {
  config.validate();
  RunRecord rec;
  rec.method = method;
  rec.config_hash = config.hash();
  return rec;
}

void train_loop(RunRecord& rec, ModelParams params, double base_lr, std::size_t n_train,
                const ExperimentConfig& config, LoopHooks& hooks) {
  rec.init_hash = param_hash(params);
  const NoamSchedule schedule{base_lr, hooks.warmup_steps.value_or(warmup_steps(config.optim, n_train))};
  auto arrays = parameter_arrays(params);
  AdamW optimizer(arrays, {config.optim.adam_beta1, config.optim.adam_beta2, config.optim.adam_eps,
                           config.optim.weight_decay});

  struct Best {
    bool set = false;
    CheckpointMeta meta;
    ModelParams params;
  };
  std::array<Best, 3> best;
  auto consider = [&](Best& b, CheckpointCriterion crit, double metric, bool higher_is_better,
                      const EpochStats& st) {
    if (!std::isfinite(metric)) return;
    const bool better = !b.set || (higher_is_better ? metric > b.meta.metric : metric < b.meta.metric);
    if (!better) return;
    b.set = true;
    b.meta = {crit, st.epoch, metric, st.val_balanced_accuracy};
    b.params = params;
  };

  long step = 0;
  for (int epoch = 1; epoch <= config.optim.epochs; ++epoch) {
    const auto batches = hooks.batches(epoch);
    double loss_sum = 0.0;
    bool diverged = false;
    for (const auto& batch : batches) {
      Graph g;
      const ModelVars vars = attach(g, params);
      const Var loss = hooks.loss(vars, batch, epoch);
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        diverged = true;
        break;
      }
      g.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(vars.leaves.size());
      for (const Var& v : vars.leaves) grads.push_back(v.grad());
      ++step;
      optimizer.step(arrays, grads, schedule.lr(step));
      loss_sum += value;
    }
    if (diverged) {
      rec.status = "diverged";
      rec.flags.emplace_back("diverged");
      break;
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = schedule.lr(std::max(step, 1L));
    st.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches.size(), 1));
    const ValResult val = hooks.validate(params);
    st.val_loss = val.loss;
    st.val_balanced_accuracy = val.balanced_accuracy;
    st.train_balanced_accuracy = hooks.train_bacc(params);
    if (hooks.after_epoch) hooks.after_epoch(epoch, params, st);

    if (epoch >= hooks.first_checkpoint_epoch) {
      consider(best[0], CheckpointCriterion::best_train_loss, st.train_loss, false, st);
      consider(best[1], CheckpointCriterion::best_val_loss, st.val_loss, false, st);
      consider(best[2], CheckpointCriterion::best_val_balanced_accuracy, st.val_balanced_accuracy, true, st);
    }
    rec.epochs.push_back(st);
  }

  // Best of the three saved checkpoints by validation balanced accuracy,
  // ties to the earliest epoch.
  const Best* chosen = nullptr;
  for (const Best& b : best) {
    if (!b.set) continue;
    rec.checkpoints.push_back(b.meta);
    if (!chosen || b.meta.val_balanced_accuracy > chosen->meta.val_balanced_accuracy ||
        (b.meta.val_balanced_accuracy == chosen->meta.val_balanced_accuracy &&
         b.meta.epoch < chosen->meta.epoch))
      chosen = &b;
  }
  if (chosen) {
    rec.selected = chosen->meta;
    rec.checkpoint = {chosen->params, chosen->meta.criterion, chosen->meta.epoch, chosen->meta.metric};
  } else {
    rec.selected = {CheckpointCriterion::best_val_balanced_accuracy, 0, 0.0, 0.0};
    rec.checkpoint = {params, CheckpointCriterion::best_val_balanced_accuracy, 0, 0.0};
  }
}

void finish(RunRecord& rec, const ExperimentConfig& config, const BenchmarkData& data) {
  rec.report = evaluate(rec.checkpoint.params, rec.method, data, config, &rec.scores);
}

/// Inverse-frequency ID order for one epoch, one draw per training sample.
std::function<std::vector<std::size_t>()> id_stream(const FeatureSet& train, std::uint64_t seed) {
  auto sampler = std::make_shared<InverseFrequencySampler>(train.labels, seed);
  const std::size_t n = train.size();
  return [sampler, n]() { return sampler->draw(n); };
}

}  // namespace

MethodReport evaluate(const ModelParams& params, Method method, const BenchmarkData& data,
                      const ExperimentConfig& config, std::vector<ScoreSet>* scores) {
  MethodReport report;
  report.method = std::string(to_string(method));
  const ScoreKind kind = primary_score(method);
  report.score = std::string(to_string(kind));
  report.seed = config.seed;
  report.config_hash = config.hash();
  report.balanced_accuracy = bacc_of(params, data.id_test);

  const double t = config.weights.temperature;
  const Vector id_scores = score_batch(params, kind, data.id_test.x, t);
  if (scores) {
    scores->clear();
    scores->push_back({report.method, "id_test", kind, data.id_test.ids, id_scores});
  }
  for (const auto& name : test_ood_names()) {
    const FeatureSet& set = data.test_ood.at(name);
    const Vector ood_scores = score_batch(params, kind, set.x, t);
    report.ood[name] = {auroc(as_span(id_scores), as_span(ood_scores)),
                        fpr_at_95_tpr(as_span(id_scores), as_span(ood_scores))};
    if (scores) scores->push_back({report.method, name, kind, set.ids, ood_scores});
  }
  return report;
}

EnergyStats energy_stats(const ModelParams& params, const BenchmarkData& data,
                         const MarginPair& margins, double temperature) {
  const Vector e_id = energy_score(forward(params, data.id_val.x).logits, temperature);
  const Vector e_ood = energy_score(forward(params, data.aux_ood_val.x).logits, temperature);
  EnergyStats s;
  s.mean_id = e_id.mean();
  s.mean_ood = e_ood.mean();
  s.median_id = median(as_span(e_id));
  const auto id_bad = (e_id.array() > margins.m_in).count();
  const auto ood_bad = (e_ood.array() < margins.m_out).count();
  s.violating_fraction = static_cast<double>(id_bad + ood_bad) / static_cast<double>(e_id.size() + e_ood.size());
  return s;
}

MarginPair e1_margins(const ModelParams& e1, const BenchmarkData& data, double temperature) {
  const Vector e_id = energy_score(forward(e1, data.id_val.x).logits, temperature);
  const Vector e_ood = energy_score(forward(e1, data.aux_ood_val.x).logits, temperature);
  return derive_margins(as_span(e_id), as_span(e_ood));
}

// ---------------------------------------------------------------------------
// E1 / E2: ID-only training with softmax CE or per-class BCE.

namespace {

RunRecord train_id_only(const ExperimentConfig& config, const BenchmarkData& data, Method method) {
  RunRecord rec = start_record(config, method);
  TrainingView view(data, rec);
  const FeatureSet& train = view.id_train();
  const FeatureSet& val = view.id_val();
  const Eigen::Index C = data.num_classes;
  const bool bce = method == Method::e2;

  const ModelParams init = init_params(model_dims(config, data), C, head_for(method), config.seed);
  const Matrix y_train = one_hot(train.labels, C);
  const Matrix y_val = one_hot(val.labels, C);
  auto draw = id_stream(train, salted(config, 11));
  const auto batch = static_cast<std::size_t>(config.optim.batch_size);

  LoopHooks hooks;
  hooks.batches = [&](int) { return chunk(draw(), batch); };
  hooks.loss = [&](const ModelVars& vars, const BatchPair& b, int) {
    const auto out = forward(vars, gather(train.x, b.id));
    const Matrix y = gather(y_train, b.id);
    return bce ? bce_multi(out.logits, y) : cross_entropy(out.logits, y);
  };
  hooks.validate = [&](const ModelParams& p) {
    const Matrix logits = forward(p, val.x).logits;
    return ValResult{bce ? bce_value(logits, y_val) : cross_entropy_value(logits, val.labels),
                     bacc_of(p, val)};
  };
  hooks.train_bacc = [&](const ModelParams& p) { return bacc_of(p, train); };

  train_loop(rec, init, config.optim.lr, train.size(), config, hooks);
  finish(rec, config, data);
  return rec;
}

}  // namespace

RunRecord train_e1(const ExperimentConfig& config, const BenchmarkData& data) {
  return train_id_only(config, data, Method::e1);
}

RunRecord train_e2(const ExperimentConfig& config, const BenchmarkData& data) {
  return train_id_only(config, data, Method::e2);
}

// ---------------------------------------------------------------------------
// E3: explicit OOD class trained with BCE from a fresh init.

RunRecord train_e3(const ExperimentConfig& config, const BenchmarkData& data) {
  RunRecord rec = start_record(config, Method::e3);
  TrainingView view(data, rec);
  const Eigen::Index C = data.num_classes;
  const int ood_label = static_cast<int>(C);

  auto with_ood_label = [&](const FeatureSet& ood) {
    FeatureSet s = ood;
    s.labels.assign(s.size(), ood_label);
    return s;
  };
  const FeatureSet train = concat(view.id_train(), with_ood_label(view.aux_ood_train()));
  const FeatureSet val = concat(view.id_val(), with_ood_label(view.aux_ood_val()));
  const Matrix y_train = one_hot(train.labels, C + 1);
  const Matrix y_val = one_hot(val.labels, C + 1);

  const ModelParams init = init_params(model_dims(config, data), C, HeadKind::sigmoid_c_plus_1, config.seed);
  auto draw = id_stream(train, salted(config, 13));
  const auto batch = static_cast<std::size_t>(config.optim.batch_size);

  LoopHooks hooks;
  hooks.batches = [&](int) { return chunk(draw(), batch); };
  hooks.loss = [&](const ModelVars& vars, const BatchPair& b, int) {
    const auto out = forward(vars, gather(train.x, b.id));
    return bce_multi(out.logits, gather(y_train, b.id));
  };
  hooks.validate = [&](const ModelParams& p) {
    return ValResult{bce_value(forward(p, val.x).logits, y_val), bacc_all_outputs(p, val)};
  };
  hooks.train_bacc = [&](const ModelParams& p) { return bacc_all_outputs(p, train); };

  train_loop(rec, init, config.optim.lr, train.size(), config, hooks);
  finish(rec, config, data);
  return rec;
}

// ---------------------------------------------------------------------------
// E4: outlier exposure fine-tuning from E1.

namespace {

void check_e1(const Checkpoint& e1, const BenchmarkData& data) {
  e1.params.validate();
  if (e1.params.head_kind != HeadKind::softmax_c)
    throw std::invalid_argument("E1 checkpoint must have a softmax_c head");
  if (e1.params.input_dim() != data.dim || e1.params.num_classes != data.num_classes)
    throw std::invalid_argument("E1 checkpoint does not match the benchmark dimensions");
}

double finetune_lr(const ExperimentConfig& c) { return c.optim.lr * c.optim.finetune_lr_factor; }

long finetune_warmup_steps(const ExperimentConfig& c, std::size_t n_train) {
  const auto batch = static_cast<std::size_t>(c.optim.batch_size);
  const auto per_epoch = static_cast<long>((n_train + batch - 1) / batch);
  return std::max(1L, per_epoch * c.optim.warmup_epochs);
}

}  // namespace

RunRecord train_e4(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1) {
  check_e1(e1, data);
  RunRecord rec = start_record(config, Method::e4);
  rec.parent_hash = param_hash(e1.params);
  TrainingView view(data, rec);
  const FeatureSet& train = view.id_train();
  const FeatureSet& val = view.id_val();
  const FeatureSet& ood = view.aux_ood_train();
  const FeatureSet& ood_val = view.aux_ood_val();
  const Eigen::Index C = data.num_classes;
  const double lambda = config.weights.lambda_oe;
  const int warmup = config.optim.warmup_epochs;

  const Matrix y_train = one_hot(train.labels, C);
  auto draw = id_stream(train, salted(config, 17));
  std::mt19937_64 ood_rng(salted(config, 19));
  const auto batch = static_cast<std::size_t>(config.optim.batch_size);

  LoopHooks hooks;
  hooks.batches = [&](int) {
    const auto id_order = draw();
    const auto ood_order = shuffled(ood.size(), ood_rng);
    return cycle_shorter(id_order, ood_order, batch);
  };
  hooks.loss = [&](const ModelVars& vars, const BatchPair& b, int epoch) {
    const Var ce = cross_entropy(forward(vars, gather(train.x, b.id)).logits, gather(y_train, b.id));
    if (epoch <= warmup) return ce;
    const Var oe = oe_uniform_loss(forward(vars, gather(ood.x, b.ood)).logits);
    return combined_oe_objective(ce, oe, lambda);
  };
  hooks.validate = [&](const ModelParams& p) {
    const double ce = cross_entropy_value(forward(p, val.x).logits, val.labels);
    const double oe = oe_value(forward(p, ood_val.x).logits);
    return ValResult{ce + lambda * oe, bacc_of(p, val)};
  };
  hooks.train_bacc = [&](const ModelParams& p) { return bacc_of(p, train); };
  hooks.after_epoch = [&](int, const ModelParams& p, EpochStats&) {
    const double mean_msp = -msp_score(forward(p, val.x).logits).mean();
    if (mean_msp < 1.0 / static_cast<double>(C) + config.detectors.collapse_epsilon &&
        !rec.has_flag("oe_collapse"))
      rec.flags.emplace_back("oe_collapse");
  };

  hooks.first_checkpoint_epoch = std::min(warmup + 1, config.optim.epochs);
  hooks.warmup_steps = finetune_warmup_steps(config, train.size());
  train_loop(rec, e1.params, finetune_lr(config), train.size(), config, hooks);
  finish(rec, config, data);
  return rec;
}

// ---------------------------------------------------------------------------
// E5a: post-hoc energy score on the E1 checkpoint.

RunRecord rescore_e5a(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1) {
  check_e1(e1, data);
  RunRecord rec = start_record(config, Method::e5a);
  const std::uint64_t before = param_hash(e1.params);
  rec.parent_hash = before;
  rec.init_hash = before;
  rec.checkpoint = e1;
  rec.selected = {e1.criterion, e1.epoch, e1.metric, 0.0};
  finish(rec, config, data);
  if (param_hash(rec.checkpoint.params) != before)
    throw std::logic_error("e5a: parameters changed during rescoring");
  return rec;
}

MethodReport run_e5a(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1) {
  return rescore_e5a(config, data, e1).report;
}

// ---------------------------------------------------------------------------
// E5b: energy-margin fine-tuning from E1.

RunRecord train_e5b(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1) {
  check_e1(e1, data);
  RunRecord rec = start_record(config, Method::e5b);
  rec.parent_hash = param_hash(e1.params);
  TrainingView view(data, rec);
  const FeatureSet& train = view.id_train();
  const FeatureSet& val = view.id_val();
  const FeatureSet& ood = view.aux_ood_train();
  const FeatureSet& ood_val = view.aux_ood_val();
  const Eigen::Index C = data.num_classes;
  const double lambda = config.weights.lambda_energy;
  const double T = config.weights.temperature;
  const int warmup = config.optim.warmup_epochs;

  const MarginPair margins = config.margins_override.value_or(e1_margins(e1.params, data, T));
  if (margins.inverted()) {
    std::cerr << "warning: derived margins are inverted (m_in=" << margins.m_in
              << " > m_out=" << margins.m_out << ")\n";
    rec.flags.emplace_back("margins_inverted");
  }
  rec.energy_before = energy_stats(e1.params, data, margins, T);

  const Matrix y_train = one_hot(train.labels, C);
  auto draw = id_stream(train, salted(config, 23));
  std::mt19937_64 ood_rng(salted(config, 29));
  const auto batch = static_cast<std::size_t>(config.optim.batch_size);

  double hinge_sum = 0.0;
  std::size_t hinge_n = 0;
  LoopHooks hooks;
  hooks.batches = [&](int) {
    hinge_sum = 0.0;
    hinge_n = 0;
    const auto id_order = draw();
    const auto ood_order = shuffled(ood.size(), ood_rng);
    return cycle_shorter(id_order, ood_order, batch);
  };
  hooks.loss = [&](const ModelVars& vars, const BatchPair& b, int epoch) {
    const Var id_logits = forward(vars, gather(train.x, b.id)).logits;
    const Var ce = cross_entropy(id_logits, gather(y_train, b.id));
    const Var ood_logits = forward(vars, gather(ood.x, b.ood)).logits;
    const Var hinge = energy_hinge_loss(free_energy(id_logits, T), free_energy(ood_logits, T), margins);
    hinge_sum += hinge.scalar();
    ++hinge_n;
    if (epoch <= warmup) return ce;
    return combined_energy_objective(ce, hinge, lambda);
  };
  hooks.validate = [&](const ModelParams& p) {
    const Matrix id_logits = forward(p, val.x).logits;
    const Matrix ood_logits = forward(p, ood_val.x).logits;
    Graph g;
    const Var hinge = energy_hinge_loss(g.constant(energy_score(id_logits, T)),
                                        g.constant(energy_score(ood_logits, T)), margins);
    return ValResult{cross_entropy_value(id_logits, val.labels) + lambda * hinge.scalar(), bacc_of(p, val)};
  };
  hooks.train_bacc = [&](const ModelParams& p) { return bacc_of(p, train); };

  double best_hinge = std::numeric_limits<double>::infinity();
  int stalled = 0;
  hooks.after_epoch = [&](int epoch, const ModelParams& p, EpochStats& st) {
    const double h = hinge_n ? hinge_sum / static_cast<double>(hinge_n) : 0.0;
    st.hinge_loss = h;
    const EnergyStats es = energy_stats(p, data, margins, T);
    st.val_energy_gap = es.gap();
    st.val_violating_fraction = es.violating_fraction;
    if (epoch <= warmup) return;
    if (h < best_hinge) {
      best_hinge = h;
      stalled = 0;
    } else if (++stalled >= config.detectors.stall_epochs && !rec.has_flag("margin_stall")) {
      rec.flags.emplace_back("margin_stall");
    }
  };

  hooks.first_checkpoint_epoch = std::min(warmup + 1, config.optim.epochs);
  hooks.warmup_steps = finetune_warmup_steps(config, train.size());
  train_loop(rec, e1.params, finetune_lr(config), train.size(), config, hooks);
  finish(rec, config, data);
  rec.report.margins = margins;
  rec.energy_after = energy_stats(rec.checkpoint.params, data, margins, T);
  return rec;
}

// ---------------------------------------------------------------------------
// E6: wild-data constrained training with the augmented Lagrangian.

RunRecord train_e6(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint& e1) {
  check_e1(e1, data);
  RunRecord rec = start_record(config, Method::e6);
  rec.parent_hash = param_hash(e1.params);
  TrainingView view(data, rec);
  const FeatureSet& train = view.id_train();
  const FeatureSet& val = view.id_val();
  const FeatureSet& wild = view.wild_train();
  if (wild.labeled()) throw std::logic_error("e6: wild data must be unlabeled");
  const Eigen::Index C = data.num_classes;
  const double T = config.weights.temperature;
  const int warmup = config.optim.warmup_epochs;

  // Detector threshold and classification bound anchored at the E1 checkpoint.
  const Matrix e1_val_logits = forward(e1.params, val.x).logits;
  const Vector e1_val_energy = energy_score(e1_val_logits, T);
  const double threshold = median(as_span(e1_val_energy));
  AlmConfig alm = config.alm;
  alm.tau = config.tau_override.value_or(config.tau_factor * cross_entropy_value(e1_val_logits, val.labels));
  alm.validate();
  AlmState state = AlmState::initial(alm);

  const Matrix y_train = one_hot(train.labels, C);
  auto draw = id_stream(train, salted(config, 31));
  std::mt19937_64 wild_rng(salted(config, 37));
  const auto batch = static_cast<std::size_t>(config.optim.batch_size);

  auto measure = [&](const ModelParams& p) {
    const Matrix logits = forward(p, val.x).logits;
    const double c1 = ood_detector_loss(energy_score(logits, T), Side::in, threshold) - alm.alpha;
    const double c2 = cross_entropy_value(logits, val.labels) - alm.tau;
    return std::pair{c1, c2};
  };

  LoopHooks hooks;
  hooks.batches = [&](int) {
    const auto id_order = draw();
    const auto wild_order = shuffled(wild.size(), wild_rng);
    return cycle_shorter(id_order, wild_order, batch);
  };
  hooks.loss = [&](const ModelVars& vars, const BatchPair& b, int epoch) {
    const Var id_logits = forward(vars, gather(train.x, b.id)).logits;
    const Var ce = cross_entropy(id_logits, gather(y_train, b.id));
    if (epoch <= warmup) return ce;
    const Var wild_energy = free_energy(forward(vars, gather(wild.x, b.ood)).logits, T);
    const Var wild_loss = ood_detector_loss(wild_energy, Side::out, threshold);
    const Var false_alarm = ood_detector_loss(free_energy(id_logits, T), Side::in, threshold);
    return alm_objective(wild_loss, false_alarm, ce, state, alm);
  };
  hooks.validate = [&](const ModelParams& p) {
    const auto [c1, c2] = measure(p);
    const double ce = c2 + alm.tau;
    return ValResult{ce + alm_penalty(c1, state.lambda1, state.beta1) +
                         alm_penalty(c2, state.lambda2, state.beta2),
                     bacc_of(p, val)};
  };
  hooks.train_bacc = [&](const ModelParams& p) { return bacc_of(p, train); };

  int saturated_epochs = 0;
  std::vector<AlmState> trajectory;
  hooks.after_epoch = [&](int epoch, const ModelParams& p, EpochStats& st) {
    if (epoch > warmup) {
      const auto [c1, c2] = measure(p);
      state = alm_epoch_update(state, c1, c2, alm);
    }
    if (state.beta1 >= alm.beta_max || state.beta2 >= alm.beta_max) ++saturated_epochs;
    st.alm = state;
    trajectory.push_back(state);
  };

  hooks.first_checkpoint_epoch = std::min(warmup + 1, config.optim.epochs);
  hooks.warmup_steps = finetune_warmup_steps(config, train.size());
  train_loop(rec, e1.params, finetune_lr(config), train.size(), config, hooks);
  if (2 * saturated_epochs > static_cast<int>(rec.epochs.size())) rec.flags.emplace_back("beta_saturated");
  finish(rec, config, data);
  rec.report.alm_trajectory = std::move(trajectory);
  return rec;
}

// ---------------------------------------------------------------------------

RunRecord run_method(const ExperimentConfig& config, const BenchmarkData& data, const Checkpoint* e1) {
  if (needs_e1(config.method) && !e1)
    throw std::invalid_argument("method " + std::string(to_string(config.method)) +
                                " requires an E1 checkpoint");
  switch (config.method) {
    case Method::e1: return train_e1(config, data);
    case Method::e2: return train_e2(config, data);
    case Method::e3: return train_e3(config, data);
    case Method::e4: return train_e4(config, data, *e1);
    case Method::e5a: return rescore_e5a(config, data, *e1);
    case Method::e5b: return train_e5b(config, data, *e1);
    case Method::e6: return train_e6(config, data, *e1);
  }
  throw std::logic_error("run_method: unhandled method");
}

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<std::vector<std::string>>& grid,
                      const BenchmarkData& data, const Checkpoint* e1) {
  if (grid.empty()) throw std::invalid_argument("run_sweep: empty grid");
  if (grid.size() > 8) throw std::invalid_argument("run_sweep: at most 8 configurations per method");
  SweepResult result;
  bool have_best = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ExperimentConfig cfg = base;
    std::string label;
    for (const auto& assignment : grid[i]) {
      apply_override(cfg, assignment);
      label += (label.empty() ? "" : " ") + assignment;
    }
    RunRecord rec = run_method(cfg, data, e1);
    const ModelParams& p = rec.checkpoint.params;
    const double val_bacc = bacc_of(p, data.id_val);
    const ScoreKind kind = primary_score(cfg.method);
    const Vector s_id = score_batch(p, kind, data.id_val.x, cfg.weights.temperature);
    const Vector s_ood = score_batch(p, kind, data.aux_ood_val.x, cfg.weights.temperature);
    const double aux_auc = auroc(as_span(s_id), as_span(s_ood));
    result.candidates.push_back(label);
    result.val_balanced_accuracy.push_back(val_bacc);
    result.aux_val_auroc.push_back(aux_auc);
    const bool better = !have_best || val_bacc > result.val_balanced_accuracy[result.best] ||
                        (val_bacc == result.val_balanced_accuracy[result.best] &&
                         aux_auc > result.aux_val_auroc[result.best]);
    if (better) {
      have_best = true;
      result.best = i;
      result.best_record = std::move(rec);
    }
  }
  return result;
}

}  // namespace oodlab
