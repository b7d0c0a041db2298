#include "oodlab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace oodlab {

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  FeatureSet out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw std::out_of_range("FeatureSet::subset: row out of range");
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    out.ids.push_back(ids[rows[i]]);
    if (labeled()) out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

FeatureSet FeatureSet::unlabeled() const {
  FeatureSet out;
  out.x = x;
  out.ids = ids;
  return out;
}

FeatureSet concat(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() > 0 && b.size() > 0 && a.x.cols() != b.x.cols())
    throw ShapeError("concat: feature widths differ");
  if (a.size() > 0 && b.size() > 0 && a.labeled() != b.labeled())
    throw std::invalid_argument("concat: cannot mix labeled and unlabeled sets");
  FeatureSet out;
  out.x.resize(static_cast<Eigen::Index>(a.size() + b.size()), a.size() > 0 ? a.x.cols() : b.x.cols());
  if (a.size() > 0) out.x.topRows(a.x.rows()) = a.x;
  if (b.size() > 0) out.x.bottomRows(b.x.rows()) = b.x;
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

const std::vector<std::string>& test_ood_names() {
  static const std::vector<std::string> names{"far_a", "far_b", "near"};
  return names;
}

void GenConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("gen: num_classes must be >= 1");
  if (dim < 1) throw std::invalid_argument("gen: dim must be >= 1");
  if (static_cast<int>(class_proportions.size()) != num_classes)
    throw std::invalid_argument("gen: class_proportions must have num_classes entries");
  for (double p : class_proportions)
    if (!(p > 0)) throw std::invalid_argument("gen: class proportions must be positive");
  if (!(near_factor > 0 && near_factor < 1))
    throw std::invalid_argument("gen: near_factor must be in (0, 1)");
  if (near_class_a < 0 || near_class_a >= num_classes || near_class_b < 0 ||
      near_class_b >= num_classes || near_class_a == near_class_b)
    throw std::invalid_argument("gen: near classes must be two distinct valid classes");
  if (confusable_pull < 0 || confusable_pull >= 1)
    throw std::invalid_argument("gen: confusable_pull must be in [0, 1)");
  if (confusable_pull > 0 && (confusable_a < 0 || confusable_a >= num_classes || confusable_b < 0 ||
                              confusable_b >= num_classes || confusable_a == confusable_b))
    throw std::invalid_argument("gen: confusable classes must be two distinct valid classes");
  if (total_id < 1 || aux_count < 1 || test_ood_count < 1)
    throw std::invalid_argument("gen: sample counts must be positive");
  if (!(cluster_scale > 0) || !(aux_scale > 0))
    throw std::invalid_argument("gen: scales must be positive");
  if (!(aux_class_scale >= 0))
    throw std::invalid_argument("gen: aux_class_scale must be >= 0");
  if (!(aux_exclusion_radius >= 0))
    throw std::invalid_argument("gen: aux_exclusion_radius must be >= 0");
  if (!(wild_ratio > 0 && wild_ratio < 1))
    throw std::invalid_argument("gen: wild_ratio must be in (0, 1)");
  for (int c : class_counts())
    if (c < 1) throw std::invalid_argument("gen: a class has zero samples");
}

std::vector<int> GenConfig::class_counts() const {
  const double total = std::accumulate(class_proportions.begin(), class_proportions.end(), 0.0);
  std::vector<int> counts;
  for (double p : class_proportions)
    counts.push_back(static_cast<int>(std::lround(p / total * total_id)));
  return counts;
}

namespace {

Matrix gaussian(std::mt19937_64& rng, int n, const RowVector& mean, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, mean.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = mean(j) + scale * normal(rng);
  return out;
}

RowVector random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector v(dim);
  do {
    for (int j = 0; j < dim; ++j) v(j) = normal(rng);
  } while (v.norm() < 1e-8);
  return v / v.norm();
}

// Random orthonormal basis of R^dim, one basis vector per row. The first
// `classes` rows carry the class means; the rest span the nuisance subspace.
Matrix random_basis(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(dim, dim);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  return q.transpose();
}

Matrix class_means(std::mt19937_64& rng, const GenConfig& c, const Matrix& basis) {
  Matrix dirs(c.num_classes, c.dim);
  for (int k = 0; k < c.num_classes; ++k)
    dirs.row(k) = k < c.dim ? RowVector(basis.row(k)) : random_unit(rng, c.dim);
  Matrix means = c.class_radius * dirs;
  if (c.confusable_pull > 0) {
    const RowVector gap = means.row(c.confusable_b) - means.row(c.confusable_a);
    means.row(c.confusable_a) += 0.5 * c.confusable_pull * gap;
    means.row(c.confusable_b) -= 0.5 * c.confusable_pull * gap;
  }
  return means;
}

Matrix hypercube_shell(std::mt19937_64& rng, int n, int dim, double halfwidth) {
  std::uniform_real_distribution<double> u(-halfwidth, halfwidth);
  std::uniform_int_distribution<int> face(0, dim - 1);
  std::bernoulli_distribution sign(0.5);
  Matrix out(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) out(i, j) = u(rng);
    out(i, face(rng)) = sign(rng) ? halfwidth : -halfwidth;
  }
  return out;
}

FeatureSet make_set(Matrix x, long long id_base) {
  FeatureSet s;
  s.ids.resize(static_cast<std::size_t>(x.rows()));
  std::iota(s.ids.begin(), s.ids.end(), id_base);
  s.x = std::move(x);
  return s;
}

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Largest-remainder apportionment of n items across fractions.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    const double quota = fractions[j] * static_cast<double>(n);
    counts[j] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    assigned += counts[j];
    remainders.emplace_back(quota - static_cast<double>(counts[j]), j);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

}  // namespace

std::vector<FeatureSet> stratified_split(const FeatureSet& data, std::span<const double> fractions,
                                         std::uint64_t seed) {
  if (!data.labeled()) throw std::invalid_argument("stratified_split: data must be labeled");
  if (fractions.empty()) throw std::invalid_argument("stratified_split: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0)) throw std::invalid_argument("stratified_split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("stratified_split: fractions must sum to 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> rows(fractions.size());
  for (auto& [label, members] : by_class) {
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return data.ids[a] < data.ids[b]; });
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = apportion(members.size(), fractions);
    std::size_t offset = 0;
    for (std::size_t j = 0; j < counts.size(); ++j) {
      if (counts[j] == 0)
        throw std::invalid_argument("stratified_split: class " + std::to_string(label) +
                                    " would be empty in split " + std::to_string(j));
      rows[j].insert(rows[j].end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
                     members.begin() + static_cast<std::ptrdiff_t>(offset + counts[j]));
      offset += counts[j];
    }
  }

  std::vector<FeatureSet> out;
  for (auto& r : rows) {
    std::sort(r.begin(), r.end(), [&](std::size_t a, std::size_t b) { return data.ids[a] < data.ids[b]; });
    out.push_back(data.subset(r));
  }
  return out;
}

FeatureSet make_wild(const FeatureSet& id_pool, const FeatureSet& aux_ood, double ratio,
                     std::uint64_t seed, WildComposition* composition) {
  if (!(ratio > 0 && ratio < 1)) throw std::invalid_argument("make_wild: ratio must be in (0, 1)");
  if (id_pool.size() == 0 || aux_ood.size() == 0)
    throw std::invalid_argument("make_wild: empty input");
  std::mt19937_64 rng(seed);
  auto n_id = static_cast<long>(id_pool.size());
  auto n_ood = std::lround(static_cast<double>(n_id) * (1.0 - ratio) / ratio);
  if (n_ood > static_cast<long>(aux_ood.size())) {
    n_ood = static_cast<long>(aux_ood.size());
    n_id = std::min<long>(n_id, std::lround(static_cast<double>(n_ood) * ratio / (1.0 - ratio)));
  }
  n_id = std::max<long>(n_id, 1);
  n_ood = std::max<long>(n_ood, 1);

  auto id_rows = permutation(id_pool.size(), rng);
  id_rows.resize(static_cast<std::size_t>(n_id));
  auto ood_rows = permutation(aux_ood.size(), rng);
  ood_rows.resize(static_cast<std::size_t>(n_ood));

  FeatureSet mixed = concat(id_pool.subset(id_rows).unlabeled(), aux_ood.subset(ood_rows).unlabeled());
  const auto order = permutation(mixed.size(), rng);
  if (composition) *composition = {n_id, n_ood};
  return mixed.subset(order);
}

BenchmarkData generate(const GenConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int d = config.dim;

  const Matrix basis = random_basis(rng, d);
  const Matrix means = class_means(rng, config, basis);
  const RowVector centroid = means.colwise().mean();
  const int n_nuisance = std::max(d - config.num_classes, 0);
  // Unit vectors in the nuisance subspace; the whole space when it is empty.
  auto nuisance_unit = [&]() -> RowVector {
    if (n_nuisance == 0) return random_unit(rng, d);
    const RowVector w = random_unit(rng, n_nuisance);
    return w * basis.bottomRows(n_nuisance);
  };

  // ID pool.
  const auto counts = config.class_counts();
  FeatureSet id_all;
  for (int k = 0; k < config.num_classes; ++k) {
    FeatureSet part = make_set(gaussian(rng, counts[k], means.row(k), config.cluster_scale),
                               static_cast<long long>(id_all.size()));
    part.labels.assign(part.size(), k);
    id_all = id_all.size() == 0 ? std::move(part) : concat(id_all, part);
  }

  BenchmarkData out;
  out.num_classes = config.num_classes;
  out.dim = d;

  const double top[] = {0.64, 0.16, 0.20};
  auto top_split = stratified_split(id_all, top, config.seed ^ 0x51u);
  const double pool[] = {0.85, 0.15};
  auto pool_split = stratified_split(top_split[0], pool, config.seed ^ 0xA7u);
  out.id_train = std::move(pool_split[0]);
  out.id_wild_pool = std::move(pool_split[1]);
  out.id_val = std::move(top_split[1]);
  out.id_test = std::move(top_split[2]);

  // Auxiliary OOD family, split 80/20.
  const RowVector aux_center = centroid + config.aux_displacement * random_unit(rng, d);
  Matrix aux_x(config.aux_count, d);
  {
    const double r2 = config.aux_exclusion_radius * config.aux_exclusion_radius;
    RowVector scales = RowVector::Constant(d, config.aux_scale);
    if (config.aux_class_scale > 0) scales.head(std::min(config.num_classes, d)).setConstant(config.aux_class_scale);
    const RowVector zero = RowVector::Zero(d);
    const long max_draws = 1000L * config.aux_count;
    long draws = 0;
    for (int filled = 0; filled < config.aux_count;) {
      if (++draws > max_draws)
        throw std::runtime_error("gen: aux_exclusion_radius rejects almost every aux draw");
      const Matrix z = gaussian(rng, 1, zero, 1.0);
      const Matrix x = aux_center + z.cwiseProduct(scales) * basis;
      if (r2 > 0 && (means.rowwise() - x.row(0)).rowwise().squaredNorm().minCoeff() < r2) continue;
      aux_x.row(filled++) = x.row(0);
    }
  }
  FeatureSet aux = make_set(aux_x, kAuxIdBase);
  {
    auto perm = permutation(aux.size(), rng);
    const std::size_t n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(aux.size())));
    std::vector<std::size_t> tr(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> va(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    out.aux_ood_train = aux.subset(tr);
    out.aux_ood_val = aux.subset(va);
  }

  // Test OOD families.
  const int n_test = config.test_ood_count;
  const RowVector far_center = centroid + config.far_displacement * nuisance_unit();
  out.test_ood["far_a"] = make_set(gaussian(rng, n_test, far_center, config.cluster_scale), kFarAIdBase);
  {
    // Hypercube shell across the nuisance coordinates, ID-like spread along
    // the class directions.
    Matrix x;
    if (n_nuisance == 0) {
      x = hypercube_shell(rng, n_test, d, config.far_b_halfwidth);
    } else {
      const int n_class = d - n_nuisance;
      const Matrix shell = hypercube_shell(rng, n_test, n_nuisance, config.far_b_halfwidth);
      const Matrix spread = gaussian(rng, n_test, RowVector::Zero(n_class), config.cluster_scale);
      x = spread * basis.topRows(n_class) + shell * basis.bottomRows(n_nuisance);
    }
    x.rowwise() += centroid;
    out.test_ood["far_b"] = make_set(std::move(x), kFarBIdBase);
  }
  const RowVector near_center = (1.0 - config.near_factor) * means.row(config.near_class_a) +
                                config.near_factor * means.row(config.near_class_b);
  out.test_ood["near"] = make_set(gaussian(rng, n_test, near_center, config.cluster_scale), kNearIdBase);

  out.wild_train = make_wild(out.id_wild_pool, out.aux_ood_train, config.wild_ratio,
                             config.seed ^ 0xC3u, &out.wild_composition);
  return out;
}

InverseFrequencySampler::InverseFrequencySampler(std::span<const int> labels, std::uint64_t seed)
    : rng_(seed) {
  if (labels.empty()) throw std::invalid_argument("InverseFrequencySampler: no labels");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (auto& [label, members] : groups) {
    if (members.empty()) throw std::invalid_argument("InverseFrequencySampler: empty class");
    by_class_.push_back(std::move(members));
  }
}

std::size_t InverseFrequencySampler::next() {
  std::uniform_int_distribution<std::size_t> pick_class(0, by_class_.size() - 1);
  const auto& members = by_class_[pick_class(rng_)];
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  return members[pick(rng_)];
}

std::vector<std::size_t> InverseFrequencySampler::draw(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = next();
  return out;
}

std::vector<BatchPair> cycle_shorter(std::span<const std::size_t> id_order,
                                     std::span<const std::size_t> ood_order,
                                     std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("cycle_shorter: batch_size must be > 0");
  if (id_order.empty() || ood_order.empty()) throw std::invalid_argument("cycle_shorter: empty stream");
  std::vector<BatchPair> out;
  std::size_t cursor = 0;
  for (std::size_t start = 0; start < id_order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, id_order.size());
    BatchPair pair;
    pair.id.assign(id_order.begin() + static_cast<std::ptrdiff_t>(start),
                   id_order.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t k = start; k < end; ++k) {
      pair.ood.push_back(ood_order[cursor]);
      cursor = (cursor + 1) % ood_order.size();
    }
    out.push_back(std::move(pair));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

[[noreturn]] void bad_cell(const std::filesystem::path& path, std::size_t row, std::size_t col,
                           std::string_view cell, const char* expected) {
  std::ostringstream os;
  os << path.string() << ": row " << row << ", column " << col << ": expected " << expected
     << ", got '" << cell << "'";
  throw std::runtime_error(os.str());
}

}  // namespace

void write_csv(const FeatureSet& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id";
  if (data.labeled()) out << ",label";
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.ids[i];
    if (data.labeled()) out << ',' << data.labels[i];
    for (Eigen::Index j = 0; j < data.x.cols(); ++j)
      out << ',' << format_double(data.x(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

FeatureSet ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  if (schema.dim < 1) throw std::invalid_argument("ingest_csv: schema dim must be >= 1");

  std::vector<std::string> expected{"sample_id"};
  if (schema.labeled) expected.emplace_back("label");
  for (int j = 0; j < schema.dim; ++j) expected.push_back("f" + std::to_string(j));

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() != expected.size() ||
      !std::equal(header.begin(), header.end(), expected.begin())) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw std::runtime_error(path.string() + ": header '" + line + "' does not match schema '" + want + "'");
  }

  FeatureSet out;
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != expected.size()) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(expected.size()));
    }
    long long id = 0;
    auto r = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
    if (r.ec != std::errc() || r.ptr != cells[0].data() + cells[0].size()) bad_cell(path, row, 1, cells[0], "integer sample_id");
    out.ids.push_back(id);
    std::size_t col = 1;
    if (schema.labeled) {
      int label = 0;
      r = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), label);
      if (r.ec != std::errc() || r.ptr != cells[1].data() + cells[1].size() || label < 0)
        bad_cell(path, row, 2, cells[1], "nonnegative integer label");
      out.labels.push_back(label);
      col = 2;
    }
    for (; col < cells.size(); ++col) {
      double v = 0.0;
      const auto& c = cells[col];
      const auto rr = std::from_chars(c.data(), c.data() + c.size(), v);
      if (rr.ec != std::errc() || rr.ptr != c.data() + c.size()) bad_cell(path, row, col + 1, c, "number");
      values.push_back(v);
    }
  }
  const auto n = static_cast<Eigen::Index>(out.ids.size());
  out.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, schema.dim);
  return out;
}

void write_benchmark(const BenchmarkData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv(data.id_train, dir / "id_train.csv");
  write_csv(data.id_wild_pool, dir / "id_wild_pool.csv");
  write_csv(data.id_val, dir / "id_val.csv");
  write_csv(data.id_test, dir / "id_test.csv");
  write_csv(data.aux_ood_train, dir / "aux_ood_train.csv");
  write_csv(data.aux_ood_val, dir / "aux_ood_val.csv");
  for (const auto& [name, set] : data.test_ood) write_csv(set, dir / ("test_ood_" + name + ".csv"));
  write_csv(data.wild_train, dir / "wild_train.csv");
}

}  // namespace oodlab
