#include "oodlab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace oodlab {

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::softmax_c: return "softmax_c";
    case HeadKind::sigmoid_c: return "sigmoid_c";
    case HeadKind::sigmoid_c_plus_1: return "sigmoid_c_plus_1";
  }
  return "?";
}

HeadKind head_kind_from_string(std::string_view s) {
  if (s == "softmax_c") return HeadKind::softmax_c;
  if (s == "sigmoid_c") return HeadKind::sigmoid_c;
  if (s == "sigmoid_c_plus_1") return HeadKind::sigmoid_c_plus_1;
  throw std::invalid_argument("unknown head kind '" + std::string(s) + "'");
}

std::string_view to_string(CheckpointCriterion c) {
  switch (c) {
    case CheckpointCriterion::best_train_loss: return "best_train_loss";
    case CheckpointCriterion::best_val_loss: return "best_val_loss";
    case CheckpointCriterion::best_val_balanced_accuracy: return "best_val_balanced_accuracy";
  }
  return "?";
}

namespace {

bool same(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << "model: " << what << " has shape (" << m.rows() << 'x' << m.cols() << "), expected ("
       << rows << 'x' << cols << ')';
    throw ShapeError(os.str());
  }
}

}  // namespace

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.head_kind != b.head_kind || a.num_classes != b.num_classes || a.dims != b.dims ||
      a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size())
    return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i)
    if (!same(a.weights[i], b.weights[i]) || !same(a.biases[i], b.biases[i])) return false;
  return same(a.head_weight, b.head_weight) && same(a.head_bias, b.head_bias);
}

void ModelParams::validate() const {
  if (dims.size() < 2) throw std::invalid_argument("model: feature stack needs at least one layer");
  for (auto d : dims)
    if (d < 1) throw std::invalid_argument("model: all dims must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
  const std::size_t layers = dims.size() - 1;
  if (weights.size() != layers || biases.size() != layers)
    throw std::invalid_argument("model: layer count does not match dims");
  for (std::size_t i = 0; i < layers; ++i) {
    check_shape(weights[i], dims[i], dims[i + 1], "weight " + std::to_string(i));
    check_shape(biases[i], 1, dims[i + 1], "bias " + std::to_string(i));
  }
  check_shape(head_weight, dims.back(), output_dim(), "head weight");
  check_shape(head_bias, 1, output_dim(), "head bias");
}

ModelParams init_params(std::vector<Eigen::Index> dims, Eigen::Index num_classes,
                        HeadKind head_kind, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("model: feature stack needs at least one layer");
  for (auto d : dims)
    if (d < 1) throw std::invalid_argument("model: all dims must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");

  std::mt19937_64 rng(seed);
  auto glorot = [&](Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(fan_in, fan_out);
    for (Eigen::Index c = 0; c < fan_out; ++c)
      for (Eigen::Index r = 0; r < fan_in; ++r) w(r, c) = u(rng);
    return w;
  };

  ModelParams p;
  p.head_kind = head_kind;
  p.num_classes = num_classes;
  p.dims = std::move(dims);
  for (std::size_t i = 0; i + 1 < p.dims.size(); ++i) {
    p.weights.push_back(glorot(p.dims[i], p.dims[i + 1]));
    p.biases.push_back(Matrix::Zero(1, p.dims[i + 1]));
  }
  p.head_weight = glorot(p.dims.back(), p.output_dim());
  p.head_bias = Matrix::Zero(1, p.output_dim());
  return p;
}

ForwardResult forward(const ModelParams& params, const Eigen::Ref<const Matrix>& batch) {
  if (batch.cols() != params.input_dim()) {
    throw ShapeError("model: batch width " + std::to_string(batch.cols()) +
                     " does not match input dim " + std::to_string(params.input_dim()));
  }
  Matrix h = batch;
  const std::size_t layers = params.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    Matrix z = (h * params.weights[i]).rowwise() + params.biases[i].row(0);
    h = i + 1 < layers ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  ForwardResult out;
  out.logits = (h * params.head_weight).rowwise() + params.head_bias.row(0);
  out.embeddings = std::move(h);
  return out;
}

ModelVars attach(Graph& graph, const ModelParams& params) {
  ModelVars vars;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    vars.leaves.push_back(graph.parameter(params.weights[i]));
    vars.leaves.push_back(graph.parameter(params.biases[i]));
  }
  vars.leaves.push_back(graph.parameter(params.head_weight));
  vars.leaves.push_back(graph.parameter(params.head_bias));
  return vars;
}

ForwardVars forward(const ModelVars& vars, const Eigen::Ref<const Matrix>& batch) {
  Graph& g = *vars.leaves.front().graph;
  const std::size_t layers = vars.num_layers();
  Var h = g.constant(batch);
  for (std::size_t i = 0; i < layers; ++i) {
    Var z = add_bias(matmul(h, vars.weight(i)), vars.bias(i));
    h = i + 1 < layers ? relu(z) : z;
  }
  Var logits = add_bias(matmul(h, vars.head_weight()), vars.head_bias());
  return {h, logits};
}

std::vector<Matrix*> parameter_arrays(ModelParams& params) {
  std::vector<Matrix*> out;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    out.push_back(&params.weights[i]);
    out.push_back(&params.biases[i]);
  }
  out.push_back(&params.head_weight);
  out.push_back(&params.head_bias);
  return out;
}

std::vector<const Matrix*> parameter_arrays(const ModelParams& params) {
  auto mut = parameter_arrays(const_cast<ModelParams&>(params));
  return {mut.begin(), mut.end()};
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const Matrix* m : parameter_arrays(params)) n += static_cast<std::size_t>(m->size());
  return n;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[8] = {'O', 'O', 'D', 'L', 'A', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void raw(char* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw std::runtime_error("checkpoint: truncated input");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  p.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.head_kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.criterion));
  w.put<std::int32_t>(ckpt.epoch);
  w.put<double>(ckpt.metric);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(p.num_classes));
  w.put<std::uint64_t>(p.dims.size());
  for (auto d : p.dims) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
  for (const Matrix* m : parameter_arrays(p)) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m->rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m->cols()));
    w.raw(reinterpret_cast<const char*>(m->data()), sizeof(double) * m->size());
  }
  return w.take();
}

Checkpoint deserialize(std::string_view bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));

  Checkpoint ckpt;
  const auto head = r.get<std::uint32_t>();
  if (head > 2) throw std::runtime_error("checkpoint: bad head kind");
  const auto crit = r.get<std::uint32_t>();
  if (crit > 2) throw std::runtime_error("checkpoint: bad criterion");
  ckpt.criterion = static_cast<CheckpointCriterion>(crit);
  ckpt.epoch = r.get<std::int32_t>();
  ckpt.metric = r.get<double>();

  ModelParams& p = ckpt.params;
  p.head_kind = static_cast<HeadKind>(head);
  p.num_classes = static_cast<Eigen::Index>(r.get<std::uint64_t>());
  const auto n_dims = r.get<std::uint64_t>();
  if (n_dims < 2 || n_dims > 1024) throw std::runtime_error("checkpoint: bad dims count");
  for (std::uint64_t i = 0; i < n_dims; ++i)
    p.dims.push_back(static_cast<Eigen::Index>(r.get<std::uint64_t>()));

  auto read_array = [&r]() {
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows > (1u << 24) || cols > (1u << 24)) throw std::runtime_error("checkpoint: bad array shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    r.raw(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size());
    return m;
  };
  for (std::size_t i = 0; i + 1 < p.dims.size(); ++i) {
    p.weights.push_back(read_array());
    p.biases.push_back(read_array());
  }
  p.head_weight = read_array();
  p.head_bias = read_array();
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  p.validate();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::uint64_t param_hash(const ModelParams& params) {
  Checkpoint c;
  c.params = params;
  c.epoch = 0;
  c.metric = 0.0;
  const std::string bytes = serialize(c);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace oodlab
