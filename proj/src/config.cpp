#include "oodlab/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace oodlab {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::e1: return "e1";
    case Method::e2: return "e2";
    case Method::e3: return "e3";
    case Method::e4: return "e4";
    case Method::e5a: return "e5a";
    case Method::e5b: return "e5b";
    case Method::e6: return "e6";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::e1, Method::e2,  Method::e3, Method::e4,
                                           Method::e5a, Method::e5b, Method::e6};
  return methods;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "inf" || t == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw std::invalid_argument("config: " + key + " expects a number, got '" + text + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + text + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text,
                          T (*one)(const std::string&, const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(one(key, item));
  }
  return out;
}

double as_double(const std::string& k, const std::string& t) { return parse_double(k, t); }
Eigen::Index as_index(const std::string& k, const std::string& t) {
  return static_cast<Eigen::Index>(parse_int(k, t));
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += fmt(x);
    else out += std::to_string(x);
  }
  return out;
}

struct Entry {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define OODLAB_DOUBLE(NAME, FIELD)                                                     \
  {NAME, {[](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
          [](const ExperimentConfig& c) { return fmt(c.FIELD); }}}
#define OODLAB_INT(NAME, FIELD, TYPE)                                                              \
  {NAME, {[](ExperimentConfig& c, const std::string& v) { c.FIELD = static_cast<TYPE>(parse_int(NAME, v)); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}}

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> entries{
      {"runner.method",
       {[](ExperimentConfig& c, const std::string& v) { c.method = method_from_string(trim(v)); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.method)); }}},
      OODLAB_INT("runner.seed", seed, std::uint64_t),

      OODLAB_INT("data.num_classes", data.num_classes, int),
      OODLAB_INT("data.dim", data.dim, int),
      OODLAB_INT("data.total_id", data.total_id, int),
      {"data.class_proportions",
       {[](ExperimentConfig& c, const std::string& v) {
          c.data.class_proportions = parse_list<double>("data.class_proportions", v, as_double);
        },
        [](const ExperimentConfig& c) { return join(c.data.class_proportions); }}},
      OODLAB_DOUBLE("data.class_radius", data.class_radius),
      OODLAB_DOUBLE("data.cluster_scale", data.cluster_scale),
      OODLAB_DOUBLE("data.near_factor", data.near_factor),
      OODLAB_INT("data.near_class_a", data.near_class_a, int),
      OODLAB_INT("data.near_class_b", data.near_class_b, int),
      OODLAB_DOUBLE("data.confusable_pull", data.confusable_pull),
      OODLAB_INT("data.confusable_a", data.confusable_a, int),
      OODLAB_INT("data.confusable_b", data.confusable_b, int),
      OODLAB_DOUBLE("data.far_displacement", data.far_displacement),
      OODLAB_DOUBLE("data.far_b_halfwidth", data.far_b_halfwidth),
      OODLAB_DOUBLE("data.aux_displacement", data.aux_displacement),
      OODLAB_DOUBLE("data.aux_scale", data.aux_scale),
      OODLAB_DOUBLE("data.aux_class_scale", data.aux_class_scale),
      OODLAB_DOUBLE("data.aux_exclusion_radius", data.aux_exclusion_radius),
      OODLAB_INT("data.aux_count", data.aux_count, int),
      OODLAB_INT("data.test_ood_count", data.test_ood_count, int),
      OODLAB_DOUBLE("data.wild_ratio", data.wild_ratio),
      OODLAB_INT("data.seed", data.seed, std::uint64_t),

      {"model.hidden",
       {[](ExperimentConfig& c, const std::string& v) {
          c.model.hidden = parse_list<Eigen::Index>("model.hidden", v, as_index);
        },
        [](const ExperimentConfig& c) { return join(c.model.hidden); }}},
      OODLAB_INT("model.embedding", model.embedding, Eigen::Index),

      OODLAB_DOUBLE("optim.lr", optim.lr),
      OODLAB_DOUBLE("optim.weight_decay", optim.weight_decay),
      OODLAB_DOUBLE("optim.adam_beta1", optim.adam_beta1),
      OODLAB_DOUBLE("optim.adam_beta2", optim.adam_beta2),
      OODLAB_DOUBLE("optim.adam_eps", optim.adam_eps),
      OODLAB_INT("optim.epochs", optim.epochs, int),
      OODLAB_INT("optim.batch_size", optim.batch_size, int),
      OODLAB_DOUBLE("optim.warmup_reference_steps", optim.warmup_reference_steps),
      OODLAB_DOUBLE("optim.warmup_reference_size", optim.warmup_reference_size),
      OODLAB_DOUBLE("optim.finetune_lr_factor", optim.finetune_lr_factor),
      OODLAB_INT("optim.warmup_epochs", optim.warmup_epochs, int),

      OODLAB_DOUBLE("objectives.lambda_oe", weights.lambda_oe),
      OODLAB_DOUBLE("objectives.lambda_energy", weights.lambda_energy),
      OODLAB_DOUBLE("objectives.temperature", weights.temperature),
      {"objectives.m_in",
       {[](ExperimentConfig& c, const std::string& v) {
          if (!c.margins_override) c.margins_override = MarginPair{};
          c.margins_override->m_in = parse_double("objectives.m_in", v);
        },
        [](const ExperimentConfig& c) {
          return c.margins_override ? fmt(c.margins_override->m_in) : std::string("auto");
        }}},
      {"objectives.m_out",
       {[](ExperimentConfig& c, const std::string& v) {
          if (!c.margins_override) c.margins_override = MarginPair{};
          c.margins_override->m_out = parse_double("objectives.m_out", v);
        },
        [](const ExperimentConfig& c) {
          return c.margins_override ? fmt(c.margins_override->m_out) : std::string("auto");
        }}},

      OODLAB_DOUBLE("alm.alpha", alm.alpha),
      OODLAB_DOUBLE("alm.eta_lambda", alm.eta_lambda),
      OODLAB_DOUBLE("alm.beta_max", alm.beta_max),
      OODLAB_DOUBLE("alm.beta_growth", alm.beta_growth),
      OODLAB_DOUBLE("alm.beta_init", alm.beta_init),
      OODLAB_DOUBLE("alm.tau_factor", tau_factor),
      {"alm.tau",
       {[](ExperimentConfig& c, const std::string& v) {
          c.tau_override = trim(v) == "auto" ? std::nullopt
                                             : std::optional<double>(parse_double("alm.tau", v));
        },
        [](const ExperimentConfig& c) { return c.tau_override ? fmt(*c.tau_override) : std::string("auto"); }}},

      OODLAB_DOUBLE("detectors.collapse_epsilon", detectors.collapse_epsilon),
      OODLAB_INT("detectors.stall_epochs", detectors.stall_epochs, int),
      OODLAB_INT("detectors.knn_k", detectors.knn_k, int),
  };
  return entries;
}

#undef OODLAB_DOUBLE
#undef OODLAB_INT

void set_key(ExperimentConfig& config, const std::string& key, const std::string& value) {
  if (key == "runner.e1_checkpoint") {
    config.e1_checkpoint = trim(value);
    return;
  }
  const auto& reg = registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second.set(config, value);
}

}  // namespace

void ExperimentConfig::validate() const {
  data.validate();
  weights.validate();
  if (model.embedding < 1) throw std::invalid_argument("config: model.embedding must be >= 1");
  for (auto h : model.hidden)
    if (h < 1) throw std::invalid_argument("config: model.hidden entries must be >= 1");
  if (!(optim.lr > 0)) throw std::invalid_argument("config: optim.lr must be > 0");
  if (!(optim.weight_decay >= 0)) throw std::invalid_argument("config: optim.weight_decay must be >= 0");
  if (optim.epochs < 1) throw std::invalid_argument("config: optim.epochs must be >= 1");
  if (optim.batch_size < 1) throw std::invalid_argument("config: optim.batch_size must be >= 1");
  if (!(optim.finetune_lr_factor > 0)) throw std::invalid_argument("config: optim.finetune_lr_factor must be > 0");
  if (optim.warmup_epochs < 0) throw std::invalid_argument("config: optim.warmup_epochs must be >= 0");
  if (detectors.knn_k < 1) throw std::invalid_argument("config: detectors.knn_k must be >= 1");
  if (!(tau_factor > 0)) throw std::invalid_argument("config: alm.tau_factor must be > 0");
  AlmConfig probe = alm;
  probe.tau = tau_override.value_or(0.0);
  probe.validate();
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, entry] : registry()) out += key + " = " + entry.get(*this) + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical()); }

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::invalid_argument("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_key(config, section + "." + key, value.data());
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw std::invalid_argument("override '" + std::string(assignment) + "' must be key=value");
  set_key(config, trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

}  // namespace oodlab
