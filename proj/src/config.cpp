#include "ulab/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ulab {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw std::invalid_argument("'" + std::string(s) + "' is not a valid number");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += fmt(xs[i]);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"model.input_dim", [](auto& c, auto v) { c.model.input_dim = parse_number<int>(v); }},
      {"model.hidden_dims",
       [](auto& c, auto v) {
         c.model.hidden_dims.clear();
         for (auto x : split_list(v)) c.model.hidden_dims.push_back(parse_number<int>(x));
       }},
      {"model.num_classes", [](auto& c, auto v) { c.model.num_classes = parse_number<int>(v); }},
      {"model.activation", [](auto& c, auto v) { c.model.activation = parse_activation(v); }},
      {"data.generator",
       [](auto& c, auto v) {
         if (v != "blobs" && v != "rings") throw std::invalid_argument("generator must be blobs or rings");
         c.generator = std::string(v);
       }},
      {"data.seed", [](auto& c, auto v) { c.data_seed = parse_number<std::uint64_t>(v); }},
      {"data.train_per_class",
       [](auto& c, auto v) { c.blobs.train_per_class = c.rings.train_per_class = parse_number<int>(v); }},
      {"data.test_per_class",
       [](auto& c, auto v) { c.blobs.test_per_class = c.rings.test_per_class = parse_number<int>(v); }},
      {"data.dim", [](auto& c, auto v) { c.blobs.dim = c.rings.dim = parse_number<int>(v); }},
      {"data.noise_std",
       [](auto& c, auto v) { c.blobs.noise_std = c.rings.noise_std = parse_number<double>(v); }},
      {"data.separation", [](auto& c, auto v) { c.blobs.separation = parse_number<double>(v); }},
      {"data.inner_radius", [](auto& c, auto v) { c.rings.inner_radius = parse_number<double>(v); }},
      {"data.outer_radius", [](auto& c, auto v) { c.rings.outer_radius = parse_number<double>(v); }},
      {"scenario.kind", [](auto& c, auto v) { c.scenario = parse_scenario(v); }},
      {"scenario.fraction", [](auto& c, auto v) { c.fraction = parse_number<double>(v); }},
      {"scenario.target_class",
       [](auto& c, auto v) {
         if (v == "none") {
           c.target_class.reset();
         } else {
           c.target_class = parse_number<int>(v);
         }
       }},
      {"train.epochs", [](auto& c, auto v) { c.train_epochs = parse_number<int>(v); }},
      {"train.lr", [](auto& c, auto v) { c.train_lr = parse_number<double>(v); }},
      {"batch_size", [](auto& c, auto v) { c.batch_size = parse_number<int>(v); }},
      {"unlearn.methods",
       [](auto& c, auto v) {
         c.methods.clear();
         for (auto x : split_list(v)) c.methods.push_back(parse_method(x));
       }},
      {"unlearn.addons",
       [](auto& c, auto v) {
         c.addons.clear();
         for (auto x : split_list(v)) c.addons.push_back(parse_mask_kind(x));
       }},
      {"unlearn.epochs", [](auto& c, auto v) { c.unlearn_epochs = parse_number<int>(v); }},
      {"unlearn.lr", [](auto& c, auto v) { c.unlearn_lr = parse_number<double>(v); }},
      {"unlearn.agg", [](auto& c, auto v) { c.agg = parse_agg_kind(v); }},
      {"unlearn.alpha", [](auto& c, auto v) { c.alpha = parse_number<double>(v); }},
      {"unlearn.beta", [](auto& c, auto v) { c.beta = parse_number<double>(v); }},
      {"unlearn.p", [](auto& c, auto v) { c.p = parse_number<double>(v); }},
      {"unlearn.gamma", [](auto& c, auto v) { c.gamma = parse_number<double>(v); }},
      {"unlearn.eps", [](auto& c, auto v) { c.eps = parse_number<double>(v); }},
      {"unlearn.variance_provider",
       [](auto& c, auto v) { c.variance_provider = parse_variance_provider(v); }},
      {"run.seeds",
       [](auto& c, auto v) {
         c.seeds.clear();
         for (auto x : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(x));
       }},
      {"run.workers", [](auto& c, auto v) { c.workers = parse_number<int>(v); }},
      {"run.output_dir", [](auto& c, auto v) { c.output_dir = std::string(v); }},
  };
  return table;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  ExperimentConfig cfg;
  int lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source, lineno, "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(source, lineno, "unknown key '" + std::string(key) + "'");
    if (value.empty()) throw ConfigError(source, lineno, "missing value for '" + std::string(key) + "'");
    try {
      it->second(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(source, lineno, std::string(key) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "model.input_dim = " << c.model.input_dim << "\n"
     << "model.hidden_dims = " << join(c.model.hidden_dims, [](int h) { return std::to_string(h); }) << "\n"
     << "model.num_classes = " << c.model.num_classes << "\n"
     << "model.activation = " << to_string(c.model.activation) << "\n"
     << "data.generator = " << c.generator << "\n"
     << "data.seed = " << c.data_seed << "\n";
  if (c.generator == "blobs") {
    os << "data.train_per_class = " << c.blobs.train_per_class << "\n"
       << "data.test_per_class = " << c.blobs.test_per_class << "\n"
       << "data.dim = " << c.blobs.dim << "\n"
       << "data.noise_std = " << fmt_double(c.blobs.noise_std) << "\n"
       << "data.separation = " << fmt_double(c.blobs.separation) << "\n";
  } else {
    os << "data.train_per_class = " << c.rings.train_per_class << "\n"
       << "data.test_per_class = " << c.rings.test_per_class << "\n"
       << "data.dim = " << c.rings.dim << "\n"
       << "data.noise_std = " << fmt_double(c.rings.noise_std) << "\n"
       << "data.inner_radius = " << fmt_double(c.rings.inner_radius) << "\n"
       << "data.outer_radius = " << fmt_double(c.rings.outer_radius) << "\n";
  }
  os << "scenario.kind = " << to_string(c.scenario) << "\n"
     << "scenario.fraction = " << fmt_double(c.fraction) << "\n"
     << "scenario.target_class = " << (c.target_class ? std::to_string(*c.target_class) : "none") << "\n"
     << "train.epochs = " << c.train_epochs << "\n"
     << "train.lr = " << fmt_double(c.train_lr) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "unlearn.methods = " << join(c.methods, [](MethodName m) { return std::string(to_string(m)); }) << "\n"
     << "unlearn.addons = " << join(c.addons, [](MaskKind k) { return std::string(to_string(k)); }) << "\n"
     << "unlearn.epochs = " << c.unlearn_epochs << "\n"
     << "unlearn.lr = " << fmt_double(c.unlearn_lr) << "\n"
     << "unlearn.agg = " << to_string(c.agg) << "\n"
     << "unlearn.alpha = " << fmt_double(c.alpha) << "\n"
     << "unlearn.beta = " << fmt_double(c.beta) << "\n"
     << "unlearn.p = " << fmt_double(c.p) << "\n"
     << "unlearn.gamma = " << fmt_double(c.gamma) << "\n"
     << "unlearn.eps = " << fmt_double(c.eps) << "\n"
     << "unlearn.variance_provider = " << to_string(c.variance_provider) << "\n"
     << "run.seeds = " << join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n"
     << "run.workers = " << c.workers << "\n"
     << "run.output_dir = " << c.output_dir.string() << "\n";
  return os.str();
}

void validate(const ExperimentConfig& c) {
  validate(c.model);
  const int dim = c.generator == "blobs" ? c.blobs.dim : c.rings.dim;
  if (dim != c.model.input_dim) throw std::invalid_argument("model.input_dim must equal data.dim");
  if (c.generator == "rings" && c.model.num_classes != 2) {
    throw std::invalid_argument("the rings generator has exactly 2 classes");
  }
  if (c.scenario == Scenario::class_fraction &&
      (!c.target_class || *c.target_class < 0 || *c.target_class >= c.model.num_classes)) {
    throw std::invalid_argument("class_fraction needs a valid scenario.target_class");
  }
  if (!(c.fraction > 0.0 && c.fraction < 1.0)) throw std::invalid_argument("scenario.fraction must lie in (0, 1)");
  if (c.methods.empty() || c.addons.empty()) throw std::invalid_argument("methods and addons must be nonempty");
  if (c.seeds.empty()) throw std::invalid_argument("run.seeds must be nonempty");
  if (c.train_epochs < 0 || c.unlearn_epochs < 1) throw std::invalid_argument("invalid epoch counts");
  if (!(c.train_lr > 0.0) || !(c.unlearn_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (c.workers < 1) throw std::invalid_argument("run.workers must be at least 1");
  if (!(c.eps >= 0.0)) throw std::invalid_argument("unlearn.eps must be nonnegative");
  const ParamVector dummy = ParamVector::Zero(param_count(c.model));
  for (auto m : c.methods) {
    const auto method = make_method(m, dummy, c.gamma);
    for (auto a : c.addons) validate(method, make_addon(c, a));
  }
}

AddOnSpec make_addon(const ExperimentConfig& c, MaskKind kind) {
  AddOnSpec a;
  a.kind = kind;
  a.p = c.p;
  a.agg = {c.agg, c.alpha, c.beta};
  a.variance_provider = c.variance_provider;
  return a;
}

}  // namespace ulab
