#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/masks.hpp"
#include "ulab/nn.hpp"
#include "ulab/optim.hpp"
#include "ulab/unlearn.hpp"

namespace ulab {

// Thrown for malformed configuration text; carries the 1-based line number.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

struct ExperimentConfig {
  ModelSpec model{16, {32}, 4, Activation::relu};

  std::string generator = "blobs";  // blobs | rings
  BlobsConfig blobs;
  RingsConfig rings;
  std::uint64_t data_seed = 0;

  Scenario scenario = Scenario::random_fraction;
  double fraction = 0.1;
  std::optional<int> target_class;

  std::vector<MethodName> methods{MethodName::SRL};
  std::vector<MaskKind> addons{MaskKind::none, MaskKind::focus};

  int train_epochs = 60;
  double train_lr = 0.05;
  int unlearn_epochs = 10;
  double unlearn_lr = 0.05;
  int batch_size = 32;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  AggKind agg = AggKind::linear;
  double alpha = 0.05;
  double beta = 0.95;
  double p = 0.3;
  double gamma = 1.0;
  double eps = 1e-8;
  VarianceProvider variance_provider = VarianceProvider::adam_raw;

  int workers = 1;
  std::filesystem::path output_dir = "ulab-out";
};

// Flat "dotted.key = value" lines; '#' starts a comment. Lists are
// comma-separated. Unknown keys and malformed values raise ConfigError.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const ExperimentConfig& cfg);

// Throws std::invalid_argument when the configuration is inconsistent
// (e.g. a constraint-based add-on paired with a constraint-free method).
void validate(const ExperimentConfig& cfg);

AddOnSpec make_addon(const ExperimentConfig& cfg, MaskKind kind);

}  // namespace ulab
