#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "ulab/nn.hpp"

namespace ulab {

struct TrainTest {
  LabeledBatch train;
  LabeledBatch test;
};

struct BlobsConfig {
  int num_classes = 4;
  int train_per_class = 500;
  int test_per_class = 200;
  int dim = 16;
  double separation = 3.0;  // distance of each class mean from the origin
  double noise_std = 1.0;
};

// Isotropic Gaussian classes centred at separation * e_k (vertices of a
// scaled simplex); requires dim >= num_classes. Train and test are drawn
// independently and shuffled, both deterministic in `seed`.
TrainTest make_gaussian_blobs(const BlobsConfig& cfg, std::uint64_t seed);

struct RingsConfig {
  int train_per_class = 500;
  int test_per_class = 200;
  int dim = 2;             // extra dimensions beyond the first two carry pure noise
  double inner_radius = 1.0;
  double outer_radius = 2.5;
  double noise_std = 0.25;
};

// Two concentric rings, class 0 inside; not linearly separable.
TrainTest make_rings(const RingsConfig& cfg, std::uint64_t seed);

enum class Scenario { random_fraction, class_fraction };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

struct ScenarioConfig {
  Scenario kind = Scenario::random_fraction;
  double fraction = 0.1;
  std::optional<int> target_class;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  LabeledBatch train;
  LabeledBatch test;
  LabeledBatch retain;
  LabeledBatch forget;
  std::vector<std::int64_t> retain_indices;  // into train, ascending
  std::vector<std::int64_t> forget_indices;  // into train, ascending
  Scenario scenario = Scenario::random_fraction;
  double fraction = 0.0;
  std::optional<int> target_class;
};

// Picks round(fraction * pool) examples uniformly without replacement, where
// the pool is the whole train set or the members of the target class.
// Throws when either side of the partition would be empty.
DatasetSplit split_forget(const LabeledBatch& train, const LabeledBatch& test,
                          const ScenarioConfig& cfg);

// Each label is replaced by one drawn uniformly from the other classes.
LabeledBatch randomize_labels(const LabeledBatch& batch, int num_classes, std::uint64_t seed);

// Seeded epoch iterator: each epoch is a fresh permutation split into
// consecutive chunks of batch_size (the last one may be short).
class BatchStream {
 public:
  BatchStream(const LabeledBatch& source, int batch_size, std::uint64_t seed);

  std::vector<LabeledBatch> next_epoch();
  std::vector<std::vector<std::int64_t>> next_epoch_indices();

  std::size_t batches_per_epoch() const;

 private:
  const LabeledBatch* source_;
  int batch_size_;
  std::mt19937_64 rng_;
};

// Endless batch supply that reshuffles whenever an epoch is exhausted; used
// to pair a shorter loader with a longer one.
class CyclingLoader {
 public:
  CyclingLoader(const LabeledBatch& source, int batch_size, std::uint64_t seed);

  LabeledBatch next();
  std::size_t batches_per_epoch() const { return stream_.batches_per_epoch(); }

 private:
  BatchStream stream_;
  std::vector<LabeledBatch> pending_;
  std::size_t pos_ = 0;
};

// One row per example: features..., label. Doubles are written with 17
// significant digits so the round trip is exact.
void write_dataset_csv(const std::filesystem::path& path, const LabeledBatch& batch);
LabeledBatch read_dataset_csv(const std::filesystem::path& path);

// Mixes a base seed with a stream tag so independent components draw from
// decorrelated generators.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace ulab
