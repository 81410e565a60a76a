#include "ulab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ulab {

namespace {

void shuffle_rows(LabeledBatch& b, std::mt19937_64& rng) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(b.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  b = select(b, perm);
}

LabeledBatch draw_blobs(const BlobsConfig& cfg, int per_class, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  LabeledBatch out;
  out.inputs.resize(Eigen::Index{per_class} * cfg.num_classes, cfg.dim);
  out.labels.reserve(static_cast<std::size_t>(per_class) * cfg.num_classes);
  Eigen::Index row = 0;
  for (int k = 0; k < cfg.num_classes; ++k) {
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int d = 0; d < cfg.dim; ++d) {
        out.inputs(row, d) = noise(rng) + (d == k ? cfg.separation : 0.0);
      }
      out.labels.push_back(k);
    }
  }
  shuffle_rows(out, rng);
  return out;
}

LabeledBatch draw_rings(const RingsConfig& cfg, int per_class, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  LabeledBatch out;
  out.inputs.resize(Eigen::Index{per_class} * 2, cfg.dim);
  Eigen::Index row = 0;
  for (int k = 0; k < 2; ++k) {
    const double r = k == 0 ? cfg.inner_radius : cfg.outer_radius;
    for (int i = 0; i < per_class; ++i, ++row) {
      const double a = angle(rng);
      out.inputs(row, 0) = r * std::cos(a) + noise(rng);
      out.inputs(row, 1) = r * std::sin(a) + noise(rng);
      for (int d = 2; d < cfg.dim; ++d) out.inputs(row, d) = noise(rng);
      out.labels.push_back(k);
    }
  }
  shuffle_rows(out, rng);
  return out;
}

std::vector<std::int64_t> complement(std::int64_t n, const std::vector<std::int64_t>& sorted) {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(n) - sorted.size());
  std::size_t j = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (j < sorted.size() && sorted[j] == i) {
      ++j;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainTest make_gaussian_blobs(const BlobsConfig& cfg, std::uint64_t seed) {
  if (cfg.num_classes < 2) throw std::invalid_argument("blobs: need at least 2 classes");
  if (cfg.train_per_class < 2 || cfg.test_per_class < 1) {
    throw std::invalid_argument("blobs: per_class must be at least 2");
  }
  if (cfg.dim < cfg.num_classes) throw std::invalid_argument("blobs: dim must be >= num_classes");
  if (cfg.separation < 0.0 || cfg.noise_std <= 0.0) {
    throw std::invalid_argument("blobs: separation must be >= 0 and noise_std > 0");
  }
  std::mt19937_64 rng(seed);
  TrainTest out;
  out.train = draw_blobs(cfg, cfg.train_per_class, rng);
  out.test = draw_blobs(cfg, cfg.test_per_class, rng);
  return out;
}

TrainTest make_rings(const RingsConfig& cfg, std::uint64_t seed) {
  if (cfg.train_per_class < 2 || cfg.test_per_class < 1) {
    throw std::invalid_argument("rings: per_class must be at least 2");
  }
  if (cfg.dim < 2) throw std::invalid_argument("rings: dim must be at least 2");
  std::mt19937_64 rng(seed);
  TrainTest out;
  out.train = draw_rings(cfg, cfg.train_per_class, rng);
  out.test = draw_rings(cfg, cfg.test_per_class, rng);
  return out;
}

std::string_view to_string(Scenario s) {
  return s == Scenario::random_fraction ? "random_fraction" : "class_fraction";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "random_fraction") return Scenario::random_fraction;
  if (s == "class_fraction") return Scenario::class_fraction;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

DatasetSplit split_forget(const LabeledBatch& train, const LabeledBatch& test,
                          const ScenarioConfig& cfg) {
  if (!(cfg.fraction > 0.0 && cfg.fraction < 1.0)) {
    throw std::invalid_argument("forget fraction must lie in (0, 1)");
  }
  std::vector<std::int64_t> pool;
  if (cfg.kind == Scenario::random_fraction) {
    pool.resize(static_cast<std::size_t>(train.size()));
    std::iota(pool.begin(), pool.end(), 0);
  } else {
    if (!cfg.target_class) throw std::invalid_argument("class_fraction requires a target class");
    for (std::size_t i = 0; i < train.labels.size(); ++i) {
      if (train.labels[i] == *cfg.target_class) pool.push_back(static_cast<std::int64_t>(i));
    }
    if (pool.empty()) throw std::invalid_argument("target class has no members in train");
  }
  const auto count = static_cast<std::size_t>(std::llround(cfg.fraction * static_cast<double>(pool.size())));
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::int64_t> forget(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(forget.begin(), forget.end());
  if (forget.empty()) throw std::invalid_argument("forget set would be empty");
  if (static_cast<Eigen::Index>(forget.size()) == train.size()) {
    throw std::invalid_argument("retain set would be empty");
  }

  DatasetSplit split;
  split.retain_indices = complement(train.size(), forget);
  split.forget_indices = std::move(forget);
  split.train = train;
  split.test = test;
  split.retain = select(train, split.retain_indices);
  split.forget = select(train, split.forget_indices);
  split.scenario = cfg.kind;
  split.fraction = cfg.fraction;
  split.target_class = cfg.target_class;
  return split;
}

LabeledBatch randomize_labels(const LabeledBatch& batch, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("randomize_labels: need at least 2 classes");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shift(1, num_classes - 1);
  LabeledBatch out = batch;
  for (auto& y : out.labels) y = (y + shift(rng)) % num_classes;
  return out;
}

BatchStream::BatchStream(const LabeledBatch& source, int batch_size, std::uint64_t seed)
    : source_(&source), batch_size_(batch_size), rng_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (source.empty()) throw std::invalid_argument("cannot batch an empty dataset");
}

std::size_t BatchStream::batches_per_epoch() const {
  const auto n = static_cast<std::size_t>(source_->size());
  const auto b = static_cast<std::size_t>(batch_size_);
  return (n + b - 1) / b;
}

std::vector<std::vector<std::int64_t>> BatchStream::next_epoch_indices() {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(source_->size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng_);
  std::vector<std::vector<std::int64_t>> chunks;
  for (std::size_t i = 0; i < perm.size(); i += static_cast<std::size_t>(batch_size_)) {
    const auto end = std::min(perm.size(), i + static_cast<std::size_t>(batch_size_));
    chunks.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                        perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return chunks;
}

std::vector<LabeledBatch> BatchStream::next_epoch() {
  std::vector<LabeledBatch> out;
  for (const auto& idx : next_epoch_indices()) out.push_back(select(*source_, idx));
  return out;
}

CyclingLoader::CyclingLoader(const LabeledBatch& source, int batch_size, std::uint64_t seed)
    : stream_(source, batch_size, seed) {}

LabeledBatch CyclingLoader::next() {
  if (pos_ == pending_.size()) {
    pending_ = stream_.next_epoch();
    pos_ = 0;
  }
  return pending_[pos_++];
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledBatch& batch) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index d = 0; d < batch.inputs.cols(); ++d) out << 'x' << d << ',';
  out << "label\n";
  char buf[40];
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    for (Eigen::Index d = 0; d < batch.inputs.cols(); ++d) {
      std::snprintf(buf, sizeof buf, "%.17g,", batch.inputs(i, d));
      out << buf;
    }
    out << batch.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

LabeledBatch read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file " + path.string());
  const auto width = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col < width) {
        values.push_back(std::stod(cell));
      } else {
        labels.push_back(std::stoi(cell));
      }
      ++col;
    }
    if (col != width + 1) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(width + 1) + " fields");
    }
  }
  LabeledBatch out;
  out.labels = std::move(labels);
  out.inputs = Eigen::Map<const RowMatrix>(values.data(), static_cast<Eigen::Index>(out.labels.size()), width);
  return out;
}

}  // namespace ulab
