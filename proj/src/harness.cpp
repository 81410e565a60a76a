#include "ulab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

namespace ulab {

namespace fs = std::filesystem;

namespace {

enum SeedStream : std::uint64_t { kSplit = 1, kInit = 2, kOrder = 3, kUnlearn = 4 };

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Config lines as key -> value, minus the keys that do not affect a run's output.
nlohmann::json config_object(const ExperimentConfig& cfg, bool for_models) {
  static const std::set<std::string> per_run = {"run.workers", "run.output_dir", "run.seeds",
                                                "unlearn.methods", "unlearn.addons"};
  nlohmann::json obj = nlohmann::json::object();
  std::istringstream in(to_config_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq);
    if (per_run.count(key)) continue;
    if (for_models && key.rfind("unlearn.", 0) == 0) continue;
    obj[key] = line.substr(eq + 3);
  }
  return obj;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void save_checkpoint_atomic(const fs::path& path, const ModelSpec& spec, const ParamVector& theta) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, spec, theta);
  fs::rename(tmp, path);
}

std::mutex& model_mutex() {
  static std::mutex m;
  return m;
}

// Trains or loads the (theta_0, theta*) pair of one seed.
ModelPair ensure_models(const ExperimentConfig& cfg, const TrainTest& data, const DatasetSplit& split,
                        std::uint64_t seed) {
  const auto tag = hex64(fnv1a(config_object(cfg, true).dump()));
  const fs::path dir = cfg.output_dir / "models" / tag;
  ModelPair pair;
  pair.theta0_path = dir / ("seed_" + std::to_string(seed) + "_theta0.ckpt");
  pair.ideal_path = dir / ("seed_" + std::to_string(seed) + "_ideal.ckpt");
  {
    std::lock_guard lock(model_mutex());
    fs::create_directories(dir);
  }
  if (fs::exists(pair.theta0_path) && fs::exists(pair.ideal_path)) {
    pair.theta0 = load_checkpoint(pair.theta0_path).theta;
    pair.ideal = load_checkpoint(pair.ideal_path).theta;
    return pair;
  }
  pair.theta0 = train_initial(cfg, data.train, seed);
  pair.ideal = train_ideal(cfg, split, seed);
  save_checkpoint_atomic(pair.theta0_path, cfg.model, pair.theta0);
  save_checkpoint_atomic(pair.ideal_path, cfg.model, pair.ideal);
  spdlog::info("seed {}: theta_0 train acc {:.2f} test acc {:.2f}; ideal test acc {:.2f}", seed,
               accuracy(cfg.model, pair.theta0, data.train), accuracy(cfg.model, pair.theta0, data.test),
               accuracy(cfg.model, pair.ideal, data.test));
  return pair;
}

RunRecord load_record(const fs::path& dir) {
  RunRecord rec;
  rec.dir = dir;
  rec.run_id = dir.filename().string();
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest in " + dir.string());
  rec.manifest = nlohmann::json::parse(in);
  rec.key.method = parse_method(rec.manifest.at("method").get<std::string>());
  rec.key.addon = parse_mask_kind(rec.manifest.at("addon").get<std::string>());
  rec.key.seed = rec.manifest.at("seed").get<std::uint64_t>();
  rec.rows = read_metrics_csv(dir / "metrics.csv");
  rec.unlearned_path = dir / "theta_u.ckpt";
  return rec;
}

void write_grad_inner(const fs::path& path, const std::vector<double>& values) {
  std::ostringstream os;
  os << "step,grad_inner\n";
  char buf[40];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.12g", values[i]);
    os << i << ',' << buf << '\n';
  }
  write_text_atomic(path, os.str());
}

std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

template <typename F>
void parallel_for(std::size_t n, int workers, F&& body) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
}

}  // namespace

ModelPair prepare_models(const ExperimentConfig& cfg, std::uint64_t seed) {
  const TrainTest data = make_dataset(cfg);
  return ensure_models(cfg, data, make_split(cfg, data, seed), seed);
}

TrainTest make_dataset(const ExperimentConfig& cfg) {
  if (cfg.generator == "rings") return make_rings(cfg.rings, cfg.data_seed);
  BlobsConfig b = cfg.blobs;
  b.num_classes = cfg.model.num_classes;
  return make_gaussian_blobs(b, cfg.data_seed);
}

DatasetSplit make_split(const ExperimentConfig& cfg, const TrainTest& data, std::uint64_t seed) {
  ScenarioConfig sc{cfg.scenario, cfg.fraction, cfg.target_class, derive_seed(seed, kSplit)};
  return split_forget(data.train, data.test, sc);
}

ParamVector train_model(const ModelSpec& spec, const ParamVector& init, const LabeledBatch& data,
                        int epochs, double lr, int batch_size, std::uint64_t order_seed) {
  ParamVector theta = init;
  BatchStream stream(data, batch_size, order_seed);
  for (int e = 0; e < epochs; ++e) {
    for (const auto& b : stream.next_epoch()) {
      const ParamVector g = grad(spec, theta, b, LossKind::cross_entropy);
      if (!g.allFinite()) throw std::runtime_error("training diverged at epoch " + std::to_string(e));
      theta -= lr * g;
    }
  }
  return theta;
}

ParamVector train_initial(const ExperimentConfig& cfg, const LabeledBatch& train, std::uint64_t seed) {
  return train_model(cfg.model, init_params(cfg.model, derive_seed(seed, kInit)), train,
                     cfg.train_epochs, cfg.train_lr, cfg.batch_size, derive_seed(seed, kOrder));
}

ParamVector train_ideal(const ExperimentConfig& cfg, const DatasetSplit& split, std::uint64_t seed) {
  return train_model(cfg.model, init_params(cfg.model, derive_seed(seed, kInit)), split.retain,
                     cfg.train_epochs, cfg.train_lr, cfg.batch_size, derive_seed(seed, kOrder));
}

nlohmann::json make_manifest(const ExperimentConfig& cfg, const RunKey& key) {
  nlohmann::json m;
  m["code_version"] = kCodeVersion;
  m["method"] = std::string(to_string(key.method));
  m["addon"] = std::string(to_string(key.addon));
  m["seed"] = key.seed;
  m["config"] = config_object(cfg, false);
  return m;
}

std::string run_id_for(const nlohmann::json& manifest) { return hex64(fnv1a(manifest.dump())); }

std::pair<ExperimentConfig, RunKey> from_manifest(const nlohmann::json& manifest,
                                                  const fs::path& output_dir) {
  if (manifest.at("code_version") != kCodeVersion) {
    spdlog::warn("manifest written by '{}', running '{}'",
                 manifest.at("code_version").get<std::string>(), kCodeVersion);
  }
  std::string text;
  for (const auto& [key, value] : manifest.at("config").items()) {
    text += key + " = " + value.get<std::string>() + "\n";
  }
  const auto method = manifest.at("method").get<std::string>();
  const auto addon = manifest.at("addon").get<std::string>();
  const auto seed = manifest.at("seed").get<std::uint64_t>();
  text += "unlearn.methods = " + method + "\nunlearn.addons = " + addon +
          "\nrun.seeds = " + std::to_string(seed) + "\n";
  ExperimentConfig cfg = parse_config(text, "<manifest>");
  cfg.output_dir = output_dir;
  return {cfg, RunKey{parse_method(method), parse_mask_kind(addon), seed}};
}

RunRecord execute_run(const ExperimentConfig& cfg, const RunKey& key) {
  RunRecord rec;
  rec.key = key;
  rec.manifest = make_manifest(cfg, key);
  rec.run_id = run_id_for(rec.manifest);
  rec.dir = cfg.output_dir / "runs" / rec.run_id;
  if (fs::exists(rec.dir / "done")) {
    spdlog::info("run {} ({} {} seed {}) already complete, skipping", rec.run_id,
                 to_string(key.method), to_string(key.addon), key.seed);
    return load_record(rec.dir);
  }
  fs::create_directories(rec.dir);

  const TrainTest data = make_dataset(cfg);
  const DatasetSplit split = make_split(cfg, data, key.seed);
  const ModelPair models = ensure_models(cfg, data, split, key.seed);
  rec.theta0_path = models.theta0_path;
  rec.ideal_path = models.ideal_path;

  const auto method = make_method(key.method, models.theta0, cfg.gamma);
  const auto addon = make_addon(cfg, key.addon);
  RunOptions opt;
  opt.epochs = cfg.unlearn_epochs;
  opt.eta = cfg.unlearn_lr;
  opt.eps = cfg.eps;
  opt.batch_size = cfg.batch_size;
  opt.seed = derive_seed(key.seed, kUnlearn);
  const RunResult result =
      run_unlearning(cfg.model, models.theta0, models.ideal, method, addon, split, opt);

  std::vector<MetricsRow> rows;
  for (const auto& r : result.reports) {
    rows.push_back({rec.run_id, key.seed, std::string(to_string(key.method)),
                    std::string(to_string(key.addon)), r});
  }
  write_metrics_csv(rec.dir / "metrics.csv", rows);
  write_text_atomic(rec.dir / "manifest.json", rec.manifest.dump(2) + "\n");
  rec.unlearned_path = rec.dir / "theta_u.ckpt";
  save_checkpoint_atomic(rec.unlearned_path, cfg.model, result.theta);
  if (result.agree_prob_snapshot.size() > 0) {
    write_mask_csv(rec.dir / "agree_prob.csv", result.agree_prob_snapshot);
  }
  write_grad_inner(rec.dir / "grad_inner.csv", result.grad_inner);
  write_text_atomic(rec.dir / "done", "ok\n");

  rec.rows = read_metrics_csv(rec.dir / "metrics.csv");
  const auto& last = rec.rows.back().report;
  spdlog::info("run {} {}-{} seed {}: UA {:.2f} RA {:.2f} TA {:.2f} rUA {:+.2f} MIA-entropy {:.3f}",
               rec.run_id, to_string(key.method), to_string(key.addon), key.seed, last.ua, last.ra,
               last.ta, last.rua, last.mia.at("entropy"));
  return rec;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  fs::create_directories(cfg.output_dir);

  // Train every seed's model pair first so concurrent runs never race on them.
  const TrainTest data = make_dataset(cfg);
  parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    ensure_models(cfg, data, make_split(cfg, data, seed), seed);
  });

  std::vector<RunKey> keys;
  for (auto m : cfg.methods) {
    for (auto a : cfg.addons) {
      for (auto s : cfg.seeds) keys.push_back({m, a, s});
    }
  }
  std::vector<RunRecord> records(keys.size());
  parallel_for(keys.size(), cfg.workers, [&](std::size_t i) {
    try {
      records[i] = execute_run(cfg, keys[i]);
    } catch (const std::exception& e) {
      records[i].key = keys[i];
      records[i].manifest = make_manifest(cfg, keys[i]);
      records[i].run_id = run_id_for(records[i].manifest);
      records[i].error = e.what();
      spdlog::error("run {} {}-{} seed {} failed: {}", records[i].run_id, to_string(keys[i].method),
                    to_string(keys[i].addon), keys[i].seed, e.what());
    }
  });

  const auto rows = aggregate(records);
  write_aggregate(cfg.output_dir, rows);
  return records;
}

std::vector<RunRecord> load_records(const fs::path& output_dir) {
  std::vector<RunRecord> out;
  const fs::path runs = output_dir / "runs";
  if (!fs::exists(runs)) return out;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (entry.is_directory() && fs::exists(entry.path() / "done")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) out.push_back(load_record(d));
  return out;
}

double metric_value(const MetricsReport& r, const std::string& column) {
  if (column == "ua") return r.ua;
  if (column == "ra") return r.ra;
  if (column == "ta") return r.ta;
  if (column == "rua") return r.rua;
  if (column == "fid") return r.fid;
  if (column == "rte_seconds") return r.rte_seconds;
  if (column.rfind("mia_", 0) == 0) return r.mia.at(column.substr(4));
  throw std::invalid_argument("unknown metric column '" + column + "'");
}

namespace {

AggregateCell mean_std(const std::vector<double>& xs) {
  AggregateCell c;
  if (xs.empty()) return c;
  double sum = 0.0;
  for (double x : xs) sum += x;
  c.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - c.mean) * (x - c.mean);
    c.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return c;
}

std::string series_name(const std::string& method, const std::string& addon) {
  return addon == "none" ? method : method + "-" + addon;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsReport*>> groups;
  for (const auto& rec : records) {
    if (rec.error || rec.rows.empty()) continue;
    const auto& last = rec.rows.back();
    const std::pair key{last.method, last.addon};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&last.report);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& reports = groups[key];
    AggregateRow row;
    row.method = key.first;
    row.addon = key.second;
    row.epoch = reports.front()->epoch;
    row.runs = static_cast<int>(reports.size());
    for (const auto& col : metric_columns()) {
      std::vector<double> xs;
      for (const auto* r : reports) xs.push_back(metric_value(*r, col));
      row.cells[col] = mean_std(xs);
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string format_aggregate_table(const std::vector<AggregateRow>& rows) {
  const std::vector<std::pair<std::string, std::string>> shown = {
      {"mia_entropy", "MIA entropy"}, {"rua", "rUA"}, {"ta", "TA"},       {"ra", "RA"},
      {"ua", "UA"},                   {"fid", "FID"}, {"rte_seconds", "RTE (s)"}};
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"Method", "Epoch", "Runs"};
  for (const auto& [col, title] : shown) header.push_back(title);
  header.push_back("RTE / none");
  table.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{series_name(r.method, r.addon), std::to_string(r.epoch),
                                  std::to_string(r.runs)};
    for (const auto& [col, title] : shown) {
      const auto& c = r.cells.at(col);
      const int prec = col == "mia_entropy" || col == "rte_seconds" ? 3 : 2;
      line.push_back(fmt(c.mean, prec) + " +- " + fmt(c.std, prec));
    }
    std::string ratio = "-";
    for (const auto& base : rows) {
      if (base.method == r.method && base.addon == "none") {
        const double denom = base.cells.at("rte_seconds").mean;
        if (denom > 0.0) ratio = fmt(r.cells.at("rte_seconds").mean / denom, 2);
      }
    }
    line.push_back(ratio);
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(table.front().size(), 0);
  for (const auto& line : table) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream os;
  for (std::size_t l = 0; l < table.size(); ++l) {
    for (std::size_t i = 0; i < table[l].size(); ++i) {
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i]))
         << (i == 0 ? std::left : std::right) << table[l][i];
    }
    os << '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

void write_aggregate(const fs::path& output_dir, const std::vector<AggregateRow>& rows) {
  fs::create_directories(output_dir);
  std::ostringstream csv;
  csv << "method,addon,epoch,runs";
  for (const auto& col : metric_columns()) csv << ',' << col << "_mean," << col << "_std";
  csv << '\n';
  char buf[40];
  for (const auto& r : rows) {
    csv << r.method << ',' << r.addon << ',' << r.epoch << ',' << r.runs;
    for (const auto& col : metric_columns()) {
      const auto& c = r.cells.at(col);
      std::snprintf(buf, sizeof buf, ",%.12g", c.mean);
      csv << buf;
      std::snprintf(buf, sizeof buf, ",%.12g", c.std);
      csv << buf;
    }
    csv << '\n';
  }
  write_text_atomic(output_dir / "aggregate.csv", csv.str());
  write_text_atomic(output_dir / "aggregate.txt", format_aggregate_table(rows));
}

std::vector<std::int64_t> histogram(const Eigen::VectorXd& values, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram: bins must be positive");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

HistogramSummary summarize_agree_prob(const Eigen::VectorXd& f, int bins) {
  HistogramSummary h;
  h.counts = histogram(f, bins);
  h.total = f.size();
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (f[i] < 0.35) {
      ++h.low;
    } else if (f[i] <= 0.65) {
      ++h.mid;
    } else {
      ++h.high;
    }
  }
  return h;
}

std::vector<HistogramSummary> emit_figures(const std::vector<RunRecord>& records, const fs::path& dir) {
  if (records.empty()) throw std::invalid_argument("emit_figures: no records");
  fs::create_directories(dir);
  char buf[64];

  // series -> epoch -> values, per metric
  std::vector<std::string> series_order;
  std::map<std::string, std::map<int, std::vector<const MetricsReport*>>> by_series;
  for (const auto& rec : records) {
    if (rec.error) continue;
    for (const auto& row : rec.rows) {
      const auto s = series_name(row.method, row.addon);
      if (!by_series.count(s)) series_order.push_back(s);
      by_series[s][row.report.epoch].push_back(&row.report);
    }
  }
  for (const auto& col : metric_columns()) {
    std::ostringstream os;
    os << "x,series,mean,std\n";
    for (const auto& s : series_order) {
      for (const auto& [epoch, reports] : by_series[s]) {
        std::vector<double> xs;
        for (const auto* r : reports) xs.push_back(metric_value(*r, col));
        const auto c = mean_std(xs);
        std::snprintf(buf, sizeof buf, ",%.12g,%.12g", c.mean, c.std);
        os << epoch << ',' << s << buf << '\n';
      }
    }
    write_text_atomic(dir / ("fig_" + col + ".csv"), os.str());
  }

  constexpr int kBins = 20;
  std::vector<HistogramSummary> summaries;
  std::ostringstream hist;
  std::ostringstream regimes;
  hist << "series,seed,bin_lo,bin_hi,count\n";
  regimes << "series,seed,below_0.35,between_0.35_0.65,above_0.65,total\n";
  for (const auto& rec : records) {
    if (rec.error || !fs::exists(rec.dir / "agree_prob.csv")) continue;
    auto h = summarize_agree_prob(read_mask_csv(rec.dir / "agree_prob.csv"), kBins);
    h.series = series_name(std::string(to_string(rec.key.method)), std::string(to_string(rec.key.addon)));
    h.seed = rec.key.seed;
    for (int b = 0; b < kBins; ++b) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", static_cast<double>(b) / kBins,
                    static_cast<double>(b + 1) / kBins);
      hist << h.series << ',' << h.seed << ',' << buf << ',' << h.counts[static_cast<std::size_t>(b)] << '\n';
    }
    regimes << h.series << ',' << h.seed << ',' << h.low << ',' << h.mid << ',' << h.high << ','
            << h.total << '\n';
    summaries.push_back(std::move(h));
  }
  write_text_atomic(dir / "agree_prob_hist.csv", hist.str());
  write_text_atomic(dir / "agree_prob_regimes.csv", regimes.str());
  return summaries;
}

}  // namespace ulab
