#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ulab/harness.hpp"

using namespace ulab;
namespace fs = std::filesystem;

namespace {

// metrics.csv with the wall-clock column zeroed.
std::string timing_free(const fs::path& p) {
  std::string out;
  for (auto row : read_metrics_csv(p)) {
    row.report.rte_seconds = 0.0;
    out += metrics_csv_line(row) + "\n";
  }
  return out;
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ulab_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  ExperimentConfig small() const {
    ExperimentConfig c;
    c.model = {4, {8}, 4, Activation::relu};
    c.blobs.dim = 4;
    c.blobs.train_per_class = 25;
    c.blobs.test_per_class = 10;
    c.blobs.separation = 2.0;
    c.train_epochs = 5;
    c.train_lr = 0.1;
    c.unlearn_epochs = 2;
    c.unlearn_lr = 0.05;
    c.batch_size = 16;
    c.seeds = {0};
    c.output_dir = dir_;
    return c;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(HarnessTest, OneRunOneRecord) {
  auto c = small();
  c.methods = {MethodName::SRL};
  c.addons = {MaskKind::focus};
  const auto recs = run_sweep(c);
  ASSERT_EQ(recs.size(), 1u);
  const auto& r = recs[0];
  EXPECT_FALSE(r.error);
  EXPECT_EQ(r.rows.size(), 3u);
  for (const char* f : {"metrics.csv", "manifest.json", "theta_u.ckpt", "agree_prob.csv", "grad_inner.csv", "done"}) {
    EXPECT_TRUE(fs::exists(r.dir / f)) << f;
  }
  EXPECT_TRUE(fs::exists(r.theta0_path));
  EXPECT_TRUE(fs::exists(r.ideal_path));
  EXPECT_TRUE(fs::exists(dir_ / "aggregate.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "aggregate.txt"));
  EXPECT_EQ(r.manifest.at("method"), "SRL");
  EXPECT_EQ(r.manifest.at("addon"), "focus");
  EXPECT_EQ(run_id_for(r.manifest), r.run_id);
  EXPECT_EQ(load_checkpoint(r.unlearned_path).spec, c.model);
}

TEST_F(HarnessTest, ResumeSkipsCompletedRuns) {
  auto c = small();
  c.addons = {MaskKind::none};
  const auto first = run_sweep(c);
  ASSERT_EQ(first.size(), 1u);
  const auto csv = timing_free(first[0].dir / "metrics.csv");
  const auto stamp = fs::last_write_time(first[0].dir / "metrics.csv");
  // An interrupted run (no completion marker) is redone; a completed one is not.
  const auto second = run_sweep(c);
  EXPECT_EQ(fs::last_write_time(first[0].dir / "metrics.csv"), stamp);
  EXPECT_EQ(second[0].run_id, first[0].run_id);
  fs::remove(first[0].dir / "done");
  fs::remove(first[0].dir / "metrics.csv");
  run_sweep(c);
  EXPECT_EQ(timing_free(first[0].dir / "metrics.csv"), csv);
}

TEST_F(HarnessTest, RunIdsSeparateSettings) {
  auto c = small();
  const RunKey k{MethodName::SRL, MaskKind::none, 0};
  const auto id = run_id_for(make_manifest(c, k));
  EXPECT_EQ(id, run_id_for(make_manifest(c, k)));
  auto d = c;
  d.workers = 7;
  d.output_dir = "elsewhere";
  EXPECT_EQ(run_id_for(make_manifest(d, k)), id);
  d.unlearn_lr = 0.06;
  EXPECT_NE(run_id_for(make_manifest(d, k)), id);
  EXPECT_NE(run_id_for(make_manifest(c, {MethodName::SRL, MaskKind::focus, 0})), id);
  EXPECT_NE(run_id_for(make_manifest(c, {MethodName::SRL, MaskKind::none, 1})), id);
}

TEST_F(HarnessTest, SweepCountsAndAggregates) {
  auto c = small();
  c.methods = {MethodName::NGPlus, MethodName::SRL};
  c.addons = {MaskKind::none, MaskKind::and_mask, MaskKind::focus};
  c.seeds = {0, 1, 2, 3, 4};
  c.workers = 2;
  const auto recs = run_sweep(c);
  ASSERT_EQ(recs.size(), 30u);
  std::set<std::string> ids;
  for (const auto& r : recs) {
    EXPECT_FALSE(r.error) << *r.error;
    ids.insert(r.run_id);
  }
  EXPECT_EQ(ids.size(), 30u);

  const auto loaded = load_records(dir_);
  ASSERT_EQ(loaded.size(), 30u);
  const auto rows = aggregate(loaded);
  ASSERT_EQ(rows.size(), 6u);
  // Recompute every cell from the per-run CSVs.
  for (const auto& row : rows) {
    EXPECT_EQ(row.runs, 5);
    EXPECT_EQ(row.epoch, 2);
    for (const auto& col : metric_columns()) {
      std::vector<double> xs;
      for (const auto& r : loaded) {
        if (std::string(to_string(r.key.method)) == row.method && std::string(to_string(r.key.addon)) == row.addon) {
          xs.push_back(metric_value(read_metrics_csv(r.dir / "metrics.csv").back().report, col));
        }
      }
      ASSERT_EQ(xs.size(), 5u);
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= 5.0;
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      EXPECT_NEAR(row.cells.at(col).mean, mean, 1e-12 * (1.0 + std::abs(mean))) << row.method << col;
      EXPECT_NEAR(row.cells.at(col).std, std::sqrt(ss / 4.0), 1e-12 * (1.0 + std::abs(mean))) << col;
    }
  }
  const auto table = format_aggregate_table(rows);
  EXPECT_NE(table.find("NGPlus"), std::string::npos);
  EXPECT_NE(table.find("RTE / none"), std::string::npos);

  const auto figs = emit_figures(loaded, dir_ / "figures");
  EXPECT_EQ(figs.size(), 30u);
  for (const auto& h : figs) {
    std::int64_t sum = 0;
    for (auto n : h.counts) sum += n;
    EXPECT_EQ(sum, h.total);
    EXPECT_EQ(h.low + h.mid + h.high, h.total);
  }
  EXPECT_TRUE(fs::exists(dir_ / "figures" / "fig_rua.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "figures" / "agree_prob_hist.csv"));
}

TEST_F(HarnessTest, RerunIsBitIdenticalApartFromTiming) {
  auto c = small();
  c.addons = {MaskKind::bernoulli};
  const auto a = run_sweep(c)[0];
  const auto csv_a = read_metrics_csv(a.dir / "metrics.csv");
  fs::remove_all(dir_);
  const auto b = run_sweep(c)[0];
  const auto csv_b = read_metrics_csv(b.dir / "metrics.csv");
  ASSERT_EQ(csv_a.size(), csv_b.size());
  for (std::size_t i = 0; i < csv_a.size(); ++i) {
    auto ra = csv_a[i], rb = csv_b[i];
    ra.report.rte_seconds = rb.report.rte_seconds = 0.0;
    EXPECT_EQ(metrics_csv_line(ra), metrics_csv_line(rb));
  }
  EXPECT_EQ(load_checkpoint(a.unlearned_path).theta, load_checkpoint(b.unlearned_path).theta);
}

TEST_F(HarnessTest, FailedRunIsRecordedAndSweepContinues) {
  auto c = small();
  c.addons = {MaskKind::none};
  c.unlearn_lr = 1e300;  // overflows on the first step
  c.seeds = {0, 1};
  const auto recs = run_sweep(c);
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& r : recs) EXPECT_TRUE(r.error.has_value());
  EXPECT_TRUE(load_records(dir_).empty());
}

TEST(Histogram, PartitionAndEdges) {
  Eigen::VectorXd v(7);
  v << 0.0, 0.1, 0.35, 0.5, 0.65, 0.999, 1.0;
  const auto h = summarize_agree_prob(v, 10);
  EXPECT_EQ(h.counts, (std::vector<std::int64_t>{1, 1, 0, 1, 0, 1, 1, 0, 0, 2}));
  EXPECT_EQ(h.low, 2);
  EXPECT_EQ(h.mid, 3);
  EXPECT_EQ(h.high, 2);
  EXPECT_EQ(h.total, 7);
  EXPECT_THROW(histogram(v, 0), std::invalid_argument);
}

TEST(Aggregate, FlatSeriesHasZeroStd) {
  RunRecord r;
  r.key = {MethodName::SRL, MaskKind::none, 0};
  for (int e = 0; e < 3; ++e) {
    MetricsRow row;
    row.method = "SRL";
    row.addon = "none";
    row.report.epoch = e;
    row.report.ua = 42.0;
    for (auto f : kAllMiaFeatures) row.report.mia[std::string(to_string(f))] = 0.5;
    r.rows.push_back(row);
  }
  const auto rows = aggregate({r});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].runs, 1);
  EXPECT_EQ(rows[0].cells.at("ua").mean, 42.0);
  EXPECT_EQ(rows[0].cells.at("ua").std, 0.0);
  const auto dir = fs::temp_directory_path() / "ulab_flat_series";
  fs::remove_all(dir);
  emit_figures({r}, dir);
  std::ifstream in(dir / "fig_ua.csv");
  std::string line;
  std::getline(in, line);
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find(",SRL,42"), std::string::npos) << line;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
    ++n;
  }
  EXPECT_EQ(n, 3);
  fs::remove_all(dir);
}

TEST(Training, InitialModelDeterministicAndZeroEpochIsInit) {
  ExperimentConfig c;
  c.blobs.train_per_class = 50;
  const auto data = make_dataset(c);
  EXPECT_EQ(train_initial(c, data.train, 3), train_initial(c, data.train, 3));
  EXPECT_NE(train_initial(c, data.train, 3), train_initial(c, data.train, 4));
  c.train_epochs = 0;
  const auto t = train_initial(c, data.train, 3);
  EXPECT_NE(t, ParamVector::Zero(t.size()));
  EXPECT_EQ(t, train_initial(c, data.train, 3));
  EXPECT_EQ(t, train_ideal(c, make_split(c, data, 3), 3));
}

TEST(Training, SeparableBlobsAreLearned) {
  // Default architecture and schedule on well-separated blobs; thresholds
  // frozen from a pilot run.
  ExperimentConfig c;
  c.blobs.separation = 6.0;
  const auto data = make_dataset(c);
  for (std::uint64_t seed : {0, 1}) {
    const auto split = make_split(c, data, seed);
    const auto theta = train_initial(c, data.train, seed);
    EXPECT_GE(accuracy(c.model, theta, split.retain), 99.0);
    EXPECT_GE(accuracy(c.model, theta, split.test), 95.0);
    const auto ideal = train_ideal(c, split, seed);
    EXPECT_EQ(rua(c.model, ideal, ideal, split.forget), 0.0);
    EXPECT_EQ(fidelity(c.model, ideal, ideal, split.forget), 100.0);
  }
}

TEST(Training, SingleForgottenPointBarelyChangesTheIdeal) {
  ExperimentConfig c;
  c.blobs.train_per_class = 100;
  c.fraction = 0.5 / 400.0 + 1e-9;  // rounds to one example
  const auto data = make_dataset(c);
  const auto split = make_split(c, data, 0);
  ASSERT_EQ(split.forget.size(), 1);
  const double t0 = accuracy(c.model, train_initial(c, data.train, 0), data.test);
  const double ti = accuracy(c.model, train_ideal(c, split, 0), data.test);
  EXPECT_LE(std::abs(t0 - ti), 1.0);
}

TEST(Training, HalfForgettingLowersIdealTestAccuracy) {
  // Hard, small problem so that halving the data matters; thresholds frozen
  // from a pilot.
  ExperimentConfig c;
  c.blobs.train_per_class = 15;
  c.blobs.test_per_class = 500;
  c.blobs.separation = 1.5;
  c.model.hidden_dims = {64};
  c.fraction = 0.5;
  const auto data = make_dataset(c);
  double drop = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto split = make_split(c, data, seed);
    const double t0 = accuracy(c.model, train_initial(c, data.train, seed), data.test);
    const double ti = accuracy(c.model, train_ideal(c, split, seed), data.test);
    std::printf("seed %llu initial TA %.2f ideal TA %.2f\n", static_cast<unsigned long long>(seed), t0, ti);
    drop += t0 - ti;
  }
  EXPECT_GT(drop / 5.0, 0.0);
}

TEST(Manifest, RoundTripsThroughFromManifest) {
  ExperimentConfig c;
  c.model.hidden_dims = {12, 6};
  c.unlearn_lr = 0.3;
  c.scenario = Scenario::class_fraction;
  c.target_class = 1;
  c.variance_provider = VarianceProvider::per_example;
  const RunKey key{MethodName::SCRUB, MaskKind::prob, 17};
  const auto manifest = make_manifest(c, key);
  const auto [back, back_key] = from_manifest(nlohmann::json::parse(manifest.dump()), "replay");
  EXPECT_EQ(make_manifest(back, back_key), manifest);
  EXPECT_EQ(back.output_dir, fs::path("replay"));
  EXPECT_EQ(back_key.method, key.method);
  EXPECT_EQ(back_key.addon, key.addon);
  EXPECT_EQ(back_key.seed, key.seed);
}
