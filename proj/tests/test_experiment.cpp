#include "tthf/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace tthf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tthf_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_config(const fs::path& out) {
  json j = json::parse(R"({
    "algorithm": "tthf",
    "seeds": [1, 2, 3],
    "dataset": {"m": 4, "n_labels": 10, "per_label": 12},
    "partition": {"mode": "extreme"},
    "topology": {"n_clusters": 3, "s_c": 4},
    "schedule": {"T": 30, "tau": 10, "gamma_mode": "fixed", "gamma": 2, "batch_size": 4}
  })");
  j["output_dir"] = out.string();
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_file(const json& cfg, const fs::path& dir, std::string* log_out = nullptr) {
  const fs::path file = dir / "config.json";
  std::ofstream(file) << cfg.dump(2);
  std::ostringstream log;
  const int code = run_experiment_file(file.string(), log);
  if (log_out != nullptr) *log_out = log.str();
  return code;
}

MetricsTrace synthetic_trace(const std::vector<std::vector<int>>& gammas, const std::vector<long>& agg_at) {
  MetricsTrace tr;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    MetricsRow row;
    row.t = static_cast<long>(i) + 1;
    for (long a : agg_at) row.aggregation |= a == row.t;
    tr.rows.push_back(row);
    tr.gammas.push_back(gammas[i]);
  }
  return tr;
}

}  // namespace

TEST(ParseConfig, MissingFieldNamesThePath) {
  const auto dir = scratch("missing");
  json cfg = small_config(dir / "out");
  cfg["schedule"].erase("T");
  std::string log;
  EXPECT_EQ(run_file(cfg, dir, &log), 2);
  EXPECT_NE(log.find("schedule.T"), std::string::npos) << log;
}

TEST(ParseConfig, UnknownFieldRejected) {
  json cfg = small_config("unused");
  cfg["topology"]["n_cluster"] = 4;
  try {
    parse_config(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "topology.n_cluster");
  }
}

TEST(ParseConfig, Defaults) {
  const auto cfg = parse_config(json::parse(R"({"algorithm": "tthf", "seeds": [0], "schedule": {"T": 5}})"));
  EXPECT_EQ(cfg.topology.n_clusters, 25);
  EXPECT_EQ(cfg.topology.s_c, 5);
  EXPECT_DOUBLE_EQ(cfg.topology.d_c, 1.0 / 8);
  EXPECT_DOUBLE_EQ(cfg.topology.channel.noise_psd_dbm_hz, -173.0);
  EXPECT_DOUBLE_EQ(cfg.train.cost.e_d2d / cfg.train.cost.e_glob, 0.04);
  EXPECT_DOUBLE_EQ(cfg.train.cost.delay_d2d / cfg.train.cost.delay_glob, 0.04);
}

TEST(ConfigHash, StableUnderReordering) {
  const json a = json::parse(R"({"a": 1, "b": {"x": [1, 2], "y": "z"}})");
  const json b = json::parse(R"({"b": {"y": "z", "x": [1, 2]}, "a": 1})");
  const json c = json::parse(R"({"b": {"y": "z", "x": [2, 1]}, "a": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(RunExperiment, ThreeSeedsWriteThreeTracesAndASummary) {
  const auto dir = scratch("three");
  EXPECT_EQ(run_file(small_config(dir / "out"), dir), 0);
  int traces = 0;
  for (const auto& e : fs::directory_iterator(dir / "out")) {
    traces += e.path().filename().string().rfind("trace_seed", 0) == 0;
  }
  EXPECT_EQ(traces, 3);
  const json summary = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_EQ(summary["seeds"].size(), 3u);
  EXPECT_EQ(summary["schema_version"], kSummarySchemaVersion);
  EXPECT_TRUE(summary["mean"].contains("final_gap"));
  EXPECT_TRUE(summary["seeds"][0].contains("time_to_75pct_peak"));
}

TEST(RunExperiment, RerunIsByteIdentical) {
  const auto dir = scratch("rerun");
  json cfg = small_config(dir / "a");
  ASSERT_EQ(run_file(cfg, dir), 0);
  cfg["output_dir"] = (dir / "b").string();
  cfg["threads"] = 4;
  ASSERT_EQ(run_file(cfg, dir), 0);
  for (const char* f : {"trace_seed1.csv", "trace_seed2.csv", "trace_seed3.csv", "control_seed1.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(RunExperiment, DivergenceExitsOne) {
  const auto dir = scratch("diverge");
  json cfg = small_config(dir / "out");
  cfg["step"] = {{"kind", "constant"}, {"eta_beta_fraction", 100.0}};
  cfg["schedule"]["T"] = 2000;
  cfg["schedule"]["tau"] = 1000;
  EXPECT_EQ(run_file(cfg, dir), 1);
}

TEST(AccumulateCost, NoConsensusChargesAggregationsOnly) {
  const auto tr = synthetic_trace(std::vector<std::vector<int>>(12, {0, 0}), {4, 8, 12});
  CostParams cost;
  cost.e_glob = 2.5;
  const auto c = accumulate_cost(tr, cost, {3, 3});
  EXPECT_DOUBLE_EQ(c.total_energy, 3 * 2.5);
  EXPECT_DOUBLE_EQ(c.total_delay, 3 * cost.delay_glob);
  EXPECT_EQ(c.intervals.size(), 3u);
}

TEST(AccumulateCost, SingleRoundBurst) {
  const auto tr = synthetic_trace({{3}}, {});
  CostParams cost;
  const auto c = accumulate_cost(tr, cost, {5});
  EXPECT_DOUBLE_EQ(c.total_energy, 15 * cost.e_d2d);
  EXPECT_DOUBLE_EQ(c.total_delay, 3 * cost.delay_d2d);
}

TEST(AccumulateCost, MatchesRowByRowOracle) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int clusters = 1 + static_cast<int>(gen() % 4);
    const int T = 5 + static_cast<int>(gen() % 40);
    std::vector<int> sizes(clusters);
    for (auto& s : sizes) s = 1 + static_cast<int>(gen() % 6);
    std::vector<std::vector<int>> gammas(T, std::vector<int>(clusters));
    std::vector<long> agg;
    for (int t = 1; t <= T; ++t) {
      for (auto& g : gammas[t - 1]) g = static_cast<int>(gen() % 5);
      if (gen() % 4 == 0 || t == T) agg.push_back(t);
    }
    CostParams cost{0.03, 1.7, 0.02, 0.9, 1.0, 2.0, 0.5};
    const bool full = gen() % 2 == 0;
    const auto c = accumulate_cost(synthetic_trace(gammas, agg), cost, sizes, full);

    int devices = 0;
    for (int s : sizes) devices += s;
    double energy = 0.0, delay = 0.0;
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < clusters; ++k) {
        energy += gammas[t][k] * sizes[k] * cost.e_d2d;
        delay += gammas[t][k] * cost.delay_d2d;
      }
    }
    energy += agg.size() * cost.e_glob * (full ? static_cast<double>(devices) / clusters : 1.0);
    delay += agg.size() * cost.delay_glob;
    EXPECT_NEAR(c.total_energy, energy, 1e-9 * energy);
    EXPECT_NEAR(c.total_delay, delay, 1e-9 * delay);
    EXPECT_NEAR(c.total_objective, cost.c1 * energy + cost.c2 * delay, 1e-9 * (energy + delay));
    ASSERT_EQ(c.intervals.size(), agg.size());
    double interval_energy = 0.0;
    for (const auto& iv : c.intervals) interval_energy += iv.energy_term * (iv.t_end - iv.t_start) / cost.c1;
    EXPECT_NEAR(interval_energy, energy, 1e-9 * energy);
  }
}

TEST(CompareRuns, IdenticalTracesHaveZeroDeltas) {
  const auto dir = scratch("compare");
  json cfg = small_config(dir / "out");
  cfg["seeds"] = {7};
  ASSERT_EQ(run_file(cfg, dir), 0);
  const auto a = read_trace_csv((dir / "out" / "trace_seed7.csv").string());
  const auto r = compare_runs(a, a);
  ASSERT_EQ(r.deltas.size(), 30u);
  for (double d : r.deltas) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(r.crossover_t, -1);
  EXPECT_DOUBLE_EQ(r.energy_ratio, 1.0);
}

TEST(CompareRuns, MismatchedLengthsRejected) {
  TraceTable a, b;
  a.rows.resize(3);
  b.rows.resize(4);
  EXPECT_THROW(compare_runs(a, b), InvalidArgument);
}

TEST(CompareRuns, RatiosMatchCostQuotients) {
  const auto dir = scratch("ratios");
  json cfg = small_config(dir / "x");
  cfg["seeds"] = {3};
  ASSERT_EQ(run_file(cfg, dir), 0);
  cfg["output_dir"] = (dir / "y").string();
  cfg["schedule"]["gamma"] = 5;
  ASSERT_EQ(run_file(cfg, dir), 0);
  const auto a = read_trace_csv((dir / "x" / "trace_seed3.csv").string());
  const auto b = read_trace_csv((dir / "y" / "trace_seed3.csv").string());
  const auto r = compare_runs(a, b);

  const auto parsed = parse_config(cfg);
  const auto ta = run_single(parse_config(small_config(dir / "x")), 3, 1);
  const auto tb = run_single(parsed, 3, 1);
  const std::vector<int> sizes(3, 4);
  const auto ca = accumulate_cost(ta, parsed.train.cost, sizes);
  const auto cb = accumulate_cost(tb, parsed.train.cost, sizes);
  EXPECT_NEAR(r.energy_ratio, ca.total_energy / cb.total_energy, 1e-6);
  EXPECT_NEAR(r.delay_ratio, ca.total_delay / cb.total_delay, 1e-6);
  EXPECT_NEAR(r.final_delta, a.rows.back().loss_gap_sampled - b.rows.back().loss_gap_sampled, 1e-12);
}

TEST(Sweep, TimeToAccuracyNonIncreasingInRounds) {
  json raw = json::parse(R"({
    "algorithm": "tthf",
    "seeds": [1, 2, 3, 4],
    "dataset": {"m": 6, "n_labels": 10, "per_label": 40, "seed": 11},
    "partition": {"mode": "extreme"},
    "topology": {"n_clusters": 5, "s_c": 4},
    "loss": {"kind": "svm"},
    "schedule": {"T": 150, "tau": 20, "gamma_mode": "fixed", "batch_size": 8}
  })");
  std::vector<double> mean_t;
  std::vector<std::vector<MetricsTrace>> runs;
  double peak = 0.0;
  for (int gamma : {0, 1, 2, 5}) {
    raw["schedule"]["gamma"] = gamma;
    const auto cfg = parse_config(raw);
    runs.emplace_back();
    for (auto seed : cfg.seeds) {
      runs.back().push_back(run_single(cfg, seed, 1));
      for (const auto& r : runs.back().back().rows) {
        if (r.aggregation) peak = std::max(peak, r.accuracy);
      }
    }
  }
  for (const auto& group : runs) {
    double sum = 0.0;
    for (const auto& tr : group) {
      const long t = time_to_accuracy(tr, peak);
      sum += t < 0 ? 151.0 : static_cast<double>(t);
    }
    mean_t.push_back(sum / static_cast<double>(group.size()));
  }
  for (std::size_t i = 1; i < mean_t.size(); ++i) EXPECT_LE(mean_t[i], mean_t[i - 1]) << i;
}
