#pragma once

#include "tthf/data.hpp"
#include "tthf/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tthf {

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kVersion = "tthf 0.1.0";

/// Bad or missing configuration; `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class Algorithm { tthf, baseline, adaptive };

struct DatasetConfig {
  std::string kind = "synthetic";
  SyntheticSpec synthetic;
  std::string csv_path;
  bool csv_header = false;
  bool encode_labels = true;
  /// Fixed data seed; when absent the run seed is used.
  std::optional<std::uint64_t> seed;
};

enum class StepKind { constant, decaying };

struct StepConfig {
  StepKind kind = StepKind::constant;
  /// Constant step; when absent eta = eta_beta_fraction / beta.
  std::optional<double> eta;
  double eta_beta_fraction = 0.5;
  /// Decaying step: gamma = gamma_factor / mu unless gamma is set.
  std::optional<double> gamma;
  double gamma_factor = 2.0;
  /// Absent selects the smallest admissible alpha.
  std::optional<double> alpha;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::tthf;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  int threads = 1;
  DatasetConfig dataset;
  PartitionMode partition = PartitionMode::iid;
  TopologyParams topology;
  LossModel loss;
  StepConfig step;
  TrainConfig train;
  AdaptiveConfig adaptive;
  nlohmann::json raw;
  std::string hash;
};

/// Parses and validates a configuration tree; unspecified fields take defaults.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// FNV-1a of the key-sorted serialization; independent of field order.
std::string config_hash(const nlohmann::json& j);

/// Dataset, partition, topology and constants for one seed.
Network build_network(const ExperimentConfig& cfg, std::uint64_t seed);

/// Resolves the step schedule against the network constants.
StepSchedule resolve_step(const ExperimentConfig& cfg, const Network& net);

MetricsTrace run_single(const ExperimentConfig& cfg, std::uint64_t seed, int threads);

struct IntervalCost {
  int k = 0;
  long t_start = 0;
  long t_end = 0;
  double energy_term = 0.0;
  double delay_term = 0.0;
  double progress_term = 0.0;
};

struct CostSummary {
  double total_energy = 0.0;
  double total_delay = 0.0;
  /// c1 * energy + c2 * delay.
  double total_objective = 0.0;
  std::vector<IntervalCost> intervals;
};

/// Recomputes costs from the per-cluster rounds and aggregation instants.
/// full_uploads marks aggregations where every device uploads.
CostSummary accumulate_cost(const MetricsTrace& trace, const CostParams& cost,
                            const std::vector<int>& cluster_sizes, bool full_uploads = false,
                            long up_to_t = -1);

/// First aggregation instant whose global-model accuracy reaches `fraction` of
/// `peak`; -1 when never.
long time_to_accuracy(const MetricsTrace& trace, double peak, double fraction = 0.75);

/// Runs every seed, writes trace_seed<k>.csv, control_seed<k>.csv and
/// summary.json. Returns the CLI exit code.
int run_experiment(const ExperimentConfig& cfg, std::ostream& log);
int run_experiment_file(const std::string& config_path, std::ostream& log);

struct TraceTable {
  std::vector<MetricsRow> rows;
};

TraceTable read_trace_csv(const std::string& path);

struct CompareReport {
  std::vector<double> deltas;
  /// First t at which the sign of the gap difference flips; -1 when never.
  long crossover_t = -1;
  double final_delta = 0.0;
  double energy_ratio = 0.0;
  double delay_ratio = 0.0;
};

/// Per-t loss-gap differences a - b and final cost ratios a / b.
CompareReport compare_runs(const TraceTable& a, const TraceTable& b);
nlohmann::json to_json(const CompareReport& r);

/// Runs the base config once per value of the dotted path in sweep.path.
int run_sweep(const ExperimentConfig& base, const std::string& path, const nlohmann::json& values,
              std::ostream& log);

/// Theoretical constants and certificates of the configured network (first seed).
nlohmann::json bounds_report(const ExperimentConfig& cfg);

}  // namespace tthf
