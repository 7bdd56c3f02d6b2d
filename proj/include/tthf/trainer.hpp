#pragma once

#include "tthf/bounds.hpp"
#include "tthf/consensus.hpp"
#include "tthf/control.hpp"
#include "tthf/losses.hpp"
#include "tthf/topology.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tthf {

/// Devices grouped into clusters. parts is cluster-major: cluster c owns
/// parts[offsets[c] .. offsets[c] + clusters[c].s).
struct Network {
  LossModel model;
  std::vector<DevicePartition> parts;
  std::vector<ClusterSpec> clusters;
  std::vector<int> offsets;
  std::vector<int> sizes;
  std::vector<double> varrho;
  Vector w_star;
  double f_star = 0.0;
  double mu = 0.0;
  double beta = 0.0;
  // Global loss as 0.5 w^T H w - b^T w + c for regression.
  Matrix quad_h;
  Vector quad_b;
  double quad_c = 0.0;

  int devices() const { return static_cast<int>(parts.size()); }
  int n_clusters() const { return static_cast<int>(clusters.size()); }
  double loss(const Vector& w) const;
  double gap(const Vector& w) const;
  Vector grad(const Vector& w) const;
};

/// Computes constants and the optimum. parts must be cluster-major with sizes
/// matching clusters.
Network make_network(const LossModel& model, std::vector<DevicePartition> parts,
                     std::vector<ClusterSpec> clusters);

enum class GammaMode { none, fixed, rule };
enum class DivergenceSource { exact, estimate };

struct TrainConfig {
  long T = 100;
  /// Interval lengths used in order; the last one repeats.
  std::vector<int> taus{20};
  StepSchedule step;
  GammaMode gamma_mode = GammaMode::none;
  int gamma_fixed = 0;
  /// Fixed-plan consensus runs at every t divisible by the cadence.
  int cadence = 5;
  double phi = 0.0;
  DivergenceSource divergence = DivergenceSource::exact;
  int gamma_cap = 100;
  bool sampled_aggregation = true;
  /// Mini-batch size; 0 means full batch.
  int batch_size = 0;
  bool outages = false;
  ChannelParams channel;
  /// Rebuild device placement at every aggregation.
  bool replace_each_interval = false;
  TopologyParams topology;
  CostParams cost;
  std::uint64_t seed = 1;
  int threads = 1;
  bool record_accuracy = false;
  std::optional<Vector> w0;
};

struct MetricsRow {
  long t = 0;
  double loss_gap_sampled = 0.0;
  double loss_gap_avg = 0.0;
  double dispersion = 0.0;
  /// Largest per-cluster RMS consensus error.
  double eps_rms = 0.0;
  int gamma_total = 0;
  /// Cumulative energy and delay up to and including t.
  double energy_J = 0.0;
  double delay_s = 0.0;
  double accuracy = 0.0;
  bool aggregation = false;
};

struct ControlRow {
  int k = 0;
  long t = 0;
  int tau = 0;
  double alpha = 0.0;
  double gamma = 0.0;
  double phi = 0.0;
  double delta_prime = 0.0;
  double sigma2 = 0.0;
  double nu = 0.0;
};

struct MetricsTrace {
  std::vector<MetricsRow> rows;
  std::vector<ControlRow> control;
  /// gammas[t-1][c]
  std::vector<std::vector<int>> gammas;
  /// eps[t-1][c]: per-cluster RMS consensus error.
  std::vector<std::vector<double>> eps;
  /// upsilon[t-1][c]: divergence used by the round rule (or measured when no rule runs).
  std::vector<std::vector<double>> upsilon;
  /// Device sampled in each cluster at each aggregation.
  std::vector<std::vector<int>> sampled;
  int gamma_cap_hits = 0;
  double init_gap = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  Vector final_model;
};

inline const char* kTraceHeader =
    "t,loss_gap_sampled,loss_gap_avg,dispersion,eps_rms,gamma_total,energy_J,delay_s";

void write_trace_csv(const std::string& path, const MetricsTrace& trace);
std::string trace_csv(const MetricsTrace& trace);
void write_control_csv(const std::string& path, const MetricsTrace& trace);

/// w - eta * grad_sgd(...).
Vector local_sgd_step(const LossModel& model, const Vector& w, const DevicePartition& part,
                      double eta, int batch_size, Rng& rng);

/// One uniformly sampled device per cluster; out_sampled receives the indices
/// within each cluster.
Vector global_aggregate(const std::vector<Matrix>& cluster_models, const std::vector<double>& varrho,
                        Rng& rng, std::vector<int>* out_sampled = nullptr);

/// Per-timestep controls supplied by the driver of a Simulator.
struct StepControl {
  double eta = 0.0;
  /// Target eta_t * phi for the round rule.
  double eps_target = 0.0;
};

/// Stateful TT-HF engine shared by fixed-plan, baseline and adaptive runs.
class Simulator {
 public:
  Simulator(const Network& net, const TrainConfig& cfg);

  /// Local SGD, divergence measurement, consensus and metrics for time t.
  void step(long t, const StepControl& ctl);

  /// Aggregates, broadcasts and resamples. Returns the new global model.
  Vector aggregate(bool full);

  /// Gradients and noise reports of the devices sampled for the current interval.
  struct ServerReport {
    std::vector<Vector> grads;
    std::vector<double> sigma2;
  };
  ServerReport sampled_reports(int batch_size);

  const std::vector<Matrix>& models() const { return models_; }
  const std::vector<int>& sampled() const { return sampled_; }
  const std::vector<ClusterSpec>& clusters() const { return clusters_; }
  Vector sampled_model() const;
  Vector average_model() const;
  MetricsTrace& trace() { return trace_; }
  void replace_topology(int k);

 private:
  const Network& net_;
  TrainConfig cfg_;
  std::vector<ClusterSpec> clusters_;
  std::vector<OutagePolicy> outages_;
  std::vector<Matrix> models_;
  std::vector<int> sampled_;
  std::vector<Rng> device_rngs_;
  std::vector<Rng> cluster_rngs_;
  Rng server_rng_;
  Rng estimator_rng_;
  double energy_ = 0.0;
  double delay_ = 0.0;
  MetricsTrace trace_;

  void resample();
  void record(long t, const std::vector<int>& gammas, const std::vector<double>& eps,
              const std::vector<double>& ups, bool aggregation);
};

/// Runs TT-HF with set control parameters (fixed rounds or the round rule).
MetricsTrace run_tthf(const Network& net, const TrainConfig& cfg);

/// Federated averaging: no consensus, full participation, fixed interval.
MetricsTrace run_baseline(const Network& net, TrainConfig cfg, int tau);

struct AdaptiveConfig {
  TrainConfig base;
  double xi = 0.1;
  int tau_max = 20;
  int tau_first = 10;
  /// Multiple of 1/mu; must exceed 1.
  double gamma_factor = 2.0;
  /// Fraction of 2*beta; zero selects 0.1.
  double zeta_fraction = 0.1;
  double delta_prime0 = 0.0;
  double sigma2_0 = 0.0;
  /// Use F(w0) - F(w*) instead of the gradient surrogate in the feasibility check.
  bool exact_init_gap = false;
  /// Doublings of alpha tried before loosening the horizon or the loss target.
  int alpha_doublings = 20;
  int relax_T_max = 3;
  int relax_xi_max = 3;
};

/// Adaptive TT-HF: live round rule from estimated divergence and per-interval
/// line search for tau with server-side re-estimation at each aggregation.
MetricsTrace run_adaptive(const Network& net, const AdaptiveConfig& cfg);

}  // namespace tthf
