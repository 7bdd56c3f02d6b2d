#pragma once

#include "tthf/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace tthf {

struct ChannelParams {
  double noise_psd_dbm_hz = -173.0;
  double bandwidth_hz = 1e6;
  double tx_power_dbm = 24.0;
  double pathloss_ref_db = -30.0;
  double pathloss_exp = 3.75;
  double ref_dist_m = 1.0;
  double rate_bps = 14e6;
  double outage_threshold = 0.05;

  void validate() const;
};

struct Position {
  double x = 0.0;
  double y = 0.0;
};

double distance(const Position& a, const Position& b);

/// Uniform positions in [0, field_m]^2, one independent field per cluster.
std::vector<std::vector<Position>> place_devices(int n_clusters, int s_c, double field_m,
                                                 std::uint64_t seed);
std::vector<Position> place_cluster(int s_c, double field_m, std::uint64_t seed,
                                    std::uint64_t cluster, std::uint64_t attempt);

/// 1 - exp(-(2^{R/W} - 1) / snr) for Rayleigh fading.
double outage_prob(const ChannelParams& params, double snr_linear);

/// Mean received SNR (linear) at the given distance under log-distance pathloss.
/// Distances below the reference distance are clamped to it.
double expected_snr(const ChannelParams& params, double distance_m);
double expected_snr_db(const ChannelParams& params, double distance_m);

/// Instantaneous fading gain |u|^2 below which a packet at rate R is lost.
double outage_gain_threshold(const ChannelParams& params, double snr_linear);

/// Undirected simple graph stored as a dense 0/1 adjacency matrix.
struct Graph {
  Eigen::MatrixXi adj;

  int size() const { return static_cast<int>(adj.rows()); }
  int degree(int i) const { return adj.row(i).sum(); }
  int max_degree() const;
  int edge_count() const;
  std::vector<int> neighbors(int i) const;
  bool connected() const;
  /// Longest shortest path; -1 when disconnected.
  int diameter() const;
};

Graph make_graph(const Eigen::MatrixXi& adj);

/// Edge between two devices iff the outage probability at their mean SNR is
/// within the configured threshold.
Graph build_graph(const std::vector<Position>& positions, const ChannelParams& params);

/// V = I - d_c * L. Requires 0 < d_c < 1/max_degree.
Matrix consensus_matrix(const Graph& graph, double d_c);

/// 1/8 when that is admissible for the degree, otherwise 0.9/max_degree.
double default_dc(int max_degree);

/// Largest |eigenvalue| of V - 11^T/s. Throws when it is not below 1.
double spectral_radius(const Matrix& v);

/// Throws NumericalError describing the first violated mixing-matrix property
/// (row sums, symmetry, sparsity pattern, contraction).
void check_assumptions(const Matrix& v, const Graph& graph, double tol = 1e-12);

struct ClusterSpec {
  int s = 0;
  std::vector<Position> positions;
  Graph graph;
  Matrix v;
  double lambda = 0.0;
  double d_c = 0.0;
  double rho = 1.0;
  double varrho = 0.0;
  int diameter = 0;
  int placement_attempts = 1;
};

struct TopologyParams {
  int n_clusters = 25;
  int s_c = 5;
  double field_m = 50.0;
  /// Non-positive selects default_dc per cluster.
  double d_c = 0.125;
  int max_attempts = 100;
  ChannelParams channel;
};

/// Builds one cluster from given positions; throws when the graph is disconnected.
ClusterSpec make_cluster(std::vector<Position> positions, const ChannelParams& channel,
                         double d_c, int total_devices);

/// Places and wires every cluster, re-seeding a cluster's placement until its
/// graph is connected.
std::vector<ClusterSpec> build_clusters(const TopologyParams& params, std::uint64_t seed,
                                        std::uint64_t epoch = 0);

nlohmann::json topology_to_json(const std::vector<ClusterSpec>& clusters);
std::vector<ClusterSpec> topology_from_json(const nlohmann::json& j);

}  // namespace tthf
