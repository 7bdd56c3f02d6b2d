#pragma once

#include "tthf/rng.hpp"
#include "tthf/topology.hpp"

#include <utility>
#include <vector>

namespace tthf {

/// Per-round packet loss on D2D links from Rayleigh fading. A link is lost for
/// a round when the drawn fading gain puts its capacity below the rate.
struct OutagePolicy {
  bool enabled = false;
  ChannelParams params;
  /// Fading-gain loss threshold per ordered pair; only the upper triangle is read.
  Matrix gain_threshold;
};

OutagePolicy make_outage_policy(const ClusterSpec& cluster, const ChannelParams& params,
                                bool enabled = true);

/// The mixing matrix for one round given a symmetric lost-link mask; each lost
/// link returns its weight to both endpoints' diagonals.
Matrix effective_matrix(const Matrix& v, const Eigen::MatrixXi& lost);

/// Draws the lost-link mask for one round.
Eigen::MatrixXi draw_lost_links(const Matrix& v, const OutagePolicy& outage, Rng& rng);

/// Runs gamma synchronous rounds W <- V W on the s x M matrix of stacked
/// device models. With outages each round uses a freshly drawn effective matrix.
Matrix run_consensus(const Matrix& w_tilde, const Matrix& v, int gamma,
                     const OutagePolicy& outage, Rng& rng);
Matrix run_consensus(const Matrix& w_tilde, const Matrix& v, int gamma);

struct ConsensusError {
  std::vector<double> norms;
  double rms = 0.0;
  double max = 0.0;
};

/// Distances of post-consensus rows from the mean row of the pre-consensus matrix.
ConsensusError consensus_error(const Matrix& w, const Matrix& w_tilde);

/// Largest pairwise distance between rows.
double divergence_exact(const Matrix& w_tilde);

/// Per-node (max, min) after `rounds` of neighbour flooding of the values.
std::vector<std::pair<double, double>> flood_extrema(const std::vector<double>& values,
                                                     const Graph& graph, int rounds);

/// max_j ||w_j|| - min_j ||w_j|| obtained by flooding row norms for
/// diameter(graph) rounds. Throws when the graph is disconnected.
double divergence_estimate(const Matrix& w_tilde, const Graph& graph);

/// lambda^gamma * sqrt(s) * upsilon.
double lemma1_bound(double lambda, int gamma, int s, double upsilon);

}  // namespace tthf
