#include "tthf/topology.hpp"

#include "tthf/rng.hpp"

#include <Eigen/Eigenvalues>

#include <atomic>
#include <cmath>
#include <iostream>
#include <queue>
#include <sstream>

namespace tthf {

namespace {

std::atomic<bool> clamp_warned{false};

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace

void ChannelParams::validate() const {
  if (!(bandwidth_hz > 0.0)) throw InvalidArgument("bandwidth must be positive");
  if (!(outage_threshold >= 0.0 && outage_threshold < 1.0)) {
    throw InvalidArgument("outage threshold must lie in [0, 1)");
  }
  if (!(ref_dist_m > 0.0)) throw InvalidArgument("reference distance must be positive");
  if (rate_bps < 0.0) throw InvalidArgument("rate must be non-negative");
}

double distance(const Position& a, const Position& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::vector<Position> place_cluster(int s_c, double field_m, std::uint64_t seed,
                                    std::uint64_t cluster, std::uint64_t attempt) {
  if (!(field_m > 0.0)) throw InvalidArgument("field size must be positive");
  if (s_c < 1) throw InvalidArgument("cluster size must be >= 1");
  Rng rng = make_rng(seed, Stream::placement, cluster, attempt);
  std::vector<Position> out(static_cast<std::size_t>(s_c));
  for (auto& p : out) {
    p.x = field_m * uniform01(rng);
    p.y = field_m * uniform01(rng);
  }
  return out;
}

std::vector<std::vector<Position>> place_devices(int n_clusters, int s_c, double field_m,
                                                 std::uint64_t seed) {
  std::vector<std::vector<Position>> out;
  for (int c = 0; c < n_clusters; ++c) out.push_back(place_cluster(s_c, field_m, seed, static_cast<std::uint64_t>(c), 0));
  return out;
}

double outage_prob(const ChannelParams& params, double snr_linear) {
  if (!(snr_linear > 0.0)) throw InvalidArgument("SNR must be positive");
  return -std::expm1(-outage_gain_threshold(params, snr_linear));
}

double outage_gain_threshold(const ChannelParams& params, double snr_linear) {
  return std::expm1(std::log(2.0) * params.rate_bps / params.bandwidth_hz) / snr_linear;
}

double expected_snr_db(const ChannelParams& params, double distance_m) {
  double d = distance_m;
  if (d < params.ref_dist_m) {
    if (!clamp_warned.exchange(true)) {
      std::cerr << "warning: distance " << d << " m below reference distance; clamped to "
                << params.ref_dist_m << " m\n";
    }
    d = params.ref_dist_m;
  }
  const double pathloss_db = params.pathloss_ref_db - 10.0 * params.pathloss_exp * std::log10(d / params.ref_dist_m);
  const double noise_dbm = params.noise_psd_dbm_hz + 10.0 * std::log10(params.bandwidth_hz);
  return params.tx_power_dbm + pathloss_db - noise_dbm;
}

double expected_snr(const ChannelParams& params, double distance_m) {
  return db_to_linear(expected_snr_db(params, distance_m));
}

int Graph::max_degree() const {
  int best = 0;
  for (int i = 0; i < size(); ++i) best = std::max(best, degree(i));
  return best;
}

int Graph::edge_count() const { return adj.sum() / 2; }

std::vector<int> Graph::neighbors(int i) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j) {
    if (adj(i, j) != 0) out.push_back(j);
  }
  return out;
}

namespace {

std::vector<int> bfs_depths(const Graph& g, int src) {
  std::vector<int> depth(static_cast<std::size_t>(g.size()), -1);
  std::queue<int> q;
  depth[static_cast<std::size_t>(src)] = 0;
  q.push(src);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v = 0; v < g.size(); ++v) {
      if (g.adj(u, v) != 0 && depth[static_cast<std::size_t>(v)] < 0) {
        depth[static_cast<std::size_t>(v)] = depth[static_cast<std::size_t>(u)] + 1;
        q.push(v);
      }
    }
  }
  return depth;
}

}  // namespace

bool Graph::connected() const {
  if (size() == 0) return false;
  for (int d : bfs_depths(*this, 0)) {
    if (d < 0) return false;
  }
  return true;
}

int Graph::diameter() const {
  int best = 0;
  for (int s = 0; s < size(); ++s) {
    for (int d : bfs_depths(*this, s)) {
      if (d < 0) return -1;
      best = std::max(best, d);
    }
  }
  return best;
}

Graph make_graph(const Eigen::MatrixXi& adj) {
  if (adj.rows() != adj.cols()) throw InvalidArgument("adjacency must be square");
  for (int i = 0; i < adj.rows(); ++i) {
    if (adj(i, i) != 0) throw InvalidArgument("adjacency must have an empty diagonal");
    for (int j = 0; j < adj.cols(); ++j) {
      if (adj(i, j) != adj(j, i)) throw InvalidArgument("adjacency must be symmetric");
      if (adj(i, j) != 0 && adj(i, j) != 1) throw InvalidArgument("adjacency entries must be 0 or 1");
    }
  }
  return Graph{adj};
}

Graph build_graph(const std::vector<Position>& positions, const ChannelParams& params) {
  params.validate();
  if (positions.empty()) throw InvalidArgument("need at least one device");
  const auto n = static_cast<int>(positions.size());
  Graph g{Eigen::MatrixXi::Zero(n, n)};
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double snr = expected_snr(params, distance(positions[static_cast<std::size_t>(i)],
                                                       positions[static_cast<std::size_t>(j)]));
      if (outage_prob(params, snr) <= params.outage_threshold) {
        g.adj(i, j) = 1;
        g.adj(j, i) = 1;
      }
    }
  }
  return g;
}

Matrix consensus_matrix(const Graph& graph, double d_c) {
  const int dmax = graph.max_degree();
  const double upper = dmax == 0 ? std::numeric_limits<double>::infinity() : 1.0 / dmax;
  if (!(d_c > 0.0 && d_c < upper)) {
    std::ostringstream msg;
    msg << "d_c = " << d_c << " outside the valid interval (0, " << upper << ") for max degree " << dmax;
    throw InvalidArgument(msg.str());
  }
  const int n = graph.size();
  Matrix v = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (graph.adj(i, j) != 0) v(i, j) = d_c;
    }
    v(i, i) = 1.0 - d_c * graph.degree(i);
  }
  return v;
}

double default_dc(int max_degree) {
  if (max_degree < 8) return 0.125;
  return 0.9 / max_degree;
}

double spectral_radius(const Matrix& v) {
  const auto n = v.rows();
  if (n != v.cols() || n == 0) throw InvalidArgument("consensus matrix must be square and non-empty");
  const Matrix deflated = v - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  const Matrix sym = 0.5 * (deflated + deflated.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(rho < 1.0 - 1e-12)) {
    std::ostringstream msg;
    msg << "spectral radius " << rho << " is not below 1 (graph disconnected?)";
    throw NumericalError(msg.str());
  }
  return rho;
}

void check_assumptions(const Matrix& v, const Graph& graph, double tol) {
  const auto n = v.rows();
  if (n != graph.size() || v.cols() != n) throw NumericalError("consensus matrix size does not match graph");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(v.row(i).sum() - 1.0) > tol) {
      throw NumericalError("row " + std::to_string(i) + " of the consensus matrix does not sum to 1");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(v(i, j) - v(j, i)) > tol) throw NumericalError("consensus matrix is not symmetric");
      if (i != j && graph.adj(i, j) == 0 && v(i, j) != 0.0) {
        throw NumericalError("consensus matrix has weight on a non-edge (" + std::to_string(i) + ", " +
                             std::to_string(j) + ")");
      }
    }
  }
  spectral_radius(v);
}

ClusterSpec make_cluster(std::vector<Position> positions, const ChannelParams& channel,
                         double d_c, int total_devices) {
  ClusterSpec spec;
  spec.s = static_cast<int>(positions.size());
  spec.graph = build_graph(positions, channel);
  if (!spec.graph.connected()) throw NumericalError("cluster graph is disconnected");
  spec.positions = std::move(positions);
  spec.d_c = d_c > 0.0 ? d_c : default_dc(spec.graph.max_degree());
  if (spec.graph.max_degree() > 0 && spec.d_c >= 1.0 / spec.graph.max_degree()) {
    spec.d_c = default_dc(spec.graph.max_degree());
  }
  spec.v = consensus_matrix(spec.graph, spec.d_c);
  check_assumptions(spec.v, spec.graph);
  spec.lambda = spectral_radius(spec.v);
  spec.rho = 1.0 / spec.s;
  spec.varrho = static_cast<double>(spec.s) / total_devices;
  spec.diameter = spec.graph.diameter();
  return spec;
}

std::vector<ClusterSpec> build_clusters(const TopologyParams& params, std::uint64_t seed,
                                        std::uint64_t epoch) {
  params.channel.validate();
  if (params.n_clusters < 1 || params.s_c < 1) throw InvalidArgument("need at least one cluster and device");
  const int total = params.n_clusters * params.s_c;
  std::vector<ClusterSpec> out;
  for (int c = 0; c < params.n_clusters; ++c) {
    bool built = false;
    for (int attempt = 0; attempt < params.max_attempts && !built; ++attempt) {
      auto positions = place_cluster(params.s_c, params.field_m, seed, static_cast<std::uint64_t>(c),
                                     epoch * 1000003ULL + static_cast<std::uint64_t>(attempt));
      if (!build_graph(positions, params.channel).connected()) continue;
      out.push_back(make_cluster(std::move(positions), params.channel, params.d_c, total));
      out.back().placement_attempts = attempt + 1;
      built = true;
    }
    if (!built) {
      throw NumericalError("cluster " + std::to_string(c) + " stayed disconnected after " +
                           std::to_string(params.max_attempts) + " placements");
    }
  }
  return out;
}

nlohmann::json topology_to_json(const std::vector<ClusterSpec>& clusters) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : clusters) {
    nlohmann::json j;
    j["s"] = c.s;
    j["d_c"] = c.d_c;
    j["lambda"] = c.lambda;
    j["varrho"] = c.varrho;
    nlohmann::json pos = nlohmann::json::array();
    for (const auto& p : c.positions) pos.push_back({p.x, p.y});
    j["positions"] = pos;
    nlohmann::json adj = nlohmann::json::array();
    nlohmann::json v = nlohmann::json::array();
    for (int i = 0; i < c.s; ++i) {
      std::vector<int> arow;
      std::vector<double> vrow;
      for (int k = 0; k < c.s; ++k) {
        arow.push_back(c.graph.adj(i, k));
        vrow.push_back(c.v(i, k));
      }
      adj.push_back(arow);
      v.push_back(vrow);
    }
    j["adjacency"] = adj;
    j["V"] = v;
    arr.push_back(j);
  }
  return nlohmann::json{{"clusters", arr}};
}

std::vector<ClusterSpec> topology_from_json(const nlohmann::json& j) {
  std::vector<ClusterSpec> out;
  int total = 0;
  for (const auto& c : j.at("clusters")) total += c.at("s").get<int>();
  for (const auto& c : j.at("clusters")) {
    ClusterSpec spec;
    spec.s = c.at("s").get<int>();
    spec.d_c = c.at("d_c").get<double>();
    for (const auto& p : c.at("positions")) spec.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    Eigen::MatrixXi adj(spec.s, spec.s);
    spec.v.resize(spec.s, spec.s);
    for (int i = 0; i < spec.s; ++i) {
      for (int k = 0; k < spec.s; ++k) {
        adj(i, k) = c.at("adjacency").at(i).at(k).get<int>();
        spec.v(i, k) = c.at("V").at(i).at(k).get<double>();
      }
    }
    spec.graph = make_graph(adj);
    check_assumptions(spec.v, spec.graph);
    spec.lambda = spectral_radius(spec.v);
    spec.rho = 1.0 / spec.s;
    spec.varrho = static_cast<double>(spec.s) / total;
    spec.diameter = spec.graph.diameter();
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace tthf
