#include "tthf/consensus.hpp"

#include <algorithm>
#include <cmath>

namespace tthf {

OutagePolicy make_outage_policy(const ClusterSpec& cluster, const ChannelParams& params,
                                bool enabled) {
  OutagePolicy policy;
  policy.enabled = enabled;
  policy.params = params;
  const int s = cluster.s;
  policy.gain_threshold = Matrix::Zero(s, s);
  for (int i = 0; i < s; ++i) {
    for (int j = i + 1; j < s; ++j) {
      const double snr = expected_snr(params, distance(cluster.positions[static_cast<std::size_t>(i)],
                                                       cluster.positions[static_cast<std::size_t>(j)]));
      policy.gain_threshold(i, j) = outage_gain_threshold(params, snr);
      policy.gain_threshold(j, i) = policy.gain_threshold(i, j);
    }
  }
  return policy;
}

Matrix effective_matrix(const Matrix& v, const Eigen::MatrixXi& lost) {
  Matrix eff = v;
  const auto n = v.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (lost(i, j) == 0) continue;
      const double w = eff(i, j);
      eff(i, j) = 0.0;
      eff(j, i) = 0.0;
      eff(i, i) += w;
      eff(j, j) += w;
    }
  }
  return eff;
}

Eigen::MatrixXi draw_lost_links(const Matrix& v, const OutagePolicy& outage, Rng& rng) {
  const auto n = v.rows();
  Eigen::MatrixXi lost = Eigen::MatrixXi::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (v(i, j) == 0.0) continue;
      // |u|^2 ~ Exp(1) for u ~ CN(0, 1).
      const double gain = -std::log1p(-uniform01(rng));
      if (gain < outage.gain_threshold(i, j)) {
        lost(i, j) = 1;
        lost(j, i) = 1;
      }
    }
  }
  return lost;
}

Matrix run_consensus(const Matrix& w_tilde, const Matrix& v, int gamma,
                     const OutagePolicy& outage, Rng& rng) {
  if (gamma < 0) throw InvalidArgument("number of consensus rounds must be >= 0");
  if (v.rows() != w_tilde.rows() || v.cols() != v.rows()) {
    throw InvalidArgument("consensus matrix does not match the number of devices");
  }
  Matrix w = w_tilde;
  for (int r = 0; r < gamma; ++r) {
    if (outage.enabled) {
      const Matrix eff = effective_matrix(v, draw_lost_links(v, outage, rng));
      w = eff * w;
    } else {
      w = v * w;
    }
  }
  return w;
}

Matrix run_consensus(const Matrix& w_tilde, const Matrix& v, int gamma) {
  Rng unused(0);
  return run_consensus(w_tilde, v, gamma, OutagePolicy{}, unused);
}

ConsensusError consensus_error(const Matrix& w, const Matrix& w_tilde) {
  if (w.rows() != w_tilde.rows() || w.cols() != w_tilde.cols()) {
    throw InvalidArgument("model matrices differ in shape");
  }
  const Eigen::RowVectorXd mean = w_tilde.colwise().mean();
  ConsensusError out;
  double sq = 0.0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double e = (w.row(i) - mean).norm();
    out.norms.push_back(e);
    sq += e * e;
    out.max = std::max(out.max, e);
  }
  out.rms = w.rows() == 0 ? 0.0 : std::sqrt(sq / static_cast<double>(w.rows()));
  return out;
}

double divergence_exact(const Matrix& w_tilde) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < w_tilde.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < w_tilde.rows(); ++j) {
      best = std::max(best, (w_tilde.row(i) - w_tilde.row(j)).norm());
    }
  }
  return best;
}

std::vector<std::pair<double, double>> flood_extrema(const std::vector<double>& values,
                                                     const Graph& graph, int rounds) {
  const auto n = values.size();
  if (static_cast<int>(n) != graph.size()) throw InvalidArgument("value count does not match graph");
  std::vector<std::pair<double, double>> state(n);
  for (std::size_t i = 0; i < n; ++i) state[i] = {values[i], values[i]};
  for (int r = 0; r < rounds; ++r) {
    auto next = state;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (graph.adj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0) continue;
        next[i].first = std::max(next[i].first, state[j].first);
        next[i].second = std::min(next[i].second, state[j].second);
      }
    }
    state = std::move(next);
  }
  return state;
}

double divergence_estimate(const Matrix& w_tilde, const Graph& graph) {
  const int diameter = graph.diameter();
  if (diameter < 0) throw InvalidArgument("divergence estimate needs a connected graph");
  std::vector<double> norms;
  for (Eigen::Index i = 0; i < w_tilde.rows(); ++i) norms.push_back(w_tilde.row(i).norm());
  const auto ext = flood_extrema(norms, graph, diameter);
  return ext.front().first - ext.front().second;
}

double lemma1_bound(double lambda, int gamma, int s, double upsilon) {
  if (lambda < 0.0 || gamma < 0 || s < 0 || upsilon < 0.0) {
    throw InvalidArgument("lemma1_bound inputs must be non-negative");
  }
  return std::pow(lambda, gamma) * std::sqrt(static_cast<double>(s)) * upsilon;
}

}  // namespace tthf
