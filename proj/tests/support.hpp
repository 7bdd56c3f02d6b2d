#pragma once

#include "tthf/losses.hpp"
#include "tthf/topology.hpp"
#include "tthf/rng.hpp"

#include <cmath>
#include <vector>

namespace tthf::testing {

inline Vector random_vector(int n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * standard_normal(rng);
  return v;
}

inline DevicePartition random_partition(int points, int dim, Rng& rng, bool binary = false) {
  DevicePartition part;
  for (int k = 0; k < points; ++k) {
    DataPoint p;
    p.x = random_vector(dim, rng);
    p.y = binary ? (uniform01(rng) < 0.5 ? -1.0 : 1.0) : standard_normal(rng);
    part.points.push_back(p);
  }
  return part;
}

inline std::vector<DevicePartition> random_parts(int devices, int points, int dim, Rng& rng,
                                                 bool binary = false) {
  std::vector<DevicePartition> parts;
  for (int i = 0; i < devices; ++i) {
    parts.push_back(random_partition(points, dim, rng, binary));
    parts.back().device_id = i;
  }
  return parts;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration(const Matrix& a, int iters = 20000) {
  Vector v = Vector::Ones(a.rows()) / std::sqrt(static_cast<double>(a.rows()));
  double lambda = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector next = a * v;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    next /= norm;
    lambda = next.dot(a * next);
    if ((next - v).norm() < 1e-15) break;
    v = next;
  }
  return lambda;
}

/// Smallest eigenvalue of a symmetric PSD matrix via a shifted power iteration.
inline double min_eigenvalue(const Matrix& a) {
  const double top = power_iteration(a);
  const Matrix shifted = top * Matrix::Identity(a.rows(), a.cols()) - a;
  return top - power_iteration(shifted);
}

/// Dense A^k by repeated multiplication.
inline Matrix matrix_power(const Matrix& a, int k) {
  Matrix out = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < k; ++i) out = out * a;
  return out;
}

/// Random connected graph: a random spanning tree plus extra edges with probability p.
inline Graph random_connected_graph(int n, double p, Rng& rng) {
  Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const int j = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(i)));
    adj(i, j) = adj(j, i) = 1;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (uniform01(rng) < p) adj(i, j) = adj(j, i) = 1;
    }
  }
  return make_graph(adj);
}

/// Random admissible mixing matrix on a random connected graph.
inline Matrix random_mixing(int n, Rng& rng, Graph* out_graph = nullptr) {
  const Graph g = random_connected_graph(n, 0.4, rng);
  if (out_graph != nullptr) *out_graph = g;
  const int d = std::max(1, g.max_degree());
  return consensus_matrix(g, (0.1 + 0.85 * uniform01(rng)) / d);
}

inline Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = standard_normal(rng);
  }
  return m;
}

}  // namespace tthf::testing
