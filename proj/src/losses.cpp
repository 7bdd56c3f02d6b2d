#include "tthf/losses.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numeric>

namespace tthf {

namespace {

void check_dim(const LossModel& model, const Vector& w) {
  if (w.size() != model.dim) {
    throw InvalidArgument("model vector has dimension " + std::to_string(w.size()) +
                          ", expected " + std::to_string(model.dim));
  }
}

void check_point(const LossModel& model, const DataPoint& p) {
  if (p.x.size() != model.dim) {
    throw InvalidArgument("feature dimension " + std::to_string(p.x.size()) +
                          " does not match model dimension " + std::to_string(model.dim));
  }
}

// Data-term gradient of one sample, without the regularizer.
void add_sample_grad(const LossModel& model, const Vector& w, const DataPoint& p,
                     Vector& acc) {
  const double z = w.dot(p.x);
  if (model.kind == LossKind::linear_regression) {
    acc.noalias() += (z - p.y) * p.x;
  } else {
    const double margin = 1.0 - p.y * z;
    if (margin > 0.0) acc.noalias() -= (p.y * margin) * p.x;
  }
}

double min_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  if (name == "linear_regression" || name == "regression") return LossKind::linear_regression;
  if (name == "squared_hinge_svm" || name == "svm") return LossKind::squared_hinge_svm;
  throw InvalidArgument("unknown loss kind '" + name + "'");
}

std::string to_string(LossKind kind) {
  return kind == LossKind::linear_regression ? "linear_regression" : "squared_hinge_svm";
}

double sample_loss(const LossModel& model, const Vector& w, const DataPoint& p) {
  check_point(model, p);
  const double z = w.dot(p.x);
  double data_term;
  if (model.kind == LossKind::linear_regression) {
    data_term = 0.5 * (p.y - z) * (p.y - z);
  } else {
    const double margin = std::max(0.0, 1.0 - p.y * z);
    data_term = 0.5 * margin * margin;
  }
  return data_term + 0.5 * model.reg * w.squaredNorm();
}

double local_loss(const LossModel& model, const Vector& w, const DevicePartition& part) {
  check_dim(model, w);
  if (part.points.empty()) throw InvalidArgument("device partition is empty");
  double sum = 0.0;
  for (const auto& p : part.points) sum += sample_loss(model, w, p);
  return sum / static_cast<double>(part.points.size());
}

double cluster_loss(const LossModel& model, const Vector& w,
                    const std::vector<DevicePartition>& cluster_parts) {
  if (cluster_parts.empty()) throw InvalidArgument("cluster has no devices");
  double sum = 0.0;
  for (const auto& part : cluster_parts) sum += local_loss(model, w, part);
  return sum / static_cast<double>(cluster_parts.size());
}

std::vector<double> cluster_weights(const std::vector<int>& cluster_sizes) {
  double total = 0.0;
  for (int s : cluster_sizes) {
    if (s <= 0) throw InvalidArgument("cluster has no devices");
    total += s;
  }
  std::vector<double> weights;
  weights.reserve(cluster_sizes.size());
  for (int s : cluster_sizes) weights.push_back(s / total);
  return weights;
}

double global_loss(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts,
                   const std::vector<int>& cluster_sizes) {
  const auto weights = cluster_weights(cluster_sizes);
  const int total = std::accumulate(cluster_sizes.begin(), cluster_sizes.end(), 0);
  if (total != static_cast<int>(parts.size())) {
    throw InvalidArgument("cluster sizes do not cover the device list");
  }
  double sum = 0.0;
  std::size_t offset = 0;
  for (std::size_t c = 0; c < cluster_sizes.size(); ++c) {
    double cluster_sum = 0.0;
    for (int i = 0; i < cluster_sizes[c]; ++i) cluster_sum += local_loss(model, w, parts[offset++]);
    sum += weights[c] * cluster_sum / cluster_sizes[c];
  }
  return sum;
}

double global_loss(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts) {
  if (parts.empty()) throw InvalidArgument("no devices");
  double sum = 0.0;
  for (const auto& part : parts) sum += local_loss(model, w, part);
  return sum / static_cast<double>(parts.size());
}

Vector grad_full(const LossModel& model, const Vector& w, const DevicePartition& part) {
  check_dim(model, w);
  if (part.points.empty()) throw InvalidArgument("device partition is empty");
  Vector g = Vector::Zero(model.dim);
  for (const auto& p : part.points) {
    check_point(model, p);
    add_sample_grad(model, w, p, g);
  }
  g /= static_cast<double>(part.points.size());
  g.noalias() += model.reg * w;
  return g;
}

Vector grad_sgd(const LossModel& model, const Vector& w, const DevicePartition& part,
                int batch_size, Rng& rng) {
  check_dim(model, w);
  const auto n = static_cast<int>(part.points.size());
  if (batch_size < 1 || batch_size > n) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) + " outside [1, " +
                          std::to_string(n) + "]");
  }
  if (batch_size == n) return grad_full(model, w, part);
  // Partial Fisher-Yates over an index array.
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Vector g = Vector::Zero(model.dim);
  for (int k = 0; k < batch_size; ++k) {
    const auto j = k + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n - k)));
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
    add_sample_grad(model, w, part.points[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])], g);
  }
  g /= static_cast<double>(batch_size);
  g.noalias() += model.reg * w;
  return g;
}

Vector grad_global(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts) {
  if (parts.empty()) throw InvalidArgument("no devices");
  Vector g = Vector::Zero(model.dim);
  for (const auto& part : parts) g += grad_full(model, w, part);
  return g / static_cast<double>(parts.size());
}

Matrix device_hessian(const LossModel& model, const DevicePartition& part) {
  if (part.points.empty()) throw InvalidArgument("device partition is empty");
  Matrix h = Matrix::Zero(model.dim, model.dim);
  for (const auto& p : part.points) {
    check_point(model, p);
    const double scale = model.kind == LossKind::linear_regression ? 1.0 : p.y * p.y;
    h.selfadjointView<Eigen::Lower>().rankUpdate(p.x, scale);
  }
  h = h.selfadjointView<Eigen::Lower>();
  h /= static_cast<double>(part.points.size());
  h.diagonal().array() += model.reg;
  return h;
}

Smoothness smoothness_constants(const LossModel& model,
                                const std::vector<DevicePartition>& parts) {
  if (parts.empty()) throw InvalidArgument("no devices");
  Matrix mean_h = Matrix::Zero(model.dim, model.dim);
  Smoothness out;
  for (const auto& part : parts) {
    const Matrix h = device_hessian(model, part);
    out.beta = std::max(out.beta, max_eig(h));
    mean_h += h;
  }
  mean_h /= static_cast<double>(parts.size());
  // The hinge curvature bound only holds above; the regularizer is the
  // certified lower curvature.
  out.mu = model.kind == LossKind::linear_regression ? min_eig(mean_h) : model.reg;
  const double tol = 1e-12 * std::max(1.0, out.beta);
  if (!(out.mu > tol)) throw NumericalError("strong convexity not certified");
  out.mu = std::min(out.mu, out.beta);
  return out;
}

Optimum solve_optimum(const LossModel& model, const std::vector<DevicePartition>& parts) {
  const auto consts = smoothness_constants(model, parts);
  Optimum opt;
  if (model.kind == LossKind::linear_regression) {
    Matrix h = Matrix::Zero(model.dim, model.dim);
    Vector rhs = Vector::Zero(model.dim);
    for (const auto& part : parts) {
      Vector b = Vector::Zero(model.dim);
      for (const auto& p : part.points) b += p.y * p.x;
      rhs += b / static_cast<double>(part.size());
      h += device_hessian(model, part);
    }
    opt.w = h.ldlt().solve(rhs);
    // One refinement step against the exact gradient.
    opt.w -= h.ldlt().solve(grad_global(model, opt.w, parts));
  } else {
    // Damped semismooth Newton on the piecewise-quadratic objective; gradient
    // descent steps serve as the safeguard.
    Vector w = Vector::Zero(model.dim);
    double f = global_loss(model, w, parts);
    for (int iter = 0; iter < 10000; ++iter) {
      const Vector g = grad_global(model, w, parts);
      if (g.norm() < 1e-10) break;
      Matrix h = Matrix::Zero(model.dim, model.dim);
      for (const auto& part : parts) {
        Matrix hp = Matrix::Zero(model.dim, model.dim);
        for (const auto& p : part.points) {
          if (1.0 - p.y * w.dot(p.x) > 0.0) hp.noalias() += (p.y * p.y) * p.x * p.x.transpose();
        }
        h += hp / static_cast<double>(part.size());
      }
      h /= static_cast<double>(parts.size());
      h.diagonal().array() += model.reg;
      Vector step = h.ldlt().solve(g);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vector cand = w - t * step;
        const double fc = global_loss(model, cand, parts);
        if (fc <= f - 1e-4 * t * g.dot(step)) {
          w = cand;
          f = fc;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        w -= g / consts.beta;
        f = global_loss(model, w, parts);
      }
    }
    opt.w = w;
    if (grad_global(model, w, parts).norm() >= 1e-10) {
      throw NumericalError("optimum solver did not reach ||grad|| < 1e-10");
    }
  }
  opt.loss = global_loss(model, opt.w, parts);
  return opt;
}

double accuracy(const LossModel& model, const Vector& w,
                const std::vector<DevicePartition>& parts) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& part : parts) {
    for (const auto& p : part.points) {
      const double z = w.dot(p.x);
      const bool ok = model.kind == LossKind::linear_regression ? ((z >= 0.5) == (p.y >= 0.5))
                                                                : ((z >= 0.0) == (p.y >= 0.0));
      correct += ok ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double sgd_variance_exact(const LossModel& model, const Vector& w,
                          const DevicePartition& part, int batch_size) {
  const auto n = static_cast<int>(part.size());
  if (batch_size < 1 || batch_size > n) throw InvalidArgument("batch size out of range");
  if (n == 1) return 0.0;
  std::vector<Vector> grads;
  grads.reserve(part.size());
  Vector mean = Vector::Zero(model.dim);
  for (const auto& p : part.points) {
    Vector g = Vector::Zero(model.dim);
    add_sample_grad(model, w, p, g);
    mean += g;
    grads.push_back(std::move(g));
  }
  mean /= n;
  double spread = 0.0;
  for (const auto& g : grads) spread += (g - mean).squaredNorm();
  spread /= n;
  return spread * (n - batch_size) / (static_cast<double>(batch_size) * (n - 1));
}

}  // namespace tthf
