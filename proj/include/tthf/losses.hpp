#pragma once

#include "tthf/common.hpp"
#include "tthf/rng.hpp"

#include <string>
#include <vector>

namespace tthf {

struct DataPoint {
  Vector x;
  double y = 0.0;
};

struct DevicePartition {
  int device_id = 0;
  std::vector<DataPoint> points;
  /// Class label of each point when known; empty otherwise.
  std::vector<int> labels;

  std::size_t size() const { return points.size(); }
};

enum class LossKind { linear_regression, squared_hinge_svm };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

/// A strongly convex learning task: per-sample loss plus (reg/2)||w||^2.
struct LossModel {
  LossKind kind = LossKind::linear_regression;
  double reg = 0.1;
  int dim = 1;
};

double sample_loss(const LossModel& model, const Vector& w, const DataPoint& p);

/// Mean per-sample loss on one device, regularizer included.
double local_loss(const LossModel& model, const Vector& w, const DevicePartition& part);

/// Equal-weight mean over the devices of one cluster.
double cluster_loss(const LossModel& model, const Vector& w,
                    const std::vector<DevicePartition>& cluster_parts);

/// Cluster weights s_c / sum(s).
std::vector<double> cluster_weights(const std::vector<int>& cluster_sizes);

/// Global loss with clustered devices: sum_c w_c * cluster_loss. With the
/// standard weights this is the plain mean over devices.
double global_loss(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts,
                   const std::vector<int>& cluster_sizes);

/// Global loss as the mean over all devices.
double global_loss(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts);

Vector grad_full(const LossModel& model, const Vector& w, const DevicePartition& part);

/// Mini-batch gradient over `batch_size` points drawn without replacement.
Vector grad_sgd(const LossModel& model, const Vector& w, const DevicePartition& part,
                int batch_size, Rng& rng);

/// Gradient of the mean-over-devices global loss.
Vector grad_global(const LossModel& model, const Vector& w,
                   const std::vector<DevicePartition>& parts);

struct Smoothness {
  double mu = 0.0;
  double beta = 0.0;
};

Smoothness smoothness_constants(const LossModel& model,
                                const std::vector<DevicePartition>& parts);

/// Hessian of a device loss. Exact for regression; for the squared hinge it is
/// the curvature bound (1/D) sum x x^T + reg I.
Matrix device_hessian(const LossModel& model, const DevicePartition& part);

struct Optimum {
  Vector w;
  double loss = 0.0;
};

/// Minimizer of the global loss: normal equations for regression, full-batch
/// gradient descent to ||grad|| < 1e-10 for the squared hinge.
Optimum solve_optimum(const LossModel& model, const std::vector<DevicePartition>& parts);

/// Fraction of correctly classified points. Regression predictions are
/// thresholded at 0.5, SVM predictions by sign.
double accuracy(const LossModel& model, const Vector& w,
                const std::vector<DevicePartition>& parts);

/// Exact E||g_batch - grad_full||^2 for sampling without replacement.
double sgd_variance_exact(const LossModel& model, const Vector& w,
                          const DevicePartition& part, int batch_size);

}  // namespace tthf
