#pragma once

#include "tthf/losses.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace tthf {

/// Affine bound ||grad F_c(w) - grad F(w)|| <= delta + zeta ||w - w*||, with
/// omega = zeta / (2 beta); delta_prime is the ||w||-referenced offset.
struct DiversityEstimate {
  double delta = 0.0;
  double zeta = 0.0;
  double omega = 0.0;
  double delta_prime = 0.0;
};

/// Smallest delta' >= 0 with ||g_c - global_grad|| <= delta' + zeta * w_norm for all c.
double diversity_fit(const std::vector<Vector>& cluster_grads, const Vector& global_grad,
                     double w_norm, double zeta);

/// Exact diversity constants of a regression task: delta is the largest
/// cluster gradient norm at the optimum and zeta the largest spectral norm of
/// the cluster-minus-global Hessian difference.
DiversityEstimate quadratic_diversity(const LossModel& model,
                                      const std::vector<DevicePartition>& parts,
                                      const std::vector<int>& cluster_sizes, const Vector& w_star,
                                      double beta);

/// eta_t = gamma / (t + alpha), or a constant when `constant_eta` is set.
struct StepSchedule {
  double gamma = 1.0;
  double alpha = 1.0;
  std::optional<double> constant_eta;

  double eta(long t) const {
    return constant_eta ? *constant_eta : gamma / (static_cast<double>(t) + alpha);
  }
  bool decaying() const { return !constant_eta.has_value(); }
};

double lambda_plus(double mu, double beta, double omega);

/// The growth factor of dispersion since the last aggregation t_km1:
/// sum_l prod_{j<l}(1 + eta_j beta lambda_plus) * beta eta_l * prod_{j>l}(1 + eta_j beta).
double sigma_plus(long t, long t_km1, const StepSchedule& sched, double beta, double lambda_p);

/// sum_c weight_c ||m_c - m_bar||^2 with m_bar = sum_c weight_c m_c.
double dispersion_sample(const std::vector<Vector>& cluster_means, const std::vector<double>& weights);

/// Per-time mean over runs; every run must have the same length.
std::vector<double> dispersion_mc(const std::vector<std::vector<double>>& runs);

struct DispersionInputs {
  double mu = 0.0;
  double beta = 0.0;
  double omega = 0.0;
  double sigma2 = 0.0;
  double delta = 0.0;
  double eps0 = 0.0;
  StepSchedule sched;
};

/// Throws InvalidArgument naming the failed inequality when the step-size
/// parameters do not satisfy alpha >= gamma beta max{lambda_+ - 2 + mu/(2 beta), beta/mu}.
void check_dispersion_hypothesis(const DispersionInputs& in);

/// Upper bound on the expected cluster dispersion at time t inside the interval
/// that started at t_km1, given the loss gap of the network average at t_km1.
double prop1_bound(const DispersionInputs& in, long t, long t_km1, double gap_at_km1);

/// One-step bound on the next expected loss gap. Requires eta <= 1/beta.
double thm1_rhs(double prev_gap, double eta, double beta, double dispersion, double eps,
                double eps_next, double sigma2, double mu);

struct Thm2Inputs {
  double gamma = 0.0;
  double alpha = 0.0;
  double mu = 0.0;
  double beta = 0.0;
  int tau = 1;
  double sigma2 = 0.0;
  double phi = 0.0;
  double delta = 0.0;
  double omega = 0.0;
  double init_gap = 0.0;
};

struct Thm2Constants {
  double alpha_min = 0.0;
  double omega_max = 0.0;
  double z1 = 0.0;
  double z2 = 0.0;
  double nu = 0.0;
  /// The three candidates whose maximum is nu.
  std::array<double, 3> nu_terms{};
};

double alpha_min(double mu, double beta, double gamma, double omega);
double z1(double mu, double beta, double gamma, double alpha, int tau);
double z2(double beta, double gamma, double alpha, int tau, double sigma2, double phi, double delta);
/// +infinity when tau = 1.
double omega_max(double mu, double beta, double gamma, double alpha, int tau);
/// Z1 * omega_max^2, finite for every tau.
double z1_omega_max_sq(double mu, double beta, double gamma, double alpha);

/// Throws NumericalError "Theorem 2 inapplicable" when mu * gamma <= 1.
/// nu is +infinity when omega >= omega_max.
Thm2Constants thm2_constants(const Thm2Inputs& in);

/// ||grad F||^2 / (2 mu), an upper bound on the loss gap.
double pl_gap(double grad_norm, double mu);

nlohmann::json certificate_json(const Thm2Inputs& in, const Thm2Constants& c,
                                const std::vector<long>& times,
                                const std::vector<double>& measured);

}  // namespace tthf
