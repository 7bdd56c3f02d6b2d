#pragma once

#include "tthf/bounds.hpp"
#include "tthf/losses.hpp"
#include "tthf/topology.hpp"

#include <array>
#include <string>
#include <vector>

namespace tthf {

/// Linear divergence predictor: Upsilon_t = A Upsilon_{t-1} + B after a step
/// without consensus, a Upsilon_{t-1} + b after a step with consensus.
struct Predictor {
  double A = 1.0;
  double B = 0.0;
  double a = 1.0;
  double b = 0.0;
  bool idle_fallback = true;
  bool active_fallback = true;

  double next(double upsilon, int prev_gamma) const {
    return prev_gamma == 0 ? A * upsilon + B : a * upsilon + b;
  }
};

struct CostParams {
  double e_d2d = 0.04;
  double e_glob = 1.0;
  double delay_d2d = 0.04;
  double delay_glob = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 1.0;

  void validate() const;
};

struct ControlState {
  double zeta = 0.0;
  double delta_prime = 0.0;
  double sigma2 = 0.0;
  double gamma = 0.0;
  double alpha = 0.0;
  double phi = 0.0;
  double nu_max = 0.0;
  double xi = 0.0;
  long horizon = 0;
  int tau_max = 1;
  std::vector<Predictor> predictors;

  double omega(double beta) const { return zeta / (2.0 * beta); }
  double eta(long t) const { return gamma / (static_cast<double>(t) + alpha); }
};

/// Smallest alpha >= alpha_min with omega_max(alpha) > omega, to 1e-6.
/// Throws InvalidArgument "gradient diversity too large" when no alpha below
/// the search cap qualifies.
double select_alpha(double mu, double beta, double gamma, double omega, int tau,
                    double cap = 1e12);

struct FeasibilityInputs {
  double mu = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double alpha = 0.0;
  int tau = 1;
  double sigma2 = 0.0;
  double delta = 0.0;
  double omega = 0.0;
};

struct Feasibility {
  bool feasible = false;
  std::array<double, 3> terms{};
  /// Index of the largest term: 0 noise, 1 diversity, 2 initial gap.
  int binding = 0;
  double nu_max = 0.0;
  double z2_min = 0.0;
};

/// nu_max = xi (T + alpha) against the three lower requirements on nu with the
/// consensus coefficient at zero.
Feasibility feasibility_check(long horizon, double xi, const FeasibilityInputs& in,
                              double grad0_norm);

/// Largest consensus coefficient phi whose nu stays within nu_max. Throws
/// NumericalError "rerun feasibility" when the radicand is negative.
double phi_max(double nu_max, const FeasibilityInputs& in);

/// ||g1 - g2||^2 / 2 from two independent mini-batches.
double estimate_sigma(const LossModel& model, const DevicePartition& part, const Vector& w,
                      int batch_size, Rng& rng, Vector* mean_grad = nullptr);
double server_sigma(const std::vector<double>& reports);

/// Least-squares fit per regime. upsilon[k] and gamma[k] are consecutive
/// samples; transition k -> k+1 belongs to the regime of gamma[k].
Predictor fit_predictor(const std::vector<double>& upsilon, const std::vector<int>& gamma);

/// Fewest rounds whose divergence certificate lambda^G sqrt(s) Upsilon meets
/// eta*phi. Zero when the divergence is already within the target.
int gamma_rounds(double eta, double phi, int s, double upsilon, double lambda);

/// gamma_rounds extended to single-device clusters and lambda = 0 (one round
/// reaches exact agreement), then capped.
int gamma_rounds_capped(double eta, double phi, int s, double upsilon, double lambda, int cap);

struct PlanResult {
  int tau = 1;
  std::vector<double> objective;  // objective[tau - 1]
  std::vector<std::vector<int>> predicted_gamma;  // [cluster][t - t_km1]
};

/// Line search of the per-interval cost over tau in 1..min(tau_max, horizon - t_km1).
/// Ties go to the smallest tau.
PlanResult solve_P(long t_km1, const ControlState& state, const CostParams& cost,
                   const std::vector<ClusterSpec>& clusters, int gamma_cap = 100);

}  // namespace tthf
