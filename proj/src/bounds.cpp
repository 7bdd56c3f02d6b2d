#include "tthf/bounds.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>

namespace tthf {

double diversity_fit(const std::vector<Vector>& cluster_grads, const Vector& global_grad,
                     double w_norm, double zeta) {
  double worst = 0.0;
  for (const auto& g : cluster_grads) worst = std::max(worst, (g - global_grad).norm());
  return std::max(0.0, worst - zeta * w_norm);
}

DiversityEstimate quadratic_diversity(const LossModel& model,
                                      const std::vector<DevicePartition>& parts,
                                      const std::vector<int>& cluster_sizes, const Vector& w_star,
                                      double beta) {
  if (model.kind != LossKind::linear_regression) {
    throw InvalidArgument("exact diversity constants are only available for regression");
  }
  const auto weights = cluster_weights(cluster_sizes);
  std::vector<Matrix> hessians;
  std::vector<Vector> grads;
  Matrix h_global = Matrix::Zero(model.dim, model.dim);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < cluster_sizes.size(); ++c) {
    Matrix h = Matrix::Zero(model.dim, model.dim);
    Vector g = Vector::Zero(model.dim);
    for (int i = 0; i < cluster_sizes[c]; ++i, ++offset) {
      h += device_hessian(model, parts[offset]);
      g += grad_full(model, w_star, parts[offset]);
    }
    h /= cluster_sizes[c];
    g /= cluster_sizes[c];
    h_global += weights[c] * h;
    hessians.push_back(std::move(h));
    grads.push_back(std::move(g));
  }
  DiversityEstimate out;
  for (std::size_t c = 0; c < hessians.size(); ++c) {
    out.delta = std::max(out.delta, grads[c].norm());
    Eigen::SelfAdjointEigenSolver<Matrix> es(hessians[c] - h_global, Eigen::EigenvaluesOnly);
    out.zeta = std::max(out.zeta, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  out.omega = out.zeta / (2.0 * beta);
  out.delta_prime = out.delta + out.zeta * w_star.norm();
  return out;
}

double lambda_plus(double mu, double beta, double omega) {
  const double r = mu / (4.0 * beta);
  return 1.0 - r + std::sqrt((1.0 + r) * (1.0 + r) + 2.0 * omega);
}

double sigma_plus(long t, long t_km1, const StepSchedule& sched, double beta, double lambda_p) {
  if (t < t_km1) throw InvalidArgument("sigma_plus needs t >= t_km1");
  const long n = t - t_km1;
  if (n == 0) return 0.0;
  // suffix[l] = prod_{j=l+1}^{t-1} (1 + eta_j beta), indexed from t_km1.
  std::vector<double> suffix(static_cast<std::size_t>(n), 1.0);
  for (long l = n - 2; l >= 0; --l) {
    suffix[static_cast<std::size_t>(l)] =
        suffix[static_cast<std::size_t>(l + 1)] * (1.0 + sched.eta(t_km1 + l + 1) * beta);
  }
  double prefix = 1.0;
  double total = 0.0;
  for (long l = 0; l < n; ++l) {
    const double eta = sched.eta(t_km1 + l);
    total += prefix * beta * eta * suffix[static_cast<std::size_t>(l)];
    prefix *= 1.0 + eta * beta * lambda_p;
  }
  return total;
}

double dispersion_sample(const std::vector<Vector>& cluster_means, const std::vector<double>& weights) {
  if (cluster_means.size() != weights.size() || cluster_means.empty()) {
    throw InvalidArgument("cluster means and weights must be non-empty and of equal length");
  }
  Vector mean = Vector::Zero(cluster_means.front().size());
  for (std::size_t c = 0; c < weights.size(); ++c) mean += weights[c] * cluster_means[c];
  double a = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) a += weights[c] * (cluster_means[c] - mean).squaredNorm();
  return a;
}

std::vector<double> dispersion_mc(const std::vector<std::vector<double>>& runs) {
  if (runs.empty()) return {};
  std::vector<double> mean(runs.front().size(), 0.0);
  for (const auto& run : runs) {
    if (run.size() != mean.size()) throw InvalidArgument("runs differ in length");
    for (std::size_t t = 0; t < run.size(); ++t) mean[t] += run[t];
  }
  for (auto& v : mean) v /= static_cast<double>(runs.size());
  return mean;
}

void check_dispersion_hypothesis(const DispersionInputs& in) {
  if (!in.sched.decaying()) throw InvalidArgument("dispersion bound needs eta_t = gamma/(t + alpha)");
  const double lp = lambda_plus(in.mu, in.beta, in.omega);
  const double first = lp - 2.0 + in.mu / (2.0 * in.beta);
  const double second = in.beta / in.mu;
  const double need = in.sched.gamma * in.beta * std::max(first, second);
  if (in.sched.alpha < need * (1.0 - 1e-12)) {
    std::ostringstream msg;
    msg << "alpha >= gamma*beta*max{lambda_+ - 2 + mu/(2 beta), beta/mu} violated: alpha = "
        << in.sched.alpha << " < " << need;
    throw InvalidArgument(msg.str());
  }
}

double prop1_bound(const DispersionInputs& in, long t, long t_km1, double gap_at_km1) {
  check_dispersion_hypothesis(in);
  const double lp = lambda_plus(in.mu, in.beta, in.omega);
  const double s = sigma_plus(t, t_km1, in.sched, in.beta, lp);
  const double s2 = s * s;
  return 16.0 * in.omega * in.omega / in.mu * s2 * gap_at_km1 +
         25.0 * s2 * ((in.sigma2 + in.delta * in.delta) / (in.beta * in.beta) + in.eps0 * in.eps0);
}

double thm1_rhs(double prev_gap, double eta, double beta, double dispersion, double eps,
                double eps_next, double sigma2, double mu) {
  if (eta * beta > 1.0 + 1e-12) {
    std::ostringstream msg;
    msg << "one-step bound needs eta <= 1/beta; eta = " << eta << ", 1/beta = " << 1.0 / beta;
    throw InvalidArgument(msg.str());
  }
  return (1.0 - mu * eta) * prev_gap + 0.5 * eta * beta * beta * dispersion +
         0.5 * (eta * beta * beta * eps * eps + eta * eta * beta * sigma2 + beta * eps_next * eps_next);
}

double alpha_min(double mu, double beta, double gamma, double omega) {
  const double r = mu / (4.0 * beta);
  const double first = r - 1.0 + std::sqrt((1.0 + r) * (1.0 + r) + 2.0 * omega);
  return gamma * beta * std::max(first, beta / mu);
}

namespace {

double growth(double beta, double gamma, double alpha, int tau) {
  return std::pow(1.0 + (tau - 1.0) / (alpha - 1.0), 6.0 * beta * gamma);
}

}  // namespace

double z1(double mu, double beta, double gamma, double alpha, int tau) {
  const double lead = 1.0 + tau / (alpha - 1.0);
  return 32.0 * beta * beta * gamma / mu * (tau - 1.0) * lead * lead * growth(beta, gamma, alpha, tau);
}

double z2(double beta, double gamma, double alpha, int tau, double sigma2, double phi, double delta) {
  return (sigma2 + 2.0 * phi * phi) / (2.0 * beta) +
         50.0 * gamma * (tau - 1.0) * (1.0 + (tau - 2.0) / (alpha + 1.0)) * growth(beta, gamma, alpha, tau) *
             (sigma2 + phi * phi + delta * delta);
}

double z1_omega_max_sq(double mu, double beta, double gamma, double alpha) {
  return alpha * (mu * gamma - 1.0 + 1.0 / (1.0 + alpha)) / (beta * beta * gamma * gamma);
}

double omega_max(double mu, double beta, double gamma, double alpha, int tau) {
  const double z = z1(mu, beta, gamma, alpha, tau);
  if (z == 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(z1_omega_max_sq(mu, beta, gamma, alpha) / z);
}

Thm2Constants thm2_constants(const Thm2Inputs& in) {
  if (!(in.mu * in.gamma > 1.0)) throw NumericalError("Theorem 2 inapplicable: mu * gamma <= 1");
  if (!(in.alpha > 1.0)) throw InvalidArgument("decaying-step certificate needs alpha > 1");
  if (in.tau < 1) throw InvalidArgument("tau must be >= 1");
  Thm2Constants c;
  c.alpha_min = alpha_min(in.mu, in.beta, in.gamma, in.omega);
  c.z1 = z1(in.mu, in.beta, in.gamma, in.alpha, in.tau);
  c.z2 = z2(in.beta, in.gamma, in.alpha, in.tau, in.sigma2, in.phi, in.delta);
  c.omega_max = omega_max(in.mu, in.beta, in.gamma, in.alpha, in.tau);
  c.nu_terms[0] = in.beta * in.beta * in.gamma * in.gamma * c.z2 / (in.mu * in.gamma - 1.0);
  // alpha Z2 / (Z1 (omega_max^2 - omega^2)), written so that Z1 = 0 stays finite.
  const double denom = z1_omega_max_sq(in.mu, in.beta, in.gamma, in.alpha) - c.z1 * in.omega * in.omega;
  c.nu_terms[1] = in.omega < c.omega_max && denom > 0.0 ? in.alpha * c.z2 / denom
                                                         : std::numeric_limits<double>::infinity();
  c.nu_terms[2] = in.alpha * in.init_gap;
  c.nu = std::max({c.nu_terms[0], c.nu_terms[1], c.nu_terms[2]});
  return c;
}

double pl_gap(double grad_norm, double mu) { return grad_norm * grad_norm / (2.0 * mu); }

nlohmann::json certificate_json(const Thm2Inputs& in, const Thm2Constants& c,
                                const std::vector<long>& times,
                                const std::vector<double>& measured) {
  if (times.size() != measured.size()) throw InvalidArgument("times and measurements differ in length");
  nlohmann::json j;
  j["inputs"] = {{"gamma", in.gamma}, {"alpha", in.alpha}, {"mu", in.mu},        {"beta", in.beta},
                 {"tau", in.tau},     {"sigma2", in.sigma2}, {"phi", in.phi},    {"delta", in.delta},
                 {"omega", in.omega}, {"init_gap", in.init_gap}};
  auto finite = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return "inf";
  };
  j["constants"] = {{"alpha_min", c.alpha_min}, {"omega_max", finite(c.omega_max)}, {"z1", c.z1},
                    {"z2", c.z2},               {"nu", finite(c.nu)}};
  nlohmann::json rows = nlohmann::json::array();
  bool holds = true;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double bound = c.nu / (static_cast<double>(times[i]) + in.alpha);
    holds = holds && measured[i] <= bound;
    rows.push_back({{"t", times[i]}, {"measured", measured[i]}, {"bound", finite(bound)}});
  }
  j["trace"] = rows;
  j["holds"] = holds;
  return j;
}

}  // namespace tthf
