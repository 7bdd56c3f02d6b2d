#include "tthf/control.hpp"

#include "tthf/consensus.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <sstream>

namespace tthf {

void CostParams::validate() const {
  for (double v : {e_d2d, e_glob, delay_d2d, delay_glob, c1, c2, c3}) {
    if (!(v >= 0.0)) throw InvalidArgument("cost parameters must be non-negative");
  }
}

double select_alpha(double mu, double beta, double gamma, double omega, int tau, double cap) {
  if (!(mu * gamma > 1.0)) throw NumericalError("Theorem 2 inapplicable: mu * gamma <= 1");
  auto ok = [&](double a) { return omega_max(mu, beta, gamma, a, tau) > omega; };
  const double lo0 = alpha_min(mu, beta, gamma, omega);
  if (ok(lo0)) return lo0;
  double lo = lo0;
  double hi = std::max(2.0 * lo0, lo0 + 1.0);
  while (!ok(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > cap) throw InvalidArgument("gradient diversity too large: no alpha below cap satisfies omega < omega_max");
  }
  while (hi - lo > 1e-6 && hi > std::nextafter(lo, hi)) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

namespace {

double growth_factor(const FeasibilityInputs& in) {
  return 50.0 * in.beta * in.gamma * (in.tau - 1.0) * (1.0 + (in.tau - 2.0) / (in.alpha + 1.0)) *
         std::pow(1.0 + (in.tau - 1.0) / (in.alpha - 1.0), 6.0 * in.beta * in.gamma);
}

// min{(mu gamma - 1)/(beta gamma)^2, Z1 (omega_max^2 - omega^2)/alpha}.
double nu_divisor(const FeasibilityInputs& in) {
  const double bg2 = in.beta * in.beta * in.gamma * in.gamma;
  const double first = (in.mu * in.gamma - 1.0) / bg2;
  const double z = z1(in.mu, in.beta, in.gamma, in.alpha, in.tau);
  const double second =
      (z1_omega_max_sq(in.mu, in.beta, in.gamma, in.alpha) - z * in.omega * in.omega) / in.alpha;
  return std::min(first, second);
}

}  // namespace

Feasibility feasibility_check(long horizon, double xi, const FeasibilityInputs& in,
                              double grad0_norm) {
  Feasibility f;
  f.z2_min = z2(in.beta, in.gamma, in.alpha, in.tau, in.sigma2, 0.0, in.delta);
  f.terms[0] = in.beta * in.beta * in.gamma * in.gamma * f.z2_min / (in.mu * in.gamma - 1.0);
  const double z = z1(in.mu, in.beta, in.gamma, in.alpha, in.tau);
  const double denom = z1_omega_max_sq(in.mu, in.beta, in.gamma, in.alpha) - z * in.omega * in.omega;
  f.terms[1] = denom > 0.0 ? in.alpha * f.z2_min / denom : std::numeric_limits<double>::infinity();
  f.terms[2] = in.alpha * pl_gap(grad0_norm, in.mu);
  f.binding = 0;
  for (int i = 1; i < 3; ++i) {
    if (f.terms[static_cast<std::size_t>(i)] > f.terms[static_cast<std::size_t>(f.binding)]) f.binding = i;
  }
  f.nu_max = xi * (static_cast<double>(horizon) + in.alpha);
  f.feasible = f.terms[static_cast<std::size_t>(f.binding)] <= f.nu_max;
  return f;
}

double phi_max(double nu_max, const FeasibilityInputs& in) {
  const double z2_min = z2(in.beta, in.gamma, in.alpha, in.tau, in.sigma2, 0.0, in.delta);
  const double slack = nu_max * nu_divisor(in) - z2_min;
  if (slack < 0.0) {
    if (slack > -1e-12 * std::max(1.0, z2_min)) return 0.0;
    std::ostringstream msg;
    msg << "rerun feasibility: phi_max radicand is negative (" << slack << ")";
    throw NumericalError(msg.str());
  }
  return std::sqrt(in.beta) * std::sqrt(slack / (1.0 + growth_factor(in)));
}

double estimate_sigma(const LossModel& model, const DevicePartition& part, const Vector& w,
                      int batch_size, Rng& rng, Vector* mean_grad) {
  const Vector g1 = grad_sgd(model, w, part, batch_size, rng);
  const Vector g2 = grad_sgd(model, w, part, batch_size, rng);
  if (mean_grad != nullptr) *mean_grad = 0.5 * (g1 + g2);
  return 0.5 * (g1 - g2).squaredNorm();
}

double server_sigma(const std::vector<double>& reports) {
  double best = 0.0;
  for (double r : reports) best = std::max(best, r);
  return best;
}

namespace {

// Returns false when fewer than two samples are available.
bool fit_line(const std::vector<double>& x, const std::vector<double>& y, double& slope, double& offset) {
  if (x.size() < 2) return false;
  Matrix design(static_cast<Eigen::Index>(x.size()), 2);
  Vector rhs(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    design(static_cast<Eigen::Index>(i), 0) = x[i];
    design(static_cast<Eigen::Index>(i), 1) = 1.0;
    rhs[static_cast<Eigen::Index>(i)] = y[i];
  }
  const Vector coef = design.completeOrthogonalDecomposition().solve(rhs);
  slope = coef[0];
  offset = coef[1];
  return std::isfinite(slope) && std::isfinite(offset);
}

}  // namespace

Predictor fit_predictor(const std::vector<double>& upsilon, const std::vector<int>& gamma) {
  if (upsilon.size() != gamma.size()) throw InvalidArgument("divergence and round histories differ in length");
  std::vector<double> xi, yi, xa, ya;
  for (std::size_t k = 0; k + 1 < upsilon.size(); ++k) {
    if (gamma[k] == 0) {
      xi.push_back(upsilon[k]);
      yi.push_back(upsilon[k + 1]);
    } else {
      xa.push_back(upsilon[k]);
      ya.push_back(upsilon[k + 1]);
    }
  }
  Predictor p;
  p.idle_fallback = !fit_line(xi, yi, p.A, p.B);
  if (p.idle_fallback) {
    p.A = 1.0;
    p.B = 0.0;
  }
  p.active_fallback = !fit_line(xa, ya, p.a, p.b);
  if (p.active_fallback) {
    p.a = 1.0;
    p.b = 0.0;
  }
  return p;
}

int gamma_rounds(double eta, double phi, int s, double upsilon, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    std::ostringstream msg;
    msg << "consensus round rule needs spectral radius in (0, 1), got " << lambda;
    throw InvalidArgument(msg.str());
  }
  if (upsilon < 0.0 || s < 1) throw InvalidArgument("divergence must be >= 0 and cluster size >= 1");
  const double target = eta * phi;
  const double start = std::sqrt(static_cast<double>(s)) * upsilon;
  if (upsilon == 0.0 || start <= target) return 0;
  if (!(target > 0.0)) throw InvalidArgument("consensus target eta*phi must be positive");
  double raw = std::ceil(std::log(target / start) / std::log(lambda));
  if (raw > 1e9) throw NumericalError("consensus round count overflow");
  int g = std::max(1, static_cast<int>(raw));
  while (lemma1_bound(lambda, g, s, upsilon) > target) ++g;
  while (g > 1 && lemma1_bound(lambda, g - 1, s, upsilon) <= target) --g;
  return g;
}

int gamma_rounds_capped(double eta, double phi, int s, double upsilon, double lambda, int cap) {
  if (s <= 1 || upsilon == 0.0) return 0;
  int g;
  if (lambda == 0.0) {
    g = std::sqrt(static_cast<double>(s)) * upsilon <= eta * phi ? 0 : 1;
  } else {
    const double target = eta * phi;
    const double start = std::sqrt(static_cast<double>(s)) * upsilon;
    if (start <= target) return 0;
    if (!(target > 0.0)) return cap;
    const double raw = std::ceil(std::log(target / start) / std::log(lambda));
    if (raw >= cap) return cap;
    g = gamma_rounds(eta, phi, s, upsilon, lambda);
  }
  return std::min(g, cap);
}

PlanResult solve_P(long t_km1, const ControlState& state, const CostParams& cost,
                   const std::vector<ClusterSpec>& clusters, int gamma_cap) {
  cost.validate();
  const long limit = std::min<long>(state.tau_max, state.horizon - t_km1);
  if (limit < 1) throw InvalidArgument("empty tau range");
  if (state.predictors.size() != clusters.size()) throw InvalidArgument("one predictor per cluster required");
  PlanResult out;
  // Rounds at offsets 0..limit, predicted once; costs use prefix sums.
  std::vector<double> energy(static_cast<std::size_t>(limit + 1), 0.0);
  std::vector<double> delay(static_cast<std::size_t>(limit + 1), 0.0);
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& spec = clusters[c];
    std::vector<int> plan;
    double upsilon = 0.0;
    for (long d = 0; d <= limit; ++d) {
      const long t = t_km1 + d;
      const int g = gamma_rounds_capped(state.eta(t), state.phi, spec.s, upsilon, spec.lambda, gamma_cap);
      plan.push_back(g);
      energy[static_cast<std::size_t>(d)] += static_cast<double>(g) * spec.s * cost.e_d2d;
      delay[static_cast<std::size_t>(d)] += static_cast<double>(g) * cost.delay_d2d;
      upsilon = std::max(0.0, state.predictors[c].next(upsilon, g));
    }
    out.predicted_gamma.push_back(std::move(plan));
  }
  double e_sum = energy[0];
  double d_sum = delay[0];
  double best = std::numeric_limits<double>::infinity();
  for (long tau = 1; tau <= limit; ++tau) {
    e_sum += energy[static_cast<std::size_t>(tau)];
    d_sum += delay[static_cast<std::size_t>(tau)];
    const double base = static_cast<double>(t_km1) + state.alpha;
    const double obj = cost.c1 * (cost.e_glob + e_sum) / tau + cost.c2 * (cost.delay_glob + d_sum) / tau +
                       cost.c3 * (1.0 - base / (base + tau));
    out.objective.push_back(obj);
    if (obj < best) {
      best = obj;
      out.tau = static_cast<int>(tau);
    }
  }
  return out;
}

}  // namespace tthf
