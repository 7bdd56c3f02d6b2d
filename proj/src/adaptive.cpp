#include "tthf/trainer.hpp"

#include <cmath>
#include <sstream>

namespace tthf {

namespace {

struct Tuning {
  double alpha = 0.0;
  double phi = 0.0;
  double nu = 0.0;
};

// Step-size and consensus coefficients for the current estimates, loosening the
// target horizon and then the loss target until the feasibility check passes.
Tuning tune(const Network& net, const AdaptiveConfig& cfg, const ControlState& state, double gamma,
            double grad0_norm) {
  const double omega = state.omega(net.beta);
  Tuning out;
  out.alpha = select_alpha(net.mu, net.beta, gamma, omega, state.tau_max);
  FeasibilityInputs in;
  in.mu = net.mu;
  in.beta = net.beta;
  in.gamma = gamma;
  in.alpha = out.alpha;
  in.tau = state.tau_max;
  in.sigma2 = state.sigma2;
  in.delta = state.delta_prime;
  in.omega = omega;
  long horizon = state.horizon;
  double xi = state.xi;
  const double alpha0 = out.alpha;
  // Smallest feasible alpha on a doubling grid above the admissible minimum. When
  // the diversity condition set alpha0, omega sits on omega_max(alpha0) and phi_max
  // collapses to zero there, so the grid starts one doubling higher.
  const int first = alpha0 > alpha_min(net.mu, net.beta, gamma, omega) ? 1 : 0;
  auto check = [&] {
    Feasibility f;
    for (int i = first; i <= std::max(first, cfg.alpha_doublings); ++i) {
      in.alpha = std::ldexp(alpha0, i);
      f = feasibility_check(horizon, xi, in, grad0_norm);
      if (f.feasible) break;
    }
    return f;
  };
  Feasibility f = check();
  for (int i = 0; i < cfg.relax_T_max && !f.feasible; ++i) {
    horizon *= 2;
    f = check();
  }
  for (int i = 0; i < cfg.relax_xi_max && !f.feasible; ++i) {
    xi *= 1.25;
    f = check();
  }
  if (!f.feasible) {
    std::ostringstream msg;
    msg << "feasibility check failed after relaxation: binding term " << f.binding << " = "
        << f.terms[static_cast<std::size_t>(f.binding)] << " > nu_max = " << f.nu_max;
    throw NumericalError(msg.str());
  }
  out.alpha = in.alpha;
  out.phi = phi_max(f.nu_max, in);
  Thm2Inputs ti;
  ti.gamma = gamma;
  ti.alpha = out.alpha;
  ti.mu = net.mu;
  ti.beta = net.beta;
  ti.tau = state.tau_max;
  ti.sigma2 = state.sigma2;
  ti.phi = out.phi;
  ti.delta = state.delta_prime;
  ti.omega = omega;
  ti.init_gap = pl_gap(grad0_norm, net.mu);
  out.nu = thm2_constants(ti).nu;
  return out;
}

}  // namespace

MetricsTrace run_adaptive(const Network& net, const AdaptiveConfig& cfg) {
  TrainConfig base = cfg.base;
  base.gamma_mode = GammaMode::rule;
  base.sampled_aggregation = true;
  if (cfg.tau_max < 1 || cfg.tau_first < 1) throw InvalidArgument("interval lengths must be >= 1");
  if (!(cfg.gamma_factor > 1.0)) throw InvalidArgument("gamma_factor must exceed 1 so that gamma > 1/mu");

  const double gamma = cfg.gamma_factor / net.mu;
  ControlState state;
  state.zeta = (cfg.zeta_fraction > 0.0 ? cfg.zeta_fraction : 0.1) * 2.0 * net.beta;
  state.delta_prime = cfg.delta_prime0;
  state.sigma2 = cfg.sigma2_0;
  state.gamma = gamma;
  state.xi = cfg.xi;
  state.horizon = base.T;
  state.tau_max = cfg.tau_max;
  state.predictors.assign(net.clusters.size(), Predictor{});

  const Vector w0 = base.w0 ? *base.w0 : Vector::Zero(net.model.dim);
  const double grad0_norm = cfg.exact_init_gap ? std::sqrt(2.0 * net.mu * std::max(0.0, net.gap(w0)))
                                               : net.grad(w0).norm();
  Tuning tuning = tune(net, cfg, state, gamma, grad0_norm);
  state.alpha = tuning.alpha;
  state.phi = tuning.phi;

  Simulator sim(net, base);
  const std::size_t n_clusters = net.clusters.size();
  std::vector<std::vector<double>> ups_hist(n_clusters, std::vector<double>{0.0});
  std::vector<std::vector<int>> gam_hist(n_clusters, std::vector<int>{0});

  int tau = std::min(cfg.tau_first, cfg.tau_max);
  long t_next = std::min<long>(tau, base.T);
  int k = 0;
  for (long t = 1; t <= base.T; ++t) {
    StepControl ctl;
    ctl.eta = state.eta(t - 1);
    ctl.eps_target = state.eta(t) * state.phi;
    sim.step(t, ctl);
    const auto& ups = sim.trace().upsilon.back();
    const auto& gam = sim.trace().gammas.back();
    for (std::size_t c = 0; c < n_clusters; ++c) {
      ups_hist[c].push_back(ups[c]);
      gam_hist[c].push_back(gam[c]);
    }
    if (t != t_next) continue;

    const auto reports = sim.sampled_reports(base.batch_size);
    const Vector w_hat = sim.aggregate(false);
    ++k;
    Vector g_bar = Vector::Zero(net.model.dim);
    for (std::size_t c = 0; c < n_clusters; ++c) g_bar += net.varrho[c] * reports.grads[c];
    state.delta_prime = diversity_fit(reports.grads, g_bar, w_hat.norm(), state.zeta);
    state.sigma2 = server_sigma(reports.sigma2);
    tuning = tune(net, cfg, state, gamma, grad0_norm);
    state.alpha = tuning.alpha;
    state.phi = tuning.phi;
    for (std::size_t c = 0; c < n_clusters; ++c) {
      state.predictors[c] = fit_predictor(ups_hist[c], gam_hist[c]);
      ups_hist[c].assign(1, 0.0);
      gam_hist[c].assign(1, 0);
    }
    ControlRow row;
    row.k = k;
    row.t = t;
    row.tau = tau;
    row.alpha = state.alpha;
    row.gamma = gamma;
    row.phi = state.phi;
    row.delta_prime = state.delta_prime;
    row.sigma2 = state.sigma2;
    row.nu = tuning.nu;
    sim.trace().control.push_back(row);
    if (t >= base.T) break;
    tau = solve_P(t, state, base.cost, sim.clusters(), base.gamma_cap).tau;
    t_next = t + tau;
    if (base.replace_each_interval) sim.replace_topology(k);
  }
  sim.trace().final_model = sim.sampled_model();
  return std::move(sim.trace());
}

}  // namespace tthf
