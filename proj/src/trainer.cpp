#include "tthf/trainer.hpp"

#include "tthf/parallel.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace tthf {

double Network::loss(const Vector& w) const {
  if (model.kind == LossKind::linear_regression && quad_h.size() > 0) return f_star + gap(w);
  return global_loss(model, w, parts);
}

double Network::gap(const Vector& w) const {
  if (model.kind == LossKind::linear_regression && quad_h.size() > 0) {
    const Vector d = w - w_star;
    return 0.5 * d.dot(quad_h * d);
  }
  return global_loss(model, w, parts) - f_star;
}

Vector Network::grad(const Vector& w) const {
  if (model.kind == LossKind::linear_regression && quad_h.size() > 0) return quad_h * w - quad_b;
  return grad_global(model, w, parts);
}

Network make_network(const LossModel& model, std::vector<DevicePartition> parts,
                     std::vector<ClusterSpec> clusters) {
  Network net;
  net.model = model;
  int total = 0;
  for (const auto& c : clusters) {
    net.offsets.push_back(total);
    net.sizes.push_back(c.s);
    total += c.s;
  }
  if (total != static_cast<int>(parts.size())) {
    throw InvalidArgument("cluster sizes cover " + std::to_string(total) + " devices but " +
                          std::to_string(parts.size()) + " partitions were given");
  }
  net.varrho = cluster_weights(net.sizes);
  for (std::size_t c = 0; c < clusters.size(); ++c) clusters[c].varrho = net.varrho[c];
  net.parts = std::move(parts);
  net.clusters = std::move(clusters);
  const auto consts = smoothness_constants(model, net.parts);
  net.mu = consts.mu;
  net.beta = consts.beta;
  const auto opt = solve_optimum(model, net.parts);
  net.w_star = opt.w;
  net.f_star = opt.loss;
  if (model.kind == LossKind::linear_regression) {
    net.quad_h = Matrix::Zero(model.dim, model.dim);
    net.quad_b = Vector::Zero(model.dim);
    for (const auto& part : net.parts) {
      net.quad_h += device_hessian(model, part);
      Vector b = Vector::Zero(model.dim);
      for (const auto& p : part.points) b += p.y * p.x;
      net.quad_b += b / static_cast<double>(part.size());
    }
    net.quad_h /= static_cast<double>(net.parts.size());
    net.quad_b /= static_cast<double>(net.parts.size());
  }
  return net;
}

Vector local_sgd_step(const LossModel& model, const Vector& w, const DevicePartition& part,
                      double eta, int batch_size, Rng& rng) {
  const int b = batch_size <= 0 ? static_cast<int>(part.size()) : batch_size;
  return w - eta * grad_sgd(model, w, part, b, rng);
}

Vector global_aggregate(const std::vector<Matrix>& cluster_models, const std::vector<double>& varrho,
                        Rng& rng, std::vector<int>* out_sampled) {
  if (cluster_models.empty() || cluster_models.size() != varrho.size()) {
    throw InvalidArgument("need one weight per cluster");
  }
  Vector w = Vector::Zero(cluster_models.front().cols());
  if (out_sampled != nullptr) out_sampled->clear();
  for (std::size_t c = 0; c < cluster_models.size(); ++c) {
    const auto rows = static_cast<std::uint64_t>(cluster_models[c].rows());
    if (rows == 0) throw InvalidArgument("cluster has no devices");
    const auto n = static_cast<Eigen::Index>(uniform_index(rng, rows));
    if (out_sampled != nullptr) out_sampled->push_back(static_cast<int>(n));
    w += varrho[c] * cluster_models[c].row(n).transpose();
  }
  return w;
}

Simulator::Simulator(const Network& net, const TrainConfig& cfg)
    : net_(net),
      cfg_(cfg),
      clusters_(net.clusters),
      server_rng_(make_rng(cfg.seed, Stream::server)),
      estimator_rng_(make_rng(cfg.seed, Stream::estimator)) {
  const Vector w0 = cfg.w0 ? *cfg.w0 : Vector::Zero(net.model.dim);
  if (w0.size() != net.model.dim) throw InvalidArgument("initial model has the wrong dimension");
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    models_.push_back(w0.transpose().replicate(clusters_[c].s, 1));
    outages_.push_back(make_outage_policy(clusters_[c], cfg.channel, cfg.outages));
    cluster_rngs_.push_back(make_rng(cfg.seed, Stream::outage, c));
  }
  for (int d = 0; d < net.devices(); ++d) {
    device_rngs_.push_back(make_rng(cfg.seed, Stream::device_sgd, static_cast<std::uint64_t>(d)));
  }
  trace_.seed = cfg.seed;
  trace_.init_gap = net.gap(w0);
  resample();
}

void Simulator::resample() {
  sampled_.clear();
  for (const auto& c : clusters_) {
    sampled_.push_back(static_cast<int>(uniform_index(server_rng_, static_cast<std::uint64_t>(c.s))));
  }
  trace_.sampled.push_back(sampled_);
}

Vector Simulator::sampled_model() const {
  Vector w = Vector::Zero(net_.model.dim);
  for (std::size_t c = 0; c < models_.size(); ++c) {
    w += net_.varrho[c] * models_[c].row(sampled_[c]).transpose();
  }
  return w;
}

Vector Simulator::average_model() const {
  Vector w = Vector::Zero(net_.model.dim);
  for (std::size_t c = 0; c < models_.size(); ++c) {
    w += net_.varrho[c] * models_[c].colwise().mean().transpose();
  }
  return w;
}

void Simulator::step(long t, const StepControl& ctl) {
  const int n_clusters = static_cast<int>(clusters_.size());
  // Local SGD on every device.
  parallel_for(static_cast<std::size_t>(net_.devices()), cfg_.threads, [&](std::size_t d) {
    int c = 0;
    while (c + 1 < n_clusters && net_.offsets[static_cast<std::size_t>(c + 1)] <= static_cast<int>(d)) ++c;
    const auto row = static_cast<Eigen::Index>(static_cast<int>(d) - net_.offsets[static_cast<std::size_t>(c)]);
    auto& m = models_[static_cast<std::size_t>(c)];
    const Vector w = m.row(row).transpose();
    m.row(row) = local_sgd_step(net_.model, w, net_.parts[d], ctl.eta, cfg_.batch_size, device_rngs_[d]).transpose();
  });

  std::vector<int> gammas(static_cast<std::size_t>(n_clusters), 0);
  std::vector<double> eps(static_cast<std::size_t>(n_clusters), 0.0);
  std::vector<double> ups(static_cast<std::size_t>(n_clusters), 0.0);
  std::vector<int> cap_hit(static_cast<std::size_t>(n_clusters), 0);
  parallel_for(static_cast<std::size_t>(n_clusters), cfg_.threads, [&](std::size_t c) {
    const auto& spec = clusters_[c];
    const Matrix w_tilde = models_[c];
    ups[c] = cfg_.divergence == DivergenceSource::estimate ? divergence_estimate(w_tilde, spec.graph)
                                                           : divergence_exact(w_tilde);
    int g = 0;
    switch (cfg_.gamma_mode) {
      case GammaMode::none:
        break;
      case GammaMode::fixed:
        g = (cfg_.cadence <= 1 || t % cfg_.cadence == 0) ? cfg_.gamma_fixed : 0;
        break;
      case GammaMode::rule:
        g = spec.s > 1 ? gamma_rounds_capped(1.0, ctl.eps_target, spec.s, ups[c], spec.lambda,
                                             cfg_.gamma_cap)
                       : 0;
        break;
    }
    if (spec.s <= 1) g = 0;
    if (g >= cfg_.gamma_cap && g > 0) {
      cap_hit[c] = 1;
      g = cfg_.gamma_cap;
    }
    gammas[c] = g;
    if (g > 0) models_[c] = run_consensus(w_tilde, spec.v, g, outages_[c], cluster_rngs_[c]);
    eps[c] = consensus_error(models_[c], w_tilde).rms;
  });
  for (int c = 0; c < n_clusters; ++c) {
    const auto& spec = clusters_[static_cast<std::size_t>(c)];
    energy_ += gammas[static_cast<std::size_t>(c)] * spec.s * cfg_.cost.e_d2d;
    delay_ += gammas[static_cast<std::size_t>(c)] * cfg_.cost.delay_d2d;
    trace_.gamma_cap_hits += cap_hit[static_cast<std::size_t>(c)];
    if (!models_[static_cast<std::size_t>(c)].allFinite()) {
      std::ostringstream msg;
      msg << "non-finite model in cluster " << c << " at t = " << t;
      throw NumericalError(msg.str());
    }
  }
  record(t, gammas, eps, ups, false);
}

void Simulator::record(long t, const std::vector<int>& gammas, const std::vector<double>& eps,
                       const std::vector<double>& ups, bool aggregation) {
  MetricsRow row;
  row.t = t;
  const Vector ws = sampled_model();
  const Vector wa = average_model();
  row.loss_gap_sampled = net_.gap(ws);
  row.loss_gap_avg = net_.gap(wa);
  std::vector<Vector> means;
  for (const auto& m : models_) means.push_back(m.colwise().mean().transpose());
  row.dispersion = dispersion_sample(means, net_.varrho);
  for (double e : eps) row.eps_rms = std::max(row.eps_rms, e);
  for (int g : gammas) row.gamma_total += g;
  row.energy_J = energy_;
  row.delay_s = delay_;
  row.aggregation = aggregation;
  if (cfg_.record_accuracy) row.accuracy = accuracy(net_.model, ws, net_.parts);
  trace_.rows.push_back(row);
  trace_.gammas.push_back(gammas);
  trace_.eps.push_back(eps);
  trace_.upsilon.push_back(ups);
}

Vector Simulator::aggregate(bool full) {
  Vector w = full ? average_model() : sampled_model();
  const double uploads = full ? static_cast<double>(net_.devices()) : static_cast<double>(clusters_.size());
  energy_ += cfg_.cost.e_glob * uploads / static_cast<double>(clusters_.size());
  delay_ += cfg_.cost.delay_glob;
  for (auto& m : models_) m = w.transpose().replicate(m.rows(), 1);
  if (!trace_.rows.empty()) {
    auto& row = trace_.rows.back();
    row.loss_gap_sampled = net_.gap(w);
    row.loss_gap_avg = row.loss_gap_sampled;
    row.energy_J = energy_;
    row.delay_s = delay_;
    row.aggregation = true;
    if (cfg_.record_accuracy) row.accuracy = accuracy(net_.model, w, net_.parts);
  }
  resample();
  return w;
}

Simulator::ServerReport Simulator::sampled_reports(int batch_size) {
  ServerReport rep;
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    const auto& part = net_.parts[static_cast<std::size_t>(net_.offsets[c] + sampled_[c])];
    const int b = batch_size <= 0 ? static_cast<int>(part.size()) : std::min<int>(batch_size, static_cast<int>(part.size()));
    Vector g;
    const Vector w = models_[c].row(sampled_[c]).transpose();
    rep.sigma2.push_back(estimate_sigma(net_.model, part, w, b, estimator_rng_, &g));
    rep.grads.push_back(std::move(g));
  }
  return rep;
}

void Simulator::replace_topology(int k) {
  auto rebuilt = build_clusters(cfg_.topology, cfg_.seed, static_cast<std::uint64_t>(k));
  if (rebuilt.size() != clusters_.size()) throw InvalidArgument("re-placement changed the cluster count");
  for (std::size_t c = 0; c < rebuilt.size(); ++c) {
    if (rebuilt[c].s != clusters_[c].s) throw InvalidArgument("re-placement changed a cluster size");
    rebuilt[c].varrho = clusters_[c].varrho;
    outages_[c] = make_outage_policy(rebuilt[c], cfg_.channel, cfg_.outages);
  }
  clusters_ = std::move(rebuilt);
}

MetricsTrace run_tthf(const Network& net, const TrainConfig& cfg) {
  if (cfg.T < 1) throw InvalidArgument("T must be >= 1");
  if (cfg.taus.empty()) throw InvalidArgument("need at least one interval length");
  for (int tau : cfg.taus) {
    if (tau < 1) throw InvalidArgument("interval lengths must be >= 1");
  }
  if (cfg.gamma_mode == GammaMode::rule && !(cfg.phi > 0.0)) throw InvalidArgument("round rule needs phi > 0");
  Simulator sim(net, cfg);
  std::size_t idx = 0;
  int tau = cfg.taus[0];
  long t_next = std::min<long>(tau, cfg.T);
  int k = 0;
  for (long t = 1; t <= cfg.T; ++t) {
    StepControl ctl;
    ctl.eta = cfg.step.eta(t - 1);
    ctl.eps_target = cfg.step.eta(t) * cfg.phi;
    if (!std::isfinite(ctl.eta) || ctl.eta < 0.0) {
      throw NumericalError("invalid step size at t = " + std::to_string(t));
    }
    sim.step(t, ctl);
    if (t == t_next) {
      sim.aggregate(!cfg.sampled_aggregation);
      ++k;
      ControlRow row;
      row.k = k;
      row.t = t;
      row.tau = tau;
      row.alpha = cfg.step.alpha;
      row.gamma = cfg.step.gamma;
      row.phi = cfg.phi;
      sim.trace().control.push_back(row);
      if (idx + 1 < cfg.taus.size()) ++idx;
      tau = cfg.taus[idx];
      t_next = std::min<long>(t + tau, cfg.T);
      if (cfg.replace_each_interval) sim.replace_topology(k);
    }
  }
  sim.trace().final_model = sim.sampled_model();
  return std::move(sim.trace());
}

MetricsTrace run_baseline(const Network& net, TrainConfig cfg, int tau) {
  cfg.gamma_mode = GammaMode::none;
  cfg.taus = {tau};
  cfg.sampled_aggregation = false;
  return run_tthf(net, cfg);
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return out.str();
}

}  // namespace

std::string trace_csv(const MetricsTrace& trace) {
  std::ostringstream out;
  out << kTraceHeader << '\n';
  for (const auto& r : trace.rows) {
    out << r.t << ',' << fmt(r.loss_gap_sampled) << ',' << fmt(r.loss_gap_avg) << ',' << fmt(r.dispersion)
        << ',' << fmt(r.eps_rms) << ',' << r.gamma_total << ',' << fmt(r.energy_J) << ',' << fmt(r.delay_s)
        << '\n';
  }
  return out.str();
}

void write_trace_csv(const std::string& path, const MetricsTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << trace_csv(trace);
}

void write_control_csv(const std::string& path, const MetricsTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "k,t,tau,alpha,gamma,phi,delta_prime,sigma2,nu\n";
  for (const auto& r : trace.control) {
    out << r.k << ',' << r.t << ',' << r.tau << ',' << fmt(r.alpha) << ',' << fmt(r.gamma) << ','
        << fmt(r.phi) << ',' << fmt(r.delta_prime) << ',' << fmt(r.sigma2) << ',' << fmt(r.nu) << '\n';
  }
}

}  // namespace tthf
