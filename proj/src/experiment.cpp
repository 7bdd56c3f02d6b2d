#include "tthf/experiment.hpp"

#include "tthf/parallel.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace tthf {

namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (allowed.count(key) == 0) throw ConfigError(join(path, key), "unknown field");
  }
}

const json* find(const json& obj, const std::string& key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double number(const json& obj, const std::string& path, const std::string& key, double def) {
  const json* v = find(obj, key);
  if (v == nullptr) return def;
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  return v->get<double>();
}

long integer(const json& obj, const std::string& path, const std::string& key, long def) {
  const json* v = find(obj, key);
  if (v == nullptr) return def;
  if (!v->is_number_integer()) throw ConfigError(join(path, key), "expected an integer");
  return v->get<long>();
}

bool boolean(const json& obj, const std::string& path, const std::string& key, bool def) {
  const json* v = find(obj, key);
  if (v == nullptr) return def;
  if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v->get<bool>();
}

std::string text(const json& obj, const std::string& path, const std::string& key, const std::string& def) {
  const json* v = find(obj, key);
  if (v == nullptr) return def;
  if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
  return v->get<std::string>();
}

const json& required(const json& obj, const std::string& path, const std::string& key) {
  const json* v = find(obj, key);
  if (v == nullptr) throw ConfigError(join(path, key), "missing required field");
  return *v;
}

const json& section(const json& root, const std::string& key) {
  static const json empty = json::object();
  const json* v = find(root, key);
  return v == nullptr ? empty : *v;
}

void positive(double v, const std::string& path) {
  if (!(v > 0.0)) throw ConfigError(path, "must be positive");
}

void parse_channel(const json& j, const std::string& path, ChannelParams& c) {
  check_keys(j, path, {"noise_psd_dbm_hz", "bandwidth_hz", "tx_power_dbm", "pathloss_ref_db", "pathloss_exp",
                       "ref_dist_m", "rate_bps", "outage_threshold"});
  c.noise_psd_dbm_hz = number(j, path, "noise_psd_dbm_hz", c.noise_psd_dbm_hz);
  c.bandwidth_hz = number(j, path, "bandwidth_hz", c.bandwidth_hz);
  c.tx_power_dbm = number(j, path, "tx_power_dbm", c.tx_power_dbm);
  c.pathloss_ref_db = number(j, path, "pathloss_ref_db", c.pathloss_ref_db);
  c.pathloss_exp = number(j, path, "pathloss_exp", c.pathloss_exp);
  c.ref_dist_m = number(j, path, "ref_dist_m", c.ref_dist_m);
  c.rate_bps = number(j, path, "rate_bps", c.rate_bps);
  c.outage_threshold = number(j, path, "outage_threshold", c.outage_threshold);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.hash = config_hash(j);
  check_keys(j, "", {"algorithm", "seeds", "output_dir", "threads", "dataset", "partition", "topology", "loss",
                     "step", "schedule", "adaptive", "cost", "sweep"});

  const json& alg = required(j, "", "algorithm");
  if (!alg.is_string()) throw ConfigError("algorithm", "expected a string");
  const auto name = alg.get<std::string>();
  if (name == "tthf") cfg.algorithm = Algorithm::tthf;
  else if (name == "baseline") cfg.algorithm = Algorithm::baseline;
  else if (name == "adaptive") cfg.algorithm = Algorithm::adaptive;
  else throw ConfigError("algorithm", "expected tthf, baseline or adaptive");

  const json& seeds = required(j, "", "seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds", "expected a non-empty array of integers");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!seeds[i].is_number_unsigned() && !(seeds[i].is_number_integer() && seeds[i].get<std::int64_t>() >= 0)) throw ConfigError("seeds[" + std::to_string(i) + "]", "expected a non-negative integer");
    cfg.seeds.push_back(seeds[i].get<std::uint64_t>());
  }
  cfg.output_dir = text(j, "", "output_dir", cfg.output_dir);
  cfg.threads = static_cast<int>(integer(j, "", "threads", 1));
  if (cfg.threads < 1) throw ConfigError("threads", "must be >= 1");

  {
    const json& d = section(j, "dataset");
    check_keys(d, "dataset", {"kind", "m", "n_labels", "per_label", "separation", "noise", "bias", "path", "header",
                              "encode_labels", "seed"});
    cfg.dataset.kind = text(d, "dataset", "kind", "synthetic");
    auto& s = cfg.dataset.synthetic;
    s.m = static_cast<int>(integer(d, "dataset", "m", s.m));
    s.n_labels = static_cast<int>(integer(d, "dataset", "n_labels", s.n_labels));
    s.per_label = static_cast<int>(integer(d, "dataset", "per_label", s.per_label));
    s.separation = number(d, "dataset", "separation", s.separation);
    s.noise = number(d, "dataset", "noise", s.noise);
    s.bias = boolean(d, "dataset", "bias", s.bias);
    cfg.dataset.csv_path = text(d, "dataset", "path", "");
    cfg.dataset.csv_header = boolean(d, "dataset", "header", false);
    cfg.dataset.encode_labels = boolean(d, "dataset", "encode_labels", true);
    if (find(d, "seed") != nullptr) cfg.dataset.seed = static_cast<std::uint64_t>(integer(d, "dataset", "seed", 0));
    if (cfg.dataset.kind == "csv") {
      if (cfg.dataset.csv_path.empty()) throw ConfigError("dataset.path", "missing required field for csv data");
    } else if (cfg.dataset.kind != "synthetic") {
      throw ConfigError("dataset.kind", "expected synthetic or csv");
    }
  }
  {
    const json& p = section(j, "partition");
    check_keys(p, "partition", {"mode"});
    try {
      cfg.partition = parse_partition_mode(text(p, "partition", "mode", "iid"));
    } catch (const InvalidArgument& e) {
      throw ConfigError("partition.mode", e.what());
    }
  }
  {
    const json& t = section(j, "topology");
    check_keys(t, "topology", {"n_clusters", "s_c", "field_m", "d_c", "max_attempts", "channel"});
    auto& tp = cfg.topology;
    tp.n_clusters = static_cast<int>(integer(t, "topology", "n_clusters", tp.n_clusters));
    tp.s_c = static_cast<int>(integer(t, "topology", "s_c", tp.s_c));
    tp.field_m = number(t, "topology", "field_m", tp.field_m);
    tp.d_c = number(t, "topology", "d_c", tp.d_c);
    tp.max_attempts = static_cast<int>(integer(t, "topology", "max_attempts", tp.max_attempts));
    if (tp.n_clusters < 1) throw ConfigError("topology.n_clusters", "must be >= 1");
    if (tp.s_c < 1) throw ConfigError("topology.s_c", "must be >= 1");
    positive(tp.field_m, "topology.field_m");
    parse_channel(section(t, "channel"), "topology.channel", tp.channel);
  }
  {
    const json& l = section(j, "loss");
    check_keys(l, "loss", {"kind", "reg"});
    try {
      cfg.loss.kind = parse_loss_kind(text(l, "loss", "kind", "linear_regression"));
    } catch (const InvalidArgument& e) {
      throw ConfigError("loss.kind", e.what());
    }
    cfg.loss.reg = number(l, "loss", "reg", 0.1);
    if (cfg.loss.reg < 0.0) throw ConfigError("loss.reg", "must be non-negative");
  }
  {
    const json& s = section(j, "step");
    check_keys(s, "step", {"kind", "eta", "eta_beta_fraction", "gamma", "gamma_factor", "alpha"});
    const auto kind = text(s, "step", "kind", "constant");
    if (kind == "constant") cfg.step.kind = StepKind::constant;
    else if (kind == "decaying") cfg.step.kind = StepKind::decaying;
    else throw ConfigError("step.kind", "expected constant or decaying");
    if (find(s, "eta") != nullptr) {
      cfg.step.eta = number(s, "step", "eta", 0.0);
      positive(*cfg.step.eta, "step.eta");
    }
    cfg.step.eta_beta_fraction = number(s, "step", "eta_beta_fraction", cfg.step.eta_beta_fraction);
    positive(cfg.step.eta_beta_fraction, "step.eta_beta_fraction");
    if (find(s, "gamma") != nullptr) cfg.step.gamma = number(s, "step", "gamma", 0.0);
    cfg.step.gamma_factor = number(s, "step", "gamma_factor", cfg.step.gamma_factor);
    if (find(s, "alpha") != nullptr) cfg.step.alpha = number(s, "step", "alpha", 0.0);
  }
  {
    const json& s = required(j, "", "schedule");
    check_keys(s, "schedule", {"T", "tau", "taus", "gamma_mode", "gamma", "cadence", "phi", "gamma_cap", "divergence",
                               "batch_size", "sampled_aggregation", "outages", "replace_each_interval",
                               "record_accuracy"});
    auto& tr = cfg.train;
    const json& T = required(s, "schedule", "T");
    if (!T.is_number_integer() || T.get<long>() < 1) throw ConfigError("schedule.T", "expected an integer >= 1");
    tr.T = T.get<long>();
    if (const json* taus = find(s, "taus")) {
      if (!taus->is_array() || taus->empty()) throw ConfigError("schedule.taus", "expected a non-empty array");
      tr.taus.clear();
      for (const auto& v : *taus) {
        if (!v.is_number_integer() || v.get<int>() < 1) throw ConfigError("schedule.taus", "entries must be integers >= 1");
        tr.taus.push_back(v.get<int>());
      }
    } else {
      tr.taus = {static_cast<int>(integer(s, "schedule", "tau", 20))};
      if (tr.taus[0] < 1) throw ConfigError("schedule.tau", "must be >= 1");
    }
    const auto mode = text(s, "schedule", "gamma_mode", "none");
    if (mode == "none") tr.gamma_mode = GammaMode::none;
    else if (mode == "fixed") tr.gamma_mode = GammaMode::fixed;
    else if (mode == "rule") tr.gamma_mode = GammaMode::rule;
    else throw ConfigError("schedule.gamma_mode", "expected none, fixed or rule");
    tr.gamma_fixed = static_cast<int>(integer(s, "schedule", "gamma", 0));
    if (tr.gamma_fixed < 0) throw ConfigError("schedule.gamma", "must be >= 0");
    tr.cadence = static_cast<int>(integer(s, "schedule", "cadence", 5));
    if (tr.cadence < 1) throw ConfigError("schedule.cadence", "must be >= 1");
    tr.phi = number(s, "schedule", "phi", 0.0);
    if (tr.gamma_mode == GammaMode::rule && cfg.algorithm == Algorithm::tthf) positive(tr.phi, "schedule.phi");
    tr.gamma_cap = static_cast<int>(integer(s, "schedule", "gamma_cap", 100));
    if (tr.gamma_cap < 1) throw ConfigError("schedule.gamma_cap", "must be >= 1");
    const auto div = text(s, "schedule", "divergence", cfg.algorithm == Algorithm::adaptive ? "estimate" : "exact");
    if (div == "exact") tr.divergence = DivergenceSource::exact;
    else if (div == "estimate") tr.divergence = DivergenceSource::estimate;
    else throw ConfigError("schedule.divergence", "expected exact or estimate");
    tr.batch_size = static_cast<int>(integer(s, "schedule", "batch_size", 0));
    if (tr.batch_size < 0) throw ConfigError("schedule.batch_size", "must be >= 0");
    tr.sampled_aggregation = boolean(s, "schedule", "sampled_aggregation", true);
    tr.outages = boolean(s, "schedule", "outages", false);
    tr.replace_each_interval = boolean(s, "schedule", "replace_each_interval", false);
    tr.record_accuracy = boolean(s, "schedule", "record_accuracy", true);
  }
  {
    const json& c = section(j, "cost");
    check_keys(c, "cost", {"e_d2d", "e_glob", "delay_d2d", "delay_glob", "c1", "c2", "c3"});
    auto& cp = cfg.train.cost;
    cp.e_d2d = number(c, "cost", "e_d2d", cp.e_d2d);
    cp.e_glob = number(c, "cost", "e_glob", cp.e_glob);
    cp.delay_d2d = number(c, "cost", "delay_d2d", cp.delay_d2d);
    cp.delay_glob = number(c, "cost", "delay_glob", cp.delay_glob);
    cp.c1 = number(c, "cost", "c1", cp.c1);
    cp.c2 = number(c, "cost", "c2", cp.c2);
    cp.c3 = number(c, "cost", "c3", cp.c3);
    try {
      cp.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("cost", e.what());
    }
  }
  {
    const json& a = section(j, "adaptive");
    check_keys(a, "adaptive", {"xi", "tau_max", "tau_first", "gamma_factor", "zeta_fraction", "delta_prime0",
                               "sigma2_0", "exact_init_gap", "alpha_doublings"});
    auto& ad = cfg.adaptive;
    ad.xi = number(a, "adaptive", "xi", ad.xi);
    positive(ad.xi, "adaptive.xi");
    ad.tau_max = static_cast<int>(integer(a, "adaptive", "tau_max", ad.tau_max));
    ad.tau_first = static_cast<int>(integer(a, "adaptive", "tau_first", ad.tau_first));
    if (ad.tau_max < 1) throw ConfigError("adaptive.tau_max", "must be >= 1");
    if (ad.tau_first < 1) throw ConfigError("adaptive.tau_first", "must be >= 1");
    ad.gamma_factor = number(a, "adaptive", "gamma_factor", ad.gamma_factor);
    if (!(ad.gamma_factor > 1.0)) throw ConfigError("adaptive.gamma_factor", "must exceed 1");
    ad.zeta_fraction = number(a, "adaptive", "zeta_fraction", ad.zeta_fraction);
    if (!(ad.zeta_fraction > 0.0 && ad.zeta_fraction < 1.0)) throw ConfigError("adaptive.zeta_fraction", "must lie in (0, 1)");
    ad.delta_prime0 = number(a, "adaptive", "delta_prime0", ad.delta_prime0);
    ad.sigma2_0 = number(a, "adaptive", "sigma2_0", ad.sigma2_0);
    ad.exact_init_gap = boolean(a, "adaptive", "exact_init_gap", ad.exact_init_gap);
    ad.alpha_doublings = static_cast<int>(integer(a, "adaptive", "alpha_doublings", ad.alpha_doublings));
    if (ad.alpha_doublings < 0) throw ConfigError("adaptive.alpha_doublings", "must be >= 0");
  }
  cfg.train.topology = cfg.topology;
  cfg.train.channel = cfg.topology.channel;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open configuration file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

Network build_network(const ExperimentConfig& cfg, std::uint64_t seed) {
  LabeledDataset ds;
  if (cfg.dataset.kind == "csv") {
    ds = load_csv(cfg.dataset.csv_path, cfg.dataset.csv_header);
  } else {
    ds = gen_synthetic(cfg.dataset.synthetic, cfg.dataset.seed.value_or(seed));
  }
  if (cfg.dataset.encode_labels) encode_targets(ds, cfg.loss.kind);
  const int n_devices = cfg.topology.n_clusters * cfg.topology.s_c;
  auto parts = partition(ds, n_devices, PartitionPlan::make(cfg.partition, cfg.dataset.seed.value_or(seed)));
  auto clusters = build_clusters(cfg.topology, seed);
  LossModel model = cfg.loss;
  model.dim = ds.dim();
  return make_network(model, std::move(parts), std::move(clusters));
}

StepSchedule resolve_step(const ExperimentConfig& cfg, const Network& net) {
  StepSchedule s;
  if (cfg.step.kind == StepKind::constant) {
    s.constant_eta = cfg.step.eta.value_or(cfg.step.eta_beta_fraction / net.beta);
    return s;
  }
  s.gamma = cfg.step.gamma.value_or(cfg.step.gamma_factor / net.mu);
  if (cfg.step.alpha) {
    s.alpha = *cfg.step.alpha;
  } else {
    int tau_max = 1;
    for (int t : cfg.train.taus) tau_max = std::max(tau_max, t);
    double omega = 0.0;
    if (net.model.kind == LossKind::linear_regression) {
      omega = quadratic_diversity(net.model, net.parts, net.sizes, net.w_star, net.beta).omega;
    }
    s.alpha = select_alpha(net.mu, net.beta, s.gamma, omega, tau_max);
  }
  if (!(s.alpha > 0.0)) throw ConfigError("step.alpha", "must be positive");
  return s;
}

MetricsTrace run_single(const ExperimentConfig& cfg, std::uint64_t seed, int threads) {
  const Network net = build_network(cfg, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.threads = threads;
  MetricsTrace trace;
  switch (cfg.algorithm) {
    case Algorithm::tthf:
      tc.step = resolve_step(cfg, net);
      trace = run_tthf(net, tc);
      break;
    case Algorithm::baseline:
      tc.step = resolve_step(cfg, net);
      trace = run_baseline(net, tc, tc.taus.front());
      break;
    case Algorithm::adaptive: {
      AdaptiveConfig ac = cfg.adaptive;
      ac.base = tc;
      trace = run_adaptive(net, ac);
      break;
    }
  }
  trace.config_hash = cfg.hash;
  return trace;
}

CostSummary accumulate_cost(const MetricsTrace& trace, const CostParams& cost,
                            const std::vector<int>& cluster_sizes, bool full_uploads, long up_to_t) {
  CostSummary out;
  const double n = static_cast<double>(cluster_sizes.size());
  double total_devices = 0.0;
  for (int s : cluster_sizes) total_devices += s;
  const double glob_energy = cost.e_glob * (full_uploads ? total_devices / n : 1.0);
  IntervalCost cur;
  cur.k = 1;
  double e_d2d = 0.0;
  double d_d2d = 0.0;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const auto& row = trace.rows[i];
    if (up_to_t >= 0 && row.t > up_to_t) break;
    if (i >= trace.gammas.size() || trace.gammas[i].size() != cluster_sizes.size()) {
      throw InvalidArgument("trace rounds do not match the cluster sizes");
    }
    double e = 0.0;
    double d = 0.0;
    for (std::size_t c = 0; c < cluster_sizes.size(); ++c) {
      e += trace.gammas[i][c] * cluster_sizes[c] * cost.e_d2d;
      d += trace.gammas[i][c] * cost.delay_d2d;
    }
    out.total_energy += e;
    out.total_delay += d;
    e_d2d += e;
    d_d2d += d;
    if (row.aggregation) {
      out.total_energy += glob_energy;
      out.total_delay += cost.delay_glob;
      cur.t_end = row.t;
      const double tau = static_cast<double>(cur.t_end - cur.t_start);
      double alpha = 0.0;
      for (const auto& cr : trace.control) {
        if (cr.t == row.t) alpha = cr.alpha;
      }
      cur.energy_term = cost.c1 * (glob_energy + e_d2d) / tau;
      cur.delay_term = cost.c2 * (cost.delay_glob + d_d2d) / tau;
      cur.progress_term =
          cost.c3 * (1.0 - (static_cast<double>(cur.t_start) + alpha) / (static_cast<double>(cur.t_end) + alpha));
      out.intervals.push_back(cur);
      cur = IntervalCost{};
      cur.k = static_cast<int>(out.intervals.size()) + 1;
      cur.t_start = row.t;
      e_d2d = 0.0;
      d_d2d = 0.0;
    }
  }
  out.total_objective = cost.c1 * out.total_energy + cost.c2 * out.total_delay;
  return out;
}

long time_to_accuracy(const MetricsTrace& trace, double peak, double fraction) {
  for (const auto& row : trace.rows) {
    if (row.aggregation && row.accuracy >= fraction * peak) return row.t;
  }
  return -1;
}

namespace {

double peak_accuracy(const MetricsTrace& trace) {
  double best = 0.0;
  for (const auto& r : trace.rows) {
    if (r.aggregation) best = std::max(best, r.accuracy);
  }
  return best;
}

// Invariant violations that make a run unusable.
std::string check_trace(const MetricsTrace& trace, long T) {
  if (static_cast<long>(trace.rows.size()) != T) return "trace has " + std::to_string(trace.rows.size()) + " rows, expected " + std::to_string(T);
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const auto& r = trace.rows[i];
    if (r.t != static_cast<long>(i) + 1) return "trace time is not consecutive at row " + std::to_string(i);
    if (!std::isfinite(r.loss_gap_sampled) || !std::isfinite(r.loss_gap_avg) || !std::isfinite(r.dispersion)) {
      return "non-finite metric at t = " + std::to_string(r.t);
    }
    if (r.loss_gap_avg < -1e-9 * std::max(1.0, std::abs(r.loss_gap_avg))) {
      return "negative loss gap at t = " + std::to_string(r.t);
    }
  }
  return "";
}

json bound_check(const ExperimentConfig& cfg, const Network& net, const std::vector<MetricsTrace>& traces) {
  if (cfg.algorithm != Algorithm::tthf || cfg.step.kind != StepKind::decaying ||
      net.model.kind != LossKind::linear_regression) {
    return json{{"applicable", false}};
  }
  const StepSchedule step = resolve_step(cfg, net);
  const auto div = quadratic_diversity(net.model, net.parts, net.sizes, net.w_star, net.beta);
  double sigma2 = 0.0;
  const Vector w0 = Vector::Zero(net.model.dim);
  for (const auto& part : net.parts) {
    const int b = cfg.train.batch_size <= 0 ? static_cast<int>(part.size()) : cfg.train.batch_size;
    sigma2 = std::max({sigma2, sgd_variance_exact(net.model, w0, part, b), sgd_variance_exact(net.model, net.w_star, part, b)});
  }
  Thm2Inputs in;
  in.gamma = step.gamma;
  in.alpha = step.alpha;
  in.mu = net.mu;
  in.beta = net.beta;
  in.tau = 1;
  for (int t : cfg.train.taus) in.tau = std::max(in.tau, t);
  in.sigma2 = sigma2;
  in.phi = cfg.train.phi;
  in.delta = div.delta;
  in.omega = div.omega;
  in.init_gap = net.gap(w0);
  if (!(net.mu * in.gamma > 1.0) || !(in.alpha > 1.0)) return json{{"applicable", false}};
  const auto c = thm2_constants(in);
  bool holds = true;
  const std::size_t T = traces.front().rows.size();
  for (std::size_t i = 0; i < T; ++i) {
    double mean = 0.0;
    for (const auto& tr : traces) mean += tr.rows[i].loss_gap_sampled;
    mean /= static_cast<double>(traces.size());
    holds = holds && mean <= c.nu / (static_cast<double>(i + 1) + in.alpha);
  }
  return json{{"applicable", true}, {"nu", std::isfinite(c.nu) ? json(c.nu) : json("inf")}, {"holds", holds}};
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  std::vector<MetricsTrace> traces(cfg.seeds.size());
  std::vector<std::string> errors(cfg.seeds.size());
  const bool parallel_seeds = cfg.seeds.size() > 1;
  parallel_for(cfg.seeds.size(), parallel_seeds ? cfg.threads : 1, [&](std::size_t i) {
    try {
      traces[i] = run_single(cfg, cfg.seeds[i], parallel_seeds ? 1 : cfg.threads);
      errors[i] = check_trace(traces[i], cfg.train.T);
    } catch (const NumericalError& e) {
      errors[i] = e.what();
    }
  });
  int code = 0;
  json seeds = json::array();
  double mean_gap = 0.0;
  double mean_energy = 0.0;
  double mean_delay = 0.0;
  std::vector<int> sizes;
  for (int c = 0; c < cfg.topology.n_clusters; ++c) sizes.push_back(cfg.topology.s_c);
  const bool full = cfg.algorithm == Algorithm::baseline || !cfg.train.sampled_aggregation;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const auto seed = cfg.seeds[i];
    if (!errors[i].empty()) {
      log << "seed " << seed << ": invariant violation: " << errors[i] << '\n';
      code = 1;
      seeds.push_back({{"seed", seed}, {"error", errors[i]}});
      continue;
    }
    const auto& tr = traces[i];
    write_trace_csv((fs::path(cfg.output_dir) / ("trace_seed" + std::to_string(seed) + ".csv")).string(), tr);
    write_control_csv((fs::path(cfg.output_dir) / ("control_seed" + std::to_string(seed) + ".csv")).string(), tr);
    const double peak = peak_accuracy(tr);
    const long t75 = time_to_accuracy(tr, peak);
    const auto cost = accumulate_cost(tr, cfg.train.cost, sizes, full);
    const auto cost75 = accumulate_cost(tr, cfg.train.cost, sizes, full, t75);
    const auto& last = tr.rows.back();
    seeds.push_back({{"seed", seed},
                     {"final_gap", last.loss_gap_sampled},
                     {"final_gap_avg", last.loss_gap_avg},
                     {"init_gap", tr.init_gap},
                     {"peak_accuracy", peak},
                     {"time_to_75pct_peak", t75},
                     {"cost_to_75pct_peak", cost75.total_objective},
                     {"total_energy", cost.total_energy},
                     {"total_delay", cost.total_delay},
                     {"total_objective", cost.total_objective},
                     {"aggregations", cost.intervals.size()},
                     {"gamma_cap_hits", tr.gamma_cap_hits}});
    mean_gap += last.loss_gap_sampled;
    mean_energy += cost.total_energy;
    mean_delay += cost.total_delay;
    log << "seed " << seed << ": final gap " << last.loss_gap_sampled << ", energy " << cost.total_energy
        << " J, delay " << cost.total_delay << " s\n";
  }
  json summary;
  summary["schema_version"] = kSummarySchemaVersion;
  summary["version"] = kVersion;
  summary["config_hash"] = cfg.hash;
  summary["seeds"] = seeds;
  if (code == 0) {
    const double n = static_cast<double>(cfg.seeds.size());
    summary["mean"] = {{"final_gap", mean_gap / n}, {"total_energy", mean_energy / n}, {"total_delay", mean_delay / n}};
    summary["bound_check"] = bound_check(cfg, build_network(cfg, cfg.seeds.front()), traces);
  }
  std::ofstream out(fs::path(cfg.output_dir) / "summary.json", std::ios::binary);
  out << std::setw(2) << summary << '\n';
  return code;
}

int run_experiment_file(const std::string& config_path, std::ostream& log) {
  try {
    return run_experiment(load_config(config_path), log);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    log << "config error: " << e.what() << '\n';
    return 2;
  }
}

TraceTable read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) throw Error(path + ": unexpected header");
  TraceTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double x = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw Error(path + ": line " + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
      v.push_back(x);
    }
    if (v.size() != 8) throw Error(path + ": line " + std::to_string(lineno) + ": expected 8 columns");
    MetricsRow r;
    r.t = static_cast<long>(v[0]);
    r.loss_gap_sampled = v[1];
    r.loss_gap_avg = v[2];
    r.dispersion = v[3];
    r.eps_rms = v[4];
    r.gamma_total = static_cast<int>(v[5]);
    r.energy_J = v[6];
    r.delay_s = v[7];
    table.rows.push_back(r);
  }
  return table;
}

CompareReport compare_runs(const TraceTable& a, const TraceTable& b) {
  if (a.rows.size() != b.rows.size()) throw InvalidArgument("traces differ in length");
  CompareReport r;
  int prev_sign = 0;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const double d = a.rows[i].loss_gap_sampled - b.rows[i].loss_gap_sampled;
    r.deltas.push_back(d);
    const int sign = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (r.crossover_t < 0 && prev_sign != 0 && sign != 0 && sign != prev_sign) r.crossover_t = a.rows[i].t;
    if (sign != 0) prev_sign = sign;
  }
  if (!a.rows.empty()) {
    r.final_delta = r.deltas.back();
    const auto ratio = [](double x, double y) { return y == 0.0 ? (x == 0.0 ? 1.0 : std::numeric_limits<double>::infinity()) : x / y; };
    r.energy_ratio = ratio(a.rows.back().energy_J, b.rows.back().energy_J);
    r.delay_ratio = ratio(a.rows.back().delay_s, b.rows.back().delay_s);
  }
  return r;
}

nlohmann::json to_json(const CompareReport& r) {
  auto finite = [](double v) { return std::isfinite(v) ? json(v) : json("inf"); };
  return json{{"deltas", r.deltas},
              {"crossover_t", r.crossover_t},
              {"final_delta", r.final_delta},
              {"energy_ratio", finite(r.energy_ratio)},
              {"delay_ratio", finite(r.delay_ratio)}};
}

int run_sweep(const ExperimentConfig& base, const std::string& path, const nlohmann::json& values,
              std::ostream& log) {
  if (!values.is_array() || values.empty()) {
    log << "config error: sweep.values: expected a non-empty array\n";
    return 2;
  }
  int code = 0;
  for (const auto& value : values) {
    json raw = base.raw;
    raw.erase("sweep");
    json::json_pointer ptr("/" + [&] {
      std::string p = path;
      for (auto& ch : p) {
        if (ch == '.') ch = '/';
      }
      return p;
    }());
    raw[ptr] = value;
    std::string tag = value.is_string() ? value.get<std::string>() : value.dump();
    raw["output_dir"] = (std::filesystem::path(base.output_dir) / (path + "=" + tag)).string();
    try {
      const auto cfg = parse_config(raw);
      log << "sweep " << path << " = " << tag << '\n';
      code = std::max(code, run_experiment(cfg, log));
    } catch (const ConfigError& e) {
      log << "config error: " << e.what() << '\n';
      return 2;
    }
  }
  return code;
}

nlohmann::json bounds_report(const ExperimentConfig& cfg) {
  const Network net = build_network(cfg, cfg.seeds.front());
  json j;
  j["mu"] = net.mu;
  j["beta"] = net.beta;
  j["f_star"] = net.f_star;
  json lambdas = json::array();
  for (const auto& c : net.clusters) lambdas.push_back(c.lambda);
  j["lambda"] = lambdas;
  if (net.model.kind == LossKind::linear_regression) {
    const auto div = quadratic_diversity(net.model, net.parts, net.sizes, net.w_star, net.beta);
    j["diversity"] = {{"delta", div.delta}, {"zeta", div.zeta}, {"omega", div.omega}, {"delta_prime", div.delta_prime}};
    if (cfg.step.kind == StepKind::decaying) {
      const StepSchedule step = resolve_step(cfg, net);
      Thm2Inputs in;
      in.gamma = step.gamma;
      in.alpha = step.alpha;
      in.mu = net.mu;
      in.beta = net.beta;
      for (int t : cfg.train.taus) in.tau = std::max(in.tau, t);
      const Vector w0 = Vector::Zero(net.model.dim);
      for (const auto& part : net.parts) {
        const int b = cfg.train.batch_size <= 0 ? static_cast<int>(part.size()) : cfg.train.batch_size;
        in.sigma2 = std::max({in.sigma2, sgd_variance_exact(net.model, w0, part, b),
                              sgd_variance_exact(net.model, net.w_star, part, b)});
      }
      in.phi = cfg.train.phi;
      in.delta = div.delta;
      in.omega = div.omega;
      in.init_gap = net.gap(w0);
      j["lambda_plus"] = lambda_plus(net.mu, net.beta, div.omega);
      if (net.mu * in.gamma > 1.0 && in.alpha > 1.0) {
        j["theorem2"] = certificate_json(in, thm2_constants(in), {}, {});
      }
    }
  }
  return j;
}

}  // namespace tthf
