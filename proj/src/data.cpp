#include "tthf/data.hpp"

#include "tthf/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace tthf {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

Vector random_unit(int m, Rng& rng) {
  Vector u(m);
  do {
    for (int i = 0; i < m; ++i) u[i] = standard_normal(rng);
  } while (u.norm() == 0.0);
  return u / u.norm();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

LabeledDataset gen_synthetic(int m, int n_labels, int per_label, double separation,
                             std::uint64_t seed) {
  SyntheticSpec spec;
  spec.m = m;
  spec.n_labels = n_labels;
  spec.per_label = per_label;
  spec.separation = separation;
  return gen_synthetic(spec, seed);
}

LabeledDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.m < 1) throw InvalidArgument("m must be >= 1");
  if (spec.n_labels < 2) throw InvalidArgument("n_labels must be >= 2");
  if (spec.per_label < 1) throw InvalidArgument("per_label must be >= 1");
  if (spec.separation < 0.0 || spec.noise < 0.0) {
    throw InvalidArgument("separation and noise must be non-negative");
  }
  Rng rng = make_rng(seed, Stream::data);
  std::vector<Vector> centers;
  for (int k = 0; k < spec.n_labels; ++k) centers.push_back(spec.separation * random_unit(spec.m, rng));

  LabeledDataset ds;
  ds.n_labels = spec.n_labels;
  const int dim = spec.m + (spec.bias ? 1 : 0);
  for (int k = 0; k < spec.n_labels; ++k) {
    for (int j = 0; j < spec.per_label; ++j) {
      Vector x(dim);
      for (int i = 0; i < spec.m; ++i) x[i] = centers[static_cast<std::size_t>(k)][i] + spec.noise * standard_normal(rng);
      if (spec.bias) x[spec.m] = 1.0;
      ds.points.push_back({std::move(x), static_cast<double>(k)});
      ds.labels.push_back(k);
    }
  }
  return ds;
}

void encode_targets(LabeledDataset& dataset, LossKind kind) {
  const double pos = 1.0;
  const double neg = kind == LossKind::squared_hinge_svm ? -1.0 : 0.0;
  for (std::size_t i = 0; i < dataset.points.size(); ++i) {
    const int label = dataset.labels[i];
    if (label < 0) throw InvalidArgument("cannot encode targets for a point without an integer label");
    dataset.points[i].y = 2 * label < dataset.n_labels ? pos : neg;
  }
}

PartitionMode parse_partition_mode(const std::string& name) {
  if (name == "extreme") return PartitionMode::extreme;
  if (name == "moderate") return PartitionMode::moderate;
  if (name == "iid") return PartitionMode::iid;
  throw InvalidArgument("unknown partition mode '" + name + "' (expected extreme, moderate or iid)");
}

std::string to_string(PartitionMode mode) {
  switch (mode) {
    case PartitionMode::extreme: return "extreme";
    case PartitionMode::moderate: return "moderate";
    case PartitionMode::iid: return "iid";
  }
  return "iid";
}

PartitionPlan PartitionPlan::make(PartitionMode mode, std::uint64_t seed) {
  PartitionPlan plan;
  plan.mode = mode;
  plan.seed = seed;
  plan.labels_per_device = mode == PartitionMode::extreme ? 1 : mode == PartitionMode::moderate ? 3 : 0;
  return plan;
}

std::vector<DevicePartition> partition(const LabeledDataset& dataset, int n_devices,
                                       const PartitionPlan& plan) {
  if (n_devices < 1) throw InvalidArgument("number of devices must be >= 1");
  if (dataset.size() < static_cast<std::size_t>(n_devices)) {
    throw InvalidArgument("dataset too small: " + std::to_string(dataset.size()) + " points for " +
                          std::to_string(n_devices) + " devices");
  }
  Rng rng = make_rng(plan.seed, Stream::partition);
  std::vector<DevicePartition> parts(static_cast<std::size_t>(n_devices));
  for (int d = 0; d < n_devices; ++d) parts[static_cast<std::size_t>(d)].device_id = d;

  auto give = [&](std::size_t device, std::size_t point) {
    parts[device].points.push_back(dataset.points[point]);
    parts[device].labels.push_back(dataset.labels.empty() ? -1 : dataset.labels[point]);
  };

  if (plan.mode == PartitionMode::iid) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    for (std::size_t k = 0; k < order.size(); ++k) give(k % parts.size(), order[k]);
    return parts;
  }

  const int per_device = plan.labels_per_device;
  const int expected = plan.mode == PartitionMode::extreme ? 1 : 3;
  if (per_device != expected) {
    throw InvalidArgument("labels_per_device " + std::to_string(per_device) + " does not match mode " +
                          to_string(plan.mode));
  }
  const int n_labels = dataset.n_labels;
  if (n_labels < per_device) throw InvalidArgument("fewer labels than labels_per_device");
  if (plan.mode == PartitionMode::extreme && n_devices < n_labels) {
    throw InvalidArgument("extreme mode needs at least one device per label");
  }

  // Device slots in random order; slot k holds labels k, k+1, ... (mod n_labels).
  std::vector<int> slot(static_cast<std::size_t>(n_devices));
  std::iota(slot.begin(), slot.end(), 0);
  shuffle(slot, rng);
  std::vector<std::vector<std::size_t>> holders(static_cast<std::size_t>(n_labels));
  for (int k = 0; k < n_devices; ++k) {
    for (int j = 0; j < per_device; ++j) {
      holders[static_cast<std::size_t>((k + j) % n_labels)].push_back(
          static_cast<std::size_t>(slot[static_cast<std::size_t>(k)]));
    }
  }
  std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(n_labels));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int label = dataset.labels[i];
    if (label < 0 || label >= n_labels) throw InvalidArgument("label out of range at point " + std::to_string(i));
    by_label[static_cast<std::size_t>(label)].push_back(i);
  }
  for (int label = 0; label < n_labels; ++label) {
    auto& pts = by_label[static_cast<std::size_t>(label)];
    const auto& hs = holders[static_cast<std::size_t>(label)];
    if (hs.empty()) throw InvalidArgument("label " + std::to_string(label) + " has no devices");
    shuffle(pts, rng);
    for (std::size_t k = 0; k < pts.size(); ++k) give(hs[k % hs.size()], pts[k]);
  }
  for (const auto& part : parts) {
    const std::set<int> distinct(part.labels.begin(), part.labels.end());
    if (static_cast<int>(distinct.size()) != per_device) {
      throw InvalidArgument("dataset too small: device " + std::to_string(part.device_id) + " received " +
                            std::to_string(distinct.size()) + " labels, expected " +
                            std::to_string(per_device));
    }
  }
  return parts;
}

LabeledDataset load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  LabeledDataset ds;
  std::string line;
  int row = 0;
  int width = -1;
  bool all_integral = true;
  while (std::getline(in, line)) {
    ++row;
    if (has_header && row == 1) continue;
    if (trim(line).empty()) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      const std::string t = trim(cell);
      double v = 0.0;
      const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
      if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw Error(path + ": row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": cannot parse '" + t + "' as a number");
      }
      values.push_back(v);
    }
    if (values.size() < 2) {
      throw Error(path + ": row " + std::to_string(row) + ": need at least one feature and a label");
    }
    if (width < 0) width = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != width) {
      throw Error(path + ": row " + std::to_string(row) + ": expected " + std::to_string(width) +
                  " columns, found " + std::to_string(values.size()));
    }
    DataPoint p;
    p.x = Eigen::Map<Vector>(values.data(), width - 1);
    p.y = values.back();
    all_integral = all_integral && p.y >= 0 && std::floor(p.y) == p.y;
    ds.points.push_back(std::move(p));
  }
  int max_label = -1;
  for (const auto& p : ds.points) {
    const int label = all_integral ? static_cast<int>(p.y) : -1;
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  ds.n_labels = max_label + 1;
  return ds;
}

void write_csv(const std::string& path, const LabeledDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : dataset.points) {
    for (int i = 0; i < p.x.size(); ++i) out << p.x[i] << ',';
    out << p.y << '\n';
  }
}

}  // namespace tthf
