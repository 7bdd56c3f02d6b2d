#pragma once

#include "tthf/losses.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tthf {

struct LabeledDataset {
  std::vector<DataPoint> points;
  /// Integer class per point; -1 when the source had a non-integral label.
  std::vector<int> labels;
  int n_labels = 0;

  std::size_t size() const { return points.size(); }
  int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().x.size()); }
};

struct SyntheticSpec {
  int m = 10;
  int n_labels = 10;
  int per_label = 100;
  double separation = 3.0;
  double noise = 1.0;
  /// Append a constant 1 feature so linear models get an intercept.
  bool bias = false;
};

/// Gaussian class clusters: class k is centred at separation * u_k for a random
/// unit direction u_k. Targets y hold the label until encode_targets runs.
LabeledDataset gen_synthetic(int m, int n_labels, int per_label, double separation,
                             std::uint64_t seed);
LabeledDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Binary targets from labels: the lower half of the label range is the
/// positive class (+1 for SVM, 1 for regression), the rest -1 or 0.
void encode_targets(LabeledDataset& dataset, LossKind kind);

enum class PartitionMode { extreme, moderate, iid };

PartitionMode parse_partition_mode(const std::string& name);
std::string to_string(PartitionMode mode);

struct PartitionPlan {
  PartitionMode mode = PartitionMode::iid;
  /// 1 for extreme, 3 for moderate, ignored for iid.
  int labels_per_device = 0;
  std::uint64_t seed = 0;

  static PartitionPlan make(PartitionMode mode, std::uint64_t seed);
};

/// Splits the dataset over n_devices without replacement.
std::vector<DevicePartition> partition(const LabeledDataset& dataset, int n_devices,
                                       const PartitionPlan& plan);

/// Reads numeric CSV rows; the last column is the label/target.
LabeledDataset load_csv(const std::string& path, bool has_header = false);
void write_csv(const std::string& path, const LabeledDataset& dataset);

}  // namespace tthf
