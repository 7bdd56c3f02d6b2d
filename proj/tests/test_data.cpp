#include "support.hpp"

#include "tthf/bounds.hpp"
#include "tthf/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace tthf;

namespace {

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << contents;
  return path.string();
}

Vector fit(const LossModel& m, const LabeledDataset& ds) {
  DevicePartition all;
  all.points = ds.points;
  return solve_optimum(m, {all}).w;
}

double train_accuracy(const LossModel& m, const LabeledDataset& ds) {
  DevicePartition all;
  all.points = ds.points;
  return accuracy(m, fit(m, ds), {all});
}

double device_diversity(const LabeledDataset& ds, PartitionMode mode, std::uint64_t seed) {
  const LossModel m{LossKind::linear_regression, 0.1, ds.dim()};
  const auto parts = partition(ds, 20, PartitionPlan::make(mode, seed));
  const Vector w = solve_optimum(m, parts).w;
  std::vector<Vector> grads;
  for (const auto& p : parts) grads.push_back(grad_full(m, w, p));
  return diversity_fit(grads, grad_global(m, w, parts), w.norm(), 0.0);
}

}  // namespace

TEST(GenSynthetic, DeterministicUnderSeed) {
  const auto a = gen_synthetic(5, 4, 10, 2.0, 42);
  const auto b = gen_synthetic(5, 4, 10, 2.0, 42);
  ASSERT_EQ(a.size(), 40u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.points[i].x, b.points[i].x);
    EXPECT_EQ(a.points[i].y, b.points[i].y);
    EXPECT_EQ(a.labels[i], b.labels[i]);
  }
  const auto c = gen_synthetic(5, 4, 10, 2.0, 43);
  EXPECT_NE(a.points[0].x, c.points[0].x);
}

TEST(GenSynthetic, EveryLabelPresent) {
  const auto ds = gen_synthetic(3, 7, 2, 1.0, 1);
  std::set<int> labels(ds.labels.begin(), ds.labels.end());
  EXPECT_EQ(labels.size(), 7u);
}

TEST(GenSynthetic, InvalidParameters) {
  EXPECT_THROW(gen_synthetic(0, 2, 1, 1.0, 1), InvalidArgument);
  EXPECT_THROW(gen_synthetic(2, 1, 1, 1.0, 1), InvalidArgument);
  EXPECT_THROW(gen_synthetic(2, 2, 0, 1.0, 1), InvalidArgument);
  EXPECT_THROW(gen_synthetic(2, 2, 1, -1.0, 1), InvalidArgument);
}

TEST(GenSynthetic, NoSeparationGivesChanceAccuracy) {
  SyntheticSpec spec{10, 2, 2000, 0.0, 1.0, true};
  auto ds = gen_synthetic(spec, 5);
  encode_targets(ds, LossKind::squared_hinge_svm);
  const double acc = train_accuracy({LossKind::squared_hinge_svm, 0.1, ds.dim()}, ds);
  EXPECT_NEAR(acc, 0.5, 0.05);
}

TEST(GenSynthetic, WideSeparationIsLinearlySeparable) {
  SyntheticSpec spec{10, 2, 200, 10.0, 1.0, true};
  for (auto kind : {LossKind::squared_hinge_svm, LossKind::linear_regression}) {
    auto ds = gen_synthetic(spec, 6);
    encode_targets(ds, kind);
    EXPECT_GE(train_accuracy({kind, 0.01, ds.dim()}, ds), 0.99) << to_string(kind);
  }
}

TEST(EncodeTargets, LowerHalfIsPositive) {
  auto ds = gen_synthetic(2, 4, 1, 1.0, 1);
  encode_targets(ds, LossKind::squared_hinge_svm);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.points[i].y, ds.labels[i] < 2 ? 1.0 : -1.0);
  encode_targets(ds, LossKind::linear_regression);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.points[i].y, ds.labels[i] < 2 ? 1.0 : 0.0);
}

TEST(Partition, IidEvenSplit) {
  const auto ds = gen_synthetic(2, 4, 25, 1.0, 3);
  const auto parts = partition(ds, 4, PartitionPlan::make(PartitionMode::iid, 1));
  ASSERT_EQ(parts.size(), 4u);
  for (const auto& p : parts) EXPECT_EQ(p.size(), 25u);
}

TEST(Partition, LabelCardinality) {
  const auto ds = gen_synthetic(3, 10, 30, 1.0, 4);
  for (auto [mode, expected] : {std::pair{PartitionMode::extreme, 1u}, std::pair{PartitionMode::moderate, 3u}}) {
    for (int devices : {10, 20, 25}) {
      const auto parts = partition(ds, devices, PartitionPlan::make(mode, 9));
      for (const auto& p : parts) {
        std::set<int> labels(p.labels.begin(), p.labels.end());
        EXPECT_EQ(labels.size(), expected) << to_string(mode) << " devices " << devices;
      }
    }
  }
}

TEST(Partition, ExactCover) {
  auto ds = gen_synthetic(2, 10, 13, 1.0, 8);
  // Tag each point with a unique value in its first coordinate.
  for (std::size_t i = 0; i < ds.size(); ++i) ds.points[i].x[0] = static_cast<double>(i);
  for (auto mode : {PartitionMode::extreme, PartitionMode::moderate, PartitionMode::iid}) {
    const auto parts = partition(ds, 25, PartitionPlan::make(mode, 2));
    std::multiset<double> seen;
    for (const auto& p : parts) {
      EXPECT_GE(p.size(), 1u);
      for (const auto& pt : p.points) seen.insert(pt.x[0]);
    }
    ASSERT_EQ(seen.size(), ds.size()) << to_string(mode);
    double expect = 0.0;
    for (double v : seen) EXPECT_EQ(v, expect++);
  }
}

TEST(Partition, TooSmallThrows) {
  const auto ds = gen_synthetic(2, 2, 2, 1.0, 1);
  EXPECT_THROW(partition(ds, 5, PartitionPlan::make(PartitionMode::iid, 1)), InvalidArgument);
  EXPECT_THROW(partition(ds, 1, PartitionPlan::make(PartitionMode::extreme, 1)), InvalidArgument);
}

TEST(Partition, ModeNames) {
  for (auto m : {PartitionMode::extreme, PartitionMode::moderate, PartitionMode::iid}) {
    EXPECT_EQ(parse_partition_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_partition_mode("skewed"), InvalidArgument);
}

TEST(Partition, HeterogeneityOrdering) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto ds = gen_synthetic(5, 10, 40, 3.0, seed);
    encode_targets(ds, LossKind::linear_regression);
    const double extreme = device_diversity(ds, PartitionMode::extreme, seed);
    const double moderate = device_diversity(ds, PartitionMode::moderate, seed);
    const double iid = device_diversity(ds, PartitionMode::iid, seed);
    EXPECT_GE(extreme, moderate) << "seed " << seed;
    EXPECT_GE(moderate, iid) << "seed " << seed;
  }
}

TEST(LoadCsv, WellFormed) {
  const auto path = temp_file("tthf_ok.csv", "1,2,0\n3,4,1\n5.5,-6e-1,2\n");
  const auto ds = load_csv(path);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 2);
  EXPECT_DOUBLE_EQ(ds.points[2].x[1], -0.6);
  EXPECT_EQ(ds.labels[2], 2);
  EXPECT_EQ(ds.n_labels, 3);
}

TEST(LoadCsv, HeaderFlag) {
  const auto path = temp_file("tthf_header.csv", "a,b,y\n1,2,0\n");
  EXPECT_EQ(load_csv(path, true).size(), 1u);
  EXPECT_THROW(load_csv(path, false), Error);
}

TEST(LoadCsv, NonNumericCellNamesRowAndColumn) {
  const auto path = temp_file("tthf_bad.csv", "1,2,0\n3,x,1\n");
  try {
    load_csv(path);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, MissingFile) { EXPECT_THROW(load_csv("/nonexistent/tthf.csv"), Error); }

TEST(LoadCsv, RoundTrip) {
  auto ds = gen_synthetic(4, 3, 5, 2.0, 12);
  const auto path = (std::filesystem::temp_directory_path() / "tthf_round.csv").string();
  write_csv(path, ds);
  const auto back = load_csv(path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_LE((back.points[i].x - ds.points[i].x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.points[i].y, ds.points[i].y);
  }
}
