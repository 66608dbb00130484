#include <algorithm>
#include <set>

#include "doctest.h"
#include "nseg/crossval.hpp"
#include "nseg/metrics.hpp"
#include "nseg/rng.hpp"

using namespace nseg;

TEST_CASE("kfold_split: singleton folds, balanced sizes, partition property") {
  const FoldPlan ten = kfold_split(10, 10, 1);
  std::set<int> folds(ten.assignment.begin(), ten.assignment.end());
  CHECK(folds.size() == 10);  // every fold is a singleton

  const FoldPlan tenfold = kfold_split(534, 10, 1);
  std::vector<int> sizes(10, 0);
  for (const int f : tenfold.assignment) ++sizes[static_cast<std::size_t>(f)];
  int total = 0;
  for (const int s : sizes) {
    CHECK((s == 53 || s == 54));
    total += s;
  }
  CHECK(total == 534);

  SplitMix64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(200));
    const int k = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(n - 1, 11))));
    const FoldPlan plan = kfold_split(n, k, rng.next());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (const int f : plan.assignment) {
      CHECK(f >= 0);
      CHECK(f < k);
      ++count[static_cast<std::size_t>(f)];
    }
    const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    CHECK(*hi - *lo <= 1);
    CHECK(static_cast<int>(plan.assignment.size()) == n);
  }

  CHECK_THROWS_AS(kfold_split(10, 1, 0), ConfigError);
  CHECK_THROWS_AS(kfold_split(10, 11, 0), ConfigError);
}

TEST_CASE("kfold_split is reproducible for a (n, K, seed) triple") {
  const FoldPlan a = kfold_split(97, 7, 1234);
  const FoldPlan b = kfold_split(97, 7, 1234);
  CHECK(a.assignment == b.assignment);
  const FoldPlan c = kfold_split(97, 7, 1235);
  CHECK(a.assignment != c.assignment);
  // frozen value guards the shuffle and the JSON shape against silent changes
  CHECK(fold_plan_json(kfold_split(6, 3, 42)) ==
        "{\"K\": 3, \"seed\": 42, \"assignment\": [1, 0, 0, 2, 2, 1]}");
}

namespace {

TensorF tensor_of(std::vector<float> vals, int h, int w) {
  return TensorF(Shape{1, 1, h, w}, std::move(vals));
}

}  // namespace

TEST_CASE("pixel accuracy: exact, complement, half") {
  const TensorF mask = tensor_of({1, 0, 1, 0}, 2, 2);
  CHECK(pixel_accuracy(tensor_of({0.9f, 0.1f, 0.8f, 0.2f}, 2, 2), mask) == 1.0);
  CHECK(pixel_accuracy(tensor_of({0.1f, 0.9f, 0.2f, 0.8f}, 2, 2), mask) == 0.0);
  CHECK(pixel_accuracy(tensor_of({0.9f, 0.1f, 0.2f, 0.8f}, 2, 2), mask) == 0.5);
  CHECK_THROWS_AS(pixel_accuracy(tensor_of({0.5f, 0.5f}, 1, 2), mask), ContractError);
  CHECK_THROWS_AS(pixel_accuracy(mask, tensor_of({0.5f, 0.0f, 1.0f, 0.0f}, 2, 2)), ContractError);
}

TEST_CASE("dice coefficient: agreement, disjoint, the two-thirds case, empty-empty") {
  const TensorF full = tensor_of({1, 1, 1, 1}, 2, 2);
  const TensorF half = tensor_of({1, 1, 0, 0}, 2, 2);
  const TensorF none = tensor_of({0, 0, 0, 0}, 2, 2);

  CHECK(dice_coefficient(half, half) == 1.0);
  CHECK(dice_coefficient(tensor_of({0, 0, 1, 1}, 2, 2), half) == 0.0);
  CHECK(dice_coefficient(full, half) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(dice_coefficient(none, none) == 1.0);
}

TEST_CASE("metric symmetries and permutation invariance") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    TensorF a(Shape{1, 1, 4, 4});
    TensorF b(Shape{1, 1, 4, 4});
    for (auto& v : a.data) v = rng.coin() ? 1.0f : 0.0f;
    for (auto& v : b.data) v = rng.coin() ? 1.0f : 0.0f;

    // dice is symmetric in its two binary arguments
    CHECK(dice_coefficient(a, b) == dice_coefficient(b, a));
    // dice = 1 exactly when the sets agree
    CHECK((dice_coefficient(a, b) == 1.0) == (a.data == b.data));

    // accuracy is invariant under complementing both sides
    TensorF na = a, nb = b;
    for (auto& v : na.data) v = 1.0f - v;
    for (auto& v : nb.data) v = 1.0f - v;
    CHECK(pixel_accuracy(a, b) == pixel_accuracy(na, nb));

    // both metrics survive a shared pixel permutation
    const std::vector<int> perm = shuffled_indices(16, rng.next());
    TensorF pa(a.shape), pb(b.shape);
    for (int i = 0; i < 16; ++i) {
      pa.data[static_cast<std::size_t>(i)] = a.data[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      pb.data[static_cast<std::size_t>(i)] = b.data[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    CHECK(pixel_accuracy(pa, pb) == pixel_accuracy(a, b));
    CHECK(dice_coefficient(pa, pb) == dice_coefficient(a, b));
  }
}

TEST_CASE("cross-validation with a perfect oracle predictor scores 1.0 with zero spread") {
  const Dataset ds = synth_generate(15, 16, 3);
  CrossvalOptions opts;
  const TrainerFn oracle = [](const Dataset&, const Dataset&, std::uint64_t) {
    return Predictor([](const Sample& s) { return s.mask; });
  };
  const MetricsReport report = cross_validate_with(ds, 5, 9, opts, oracle);
  REQUIRE(report.rows.size() == 5);
  for (const FoldRow& row : report.rows) {
    CHECK(row.accuracy == 1.0);
    CHECK(row.dice == 1.0);
  }
  CHECK(report.acc_mean == 1.0);
  CHECK(report.acc_std == 0.0);
  CHECK(report.dice_std == 0.0);
}

TEST_CASE("report csv shape: fold rows plus one aggregate row per report") {
  MetricsReport r;
  r.k = 3;
  r.rows = {{0, 1.0, 0.5}, {1, 0.5, 1.0}, {2, 0.75, 0.75}};
  finalize_report(r);
  CHECK(r.acc_mean == doctest::Approx(0.75));
  CHECK(r.dice_mean == doctest::Approx(0.75));
  CHECK(r.acc_std == doctest::Approx(0.25));

  const std::string csv = report_csv(std::vector<MetricsReport>{r});
  CHECK(csv ==
        "K,fold,accuracy,dice\n"
        "3,0,1.000000,0.500000\n"
        "3,1,0.500000,1.000000\n"
        "3,2,0.750000,0.750000\n"
        "3,mean±std,0.750000±0.250000,0.750000±0.250000\n");
}

TEST_CASE("k-sweep emits one aggregate row per K") {
  const Dataset ds = synth_generate(24, 16, 5);
  const TrainerFn oracle = [](const Dataset&, const Dataset&, std::uint64_t) {
    return Predictor([](const Sample& s) { return s.mask; });
  };
  std::vector<MetricsReport> reports;
  for (const int k : {5, 6, 7, 8, 9, 10, 11}) {
    reports.push_back(cross_validate_with(ds, k, 9, {}, oracle));
  }
  const std::string csv = report_csv(reports);
  int aggregates = 0;
  for (std::size_t pos = csv.find("mean"); pos != std::string::npos;
       pos = csv.find("mean", pos + 1)) {
    ++aggregates;
  }
  CHECK(aggregates == 7);
}

TEST_CASE("holdout baseline trains once and reports a single K=0 row") {
  const Dataset ds = synth_generate(10, 16, 29);
  GraphConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  FitHyper hyper;
  hyper.batch_size = 4;
  hyper.max_epochs = 2;
  hyper.early_stop_threshold.reset();
  const MetricsReport report = holdout_baseline(cfg, ds, 5, hyper, {});
  CHECK(report.k == 0);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].accuracy >= 0.0);
  CHECK(report.rows[0].accuracy <= 1.0);
  CHECK(report.rows[0].dice >= 0.0);
  CHECK(report.acc_std == 0.0);
  const std::string csv = report_csv(std::vector<MetricsReport>{report});
  CHECK(csv.find("0,0,") != std::string::npos);
}

TEST_CASE("augment-after-split keeps rotated copies of held-out samples out of training") {
  const Dataset ds = synth_generate(20, 16, 13);
  SplitMix64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const std::uint64_t seed = rng.next();
    const FoldPlan plan = kfold_split(ds.size(), k, seed);
    for (int fold = 0; fold < k; ++fold) {
      const FoldData data = make_fold_split(ds, plan, fold, 15.0, seed, false);
      CHECK(data.train.size() == 2 * (ds.size() - static_cast<int>(data.val.samples.size())));
      REQUIRE(data.train_source_global.size() == data.train.samples.size());
      for (const int global : data.train_source_global) {
        CHECK(plan.assignment[static_cast<std::size_t>(global)] != fold);
      }
    }
  }
}

TEST_CASE("paper-order mode exists and leaks rotated twins across the split") {
  const Dataset ds = synth_generate(12, 16, 19);
  const std::uint64_t seed = 23;
  const FoldPlan plan = kfold_split(2 * ds.size(), 4, seed);
  bool any_leak = false;
  for (int fold = 0; fold < 4; ++fold) {
    const FoldData data = make_fold_split(ds, plan, fold, 15.0, seed, true);
    CHECK(data.train.size() + static_cast<int>(data.val.samples.size()) == 2 * ds.size());
    // originals sit at 0..n-1 of the doubled set; n+j is the rotated copy of j
    std::set<int> val_identities;
    for (int j = 0; j < ds.size(); ++j) {
      if (plan.assignment[static_cast<std::size_t>(j)] == fold) val_identities.insert(j);
      if (plan.assignment[static_cast<std::size_t>(ds.size() + j)] == fold) val_identities.insert(j);
    }
    for (const int global : data.train_source_global) {
      if (val_identities.count(global)) any_leak = true;
    }
  }
  CHECK(any_leak);  // the mode mixes rotated twins across the split by construction
}
