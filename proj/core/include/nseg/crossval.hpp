#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nseg/dataset.hpp"
#include "nseg/graph.hpp"
#include "nseg/trainer.hpp"

namespace nseg {

/// K-fold assignment over n samples: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  // sample index -> fold id in [0, k)
};

FoldPlan kfold_split(int n, int k, std::uint64_t seed);

/// `{"K": 5, "seed": 42, "assignment": [0, 3, ...]}`
std::string fold_plan_json(const FoldPlan& plan);

struct CrossvalOptions {
  double aug_range_deg = 15.0;
  bool paper_order = false;  // augment the whole set before splitting (leaky)
  bool parallel_folds = false;
};

/// One fold's training and validation data. In the default order the split
/// comes first and only the training portion is augmented; `paper_order`
/// augments everything first and splits the doubled set.
struct FoldData {
  Dataset train;
  Dataset val;
  std::vector<int> train_source_global;  // per train sample: originating sample index
};

FoldData make_fold_split(const Dataset& ds, const FoldPlan& plan, int fold, double aug_range_deg,
                         std::uint64_t seed, bool paper_order);

struct FoldRow {
  int fold = 0;
  double accuracy = 0.0;
  double dice = 0.0;
};

struct MetricsReport {
  int k = 0;
  std::vector<FoldRow> rows;
  double acc_mean = 0.0, acc_std = 0.0;
  double dice_mean = 0.0, dice_std = 0.0;
};

/// Recomputes the mean and sample (n-1) standard deviation from the rows.
void finalize_report(MetricsReport& report);

/// Predicts a probability map for one sample.
using Predictor = std::function<Image(const Sample&)>;
/// Trains on a fold's data and returns the predictor to evaluate with.
using TrainerFn = std::function<Predictor(const Dataset& train, const Dataset& val,
                                          std::uint64_t fold_seed)>;

/// Mean per-sample pixel accuracy and Dice of a predictor over a dataset;
/// the single scoring path shared by eval and cross-validation.
FoldRow score_with(const Predictor& predict, const Dataset& ds, int fold_id = 0);

/// Predictor wrapping a model's infer-mode final head.
Predictor model_predictor(const NestedUNet<float>& model);

/// Generic K-fold harness: for each fold, train via `trainer` on the other
/// folds and score pixel accuracy and Dice on the held-out fold.
MetricsReport cross_validate_with(const Dataset& ds, int k, std::uint64_t seed,
                                  const CrossvalOptions& opts, const TrainerFn& trainer);

/// The real thing: fit a fresh model per fold and evaluate its best
/// checkpoint.
MetricsReport cross_validate(const GraphConfig& cfg, const Dataset& ds, int k, std::uint64_t seed,
                             const FitHyper& hyper, const CrossvalOptions& opts);

/// 90/10 holdout baseline (no K-fold rotation), reported with k = 0.
MetricsReport holdout_baseline(const GraphConfig& cfg, const Dataset& ds, std::uint64_t seed,
                               const FitHyper& hyper, const CrossvalOptions& opts);

/// Report CSV: `K,fold,accuracy,dice` rows plus one `K,mean±std` aggregate
/// row per report.
void write_report_csv(std::ostream& out, std::span<const MetricsReport> reports);
std::string report_csv(std::span<const MetricsReport> reports);

}  // namespace nseg
