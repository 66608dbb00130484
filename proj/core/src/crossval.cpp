#include "nseg/crossval.hpp"

#include <cmath>
#include <cstdio>
#include <future>
#include <memory>
#include <sstream>

#include "nseg/metrics.hpp"
#include "nseg/rng.hpp"

namespace nseg {

FoldPlan kfold_split(int n, int k, std::uint64_t seed) {
  if (k < 2 || k > n) {
    throw ConfigError("kfold_split: need 2 <= K <= n, got K=" + std::to_string(k) +
                      ", n=" + std::to_string(n));
  }
  FoldPlan plan{k, seed, std::vector<int>(static_cast<std::size_t>(n), -1)};
  const std::vector<int> order = shuffled_indices(n, seed);
  for (int pos = 0; pos < n; ++pos) {
    plan.assignment[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos % k;
  }
  return plan;
}

std::string fold_plan_json(const FoldPlan& plan) {
  std::ostringstream ss;
  ss << "{\"K\": " << plan.k << ", \"seed\": " << plan.seed << ", \"assignment\": [";
  for (std::size_t i = 0; i < plan.assignment.size(); ++i) {
    if (i) ss << ", ";
    ss << plan.assignment[i];
  }
  ss << "]}";
  return ss.str();
}

FoldData make_fold_split(const Dataset& ds, const FoldPlan& plan, int fold, double aug_range_deg,
                         std::uint64_t seed, bool paper_order) {
  if (fold < 0 || fold >= plan.k) throw ContractError("fold id out of range");

  FoldData out;
  out.train.name = ds.name + "/train";
  out.val.name = ds.name + "/val";

  if (paper_order) {
    // mix originals and rotated copies first, then split the doubled set;
    // rotated twins of validation images can land in training
    const Dataset doubled = augment_dataset(ds, aug_range_deg, substream(seed, 0xA));
    if (static_cast<int>(plan.assignment.size()) != doubled.size()) {
      throw ContractError("paper-order fold plan must cover the doubled dataset");
    }
    for (int i = 0; i < doubled.size(); ++i) {
      const Sample& s = doubled.samples[static_cast<std::size_t>(i)];
      const int global = s.prov.origin == Origin::augmented ? s.prov.source_index : i;
      if (plan.assignment[static_cast<std::size_t>(i)] == fold) {
        out.val.samples.push_back(s);
      } else {
        out.train.samples.push_back(s);
        out.train_source_global.push_back(global);
      }
    }
    return out;
  }

  if (static_cast<int>(plan.assignment.size()) != ds.size()) {
    throw ContractError("fold plan size does not match dataset");
  }
  std::vector<int> train_globals;
  for (int i = 0; i < ds.size(); ++i) {
    if (plan.assignment[static_cast<std::size_t>(i)] == fold) {
      out.val.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
    } else {
      out.train.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
      train_globals.push_back(i);
    }
  }
  const std::size_t n_orig = out.train.samples.size();
  out.train = augment_dataset(out.train, aug_range_deg, substream(seed, 0xA));
  out.train_source_global = train_globals;
  for (std::size_t i = n_orig; i < out.train.samples.size(); ++i) {
    // augmented copies trace back to the training originals only
    out.train_source_global.push_back(
        train_globals[static_cast<std::size_t>(out.train.samples[i].prov.source_index)]);
  }
  return out;
}

void finalize_report(MetricsReport& report) {
  const std::size_t n = report.rows.size();
  if (n == 0) throw ContractError("finalize_report: no rows");
  double acc_sum = 0.0, dice_sum = 0.0;
  for (const FoldRow& r : report.rows) {
    acc_sum += r.accuracy;
    dice_sum += r.dice;
  }
  report.acc_mean = acc_sum / static_cast<double>(n);
  report.dice_mean = dice_sum / static_cast<double>(n);
  if (n < 2) {
    report.acc_std = 0.0;
    report.dice_std = 0.0;
    return;
  }
  double acc_sq = 0.0, dice_sq = 0.0;
  for (const FoldRow& r : report.rows) {
    acc_sq += (r.accuracy - report.acc_mean) * (r.accuracy - report.acc_mean);
    dice_sq += (r.dice - report.dice_mean) * (r.dice - report.dice_mean);
  }
  report.acc_std = std::sqrt(acc_sq / static_cast<double>(n - 1));
  report.dice_std = std::sqrt(dice_sq / static_cast<double>(n - 1));
}

namespace {

TensorF image_tensor(const Image& img) {
  TensorF t(Shape{1, 1, img.h, img.w});
  std::copy(img.pix.begin(), img.pix.end(), t.data.begin());
  return t;
}

}  // namespace

FoldRow score_with(const Predictor& predict, const Dataset& ds, int fold_id) {
  if (ds.samples.empty()) throw ContractError("score_with: empty dataset");
  double acc_sum = 0.0, dice_sum = 0.0;
  for (const Sample& s : ds.samples) {
    const Image prob = predict(s);
    const TensorF p = image_tensor(prob);
    const TensorF m = image_tensor(s.mask);
    acc_sum += pixel_accuracy(p, m);
    dice_sum += dice_coefficient(p, m);
  }
  const double n = static_cast<double>(ds.samples.size());
  return {fold_id, acc_sum / n, dice_sum / n};
}

Predictor model_predictor(const NestedUNet<float>& model) {
  auto shared = std::make_shared<NestedUNet<float>>(model);
  return [shared](const Sample& s) {
    const TensorF prob = shared->predict(image_tensor(s.image));
    Image out(s.image.h, s.image.w);
    std::copy(prob.data.begin(), prob.data.end(), out.pix.begin());
    return out;
  };
}

MetricsReport cross_validate_with(const Dataset& ds, int k, std::uint64_t seed,
                                  const CrossvalOptions& opts, const TrainerFn& trainer) {
  if (ds.size() < k) throw ConfigError("cross_validate: dataset smaller than K");
  const int plan_n = opts.paper_order ? 2 * ds.size() : ds.size();
  const FoldPlan plan = kfold_split(plan_n, k, seed);

  auto run_fold = [&](int fold) {
    const std::uint64_t fold_seed = substream(seed, 0xF0 + static_cast<std::uint64_t>(fold));
    const FoldData data = make_fold_split(ds, plan, fold, opts.aug_range_deg, seed, opts.paper_order);
    const Predictor predict = trainer(data.train, data.val, fold_seed);
    return score_with(predict, data.val, fold);
  };

  MetricsReport report;
  report.k = k;
  report.rows.resize(static_cast<std::size_t>(k));
  if (opts.parallel_folds) {
    std::vector<std::future<FoldRow>> futures;
    futures.reserve(static_cast<std::size_t>(k));
    for (int fold = 0; fold < k; ++fold) {
      futures.push_back(std::async(std::launch::async, run_fold, fold));
    }
    for (int fold = 0; fold < k; ++fold) {
      report.rows[static_cast<std::size_t>(fold)] = futures[static_cast<std::size_t>(fold)].get();
    }
  } else {
    for (int fold = 0; fold < k; ++fold) {
      report.rows[static_cast<std::size_t>(fold)] = run_fold(fold);
    }
  }
  finalize_report(report);
  return report;
}

namespace {

TrainerFn fit_trainer(const GraphConfig& cfg, const FitHyper& hyper) {
  return [cfg, hyper](const Dataset& train, const Dataset& val, std::uint64_t fold_seed) {
    NestedUNet<float> model = NestedUNet<float>::build(cfg, substream(fold_seed, 1));
    FitHyper fold_hyper = hyper;
    fold_hyper.seed = substream(fold_seed, 2);
    FitResult result = fit(std::move(model), train, val, fold_hyper);
    return model_predictor(result.best_model);
  };
}

}  // namespace

MetricsReport cross_validate(const GraphConfig& cfg, const Dataset& ds, int k, std::uint64_t seed,
                             const FitHyper& hyper, const CrossvalOptions& opts) {
  return cross_validate_with(ds, k, seed, opts, fit_trainer(cfg, hyper));
}

MetricsReport holdout_baseline(const GraphConfig& cfg, const Dataset& ds, std::uint64_t seed,
                               const FitHyper& hyper, const CrossvalOptions& opts) {
  if (ds.size() < 2) throw ConfigError("holdout_baseline: need at least 2 samples");
  // nine parts train, one part evaluate: a single 90/10 split
  const std::vector<int> order = shuffled_indices(ds.size(), seed);
  const int n_val = std::max(1, ds.size() / 10);
  Dataset train, val;
  train.name = ds.name + "/train";
  val.name = ds.name + "/val";
  for (int pos = 0; pos < ds.size(); ++pos) {
    const Sample& s = ds.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
    (pos < n_val ? val : train).samples.push_back(s);
  }
  train = augment_dataset(train, opts.aug_range_deg, substream(seed, 0xA));

  const TrainerFn trainer = fit_trainer(cfg, hyper);
  const Predictor predict = trainer(train, val, substream(seed, 0xF0));
  MetricsReport report;
  report.k = 0;
  report.rows.push_back(score_with(predict, val, 0));
  finalize_report(report);
  return report;
}

void write_report_csv(std::ostream& out, std::span<const MetricsReport> reports) {
  out << "K,fold,accuracy,dice\n";
  char line[160];
  for (const MetricsReport& report : reports) {
    for (const FoldRow& r : report.rows) {
      std::snprintf(line, sizeof line, "%d,%d,%.6f,%.6f\n", report.k, r.fold, r.accuracy, r.dice);
      out << line;
    }
    std::snprintf(line, sizeof line, "%d,mean±std,%.6f±%.6f,%.6f±%.6f\n", report.k,
                  report.acc_mean, report.acc_std, report.dice_mean, report.dice_std);
    out << line;
  }
}

std::string report_csv(std::span<const MetricsReport> reports) {
  std::ostringstream ss;
  write_report_csv(ss, reports);
  return ss.str();
}

}  // namespace nseg
