#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nseg/dataset.hpp"
#include "nseg/model.hpp"
#include "nseg/optimizer.hpp"

namespace nseg {

struct FitHyper {
  int batch_size = 4;
  int max_epochs = 400;
  double lr = 1e-3;
  double sched_factor = 0.1;
  int sched_patience = 3;
  double sched_min_lr = 1e-5;
  double sched_min_delta = 1e-4;
  std::optional<double> early_stop_threshold = 0.05;  // nullopt disables
  std::optional<double> stop_at_train_acc;            // optional target-accuracy stop
  std::uint64_t seed = 42;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;  // rate in effect during this epoch
};

struct FitResult {
  NestedUNet<float> best_model;
  double best_val_acc = 0.0;
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

/// Converts samples (by index) into an input batch and a mask batch, both
/// shaped (count, 1, h, w).
std::pair<TensorF, TensorF> make_batch(const Dataset& ds, const std::vector<int>& indices,
                                       std::size_t first, std::size_t count);

/// Mean per-sample pixel accuracy of the model's final head over a dataset,
/// infer mode.
double evaluate_accuracy(const NestedUNet<float>& model, const Dataset& ds, int batch_size = 8);

/// The tuned training loop: seeded shuffles, minibatch forward/backward with
/// the deep-supervision mean BCE, Adam updates, then per-epoch validation
/// accuracy driving the plateau scheduler, early stopping and the best
/// checkpoint. Throws NumericError if the loss becomes non-finite.
FitResult fit(NestedUNet<float> model, const Dataset& train, const Dataset& val,
              const FitHyper& hyper);

/// History CSV: header `epoch,train_loss,train_acc,val_acc,lr`, 6-decimal
/// fixed precision.
void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history);
std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace nseg
