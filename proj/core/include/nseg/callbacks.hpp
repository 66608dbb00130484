#pragma once

#include <limits>
#include <string>

namespace nseg {

/// Reduce-on-plateau learning-rate schedule, maximizing the watched metric.
/// The first observation seeds `best` and already counts toward the patience
/// window, so `patience` equal metrics in a row trigger a reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, int patience = 3, double factor = 0.1,
                   double min_lr = 1e-5, double min_delta = 1e-4)
      : lr_(initial_lr), patience_(patience), factor_(factor), min_lr_(min_lr),
        min_delta_(min_delta) {}

  /// Observes one epoch metric; returns the learning rate for the next epoch.
  double step(double metric) {
    if (!seen_any_ || metric > best_ + min_delta_) {
      if (seen_any_ && metric > best_ + min_delta_) {
        stale_ = 0;
      } else {
        ++stale_;  // the seeding observation is not an improvement over anything
      }
      best_ = metric;
      seen_any_ = true;
    } else {
      ++stale_;
    }
    if (stale_ >= patience_) {
      lr_ = std::max(lr_ * factor_, min_lr_);
      stale_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  int stale_count() const { return stale_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double min_lr_;
  double min_delta_;
  double best_ = -std::numeric_limits<double>::infinity();
  bool seen_any_ = false;
  int stale_ = 0;
};

/// Stops training when the epoch-over-epoch accuracy improvement falls below
/// the threshold. The first epoch never stops.
class EarlyStop {
 public:
  explicit EarlyStop(double threshold = 0.05) : threshold_(threshold) {}

  /// Returns true when training should stop after this epoch.
  bool step(double accuracy) {
    if (!seen_any_) {
      seen_any_ = true;
      last_ = accuracy;
      return false;
    }
    const bool stop = (accuracy - last_) < threshold_;
    last_ = accuracy;
    return stop;
  }

  double last_metric() const { return last_; }

 private:
  double threshold_;
  double last_ = 0.0;
  bool seen_any_ = false;
};

/// Remembers the best validation metric and its parameter snapshot. Strict
/// improvement replaces the snapshot; ties keep the earlier epoch.
class CheckpointRecord {
 public:
  /// Returns true when `snapshot_bytes` was adopted as the new best.
  bool update(int epoch, double val_metric, const std::string& snapshot_bytes) {
    if (has_best_ && !(val_metric > best_metric_)) return false;
    has_best_ = true;
    best_metric_ = val_metric;
    best_epoch_ = epoch;
    snapshot_ = snapshot_bytes;
    return true;
  }

  bool has_best() const { return has_best_; }
  double best_metric() const { return best_metric_; }
  int best_epoch() const { return best_epoch_; }
  const std::string& snapshot() const { return snapshot_; }

 private:
  bool has_best_ = false;
  double best_metric_ = 0.0;
  int best_epoch_ = -1;
  std::string snapshot_;
};

}  // namespace nseg
