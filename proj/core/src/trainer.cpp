#include "nseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "nseg/callbacks.hpp"
#include "nseg/checkpoint.hpp"
#include "nseg/metrics.hpp"
#include "nseg/rng.hpp"

namespace nseg {

std::pair<TensorF, TensorF> make_batch(const Dataset& ds, const std::vector<int>& indices,
                                       std::size_t first, std::size_t count) {
  if (count == 0) throw ContractError("make_batch: empty batch");
  const Sample& head = ds.samples[static_cast<std::size_t>(indices[first])];
  const Shape shape{static_cast<int>(count), 1, head.image.h, head.image.w};
  TensorF images(shape);
  TensorF masks(shape);
  for (std::size_t b = 0; b < count; ++b) {
    const Sample& s = ds.samples[static_cast<std::size_t>(indices[first + b])];
    if (s.image.h != head.image.h || s.image.w != head.image.w) {
      throw ContractError("make_batch: samples disagree on size");
    }
    std::copy(s.image.pix.begin(), s.image.pix.end(),
              images.plane(static_cast<int>(b), 0));
    std::copy(s.mask.pix.begin(), s.mask.pix.end(), masks.plane(static_cast<int>(b), 0));
  }
  return {std::move(images), std::move(masks)};
}

double evaluate_accuracy(const NestedUNet<float>& model, const Dataset& ds, int batch_size) {
  if (ds.samples.empty()) throw ContractError("evaluate_accuracy: empty dataset");
  std::vector<int> idx(ds.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  double acc_sum = 0.0;
  for (std::size_t first = 0; first < idx.size(); first += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), idx.size() - first);
    auto [images, masks] = make_batch(ds, idx, first, count);
    const TensorF prob = model.predict(images);
    for (std::size_t b = 0; b < count; ++b) {
      TensorF p1(Shape{1, 1, prob.shape.h, prob.shape.w});
      TensorF m1(Shape{1, 1, prob.shape.h, prob.shape.w});
      std::copy(prob.plane(static_cast<int>(b), 0),
                prob.plane(static_cast<int>(b), 0) + static_cast<std::ptrdiff_t>(prob.shape.h) * prob.shape.w,
                p1.data.begin());
      std::copy(masks.plane(static_cast<int>(b), 0),
                masks.plane(static_cast<int>(b), 0) + static_cast<std::ptrdiff_t>(prob.shape.h) * prob.shape.w,
                m1.data.begin());
      acc_sum += pixel_accuracy(p1, m1);
    }
  }
  return acc_sum / static_cast<double>(ds.samples.size());
}

FitResult fit(NestedUNet<float> model, const Dataset& train, const Dataset& val,
              const FitHyper& hyper) {
  if (train.samples.empty() || val.samples.empty()) {
    throw ContractError("fit: datasets must be non-empty");
  }
  if (hyper.batch_size < 1) throw ConfigError("fit: batch size must be >= 1");
  if (hyper.max_epochs < 1) throw ConfigError("fit: max_epochs must be >= 1");

  PlateauScheduler sched(hyper.lr, hyper.sched_patience, hyper.sched_factor, hyper.sched_min_lr,
                         hyper.sched_min_delta);
  EarlyStop early(hyper.early_stop_threshold.value_or(0.0));
  CheckpointRecord best;
  AdamState<float> adam;
  AdamConfig<float> adam_cfg;

  const std::vector<int> head_positions = model.active_head_positions();
  const float head_scale = 1.0f / static_cast<float>(head_positions.size());

  FitResult result{model, 0.0, 0, {}};
  const int n = train.size();

  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    const double epoch_lr = sched.lr();
    adam_cfg.lr = static_cast<float>(epoch_lr);

    const std::vector<int> order = shuffled_indices(n, substream(hyper.seed, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    int batch_count = 0;
    std::int64_t correct_px = 0, total_px = 0;

    for (std::size_t first = 0; first < order.size();
         first += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(hyper.batch_size), order.size() - first);
      auto [images, masks] = make_batch(train, order, first, count);

      ForwardTrace<float> trace = model.forward_trace(images);
      float loss = 0.0f;
      std::vector<TensorF> head_grads;
      head_grads.reserve(head_positions.size());
      for (const int j : head_positions) {
        BceResult<float> bce = bce_loss(trace.head_probs.at(j), masks);
        loss += head_scale * bce.loss;
        for (float& g : bce.grad_pred.data) g *= head_scale;
        head_grads.push_back(std::move(bce.grad_pred));
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_count) + ", lr " +
                               std::to_string(epoch_lr),
                           epoch, batch_count, epoch_lr);
      }

      // train-mode accuracy of the final head, accumulated over the epoch
      const TensorF& final_prob = trace.head_probs.at(head_positions.back());
      for (std::size_t i = 0; i < final_prob.data.size(); ++i) {
        const bool a = final_prob.data[i] >= 0.5f;
        const bool b = masks.data[i] != 0.0f;
        correct_px += (a == b) ? 1 : 0;
      }
      total_px += final_prob.size();

      Gradients<float> grads = model.backward(trace, head_grads);
      model.commit_batchnorm(trace);
      adam_step(model, grads, adam, adam_cfg);

      loss_sum += loss;
      ++batch_count;
    }

    const double train_loss = loss_sum / batch_count;
    const double train_acc = static_cast<double>(correct_px) / static_cast<double>(total_px);
    const double val_acc = evaluate_accuracy(model, val, hyper.batch_size);

    result.history.push_back({epoch, train_loss, train_acc, val_acc, epoch_lr});
    best.update(epoch, val_acc, checkpoint_bytes(model));
    sched.step(val_acc);

    bool stop = false;
    if (hyper.early_stop_threshold && early.step(val_acc)) stop = true;
    if (hyper.stop_at_train_acc && train_acc >= *hyper.stop_at_train_acc) stop = true;
    if (stop) break;
  }

  result.best_model = checkpoint_from_bytes(best.snapshot());
  result.best_val_acc = best.best_metric();
  result.best_epoch = best.best_epoch();
  return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochStats>& history) {
  out << "epoch,train_loss,train_acc,val_acc,lr\n";
  char line[160];
  for (const EpochStats& e : history) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                  e.train_acc, e.val_acc, e.lr);
    out << line;
  }
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream ss;
  write_history_csv(ss, history);
  return ss.str();
}

}  // namespace nseg
