// nseg: nested U-Net segmentation engine.
//
// Subcommands cover the whole pipeline: dataset synthesis, rotation
// augmentation, training with callbacks, evaluation, K-fold cross-validation,
// pruning and parameter budgeting, and mask prediction.
//
// Exit codes: 0 success, 1 usage error, 2 data/contract error,
// 3 numeric abort (non-finite loss).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "nseg/checkpoint.hpp"
#include "nseg/crossval.hpp"
#include "nseg/dataset.hpp"
#include "nseg/rng.hpp"
#include "nseg/trainer.hpp"

namespace {

using namespace nseg;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliArgs {
  int threads = 1;

  // synth
  std::string synth_out = "data";
  int synth_count = 40;
  int synth_size = 64;
  std::uint64_t synth_seed = 42;

  // augment
  std::string aug_data, aug_out;
  double aug_range = 15.0;
  std::uint64_t aug_seed = 42;

  // model shape (train / crossval / params)
  int depth = 4;
  int base = 8;
  int kernel = 3;
  bool no_deep_supervision = false;
  int prune_level = 0;  // 0 = full depth-1

  // training loop (train / crossval)
  int batch = 4;
  double lr = 1e-3;
  double sched_factor = 0.1;
  int sched_patience = 3;
  double min_lr = 1e-5;
  double min_delta = 1e-4;
  double early_stop = 0.05;
  bool no_early_stop = false;
  int max_epochs = 400;
  std::uint64_t seed = 42;

  // train
  std::string train_data, train_out = "run";
  double val_fraction = 0.1;

  // eval
  std::string eval_ckpt, eval_data;
  int eval_head = 0;

  // crossval
  std::string cv_data, cv_out, cv_plan_out;
  int cv_k = 10;
  std::vector<int> cv_sweep;
  bool cv_paper_order = false;
  bool cv_parallel = false;
  bool cv_baseline = false;
  double cv_aug_range = 15.0;

  // prune
  std::string prune_ckpt, prune_out;
  int prune_target = 1;

  // params
  int params_input_channels = 1;

  // predict
  std::string pred_ckpt, pred_data, pred_out = "predictions";
  double pred_threshold = 0.5;

  // per-subcommand config file path
  std::string config_path;

  // filled by wire()
  CLI::App* synth = nullptr;
  CLI::App* augment = nullptr;
  CLI::App* train = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* crossval = nullptr;
  CLI::App* prune = nullptr;
  CLI::App* params = nullptr;
  CLI::App* predict = nullptr;
};

void add_model_flags(CLI::App* cmd, CliArgs& a) {
  cmd->add_option("--depth", a.depth, "Network depth L (levels)")->capture_default_str();
  cmd->add_option("--base", a.base, "Channels at the top level")->capture_default_str();
  cmd->add_option("--kernel", a.kernel, "Convolution kernel size (odd)")->capture_default_str();
  cmd->add_flag("--no-deep-supervision", a.no_deep_supervision,
                "Train/emit only the final head");
  cmd->add_option("--prune-level", a.prune_level, "Active output depth d in 1..L-1 (0 = full)")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, CliArgs& a) {
  cmd->add_option("--batch", a.batch, "Minibatch size")->capture_default_str();
  cmd->add_option("--lr", a.lr, "Starting learning rate")->capture_default_str();
  cmd->add_option("--sched-factor", a.sched_factor, "Plateau reduction factor")
      ->capture_default_str();
  cmd->add_option("--sched-patience", a.sched_patience,
                  "Epochs without improvement before reducing")
      ->capture_default_str();
  cmd->add_option("--min-lr", a.min_lr, "Learning-rate floor")->capture_default_str();
  cmd->add_option("--min-delta", a.min_delta, "Improvement margin for the scheduler")
      ->capture_default_str();
  cmd->add_option("--early-stop", a.early_stop,
                  "Stop when epoch accuracy improves by less than this")
      ->capture_default_str();
  cmd->add_flag("--no-early-stop", a.no_early_stop, "Disable early stopping");
  cmd->add_option("--max-epochs", a.max_epochs, "Epoch cap")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Run seed")->capture_default_str();
}

void wire(CLI::App& app, CliArgs& a) {
  app.description("nseg: nested U-Net segmentation engine");
  app.require_subcommand(1);
  app.add_option("--threads", a.threads, "Kernel threads (1 = fully deterministic)")
      ->capture_default_str();

  a.synth = app.add_subcommand("synth", "Generate a synthetic image/mask dataset");
  a.synth->add_option("--out", a.synth_out, "Output directory")->capture_default_str();
  a.synth->add_option("--count", a.synth_count, "Sample count")->capture_default_str();
  a.synth->add_option("--size", a.synth_size, "Image side length")->capture_default_str();
  a.synth->add_option("--seed", a.synth_seed, "Generator seed")->capture_default_str();

  a.augment = app.add_subcommand("augment", "Double a dataset with random rotations");
  a.augment->add_option("--data", a.aug_data, "Input dataset directory");
  a.augment->add_option("--out", a.aug_out, "Output directory");
  a.augment->add_option("--range", a.aug_range, "Rotation range in degrees (+/-)")
      ->capture_default_str();
  a.augment->add_option("--seed", a.aug_seed, "Angle seed")->capture_default_str();

  a.train = app.add_subcommand("train", "Train and write the best checkpoint + history CSV");
  a.train->add_option("--data", a.train_data, "Dataset directory");
  a.train->add_option("--out", a.train_out, "Output directory")->capture_default_str();
  a.train->add_option("--val-fraction", a.val_fraction,
                      "Held-out validation fraction (0 = validate on the training set)")
      ->capture_default_str();
  add_model_flags(a.train, a);
  add_train_flags(a.train, a);

  a.eval = app.add_subcommand("eval", "Accuracy/Dice of a checkpoint on a dataset");
  a.eval->add_option("--checkpoint", a.eval_ckpt, "Checkpoint file");
  a.eval->add_option("--data", a.eval_data, "Dataset directory");
  a.eval->add_option("--head", a.eval_head, "Read output head d instead of the stored one");

  a.crossval = app.add_subcommand("crossval", "K-fold cross-validation report");
  a.crossval->add_option("--data", a.cv_data, "Dataset directory");
  a.crossval->add_option("--k", a.cv_k, "Fold count")->capture_default_str();
  a.crossval->add_option("--k-sweep", a.cv_sweep, "Comma-separated K values to sweep")
      ->delimiter(',');
  a.crossval->add_option("--out", a.cv_out, "Report CSV path (default: stdout)");
  a.crossval->add_option("--plan-out", a.cv_plan_out, "Write fold plans as JSON lines");
  a.crossval->add_option("--aug-range", a.cv_aug_range, "Training-fold rotation range")
      ->capture_default_str();
  a.crossval->add_flag("--paper-order", a.cv_paper_order,
                       "Augment before splitting (leaks rotated twins)");
  a.crossval->add_flag("--parallel-folds", a.cv_parallel, "Train folds concurrently");
  a.crossval->add_flag("--baseline", a.cv_baseline, "Prepend a 90/10 holdout row (K=0)");
  add_model_flags(a.crossval, a);
  add_train_flags(a.crossval, a);

  a.prune = app.add_subcommand("prune", "Rewrite a checkpoint at a lower prune level");
  a.prune->add_option("--checkpoint", a.prune_ckpt, "Input checkpoint");
  a.prune->add_option("--level", a.prune_target, "Target prune level d");
  a.prune->add_option("--out", a.prune_out, "Output checkpoint");

  a.params = app.add_subcommand("params", "Closed-form parameter budget per prune level");
  add_model_flags(a.params, a);
  a.params->add_option("--input-channels", a.params_input_channels, "Network input channels")
      ->capture_default_str();

  a.predict = app.add_subcommand("predict", "Write thresholded masks for each input image");
  a.predict->add_option("--checkpoint", a.pred_ckpt, "Checkpoint file");
  a.predict->add_option("--data", a.pred_data, "Directory of input .pgm images");
  a.predict->add_option("--out", a.pred_out, "Output directory")->capture_default_str();
  a.predict->add_option("--threshold", a.pred_threshold, "Foreground threshold")
      ->capture_default_str();

  for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) {
    sub->add_option("--config", a.config_path, "Flat key = value configuration file");
  }
}

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Reads a flat `key = value` file and returns `--key=value` tokens for every
/// key the command line did not already set. Unknown keys are rejected.
std::vector<std::string> config_tokens(const std::string& path, const CLI::App* sub) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::string text = trimmed(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) + " is not `key = value`");
    }
    const std::string key = trimmed(text.substr(0, eq));
    const std::string value = trimmed(text.substr(eq + 1));
    if (key.empty() || key == "config") {
      throw UsageError("bad config key on line " + std::to_string(line_no));
    }
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw UsageError("unknown config key '" + key + "' for subcommand " + sub->get_name());
    }
    if (opt->count() > 0) continue;  // command line wins
    tokens.push_back("--" + key + "=" + value);
  }
  return tokens;
}

void require_set(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

GraphConfig make_config(const CliArgs& a) {
  GraphConfig cfg;
  cfg.depth = a.depth;
  cfg.base_channels = a.base;
  cfg.kernel = a.kernel;
  cfg.input_channels = 1;
  cfg.deep_supervision = !a.no_deep_supervision;
  cfg.validate();
  return cfg;
}

FitHyper make_hyper(const CliArgs& a) {
  FitHyper h;
  h.batch_size = a.batch;
  h.max_epochs = a.max_epochs;
  h.lr = a.lr;
  h.sched_factor = a.sched_factor;
  h.sched_patience = a.sched_patience;
  h.sched_min_lr = a.min_lr;
  h.sched_min_delta = a.min_delta;
  if (a.no_early_stop) {
    h.early_stop_threshold.reset();
  } else {
    h.early_stop_threshold = a.early_stop;
  }
  h.seed = a.seed;
  return h;
}

void apply_prune_level(NestedUNet<float>& model, int requested) {
  if (requested == 0) return;
  if (requested < 1 || requested > model.config.depth - 1) {
    throw ConfigError("prune level must lie in 1.." + std::to_string(model.config.depth - 1));
  }
  model.prune_level = requested;
}

void set_threads(int threads) {
  if (threads < 1) throw UsageError("--threads must be >= 1");
#ifdef _OPENMP
  omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::vector<Sample> take(const Dataset& ds, const std::vector<int>& order, int from, int to) {
  std::vector<Sample> out;
  for (int pos = from; pos < to; ++pos) {
    out.push_back(ds.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])]);
  }
  return out;
}

int cmd_synth(const CliArgs& a) {
  const Dataset ds = synth_generate(a.synth_count, a.synth_size, a.synth_seed);
  save_dataset(a.synth_out, ds);
  std::cout << "wrote " << ds.size() << " image/mask pairs to " << a.synth_out << "\n";
  return 0;
}

int cmd_augment(const CliArgs& a) {
  require_set(a.aug_data, "--data");
  require_set(a.aug_out, "--out");
  const Dataset ds = load_dataset(a.aug_data);
  if (ds.size() == 0) throw DataError("no image/mask pairs in " + a.aug_data);
  const Dataset doubled = augment_dataset(ds, a.aug_range, a.aug_seed);
  save_dataset(a.aug_out, doubled);
  std::cout << "augmented " << ds.size() << " -> " << doubled.size() << " pairs in " << a.aug_out
            << "\n";
  return 0;
}

int cmd_train(const CliArgs& a) {
  require_set(a.train_data, "--data");
  const Dataset ds = load_dataset(a.train_data);
  if (ds.size() == 0) throw DataError("no image/mask pairs in " + a.train_data);
  if (a.val_fraction < 0.0 || a.val_fraction >= 1.0) {
    throw UsageError("--val-fraction must lie in [0, 1)");
  }

  Dataset train, val;
  train.name = ds.name;
  val.name = ds.name;
  const int n_val = static_cast<int>(std::lround(a.val_fraction * ds.size()));
  if (n_val == 0) {
    train.samples = ds.samples;
    val.samples = ds.samples;
  } else {
    const std::vector<int> order = shuffled_indices(ds.size(), substream(a.seed, 0x5));
    val.samples = take(ds, order, 0, n_val);
    train.samples = take(ds, order, n_val, ds.size());
  }

  NestedUNet<float> model = NestedUNet<float>::build(make_config(a), a.seed);
  apply_prune_level(model, a.prune_level);

  const FitResult result = fit(std::move(model), train, val, make_hyper(a));

  std::filesystem::create_directories(a.train_out);
  const auto ckpt = std::filesystem::path(a.train_out) / "checkpoint.nseg";
  save_checkpoint(ckpt, result.best_model);
  const auto hist = std::filesystem::path(a.train_out) / "history.csv";
  std::ofstream hf(hist);
  write_history_csv(hf, result.history);

  std::printf("epochs=%zu best_epoch=%d best_val_acc=%.6f\n", result.history.size(),
              result.best_epoch, result.best_val_acc);
  std::cout << "checkpoint: " << ckpt.string() << "\nhistory: " << hist.string() << "\n";
  return 0;
}

int cmd_eval(const CliArgs& a) {
  require_set(a.eval_ckpt, "--checkpoint");
  require_set(a.eval_data, "--data");
  NestedUNet<float> model = load_checkpoint(a.eval_ckpt);
  if (a.eval_head != 0) apply_prune_level(model, a.eval_head);
  const Dataset ds = load_dataset(a.eval_data);
  if (ds.size() == 0) throw DataError("no image/mask pairs in " + a.eval_data);
  const FoldRow row = score_with(model_predictor(model), ds);
  std::printf("samples=%d head=%d accuracy=%.6f dice=%.6f\n", ds.size(), model.prune_level,
              row.accuracy, row.dice);
  return 0;
}

int cmd_crossval(const CliArgs& a) {
  require_set(a.cv_data, "--data");
  const Dataset ds = load_dataset(a.cv_data);
  if (ds.size() == 0) throw DataError("no image/mask pairs in " + a.cv_data);
  const GraphConfig cfg = make_config(a);
  const FitHyper hyper = make_hyper(a);
  CrossvalOptions opts;
  opts.aug_range_deg = a.cv_aug_range;
  opts.paper_order = a.cv_paper_order;
  opts.parallel_folds = a.cv_parallel;

  std::vector<MetricsReport> reports;
  if (a.cv_baseline) {
    reports.push_back(holdout_baseline(cfg, ds, a.seed, hyper, opts));
  }
  const std::vector<int> ks = a.cv_sweep.empty() ? std::vector<int>{a.cv_k} : a.cv_sweep;
  for (const int k : ks) {
    reports.push_back(cross_validate(cfg, ds, k, a.seed, hyper, opts));
  }

  const std::string csv = report_csv(reports);
  if (a.cv_out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(a.cv_out);
    if (!f) throw DataError("cannot write " + a.cv_out);
    f << csv;
    std::cout << "report: " << a.cv_out << "\n";
  }
  if (!a.cv_plan_out.empty()) {
    std::ofstream f(a.cv_plan_out);
    if (!f) throw DataError("cannot write " + a.cv_plan_out);
    for (const int k : ks) {
      const int plan_n = opts.paper_order ? 2 * ds.size() : ds.size();
      f << fold_plan_json(kfold_split(plan_n, k, a.seed)) << "\n";
    }
  }
  return 0;
}

int cmd_prune(const CliArgs& a) {
  require_set(a.prune_ckpt, "--checkpoint");
  require_set(a.prune_out, "--out");
  const NestedUNet<float> model = load_checkpoint(a.prune_ckpt);
  const std::int64_t before = model.learned_element_count();
  const NestedUNet<float> pruned = model.prune(a.prune_target);
  const std::int64_t after = pruned.learned_element_count();
  save_checkpoint(a.prune_out, pruned);
  std::printf("params_before=%lld params_after=%lld reduction=%.1f%%\n",
              static_cast<long long>(before), static_cast<long long>(after),
              100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before)));
  std::cout << "pruned checkpoint: " << a.prune_out << "\n";
  return 0;
}

int cmd_params(const CliArgs& a) {
  GraphConfig cfg = make_config(a);
  cfg.input_channels = a.params_input_channels;
  const std::int64_t full = param_count(cfg, cfg.depth - 1);
  std::cout << "prune_level,params,reduction_vs_full\n";
  for (int d = 1; d <= cfg.depth - 1; ++d) {
    const std::int64_t p = param_count(cfg, d);
    std::printf("%d,%lld,%.1f%%\n", d, static_cast<long long>(p),
                100.0 * (1.0 - static_cast<double>(p) / static_cast<double>(full)));
  }
  return 0;
}

int cmd_predict(const CliArgs& a) {
  require_set(a.pred_ckpt, "--checkpoint");
  require_set(a.pred_data, "--data");
  const NestedUNet<float> model = load_checkpoint(a.pred_ckpt);
  const Predictor predict = model_predictor(model);
  std::filesystem::create_directories(a.pred_out);

  std::vector<std::filesystem::path> inputs;
  for (const auto& entry : std::filesystem::directory_iterator(a.pred_data)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.size() >= 5 && stem.compare(stem.size() - 5, 5, "_mask") == 0) continue;
    inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw DataError("no input images in " + a.pred_data);

  for (const auto& path : inputs) {
    Sample s;
    s.image = read_pgm(path);
    s.mask = Image(s.image.h, s.image.w);  // unused by the predictor
    Image prob = predict(s);
    for (float& v : prob.pix) v = v >= static_cast<float>(a.pred_threshold) ? 1.0f : 0.0f;
    const auto out = std::filesystem::path(a.pred_out) / (path.stem().string() + "_pred.pgm");
    write_pgm(out, prob);
  }
  std::cout << "wrote " << inputs.size() << " predicted masks to " << a.pred_out << "\n";
  return 0;
}

int dispatch(const CliArgs& a) {
  set_threads(a.threads);
  if (a.synth->parsed()) return cmd_synth(a);
  if (a.augment->parsed()) return cmd_augment(a);
  if (a.train->parsed()) return cmd_train(a);
  if (a.eval->parsed()) return cmd_eval(a);
  if (a.crossval->parsed()) return cmd_crossval(a);
  if (a.prune->parsed()) return cmd_prune(a);
  if (a.params->parsed()) return cmd_params(a);
  if (a.predict->parsed()) return cmd_predict(a);
  throw UsageError("no subcommand selected");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_args(argv + 1, argv + argc);
  // CLI11's vector overload consumes arguments back to front
  const auto parse_args = [](CLI::App& app, std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  };

  try {
    CliArgs args;
    CLI::App app;
    wire(app, args);
    try {
      parse_args(app, raw_args);
    } catch (const CLI::ParseError& e) {
      return app.exit(e) == 0 ? 0 : 1;
    }

    if (!args.config_path.empty()) {
      const std::vector<CLI::App*> parsed = app.get_subcommands();
      if (parsed.size() == 1) {
        const std::vector<std::string> extra = config_tokens(args.config_path, parsed.front());
        if (!extra.empty()) {
          // reparse from scratch with the config-derived flags appended;
          // only keys absent from the command line were turned into flags
          std::vector<std::string> merged = raw_args;
          merged.insert(merged.end(), extra.begin(), extra.end());
          CliArgs args2;
          CLI::App app2;
          wire(app2, args2);
          try {
            parse_args(app2, merged);
          } catch (const CLI::ParseError& e) {
            return app2.exit(e) == 0 ? 0 : 1;
          }
          return dispatch(args2);
        }
      }
    }
    return dispatch(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
