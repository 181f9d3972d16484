#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sefcn/data_synth.hpp"
#include "sefcn/losses.hpp"
#include "sefcn/network.hpp"

namespace sefcn {

struct TrainConfig {
  double lr0 = 0.01;
  std::size_t lr_decay_every = 10;
  double lr_decay_factor = 0.1;
  double momentum = 0.95;
  double weight_decay = 1e-4;
  std::size_t batch_size = 4;
  std::size_t max_epochs = 20;
  std::uint64_t seed = 1;
  double lambda = 1.0;
  std::size_t patience = 10;

  void validate() const;  // throws ConfigError
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// lr0 * factor^floor(epoch / every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct OptimState {
  std::vector<Tensor> velocity;  // mirrors the parameter list
  std::size_t epoch = 0;         // completed epochs
  double lr = 0.0;
  float best_val_loss = 0.0f;    // stored as float so checkpoints restore it exactly
  std::size_t bad_epochs = 0;
  bool has_best = false;
};

// v <- momentum v + g + wd theta; theta <- theta - lr v.
// Throws DivergenceError naming the first parameter with a non-finite gradient
// (before any parameter is touched).
void sgd_step(std::span<Parameter<float>* const> params, std::span<const std::string> names, OptimState& state,
              double lr, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch;
  std::string split;  // "train", "val" or "test"
  double loss;
  double global_dice;
  std::vector<double> dice;
  double lr;
};

std::string csv_header(std::size_t num_classes);
std::string csv_row(const EpochRecord& r);

struct EvalResult {
  double loss = 0.0;
  double global_dice = 0.0;
  std::vector<double> dice;
};

// Eval-mode pass over `samples` in mini-batches; Dice counts pooled over the set.
EvalResult evaluate(Network<float>& net, std::span<const Sample> samples, std::span<const double> weights,
                    std::size_t batch_size, double lambda);

struct InspectOptions {
  bool enabled = false;
  std::vector<std::string> blocks{"sE-1", "sD-4"};
  std::optional<Tensor> image;  // defaults to the first validation image
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  std::optional<EvalResult> test;
};

// Run directory layout: metrics.csv, checkpoints/epoch_%03d.ckpt (+ .opt),
// excitation/ when inspection is enabled. `resume` names a checkpoint inside
// the run to continue from; rows at or after its epoch are rewritten.
TrainResult train(Network<float>& net, const TrainConfig& cfg, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, std::span<const Sample> test_set,
                  const std::filesystem::path& run_dir, const InspectOptions& inspect = {},
                  const std::optional<std::filesystem::path>& resume = std::nullopt, std::ostream* log = nullptr);

// Stacks samples [first, first + count) into a (count, 1, H, W) batch.
Tensor stack_images(std::span<const Sample> samples, std::span<const std::size_t> order, std::size_t first,
                    std::size_t count);
LabelMap stack_labels(std::span<const Sample> samples, std::span<const std::size_t> order, std::size_t first,
                      std::size_t count);

// Seeded permutation for one epoch; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::size_t epoch);
void save_optim_state(const OptimState& s, const std::filesystem::path& path);
OptimState load_optim_state(const std::filesystem::path& path);

// --- gradient audit -------------------------------------------------------

using DoubleLoss = std::function<CombinedLoss<double>(const TensorD& logits, const LabelMap& labels)>;

struct GradCheckEntry {
  std::string parameter;
  std::string kind;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::map<std::string, double> max_rel_error_by_kind;
  double max_rel_error = 0.0;
  std::size_t failures = 0;  // entries above the tolerance
};

// Copies `net` into a 64-bit shadow and compares analytic parameter gradients
// of `loss` (combined loss by default) with central differences at h and h/2,
// Richardson-combined, for `samples` parameters spread round-robin over all
// tensors. Probes run with branches frozen at the base point (see
// Layer::freeze_branches).
GradCheckReport grad_check(Network<float>& net, const Tensor& images, const LabelMap& labels,
                           std::span<const double> weights, std::size_t samples, double tolerance,
                           std::uint64_t seed, double h = 1e-3, DoubleLoss loss = {});

// |a - n| / max(|a|, |n|, 1e-7)
double relative_error(double analytic, double numeric);

}  // namespace sefcn
