#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "t4v/classifier.hpp"
#include "t4v/datastore.hpp"
#include "t4v/headnet.hpp"
#include "t4v/objectives.hpp"

namespace t4v {

enum class Objective { FrozenCE, LearnableCE, ContrastiveGathered, ContrastiveLocal };

std::string_view to_string(Objective objective) noexcept;
Objective parse_objective(std::string_view text);

/// Optimisation recipe. Defaults are the full-scale video recipe: AdamW (0.9, 0.98),
/// weight decay 0.2, lr 5e-5 -> 5e-6 cosine after 5 linear warm-up epochs, 30 epochs,
/// batch 256.
struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 5;
  double base_lr = 5e-5;
  double min_lr = 5e-6;
  double weight_decay = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  Objective objective = Objective::FrozenCE;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
  std::optional<std::size_t> shots;
  std::size_t shards = 1;        // contrastive gather topology M; local batch N = batch_size / M
  double temperature = 1.0;      // CE logit multiplier
  bool cosine_logits = false;    // CE on L2-normalized embeddings and classifier rows
  double classifier_lr_scale = 1.0;  // LearnableCE only
  double feature_jitter = 0.0;   // std of Gaussian noise added to frames each step
  double log_scale_init = std::log(1.0 / 0.07);
  double log_scale_clamp = 100.0;

  GatherTopology gather() const noexcept { return {shards, batch_size / std::max<std::size_t>(shards, 1)}; }
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Desk-scale recipe for small pre-extracted feature sets: the same optimiser and
/// schedule shape with batch 32, lr 3e-4 -> 3e-5, and cosine logits at temperature 12.
TrainConfig desk_config();

struct OptimState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

/// A tensor the optimiser updates.
struct Trainable {
  std::string name;
  Matrix* value = nullptr;
  bool decay = true;
  double lr_scale = 1.0;
};

/// Learning rate for update number `step` (1-based; 0 is the start of training): linear
/// ramp to base_lr over the warm-up steps, then cosine to min_lr at the final step.
double lr_at(const TrainConfig& config, double step, std::size_t steps_per_epoch);

/// One AdamW update with decoupled weight decay. Throws a numeric error on non-finite
/// gradients without touching any parameter.
void adamw_step(std::span<const Trainable> params, std::span<const Matrix> grads, OptimState& state, double lr,
                const TrainConfig& config);

/// Sample order for one epoch that cycles the n samples (reshuffled every cycle) until
/// target_iters * batch slots are filled.
std::vector<std::size_t> fewshot_repeat_plan(std::size_t n_samples, std::size_t target_iters, std::size_t batch,
                                             Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct EvalRecord {
  std::size_t epoch = 0;
  double top1 = 0.0;
};

struct RunLog {
  nlohmann::ordered_json config;
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::vector<EvalRecord> evals;
  std::string classifier_digest_before;
  std::string classifier_digest_after;
  std::vector<std::string> notes;

  /// First epoch whose train loss is <= threshold (0 if the initial loss already is).
  std::optional<std::size_t> epochs_to_loss(double threshold) const;
  std::optional<std::size_t> epochs_to_accuracy(double threshold) const;
  /// One JSON record per line: a header record, then one per epoch and per evaluation.
  std::string to_jsonl() const;
};

struct TrainResult {
  HeadParams head;
  ClassifierMatrix classifier;
  LogitScale logit_scale;
  RunLog log;
};

struct RunOptions {
  const FeatureStore* eval_store = nullptr;  // evaluated after every epoch when set
};

/// Trains the head (and the classifier under LearnableCE) on `features`.
TrainResult run(const FeatureStore& features, const ClassifierMatrix& classifier, const HeadSpec& spec,
                const TrainConfig& config, const RunOptions& options = {});

/// Mean loss of the configured objective over `features` in store order.
double dataset_loss(const FeatureStore& features, const ClassifierMatrix& classifier, const HeadSpec& spec,
                    const HeadParams& head, const TrainConfig& config, const LogitScale& scale);

}  // namespace t4v
