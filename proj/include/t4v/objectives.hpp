#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "t4v/classifier.hpp"
#include "t4v/numkit.hpp"

namespace t4v {

struct Batch {
  Matrix video_embeddings;  // b x d
  std::vector<std::uint32_t> labels;
  std::optional<Matrix> paired_text_embeddings;  // b x d, contrastive mode only
};

/// Data-parallel layout: `shards` workers each holding `local_batch` pairs.
struct GatherTopology {
  std::size_t shards = 1;
  std::size_t local_batch = 1;
};

/// Trainable contrastive temperature, stored as log(scale).
struct LogitScale {
  double log_scale = std::log(1.0 / 0.07);
  double clamp_max = 100.0;

  double scale() const noexcept { return std::exp(log_scale); }
  void clamp() noexcept { log_scale = std::min(log_scale, std::log(clamp_max)); }
};

struct CeResult {
  double loss = 0.0;
  Vector grad_logits;
};

/// -log softmax(logits)[label], with the max-shifted softmax and its gradient.
CeResult ce_loss(const Vector& logits, std::size_t label);

struct ClassifyResult {
  double loss = 0.0;  // mean over the batch
  Matrix grad_embeddings;             // b x d
  std::optional<Matrix> grad_weights; // c x d; absent for a frozen classifier
  Matrix logits;                      // b x c
};

/// logits = temperature * W z for each row z of the batch; mean cross-entropy.
ClassifyResult classify_batch(const ClassifierMatrix& w, const Batch& batch, double temperature = 1.0);

struct ContrastiveGrads {
  Matrix video;  // (M*N) x d, global pair order
  Matrix text;   // (M*N) x d
  double log_scale = 0.0;
};

struct ShardedLoss {
  std::vector<double> shard_loss;
  std::vector<ContrastiveGrads> shard_grads;
  double mean_loss = 0.0;
  /// Fixed-order mean of shard_grads (the data-parallel reduction).
  ContrastiveGrads reduced;
};

inline constexpr double kUnitNormTolerance = 1e-4;

/// Symmetric CE-form InfoNCE with batch gathering. Shard i scores its N video rows
/// against all N*M text rows (and its text rows against all video rows); the positive
/// of local row r is global pair i*N + r. Shard gradients cover every gathered row.
ShardedLoss infonce_gathered(std::span<const Batch> local_batches, const LogitScale& scale);

/// Same loss with each shard restricted to its own N x N similarities.
ShardedLoss infonce_local_only(std::span<const Batch> local_batches, const LogitScale& scale);

}  // namespace t4v
