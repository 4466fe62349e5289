#include "t4v/objectives.hpp"

#include <sstream>

namespace t4v {

namespace {

constexpr const char* kModule = "objectives";

void check_unit_rows(const Matrix& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
      std::ostringstream os;
      os << what << " row " << i << " has norm " << n << ", expected unit norm";
      fail(Errc::normalization, kModule, os.str());
    }
  }
}

struct Gathered {
  Matrix video;
  Matrix text;
  std::size_t local = 0;
};

Gathered gather(std::span<const Batch> shards) {
  if (shards.empty()) fail(Errc::dimension, kModule, "need at least one shard");
  const auto n = shards[0].video_embeddings.rows();
  const auto d = shards[0].video_embeddings.cols();
  if (n < 1) fail(Errc::dimension, kModule, "local batch must be >= 1");
  Gathered g;
  g.local = static_cast<std::size_t>(n);
  g.video.resize(n * static_cast<Eigen::Index>(shards.size()), d);
  g.text.resize(g.video.rows(), d);
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const auto& b = shards[i];
    if (!b.paired_text_embeddings) fail(Errc::dimension, kModule, "contrastive batch lacks paired text embeddings");
    if (b.video_embeddings.rows() != n || b.video_embeddings.cols() != d ||
        b.paired_text_embeddings->rows() != n || b.paired_text_embeddings->cols() != d) {
      fail(Errc::dimension, kModule, "all shards must hold N x d video and text blocks");
    }
    check_unit_rows(b.video_embeddings, "video");
    check_unit_rows(*b.paired_text_embeddings, "text");
    g.video.middleRows(static_cast<Eigen::Index>(i) * n, n) = b.video_embeddings;
    g.text.middleRows(static_cast<Eigen::Index>(i) * n, n) = *b.paired_text_embeddings;
  }
  return g;
}

// One direction: rows `queries` scored against `keys`; positive of row r is key offset + r.
// Accumulates d(weight * mean CE)/d(queries), /d(keys) and /d(log_scale).
double directional(const Matrix& queries, const Matrix& keys, Eigen::Index offset, double s, double weight,
                   Eigen::Ref<Matrix> d_queries, Eigen::Ref<Matrix> d_keys, double& d_log_scale) {
  const Eigen::Index n = queries.rows();
  const Matrix logits = s * (queries * keys.transpose());
  Matrix d_logits(n, keys.rows());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    auto ce = ce_loss(logits.row(r).transpose(), static_cast<std::size_t>(offset + r));
    total += ce.loss;
    d_logits.row(r) = ce.grad_logits.transpose() * (weight / static_cast<double>(n));
  }
  d_queries += s * (d_logits * keys);
  d_keys += s * (d_logits.transpose() * queries);
  d_log_scale += (d_logits.array() * logits.array()).sum();
  return weight * total / static_cast<double>(n);
}

ShardedLoss run_shards(std::span<const Batch> shards, const LogitScale& scale, bool gather_all) {
  const Gathered g = gather(shards);
  const double s = scale.scale();
  const auto n = static_cast<Eigen::Index>(g.local);
  ShardedLoss out;
  out.reduced = {Matrix::Zero(g.video.rows(), g.video.cols()), Matrix::Zero(g.text.rows(), g.text.cols()), 0.0};
  for (std::size_t i = 0; i < shards.size(); ++i) {
    const Eigen::Index begin = static_cast<Eigen::Index>(i) * n;
    const Matrix& local_v = shards[i].video_embeddings;
    const Matrix& local_t = *shards[i].paired_text_embeddings;
    ContrastiveGrads grads{Matrix::Zero(g.video.rows(), g.video.cols()), Matrix::Zero(g.text.rows(), g.text.cols()), 0.0};
    double loss = 0.0;
    if (gather_all) {
      Matrix dv_local = Matrix::Zero(n, local_v.cols()), dt_local = dv_local;
      loss += directional(local_v, g.text, begin, s, 0.5, dv_local, grads.text, grads.log_scale);
      loss += directional(local_t, g.video, begin, s, 0.5, dt_local, grads.video, grads.log_scale);
      grads.video.middleRows(begin, n) += dv_local;
      grads.text.middleRows(begin, n) += dt_local;
    } else {
      auto gv = grads.video.middleRows(begin, n);
      auto gt = grads.text.middleRows(begin, n);
      loss += directional(local_v, local_t, 0, s, 0.5, gv, gt, grads.log_scale);
      loss += directional(local_t, local_v, 0, s, 0.5, gt, gv, grads.log_scale);
    }
    out.shard_loss.push_back(loss);
    out.shard_grads.push_back(std::move(grads));
  }
  const double m = static_cast<double>(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    out.mean_loss += out.shard_loss[i] / m;
    out.reduced.video += out.shard_grads[i].video / m;
    out.reduced.text += out.shard_grads[i].text / m;
    out.reduced.log_scale += out.shard_grads[i].log_scale / m;
  }
  return out;
}

}  // namespace

CeResult ce_loss(const Vector& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) {
    fail(Errc::index, kModule, "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) + " logits");
  }
  if (!logits.allFinite()) fail(Errc::numeric, kModule, "non-finite logits");
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp().matrix();
  const double z = p.sum();
  p /= z;
  CeResult out;
  out.loss = std::log(z) - (logits(static_cast<Eigen::Index>(label)) - mx);
  out.grad_logits = std::move(p);
  out.grad_logits(static_cast<Eigen::Index>(label)) -= 1.0;
  return out;
}

ClassifyResult classify_batch(const ClassifierMatrix& w, const Batch& batch, double temperature) {
  const Matrix& z = batch.video_embeddings;
  if (z.cols() != w.dim()) {
    fail(Errc::dimension, kModule,
         "embedding width " + std::to_string(z.cols()) + " != classifier width " + std::to_string(w.dim()));
  }
  if (static_cast<std::size_t>(z.rows()) != batch.labels.size() || z.rows() == 0) {
    fail(Errc::dimension, kModule, "batch needs one label per embedding row");
  }
  const auto b = static_cast<double>(z.rows());
  ClassifyResult out;
  out.logits = temperature * (z * w.weights.transpose());
  Matrix d_logits(z.rows(), w.classes());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto ce = ce_loss(out.logits.row(i).transpose(), batch.labels[static_cast<std::size_t>(i)]);
    out.loss += ce.loss / b;
    d_logits.row(i) = ce.grad_logits.transpose() / b;
  }
  out.grad_embeddings = temperature * (d_logits * w.weights);
  if (!w.frozen) out.grad_weights = temperature * (d_logits.transpose() * z);
  return out;
}

ShardedLoss infonce_gathered(std::span<const Batch> local_batches, const LogitScale& scale) {
  return run_shards(local_batches, scale, true);
}

ShardedLoss infonce_local_only(std::span<const Batch> local_batches, const LogitScale& scale) {
  return run_shards(local_batches, scale, false);
}

}  // namespace t4v
