#include "t4v/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "t4v/parallel.hpp"

namespace t4v {

namespace {

constexpr const char* kModule = "trainer";
constexpr std::size_t kGradientChunks = 8;

bool contrastive(Objective o) { return o == Objective::ContrastiveGathered || o == Objective::ContrastiveLocal; }

void add_into(std::vector<Matrix>& acc, const HeadParams& g) {
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g.tensors[i].value;
}

std::vector<Matrix> zeros_like(const HeadParams& p) {
  std::vector<Matrix> out;
  for (const auto& t : p.tensors) out.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  return out;
}

Matrix embed_all(const HeadSpec& spec, const HeadParams& head, std::span<const Matrix> frames) {
  Matrix z(static_cast<Eigen::Index>(frames.size()), static_cast<Eigen::Index>(spec.dim));
  parallel_for(frames.size(), [&](std::size_t i) {
    z.row(static_cast<Eigen::Index>(i)) = forward(spec, head, frames[i]).transpose();
  });
  return z;
}

std::vector<Matrix> store_frames(const FeatureStore& store) {
  std::vector<Matrix> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back(store.frames_of(i));
  return out;
}

struct StepOutput {
  double loss = 0.0;
  std::size_t correct = 0;
  Matrix d_embeddings;  // b x d
  std::optional<Matrix> d_classifier;
  double d_log_scale = 0.0;
};

std::size_t argmax_row(const Matrix& m, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, best)) best = j;
  return static_cast<std::size_t>(best);
}

Vector row_norms(const Matrix& m) {
  const Vector norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0)) fail(Errc::numeric, kModule, "zero-norm row cannot be normalized (row " + std::to_string(i) + ")");
  return norms;
}

// Gradient through row normalization: dx = (dxn - xn (xn . dxn)) / |x|.
Matrix normalize_backward(const Matrix& xn, const Matrix& dxn, const Vector& norms) {
  Matrix dx(xn.rows(), xn.cols());
  for (Eigen::Index i = 0; i < xn.rows(); ++i) {
    dx.row(i) = (dxn.row(i) - xn.row(i).dot(dxn.row(i)) * xn.row(i)) / norms(i);
  }
  return dx;
}

// Loss and embedding gradients for one batch of video embeddings.
StepOutput objective_step(const Matrix& z, std::span<const std::uint32_t> labels, const ClassifierMatrix& w,
                          const Matrix& text_rows, const TrainConfig& config, const LogitScale& scale) {
  StepOutput out;
  if (!contrastive(config.objective) && !config.cosine_logits) {
    Batch batch{z, {labels.begin(), labels.end()}, std::nullopt};
    auto r = classify_batch(w, batch, config.temperature);
    out.loss = r.loss;
    out.d_embeddings = std::move(r.grad_embeddings);
    out.d_classifier = std::move(r.grad_weights);
    for (Eigen::Index i = 0; i < z.rows(); ++i) out.correct += argmax_row(r.logits, i) == labels[static_cast<std::size_t>(i)];
    return out;
  }
  const Vector norms = row_norms(z);
  const Matrix zn = norms.cwiseInverse().asDiagonal() * z;
  if (!contrastive(config.objective)) {
    ClassifierMatrix wn = w;
    const Vector w_norms = row_norms(w.weights);
    wn.weights = w_norms.cwiseInverse().asDiagonal() * w.weights;
    Batch batch{zn, {labels.begin(), labels.end()}, std::nullopt};
    auto r = classify_batch(wn, batch, config.temperature);
    out.loss = r.loss;
    out.d_embeddings = normalize_backward(zn, r.grad_embeddings, norms);
    if (r.grad_weights) out.d_classifier = normalize_backward(wn.weights, *r.grad_weights, w_norms);
    for (Eigen::Index i = 0; i < z.rows(); ++i) out.correct += argmax_row(r.logits, i) == labels[static_cast<std::size_t>(i)];
    return out;
  }
  const std::size_t shards = config.shards;
  const auto local = static_cast<Eigen::Index>(labels.size() / shards);
  std::vector<Batch> parts;
  for (std::size_t s = 0; s < shards; ++s) {
    Batch b;
    b.video_embeddings = zn.middleRows(static_cast<Eigen::Index>(s) * local, local);
    Matrix t(local, z.cols());
    for (Eigen::Index r = 0; r < local; ++r) t.row(r) = text_rows.row(labels[static_cast<std::size_t>(s) * local + r]);
    b.paired_text_embeddings = std::move(t);
    b.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(s) * local,
                    labels.begin() + static_cast<std::ptrdiff_t>(s + 1) * local);
    parts.push_back(std::move(b));
  }
  const ShardedLoss r = config.objective == Objective::ContrastiveGathered ? infonce_gathered(parts, scale)
                                                                           : infonce_local_only(parts, scale);
  out.loss = r.mean_loss;
  out.d_log_scale = r.reduced.log_scale;
  out.d_embeddings = normalize_backward(zn, r.reduced.video, norms);
  const Matrix sims = zn * text_rows.transpose();
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.correct += argmax_row(sims, i) == labels[static_cast<std::size_t>(i)];
  return out;
}

double top1(const FeatureStore& store, const HeadSpec& spec, const HeadParams& head, const Matrix& scoring_rows) {
  if (store.size() == 0) return 0.0;
  const auto frames = store_frames(store);
  const Matrix scores = embed_all(spec, head, frames) * scoring_rows.transpose();
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) hits += argmax_row(scores, i) == store.labels[static_cast<std::size_t>(i)];
  return static_cast<double>(hits) / static_cast<double>(store.size());
}

}  // namespace

std::string_view to_string(Objective objective) noexcept {
  switch (objective) {
    case Objective::FrozenCE: return "frozen-ce";
    case Objective::LearnableCE: return "learnable-ce";
    case Objective::ContrastiveGathered: return "contrastive-gathered";
    case Objective::ContrastiveLocal: return "contrastive-local";
  }
  return "unknown";
}

Objective parse_objective(std::string_view text) {
  if (text == "frozen-ce") return Objective::FrozenCE;
  if (text == "learnable-ce") return Objective::LearnableCE;
  if (text == "contrastive-gathered" || text == "contrastive") return Objective::ContrastiveGathered;
  if (text == "contrastive-local") return Objective::ContrastiveLocal;
  fail(Errc::usage, kModule, "unknown objective '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (!(min_lr <= base_lr) || !(min_lr >= 0.0)) fail(Errc::spec, kModule, "need 0 <= min_lr <= base_lr");
  if (epochs > 0 && warmup_epochs >= epochs) fail(Errc::spec, kModule, "warmup_epochs must be < epochs");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) fail(Errc::spec, kModule, "label_fraction must lie in (0, 1]");
  if (batch_size < 1) fail(Errc::spec, kModule, "batch_size must be >= 1");
  if (shards < 1 || batch_size % shards != 0) fail(Errc::spec, kModule, "batch_size must be a multiple of shards");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail(Errc::spec, kModule, "Adam betas must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !(feature_jitter >= 0.0) || !(classifier_lr_scale >= 0.0)) {
    fail(Errc::spec, kModule, "weight decay, jitter and classifier lr scale must be >= 0");
  }
  if (!(log_scale_clamp > 0.0)) fail(Errc::spec, kModule, "logit scale clamp must be > 0");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = epochs;
  j["warmup_epochs"] = warmup_epochs;
  j["base_lr"] = base_lr;
  j["min_lr"] = min_lr;
  j["schedule"] = "cosine";
  j["optimizer"] = "adamw";
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["batch_size"] = batch_size;
  j["objective"] = std::string(to_string(objective));
  j["seed"] = seed;
  j["label_fraction"] = label_fraction;
  j["shots"] = shots ? nlohmann::ordered_json(*shots) : nlohmann::ordered_json(nullptr);
  j["shards"] = shards;
  j["temperature"] = temperature;
  j["cosine_logits"] = cosine_logits;
  j["classifier_lr_scale"] = classifier_lr_scale;
  j["feature_jitter"] = feature_jitter;
  j["log_scale_init"] = log_scale_init;
  j["log_scale_clamp"] = log_scale_clamp;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("objective")) c.objective = parse_objective(j["objective"].get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.label_fraction = j.value("label_fraction", c.label_fraction);
  if (j.contains("shots") && !j["shots"].is_null()) c.shots = j["shots"].get<std::size_t>();
  c.shards = j.value("shards", c.shards);
  c.temperature = j.value("temperature", c.temperature);
  c.cosine_logits = j.value("cosine_logits", c.cosine_logits);
  c.classifier_lr_scale = j.value("classifier_lr_scale", c.classifier_lr_scale);
  c.feature_jitter = j.value("feature_jitter", c.feature_jitter);
  c.log_scale_init = j.value("log_scale_init", c.log_scale_init);
  c.log_scale_clamp = j.value("log_scale_clamp", c.log_scale_clamp);
  return c;
}

TrainConfig desk_config() {
  TrainConfig c;
  c.batch_size = 32;
  c.base_lr = 3e-4;
  c.min_lr = 3e-5;
  c.cosine_logits = true;
  c.temperature = 12.0;
  return c;
}

double lr_at(const TrainConfig& config, double step, std::size_t steps_per_epoch) {
  if (steps_per_epoch < 1) fail(Errc::dimension, kModule, "steps_per_epoch must be >= 1");
  const double warm = static_cast<double>(config.warmup_epochs * steps_per_epoch);
  const double total = static_cast<double>(config.epochs * steps_per_epoch);
  if (warm > 0.0 && step < warm) return config.base_lr * step / warm;
  if (total <= warm) return config.base_lr;
  const double progress = std::clamp((step - warm) / (total - warm), 0.0, 1.0);
  return config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<const Trainable> params, std::span<const Matrix> grads, OptimState& state, double lr,
                const TrainConfig& config) {
  if (params.size() != grads.size()) fail(Errc::dimension, kModule, "parameter / gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].value->rows() || grads[i].cols() != params[i].value->cols()) {
      fail(Errc::dimension, kModule, "gradient shape mismatch for '" + params[i].name + "'");
    }
    if (!grads[i].allFinite()) {
      std::ostringstream os;
      os << "non-finite gradient for '" << params[i].name << "' at optimizer step " << state.step + 1;
      fail(Errc::numeric, kModule, os.str());
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& g : grads) {
      state.first_moment.push_back(Matrix::Zero(g.rows(), g.cols()));
      state.second_moment.push_back(Matrix::Zero(g.rows(), g.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) fail(Errc::dimension, kModule, "optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    const double step_lr = lr * params[i].lr_scale;
    if (params[i].decay && config.weight_decay > 0.0) p -= step_lr * config.weight_decay * p;
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = config.beta1 * m + (1.0 - config.beta1) * grads[i];
    v = config.beta2 * v + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
    p.array() -= step_lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.adam_eps);
  }
}

std::vector<std::size_t> fewshot_repeat_plan(std::size_t n_samples, std::size_t target_iters, std::size_t batch,
                                             Rng& rng) {
  if (n_samples < 1) fail(Errc::sampler, kModule, "repeat plan needs at least one sample");
  const std::size_t total = target_iters * batch;
  std::vector<std::size_t> plan;
  plan.reserve(total);
  while (plan.size() < total) {
    for (auto i : rng.permutation(n_samples)) {
      if (plan.size() == total) break;
      plan.push_back(i);
    }
  }
  return plan;
}

std::optional<std::size_t> RunLog::epochs_to_loss(double threshold) const {
  if (initial_loss <= threshold) return 0;
  for (const auto& e : epochs)
    if (e.train_loss <= threshold) return e.epoch;
  return std::nullopt;
}

std::optional<std::size_t> RunLog::epochs_to_accuracy(double threshold) const {
  for (const auto& e : epochs)
    if (e.train_accuracy >= threshold) return e.epoch;
  return std::nullopt;
}

std::string RunLog::to_jsonl() const {
  std::ostringstream os;
  nlohmann::ordered_json head;
  head["record"] = "run";
  head["config"] = config;
  head["initial_loss"] = initial_loss;
  head["classifier_digest_before"] = classifier_digest_before;
  head["classifier_digest_after"] = classifier_digest_after;
  head["notes"] = notes;
  os << head.dump() << "\n";
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["record"] = "epoch";
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_accuracy"] = e.train_accuracy;
    j["lr"] = e.lr;
    j["wall_seconds"] = e.wall_seconds;
    os << j.dump() << "\n";
  }
  for (const auto& e : evals) {
    nlohmann::ordered_json j;
    j["record"] = "eval";
    j["epoch"] = e.epoch;
    j["top1"] = e.top1;
    os << j.dump() << "\n";
  }
  return os.str();
}

double dataset_loss(const FeatureStore& features, const ClassifierMatrix& classifier, const HeadSpec& spec,
                    const HeadParams& head, const TrainConfig& config, const LogitScale& scale) {
  if (features.size() == 0) return 0.0;
  const auto frames = store_frames(features);
  const Matrix z = embed_all(spec, head, frames);
  const Matrix text_rows = contrastive(config.objective) ? normalize_rows(classifier.weights) : Matrix();
  if (!contrastive(config.objective)) {
    return objective_step(z, features.labels, classifier, text_rows, config, scale).loss;
  }
  const std::size_t b = std::min(config.batch_size, features.size());
  TrainConfig local = config;
  if (b < config.batch_size) local.shards = 1;
  const std::size_t batches = features.size() / b;
  double total = 0.0;
  for (std::size_t k = 0; k < batches; ++k) {
    const std::span<const std::uint32_t> labels(features.labels.data() + k * b, b);
    total += objective_step(z.middleRows(static_cast<Eigen::Index>(k * b), static_cast<Eigen::Index>(b)), labels,
                            classifier, text_rows, local, scale)
                 .loss;
  }
  return total / static_cast<double>(batches);
}

TrainResult run(const FeatureStore& features, const ClassifierMatrix& classifier, const HeadSpec& spec,
                const TrainConfig& config, const RunOptions& options) {
  spec.validate();
  config.validate();
  features.validate();
  if (features.dim != spec.dim || features.frames != spec.frames) {
    fail(Errc::dimension, kModule, "feature store shape does not match the head spec");
  }
  if (static_cast<std::size_t>(classifier.dim()) != spec.dim) {
    fail(Errc::dimension, kModule, "classifier width " + std::to_string(classifier.dim()) + " != head width " + std::to_string(spec.dim));
  }
  if (static_cast<std::size_t>(classifier.classes()) != features.num_classes()) {
    fail(Errc::dimension, kModule, "classifier rows != number of classes in the store");
  }

  Rng root(config.seed);
  Rng init_rng = root.fork(1);
  TrainResult result;
  result.head = init_params(spec, init_rng);
  result.classifier = classifier;
  result.classifier.frozen = config.objective != Objective::LearnableCE;
  result.logit_scale = {config.log_scale_init, config.log_scale_clamp};
  result.logit_scale.clamp();
  auto& log = result.log;
  log.config = config.to_json();
  log.notes = classifier.notes;
  log.classifier_digest_before = result.classifier.digest();

  FeatureStore train = features;
  if (config.label_fraction < 1.0) {
    Rng r = root.fork(2);
    train = stratified_fraction(train, config.label_fraction, r);
  }
  if (config.shots) {
    if (*config.shots == 0) fail(Errc::sampler, kModule, "0-shot has no training data; use the zero-shot protocol");
    Rng r = root.fork(3);
    train = k_shot_subset(train, *config.shots, r);
  }
  for (const auto& members : train.indices_by_class()) {
    if (members.empty()) fail(Errc::sampler, kModule, "a class has no training samples after sampling");
  }

  const std::size_t batch = config.batch_size;
  const bool drop_last = contrastive(config.objective);
  if (drop_last && train.size() < batch) fail(Errc::sampler, kModule, "fewer samples than one contrastive batch");
  const std::size_t full_iters = drop_last ? features.size() / batch : (features.size() + batch - 1) / batch;
  std::size_t iters = drop_last ? train.size() / batch : (train.size() + batch - 1) / batch;
  if (config.shots) iters = full_iters;

  const Matrix text_rows = contrastive(config.objective) ? normalize_rows(result.classifier.weights) : Matrix();
  log.initial_loss = dataset_loss(train, result.classifier, spec, result.head, config, result.logit_scale);
  if (!std::isfinite(log.initial_loss)) fail(Errc::numeric, kModule, "initial loss is not finite");
  if (config.epochs == 0) {
    log.classifier_digest_after = result.classifier.digest();
    return result;
  }

  std::vector<Trainable> trainables;
  for (auto& t : result.head.tensors) trainables.push_back({t.name, &t.value, decays(t.name), 1.0});
  const bool learn_classifier = config.objective == Objective::LearnableCE;
  if (learn_classifier) {
    trainables.push_back({"classifier.weights", &result.classifier.weights, true, config.classifier_lr_scale});
  }
  Matrix log_scale_tensor = Matrix::Constant(1, 1, result.logit_scale.log_scale);
  if (contrastive(config.objective)) trainables.push_back({"logit_scale", &log_scale_tensor, false, 1.0});

  const auto train_frames = store_frames(train);
  OptimState opt;
  std::size_t global_step = 0;
  const bool head_has_params = result.head.size() > 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng epoch_rng = root.fork(1000 + epoch);
    const std::vector<std::size_t> order =
        config.shots ? fewshot_repeat_plan(train.size(), iters, batch, epoch_rng) : epoch_rng.permutation(train.size());
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    double lr = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const std::size_t begin = it * batch;
      const std::size_t end = std::min(begin + batch, order.size());
      const std::size_t b = end - begin;
      std::vector<Matrix> frames(b);
      std::vector<std::uint32_t> labels(b);
      for (std::size_t k = 0; k < b; ++k) {
        frames[k] = train_frames[order[begin + k]];
        labels[k] = train.labels[order[begin + k]];
        if (config.feature_jitter > 0.0) frames[k] += config.feature_jitter * gaussian_matrix(frames[k].rows(), frames[k].cols(), epoch_rng);
      }
      const Matrix z = embed_all(spec, result.head, frames);
      const StepOutput step = objective_step(z, labels, result.classifier, text_rows, config, result.logit_scale);
      if (!std::isfinite(step.loss)) {
        fail(Errc::numeric, kModule, "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(it));
      }

      std::vector<Matrix> grads;
      if (head_has_params) {
        const std::size_t chunks = std::min(kGradientChunks, b);
        std::vector<std::vector<Matrix>> partial(chunks, zeros_like(result.head));
        parallel_for(chunks, [&](std::size_t c) {
          for (std::size_t k = c * b / chunks; k < (c + 1) * b / chunks; ++k) {
            add_into(partial[c], backward(spec, result.head, frames[k], step.d_embeddings.row(static_cast<Eigen::Index>(k)).transpose()).params);
          }
        });
        grads = std::move(partial[0]);
        for (std::size_t c = 1; c < chunks; ++c)
          for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += partial[c][i];
      }
      if (learn_classifier) grads.push_back(*step.d_classifier);
      if (contrastive(config.objective)) grads.push_back(Matrix::Constant(1, 1, step.d_log_scale));

      lr = lr_at(config, static_cast<double>(global_step + 1), iters);
      if (!trainables.empty()) adamw_step(trainables, grads, opt, lr, config);
      ++global_step;
      if (contrastive(config.objective)) {
        result.logit_scale.log_scale = log_scale_tensor(0, 0);
        result.logit_scale.clamp();
        log_scale_tensor(0, 0) = result.logit_scale.log_scale;
      }
      loss_sum += step.loss * static_cast<double>(b);
      seen += b;
      correct += step.correct;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(rec);
    if (options.eval_store) {
      const Matrix scoring = contrastive(config.objective) || config.cosine_logits ? normalize_rows(result.classifier.weights)
                                                                                   : result.classifier.weights;
      log.evals.push_back({epoch, top1(*options.eval_store, spec, result.head, scoring)});
    }
  }
  if (!result.head.all_finite()) fail(Errc::numeric, kModule, "head parameters became non-finite");
  log.classifier_digest_after = result.classifier.digest();
  return result;
}

}  // namespace t4v
