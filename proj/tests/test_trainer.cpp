#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "t4v/trainer.hpp"

using namespace t4v;
using t4v::testing::error_of;

namespace {

SyntheticData small_data(std::uint64_t seed, double noise = 0.45) {
  SyntheticSpec s;
  s.groups = {3, 3};
  s.dim = 8;
  s.frames = 3;
  s.train_per_class = 12;
  s.test_per_class = 6;
  s.noise_std = noise;
  s.seed = seed;
  return generate_synthetic(s);
}

HeadSpec head_for(const FeatureStore& s, HeadKind kind) {
  HeadSpec h;
  h.kind = kind;
  h.frames = s.frames;
  h.dim = s.dim;
  h.ffn_mult = 2;
  return h;
}

TrainConfig quick(std::size_t epochs = 4) {
  TrainConfig c = desk_config();
  c.epochs = epochs;
  c.warmup_epochs = epochs > 1 ? 1 : 0;
  c.batch_size = 8;
  return c;
}

struct ThreadsEnv {
  explicit ThreadsEnv(const char* v) { setenv("T4V_THREADS", v, 1); }
  ~ThreadsEnv() { unsetenv("T4V_THREADS"); }
};

}  // namespace

TEST_CASE("lr_at examples") {
  TrainConfig c;
  c.epochs = 30;
  c.warmup_epochs = 5;
  const std::size_t spe = 7;
  CHECK(lr_at(c, 0, spe) == 0.0);
  CHECK(lr_at(c, 5.0 * spe, spe) == c.base_lr);
  CHECK(std::abs(lr_at(c, 30.0 * spe, spe) - c.min_lr) < 1e-12);
  CHECK(std::abs(lr_at(c, 17.5 * spe, spe) - 0.5 * (c.base_lr + c.min_lr)) < 1e-12);
  CHECK(std::abs(lr_at(c, 2.5 * spe, spe) - 0.5 * c.base_lr) < 1e-18);
  CHECK(error_of([&] { lr_at(c, 1, 0); }) == Errc::dimension);

  double prev = -1.0;
  for (std::size_t s = 0; s <= 35; ++s) {
    const double lr = lr_at(c, static_cast<double>(s), 1);
    if (s <= 5) CHECK(lr >= prev);
    else CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("adamw_step examples") {
  TrainConfig c;
  c.weight_decay = 0.0;

  SUBCASE("zero gradient and no decay is a fixed point") {
    Matrix p = Matrix::Constant(2, 2, 0.3);
    const Matrix before = p;
    const std::vector<Trainable> params = {{"w", &p, true, 1.0}};
    const std::vector<Matrix> grads = {Matrix::Zero(2, 2)};
    OptimState state;
    adamw_step(params, grads, state, 1e-3, c);
    CHECK((p.array() == before.array()).all());
    CHECK(state.step == 1);
  }
  SUBCASE("first step magnitude equals lr") {
    Matrix p = Matrix::Zero(1, 1);
    const std::vector<Trainable> params = {{"w", &p, true, 1.0}};
    OptimState state;
    adamw_step(params, std::vector<Matrix>{Matrix::Ones(1, 1)}, state, 1e-3, c);
    // g / (1 - b1) over sqrt(g^2 / (1 - b2)) with bias correction is 1, damped by eps.
    const double oracle = -1e-3 * 1.0 / (1.0 + 1e-8);
    CHECK(std::abs(p(0, 0) - oracle) < 1e-15);
    CHECK(std::abs(p(0, 0) + 1e-3) < 1e-9);
  }
  SUBCASE("decoupled decay alone") {
    c.weight_decay = 0.2;
    Matrix p = Matrix::Ones(1, 1);
    Matrix gain = Matrix::Ones(1, 1);
    const std::vector<Trainable> params = {{"w", &p, true, 1.0}, {"gain", &gain, false, 1.0}};
    OptimState state;
    adamw_step(params, std::vector<Matrix>{Matrix::Zero(1, 1), Matrix::Zero(1, 1)}, state, 1e-3, c);
    CHECK(std::abs(p(0, 0) - 0.9998) < 1e-15);
    CHECK(gain(0, 0) == 1.0);
  }
  SUBCASE("non-finite gradients abort before any update") {
    Matrix a = Matrix::Ones(1, 2), b = Matrix::Ones(1, 1);
    const std::vector<Trainable> params = {{"a", &a, true, 1.0}, {"b", &b, true, 1.0}};
    Matrix bad = Matrix::Zero(1, 1);
    bad(0, 0) = std::nan("");
    OptimState state;
    try {
      adamw_step(params, std::vector<Matrix>{Matrix::Ones(1, 2), bad}, state, 1e-3, c);
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::numeric);
      CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
    CHECK(a.isOnes(0.0));
    CHECK(state.step == 0);
    CHECK(error_of([&] { adamw_step(params, std::vector<Matrix>{Matrix::Ones(2, 2), b}, state, 1e-3, c); }) ==
          Errc::dimension);
  }
}

TEST_CASE("fewshot_repeat_plan examples") {
  Rng rng(1);
  auto counts = [](const std::vector<std::size_t>& plan, std::size_t n) {
    std::vector<std::size_t> c(n, 0);
    for (auto i : plan) ++c[i];
    return c;
  };
  CHECK(counts(fewshot_repeat_plan(10, 10, 1, rng), 10) == std::vector<std::size_t>(10, 1));
  CHECK(counts(fewshot_repeat_plan(3, 9, 1, rng), 3) == std::vector<std::size_t>(3, 3));
  auto four = counts(fewshot_repeat_plan(4, 10, 1, rng), 4);
  std::sort(four.rbegin(), four.rend());
  CHECK(four == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK(fewshot_repeat_plan(5, 3, 4, rng).size() == 12);
  CHECK(error_of([&] { fewshot_repeat_plan(0, 3, 4, rng); }) == Errc::sampler);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.min_lr = 1.0;
  CHECK(error_of([&] { c.validate(); }) == Errc::spec);
  c = TrainConfig{};
  c.warmup_epochs = 30;
  CHECK(error_of([&] { c.validate(); }) == Errc::spec);
  c = TrainConfig{};
  c.label_fraction = 0.0;
  CHECK(error_of([&] { c.validate(); }) == Errc::spec);
  c = TrainConfig{};
  c.shards = 3;
  CHECK(error_of([&] { c.validate(); }) == Errc::spec);

  TrainConfig d = desk_config();
  d.objective = Objective::ContrastiveLocal;
  d.shots = 4;
  d.seed = 77;
  const auto back = TrainConfig::from_json(d.to_json());
  CHECK(back.to_json() == d.to_json());
  CHECK(back.objective == Objective::ContrastiveLocal);
  CHECK(back.shots == std::optional<std::size_t>(4));
  CHECK(back.cosine_logits);
  CHECK(parse_objective("contrastive") == Objective::ContrastiveGathered);
  CHECK(error_of([] { parse_objective("hinge"); }) == Errc::usage);
}

TEST_CASE("zero epochs returns the initial head") {
  const auto data = small_data(1);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::T1D);
  auto config = quick(0);
  config.warmup_epochs = 0;
  const auto r = run(data.train, w, spec, config);
  CHECK(r.log.epochs.empty());
  Rng init_rng = Rng(config.seed).fork(1);
  const auto init = init_params(spec, init_rng);
  CHECK((r.head.at("t1d.kernel").array() == init.at("t1d.kernel").array()).all());
  CHECK(r.log.classifier_digest_after == r.log.classifier_digest_before);
}

TEST_CASE("frozen classifiers stay bit identical and learnable ones move") {
  const auto data = small_data(2);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::TTrans);
  auto config = quick(3);
  const auto frozen = run(data.train, w, spec, config);
  CHECK(frozen.log.classifier_digest_after == w.digest());
  CHECK(frozen.log.classifier_digest_before == w.digest());
  CHECK(frozen.classifier.digest() == w.digest());

  config.objective = Objective::LearnableCE;
  const auto learned = run(data.train, w, spec, config);
  CHECK(learned.log.classifier_digest_before == w.digest());
  CHECK(learned.log.classifier_digest_after != w.digest());
  CHECK_FALSE(learned.classifier.frozen);
}

TEST_CASE("learnable CE with a zero classifier learning rate reproduces frozen CE") {
  const auto data = small_data(3);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::T1D);
  auto config = quick(4);
  const auto frozen = run(data.train, w, spec, config);
  config.objective = Objective::LearnableCE;
  config.classifier_lr_scale = 0.0;
  const auto learn = run(data.train, w, spec, config);
  REQUIRE(frozen.log.epochs.size() == learn.log.epochs.size());
  CHECK(std::abs(frozen.log.initial_loss - learn.log.initial_loss) < 1e-9);
  for (std::size_t e = 0; e < frozen.log.epochs.size(); ++e)
    CHECK(std::abs(frozen.log.epochs[e].train_loss - learn.log.epochs[e].train_loss) < 1e-9);
  CHECK(learn.classifier.digest() == w.digest());
}

TEST_CASE("runs are deterministic regardless of the worker count") {
  const auto data = small_data(4);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::TTrans);
  auto config = quick(2);
  config.feature_jitter = 0.05;
  TrainResult a, b;
  {
    ThreadsEnv env("1");
    a = run(data.train, w, spec, config);
  }
  {
    ThreadsEnv env("3");
    b = run(data.train, w, spec, config);
  }
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) CHECK(a.log.epochs[e].train_loss == b.log.epochs[e].train_loss);
  for (std::size_t i = 0; i < a.head.size(); ++i)
    CHECK((a.head.tensors[i].value.array() == b.head.tensors[i].value.array()).all());

  config.seed = 99;
  const auto c = run(data.train, w, spec, config);
  CHECK(c.log.epochs.back().train_loss != a.log.epochs.back().train_loss);
}

TEST_CASE("T1D and TAP start from the same loss") {
  const auto data = small_data(5);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto config = quick(1);
  const auto tap = run(data.train, w, head_for(data.train, HeadKind::TAP), config);
  const auto t1d = run(data.train, w, head_for(data.train, HeadKind::T1D), config);
  CHECK(tap.log.initial_loss == t1d.log.initial_loss);
}

TEST_CASE("contrastive objectives train and keep the logit scale clamped") {
  const auto data = small_data(6);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::T1D);
  auto config = quick(2);
  config.objective = Objective::ContrastiveGathered;
  config.shards = 2;
  config.log_scale_init = std::log(200.0);
  const auto r = run(data.train, w, spec, config);
  CHECK(r.logit_scale.scale() <= 100.0 + 1e-9);
  CHECK(r.log.classifier_digest_after == w.digest());
  CHECK(std::isfinite(r.log.epochs.back().train_loss));

  config.objective = Objective::ContrastiveLocal;
  CHECK_NOTHROW(run(data.train, w, spec, config));
}

TEST_CASE("sampler errors") {
  const auto data = small_data(7);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::TAP);
  auto config = quick(1);

  config.shots = 0;
  CHECK(error_of([&] { run(data.train, w, spec, config); }) == Errc::sampler);
  config.shots = 50;
  CHECK(error_of([&] { run(data.train, w, spec, config); }) == Errc::insufficient_data);

  config.shots.reset();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.train.size(); ++i)
    if (data.train.labels[i] != 2) keep.push_back(i);
  CHECK(error_of([&] { run(data.train.subset(keep), w, spec, config); }) == Errc::sampler);

  config.label_fraction = 0.01;
  const auto r = run(data.train, w, spec, config);
  CHECK(r.log.epochs.size() == 1);
}

TEST_CASE("few-shot runs keep the full iteration count") {
  const auto data = small_data(8);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const auto spec = head_for(data.train, HeadKind::T1D);
  auto config = quick(2);
  config.shots = 2;
  const auto r = run(data.train, w, spec, config);
  REQUIRE(r.log.epochs.size() == 2);
  // Full data: 72 samples in batches of 8 = 9 steps per epoch.
  CHECK(r.log.epochs[0].lr == doctest::Approx(lr_at(config, 9.0, 9)));
}

TEST_CASE("textual TAP training on a separable set") {
  SyntheticSpec s;
  s.groups = {4, 4};
  s.seed = 21;
  s.noise_std = 0.3;
  s.dim = 32;
  s.frames = 4;
  const auto data = generate_synthetic(s);
  const auto spec = head_for(data.train, HeadKind::TAP);

  // Oracle: nearest prototype on the pooled features.
  const Matrix pooled = data.train.pooled();
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    Eigen::Index best = 0;
    (data.prototypes.rowwise() - pooled.row(i)).rowwise().squaredNorm().minCoeff(&best);
    correct += static_cast<std::size_t>(best) == data.train.labels[static_cast<std::size_t>(i)];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(pooled.rows()) >= 0.95);

  const TrainConfig config;  // full recipe
  const auto textual = run(data.train, build_textual(data.prototypes, data.train.class_names), spec, config);
  CHECK(textual.log.epochs.back().train_accuracy >= 0.95);

  Rng rng(21);
  const auto normal = run(data.train, build_random_normal(32, 8, rng), spec, config);
  const auto t_epochs = textual.log.epochs_to_accuracy(0.9);
  const auto n_epochs = normal.log.epochs_to_accuracy(0.9);
  REQUIRE(t_epochs.has_value());
  CHECK((!n_epochs || *t_epochs < *n_epochs));
}

TEST_CASE("run log records") {
  RunLog log;
  log.initial_loss = 2.0;
  log.epochs = {{1, 1.5, 0.2, 1e-4, 0.0}, {2, 0.4, 0.9, 1e-4, 0.0}};
  log.evals = {{2, 0.8}};
  CHECK(log.epochs_to_loss(0.5) == std::optional<std::size_t>(2));
  CHECK(log.epochs_to_loss(3.0) == std::optional<std::size_t>(0));
  CHECK_FALSE(log.epochs_to_loss(0.1).has_value());
  CHECK(log.epochs_to_accuracy(0.5) == std::optional<std::size_t>(2));

  std::istringstream in(log.to_jsonl());
  std::vector<nlohmann::json> records;
  for (std::string line; std::getline(in, line);) records.push_back(nlohmann::json::parse(line));
  REQUIRE(records.size() == 4);
  CHECK(records[0]["record"] == "run");
  CHECK(records[1]["record"] == "epoch");
  CHECK(records[2]["train_loss"] == 0.4);
  CHECK(records[3]["record"] == "eval");
}
