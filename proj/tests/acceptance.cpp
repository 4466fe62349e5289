// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "t4v/classifier.hpp"
#include "t4v/cli.hpp"
#include "t4v/datastore.hpp"
#include "t4v/headnet.hpp"
#include "t4v/objectives.hpp"
#include "t4v/protocols.hpp"
#include "t4v/trainer.hpp"

using namespace t4v;
using t4v::testing::central_difference;
using t4v::testing::infonce_direct;
using t4v::testing::lda_oracle;
using t4v::testing::max_gradient_error;
using t4v::testing::relative_error;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::Index pick(Rng& rng, Eigen::Index lo, Eigen::Index hi) {
  return lo + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<Batch> shard(const Matrix& zv, const Matrix& zt, Eigen::Index m, Eigen::Index n) {
  std::vector<Batch> out;
  for (Eigen::Index i = 0; i < m; ++i) {
    Batch b;
    b.video_embeddings = zv.middleRows(i * n, n);
    b.paired_text_embeddings = zt.middleRows(i * n, n);
    b.labels.assign(static_cast<std::size_t>(n), 0);
    out.push_back(std::move(b));
  }
  return out;
}

// ---- 1: gradients ----------------------------------------------------------

constexpr int kGradInstances = 20;
constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-4;

double head_instance(HeadKind kind, Rng& rng) {
  HeadSpec spec;
  spec.kind = kind;
  spec.frames = static_cast<std::size_t>(pick(rng, 1, 5));
  spec.dim = static_cast<std::size_t>(pick(rng, 2, 6));
  spec.layers = 1;
  spec.heads = 1;
  spec.kernel = kind == HeadKind::T1D ? static_cast<std::size_t>(2 * pick(rng, 0, 2) + 1) : 3;
  spec.ffn_mult = 2;
  HeadParams p = init_params(spec, rng);
  for (auto& t : p.tensors) {
    t.value = 0.4 * gaussian_matrix(t.value.rows(), t.value.cols(), rng);
    if (t.name.ends_with("gamma")) t.value.array() += 1.0;
  }
  Matrix frames = gaussian_matrix(static_cast<Eigen::Index>(spec.frames), static_cast<Eigen::Index>(spec.dim), rng);
  const Vector up = gaussian_matrix(static_cast<Eigen::Index>(spec.dim), 1, rng);
  const auto g = backward(spec, p, frames, up);
  auto f = [&] { return up.dot(forward(spec, p, frames)); };
  double worst = max_gradient_error(f, frames, g.input, kFdEps);
  for (std::size_t i = 0; i < p.size(); ++i)
    worst = std::max(worst, max_gradient_error(f, p.tensors[i].value, g.params.tensors[i].value, kFdEps));
  return worst;
}

double learnable_ce_instance(Rng& rng) {
  const Eigen::Index c = pick(rng, 2, 6), d = pick(rng, 2, 6), b = pick(rng, 1, 6);
  ClassifierMatrix w;
  w.weights = gaussian_matrix(c, d, rng);
  w.frozen = false;
  w.class_names.resize(static_cast<std::size_t>(c));
  Batch batch;
  batch.video_embeddings = gaussian_matrix(b, d, rng);
  for (Eigen::Index i = 0; i < b; ++i) batch.labels.push_back(static_cast<std::uint32_t>(rng.uniform_index(c)));
  const double temperature = 0.5 + 2.0 * rng.uniform();
  const auto r = classify_batch(w, batch, temperature);
  auto f = [&] { return classify_batch(w, batch, temperature).loss; };
  return std::max(max_gradient_error(f, w.weights, *r.grad_weights, kFdEps),
                  max_gradient_error(f, batch.video_embeddings, r.grad_embeddings, kFdEps));
}

double infonce_instance(Rng& rng) {
  const Eigen::Index m = pick(rng, 1, 3), n = pick(rng, 1, 4), d = pick(rng, 3, 6);
  Matrix zv = normalize_rows(gaussian_matrix(m * n, d, rng));
  Matrix zt = normalize_rows(gaussian_matrix(m * n, d, rng));
  LogitScale scale;
  scale.log_scale = 2.0 * rng.uniform();
  const auto r = infonce_gathered(shard(zv, zt, m, n), scale);
  auto f = [&] { return infonce_gathered(shard(zv, zt, m, n), scale).mean_loss; };
  double worst = std::max(max_gradient_error(f, zv, r.reduced.video, kFdEps),
                          max_gradient_error(f, zt, r.reduced.text, kFdEps));
  return std::max(worst, relative_error(r.reduced.log_scale, central_difference(f, scale.log_scale, kFdEps)));
}

Verdict gradients() {
  Rng rng(101);
  std::vector<std::pair<std::string, double>> worst;
  for (HeadKind kind : {HeadKind::TAP, HeadKind::T1D, HeadKind::TTrans}) {
    double w = 0.0;
    for (int i = 0; i < kGradInstances; ++i) w = std::max(w, head_instance(kind, rng));
    worst.emplace_back(std::string(to_string(kind)), w);
  }
  double ce = 0.0, nce = 0.0;
  for (int i = 0; i < kGradInstances; ++i) ce = std::max(ce, learnable_ce_instance(rng));
  for (int i = 0; i < kGradInstances; ++i) nce = std::max(nce, infonce_instance(rng));
  worst.emplace_back("learnable-ce", ce);
  worst.emplace_back("infonce", nce);

  Verdict v{true, fmt("%d instances each, worst rel err:", kGradInstances)};
  for (const auto& [name, w] : worst) {
    v.detail += fmt(" %s %.1e", name.c_str(), w);
    v.pass = v.pass && w < kFdTol;
  }
  return v;
}

// ---- 2: gather equivalence --------------------------------------------------

Verdict gather() {
  Rng rng(202);
  double worst = 0.0;
  int cases = 0;
  for (Eigen::Index m : {1, 2, 4}) {
    for (Eigen::Index n : {1, 2, 4, 8}) {
      if (m * n > 32) continue;
      const Matrix zv = normalize_rows(gaussian_matrix(m * n, 16, rng));
      const Matrix zt = normalize_rows(gaussian_matrix(m * n, 16, rng));
      LogitScale scale;
      scale.log_scale = 3.0 * rng.uniform();
      const auto r = infonce_gathered(shard(zv, zt, m, n), scale);
      const auto o = infonce_direct(zv, zt, scale.log_scale);
      worst = std::max({worst, std::abs(r.mean_loss - o.loss), (r.reduced.video - o.d_video).cwiseAbs().maxCoeff(),
                        (r.reduced.text - o.d_text).cwiseAbs().maxCoeff(),
                        std::abs(r.reduced.log_scale - o.d_log_scale)});
      ++cases;
    }
  }
  return {cases == 12 && worst <= 1e-9, fmt("%d topologies, worst abs diff %.1e", cases, worst)};
}

// ---- 3: frozen contract -----------------------------------------------------

Verdict frozen_contract() {
  SyntheticSpec s;
  s.groups = {3, 3};
  s.dim = 8;
  s.frames = 3;
  s.train_per_class = 12;
  s.test_per_class = 4;
  s.seed = 3;
  const auto data = generate_synthetic(s);
  const auto w = build_textual(data.prototypes, data.train.class_names);
  HeadSpec h;
  h.kind = HeadKind::T1D;
  h.frames = 3;
  h.dim = 8;
  TrainConfig config = desk_config();
  config.batch_size = 8;
  config.seed = 3;

  const auto frozen = run(data.train, w, h, config);
  config.objective = Objective::LearnableCE;
  const auto learned = run(data.train, w, h, config);

  const bool ok = frozen.log.epochs.size() == 30 && learned.log.epochs.size() == 30 &&
                  frozen.log.classifier_digest_before == w.digest() &&
                  frozen.log.classifier_digest_after == w.digest() && frozen.classifier.digest() == w.digest() &&
                  learned.log.classifier_digest_after != w.digest() && learned.classifier.digest() != w.digest();
  return {ok, fmt("FrozenCE %s -> %s, LearnableCE -> %s", frozen.log.classifier_digest_before.substr(0, 12).c_str(),
                  frozen.log.classifier_digest_after.substr(0, 12).c_str(),
                  learned.log.classifier_digest_after.substr(0, 12).c_str())};
}

// ---- 4: LDA oracle ----------------------------------------------------------

Verdict lda() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = static_cast<std::size_t>(pick(rng, 2, 8));
    const Eigen::Index d = pick(rng, 4, 32);
    const std::size_t per = std::min<std::size_t>(kDefaultLdaPerClassCap, static_cast<std::size_t>(d) / c + 6 +
                                                                               rng.uniform_index(10));
    const Matrix means = 2.0 * gaussian_matrix(static_cast<Eigen::Index>(c), d, rng);
    FeatureStore store;
    store.frames = 1;
    store.dim = static_cast<std::size_t>(d);
    store.payload = gaussian_matrix(static_cast<Eigen::Index>(c * per), d, rng);
    for (std::size_t i = 0; i < c * per; ++i) {
      store.labels.push_back(static_cast<std::uint32_t>(i % c));
      store.payload.row(static_cast<Eigen::Index>(i)) += means.row(static_cast<Eigen::Index>(i % c));
    }
    quantize_to_f32(store.payload);
    for (std::size_t k = 0; k < c; ++k) store.class_names.push_back("c" + std::to_string(k));

    const Matrix oracle = lda_oracle(store.payload, store.labels, static_cast<Eigen::Index>(c));
    const auto w = build_lda(store);
    worst = std::max(worst, (w.weights - oracle).cwiseAbs().maxCoeff() / oracle.cwiseAbs().maxCoeff());
  }

  FeatureStore hand;
  hand.frames = 1;
  hand.dim = 2;
  hand.payload.resize(4, 2);
  hand.payload << 0, 0, 2, 0, 0, 2, 0, 0;
  hand.labels = {0, 0, 1, 1};
  hand.class_names = {"a", "b"};
  const double hand_err = (build_lda(hand).weights - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff();
  return {worst < 1e-8 && hand_err < 1e-12,
          fmt("50 datasets, worst rel err %.1e; hand example err %.1e", worst, hand_err)};
}

// ---- 5 and 6: frozen classifier ordering and convergence --------------------

SyntheticSpec desk_spec(std::uint64_t seed, double misalignment) {
  SyntheticSpec s;
  s.groups = {8, 8};
  s.rho_in = 0.6;
  s.rho_out = 0.1;
  s.noise_std = 0.45;
  s.dim = 32;
  s.frames = 4;
  s.train_per_class = 40;
  s.test_per_class = 40;
  s.seed = seed;
  s.misalignment = misalignment;
  return s;
}

HeadSpec desk_head() {
  HeadSpec h;
  h.kind = HeadKind::TTrans;
  h.frames = 4;
  h.dim = 32;
  return h;
}

struct SeedOutcome {
  double nearest = 0.0;
  double top1[4] = {};  // textual, lda, orthogonal, normal
  std::optional<std::size_t> textual_epochs, normal_epochs;
};

std::vector<SeedOutcome> ordering_runs() {
  std::vector<SeedOutcome> out;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto s = desk_spec(seed, 0.0);
    const auto data = generate_synthetic(s);
    SeedOutcome o;
    const Matrix nearest = data.test.pooled() * data.prototypes.transpose();
    o.nearest = topk_accuracy(nearest, data.test.labels, 1);

    TrainConfig config = desk_config();
    config.seed = seed;
    Rng rng(seed + 100);
    std::vector<ClassifierMatrix> ws;
    ws.push_back(build_textual(data.prototypes, data.train.class_names));
    ws.push_back(build_lda(data.train));
    ws.push_back(build_random_orthogonal(32, 16, rng));
    ws.push_back(build_random_normal(32, 16, rng));
    for (std::size_t i = 0; i < ws.size(); ++i) {
      ws[i].class_names = data.train.class_names;
      const auto r = run(data.train, ws[i], desk_head(), config);
      o.top1[i] = evaluate(data.test, desk_head(), r.head, r.classifier, config.cosine_logits).top1;
      if (i == 0) o.textual_epochs = r.log.epochs_to_loss(0.5);
      if (i == 3) o.normal_epochs = r.log.epochs_to_loss(0.5);
    }
    out.push_back(o);
  }
  return out;
}

// Accuracies within this many absolute points count as approximately equal.
constexpr double kApproxEqual = 0.10;

Verdict ordering(const std::vector<SeedOutcome>& runs) {
  int held = 0;
  std::string detail;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& o = runs[s];
    const double t = o.top1[0], l = o.top1[1], orth = o.top1[2], n = o.top1[3];
    const bool ok = t >= l && l > orth && l > n && std::abs(orth - n) <= kApproxEqual && t - n >= 0.10;
    held += ok ? 1 : 0;
    detail += fmt("%sseed %zu nearest-proto %.3f textual %.3f lda %.3f orth %.3f normal %.3f%s", s ? "; " : "", s,
                  o.nearest, t, l, orth, n, ok ? "" : " (violated)");
  }
  return {held >= 2, fmt("%d/3 seeds hold; ", held) + detail};
}

std::string epochs_text(const std::optional<std::size_t>& e) { return e ? std::to_string(*e) : "not reached"; }

Verdict convergence(const std::vector<SeedOutcome>& runs) {
  bool ok = true;
  std::string detail = "epochs to train loss 0.5:";
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto& o = runs[s];
    ok = ok && o.textual_epochs && (!o.normal_epochs || *o.textual_epochs < *o.normal_epochs);
    detail += fmt(" seed %zu textual %s normal %s;", s, epochs_text(o.textual_epochs).c_str(),
                  epochs_text(o.normal_epochs).c_str());
  }
  detail.pop_back();
  return {ok, detail};
}

// ---- 7: few-shot ordering ---------------------------------------------------

Verdict fewshot() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto data = generate_synthetic(desk_spec(seed, 2.0));
    const auto w = build_textual(data.prototypes, data.train.class_names);
    const HeadSpec h = desk_head();
    TrainConfig config = desk_config();
    config.seed = seed;

    // K = 0: the head training would start from, scored by the zero-shot protocol.
    Rng init = Rng(seed).fork(1);
    Rng zr(seed);
    ZeroShotOptions zo;
    zo.half = false;
    const auto zero = zero_shot(data.test, w, h, init_params(h, init), zr, zo);
    std::vector<double> acc = {zero.top1};
    for (std::size_t k : {1, 2, 0}) {
      TrainConfig c = config;
      if (k > 0) c.shots = k;
      const auto r = run(data.train, w, h, c);
      acc.push_back(evaluate(data.test, h, r.head, r.classifier, c.cosine_logits).top1);
    }
    const bool mono = zero.protocol == Protocol::ZeroShotFull && std::is_sorted(acc.begin(), acc.end());
    ok = ok && mono;
    detail += fmt("%sseed %llu K0 %.3f K1 %.3f K2 %.3f all %.3f", seed ? "; " : "",
                  static_cast<unsigned long long>(seed), acc[0], acc[1], acc[2], acc[3]);
  }
  return {ok, detail};
}

// ---- 8: zero-shot determinism -----------------------------------------------

Verdict determinism() {
  const auto data = generate_synthetic(desk_spec(8, 0.0));
  const auto w = build_textual(data.prototypes, data.train.class_names);
  const HeadSpec h = desk_head();
  Rng init(8);
  const auto head = init_params(h, init);
  Rng a(77), b(77);
  const auto first = zero_shot(data.test, w, h, head, a);
  const auto second = zero_shot(data.test, w, h, head, b);

  const std::size_t half = data.test.num_classes() / 2;
  bool ok = first.protocol == Protocol::ZeroShotHalf && first.repeats == 10 && first.subsets.size() == 10 &&
            first.repeat_top1.size() == 10 && first.std.has_value() && second.std.has_value() &&
            first.mean == second.mean && *first.std == *second.std && first.subsets == second.subsets;
  for (const auto& s : first.subsets) ok = ok && s.size() == half;
  double mean = 0.0, var = 0.0;
  for (double t : first.repeat_top1) mean += t / 10.0;
  for (double t : first.repeat_top1) var += (t - mean) * (t - mean) / 10.0;
  ok = ok && std::abs(mean - first.mean) < 1e-12 && std::abs(std::sqrt(var) - first.std.value_or(-1.0)) < 1e-12;
  return {ok, fmt("mean %.4f std %.4f over %zu subsets of %zu classes (both runs)", first.mean, first.std.value_or(0.0),
                  first.subsets.size(), half)};
}

// ---- 9: metric oracles ------------------------------------------------------

bool brute_in_topk(const Matrix& s, Eigen::Index row, Eigen::Index label, std::size_t k) {
  std::size_t ahead = 0;
  for (Eigen::Index j = 0; j < s.cols(); ++j)
    if (s(row, j) > s(row, label) || (s(row, j) == s(row, label) && j < label)) ++ahead;
  return ahead < k;
}

double brute_map(const Matrix& s, const std::vector<std::uint32_t>& labels) {
  double sum = 0.0;
  int classes = 0;
  for (Eigen::Index k = 0; k < s.cols(); ++k) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(s.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return s(a, k) > s(b, k); });
    double hits = 0.0, ap = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[static_cast<std::size_t>(order[r])] == static_cast<std::uint32_t>(k)) {
        hits += 1.0;
        ap += hits / static_cast<double>(r + 1);
      }
    }
    if (hits > 0.0) {
      sum += ap / hits;
      ++classes;
    }
  }
  return sum / classes;
}

Verdict metrics() {
  Rng rng(909);
  int topk_mismatch = 0;
  double map_worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index n = pick(rng, 1, 20), c = pick(rng, 1, 10);
    Matrix s = gaussian_matrix(n, c, rng);
    // Every third matrix is coarsely quantized so ties occur.
    if (trial % 3 == 0) s = (2.0 * s).array().round().matrix();
    std::vector<std::uint32_t> labels;
    for (Eigen::Index i = 0; i < n; ++i) labels.push_back(static_cast<std::uint32_t>(rng.uniform_index(c)));
    for (std::size_t k = 1; k <= static_cast<std::size_t>(c); ++k) {
      int hits = 0;
      for (Eigen::Index i = 0; i < n; ++i) hits += brute_in_topk(s, i, labels[static_cast<std::size_t>(i)], k);
      if (topk_accuracy(s, labels, k) != static_cast<double>(hits) / static_cast<double>(n)) ++topk_mismatch;
    }
    map_worst = std::max(map_worst, std::abs(mean_average_precision(s, labels).value - brute_map(s, labels)));
  }
  // Class 0 ranks positives at 1 and 3 (AP 5/6); class 1 is ranked perfectly (AP 1).
  Matrix hand(3, 2);
  hand << 0.9, 0.0, 0.5, 1.0, 0.1, 0.0;
  const std::vector<std::uint32_t> hand_labels = {0, 1, 0};
  const double hand_ap = 2.0 * mean_average_precision(hand, hand_labels).value - 1.0;
  const bool ok = topk_mismatch == 0 && map_worst <= 1e-12 && std::abs(hand_ap - 5.0 / 6.0) <= 1e-12;
  return {ok, fmt("1000 matrices: topk mismatches %d, worst mAP diff %.1e, hand AP %.6f", topk_mismatch, map_worst,
                  hand_ap)};
}

// ---- 10: format robustness --------------------------------------------------

FeatureStore random_store(Rng& rng) {
  FeatureStore s;
  const auto n = static_cast<std::size_t>(pick(rng, 1, 12));
  s.frames = static_cast<std::size_t>(pick(rng, 1, 4));
  s.dim = static_cast<std::size_t>(pick(rng, 1, 6));
  const auto c = static_cast<std::size_t>(pick(rng, 1, 5));
  s.payload = 3.0 * gaussian_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s.frames * s.dim), rng);
  quantize_to_f32(s.payload);
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(static_cast<std::uint32_t>(rng.uniform_index(c)));
  for (std::size_t k = 0; k < c; ++k) s.class_names.push_back("k" + std::to_string(k));
  return s;
}

Verdict format_robustness() {
  Rng rng(1010);
  const auto dir = t4v::testing::scratch_dir("format");
  int exact = 0, flips = 0, caught = 0, cli_runs = 0, cli_exit2 = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto store = random_store(rng);
    const auto bytes = encode_store(store);
    const auto path = dir / ("s" + std::to_string(trial) + ".t4v");
    write_store(store, path);
    const auto back = read_store(path, store.class_names);
    if (encode_store(back) == bytes && back.labels == store.labels && back.frames == store.frames &&
        back.dim == store.dim && (back.payload.array() == store.payload.array()).all())
      ++exact;

    const std::size_t start = 20 + 4 * store.size(), end = bytes.size() - 4;
    for (std::size_t at = start; at < end; ++at) {
      auto bad = bytes;
      bad[at] ^= static_cast<unsigned char>(1 + rng.uniform_index(255));
      ++flips;
      try {
        decode_store(bad, store.class_names);
      } catch (const Error& e) {
        if (e.code() == Errc::format) ++caught;
      }
      if (at == start + (end - start) / 2 && trial % 5 == 0) {
        const auto bad_path = dir / ("bad" + std::to_string(trial) + ".t4v");
        std::ofstream(bad_path, std::ios::binary)
            .write(reinterpret_cast<const char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
        std::ostringstream out, err;
        ++cli_runs;
        if (cli::dispatch({"inspect", bad_path.string()}, out, err) == 2 &&
            err.str().find("CRC mismatch") != std::string::npos)
          ++cli_exit2;
      }
    }
  }
  return {exact == 100 && caught == flips && cli_exit2 == cli_runs && cli_runs == 20,
          fmt("%d/100 bit-exact, %d/%d corruptions caught, inspect exit 2 on %d/%d", exact, caught, flips, cli_exit2,
              cli_runs)};
}

// ---- 11: learning-rate schedule ---------------------------------------------

Verdict schedule() {
  Rng rng(1111);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    TrainConfig c;
    c.epochs = static_cast<std::size_t>(pick(rng, 2, 40));
    c.warmup_epochs = static_cast<std::size_t>(pick(rng, 0, static_cast<Eigen::Index>(c.epochs) - 1));
    c.base_lr = 1e-5 + 1e-3 * rng.uniform();
    c.min_lr = c.base_lr * 0.5 * rng.uniform();
    const auto steps = static_cast<std::size_t>(pick(rng, 1, 50));
    const double warm = static_cast<double>(c.warmup_epochs * steps);
    const double total = static_cast<double>(c.epochs * steps);
    worst = std::max({worst, std::abs(lr_at(c, warm, steps) - c.base_lr),
                      std::abs(lr_at(c, total, steps) - c.min_lr),
                      std::abs(lr_at(c, 0.5 * (warm + total), steps) - 0.5 * (c.base_lr + c.min_lr))});
  }
  return {worst <= 1e-12, fmt("20 configs, worst abs diff %.1e", worst)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const std::function<Verdict()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s  %s  [%.1fs]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  };

  report(1, gradients);
  report(2, gather);
  report(3, frozen_contract);
  report(4, lda);
  std::vector<SeedOutcome> runs;
  report(5, [&] {
    runs = ordering_runs();
    return ordering(runs);
  });
  report(6, [&] { return runs.size() == 3 ? convergence(runs) : Verdict{false, "ordering runs did not complete"}; });
  report(7, fewshot);
  report(8, determinism);
  report(9, metrics);
  report(10, format_robustness);
  report(11, schedule);
  return failed == 0 ? 0 : 1;
}
