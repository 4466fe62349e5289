#include "t4v/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "t4v/parallel.hpp"

namespace t4v {

namespace {

constexpr const char* kModule = "protocols";

void check_labels(const Matrix& scores, std::span<const std::uint32_t> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) {
    fail(Errc::dimension, kModule, "score rows != label count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= static_cast<std::size_t>(scores.cols())) {
      fail(Errc::index, kModule, "label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " out of range");
    }
  }
}

// Position of the label in the descending order of row i (0 = best).
std::size_t label_rank(const Matrix& scores, Eigen::Index i, std::uint32_t label) {
  const double s = scores(i, label);
  std::size_t rank = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    if (scores(i, j) > s || (scores(i, j) == s && j < static_cast<Eigen::Index>(label))) ++rank;
  }
  return rank;
}

double population_std(std::span<const double> xs, double mean) {
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

std::string_view to_string(Protocol protocol) noexcept {
  switch (protocol) {
    case Protocol::General: return "general";
    case Protocol::ZeroShotHalf: return "zero-shot-half";
    case Protocol::ZeroShotFull: return "zero-shot-full";
    case Protocol::FewShot: return "few-shot";
  }
  return "unknown";
}

Matrix embed_store(const HeadSpec& spec, const HeadParams& head, const FeatureStore& store) {
  if (store.dim != spec.dim || store.frames != spec.frames) {
    fail(Errc::dimension, kModule, "store shape (T=" + std::to_string(store.frames) + ", d=" + std::to_string(store.dim) +
                                       ") does not match the head");
  }
  Matrix z(static_cast<Eigen::Index>(store.size()), static_cast<Eigen::Index>(spec.dim));
  parallel_for(store.size(), [&](std::size_t i) {
    z.row(static_cast<Eigen::Index>(i)) = forward(spec, head, store.frames_of(i)).transpose();
  });
  return z;
}

Matrix score_matrix(const HeadSpec& spec, const HeadParams& head, const FeatureStore& store, const Matrix& w,
                    bool cosine) {
  if (static_cast<std::size_t>(w.cols()) != spec.dim) fail(Errc::dimension, kModule, "classifier width != head width");
  if (!cosine) return embed_store(spec, head, store) * w.transpose();
  return normalize_rows(embed_store(spec, head, store)) * normalize_rows(w).transpose();
}

double topk_accuracy(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k) {
  if (k < 1 || k > static_cast<std::size_t>(scores.cols())) {
    fail(Errc::dimension, kModule, "k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.cols()) + "]");
  }
  check_labels(scores, labels);
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) hits += label_rank(scores, i, labels[static_cast<std::size_t>(i)]) < k;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MapResult mean_average_precision(const Matrix& scores, std::span<const std::uint32_t> labels) {
  check_labels(scores, labels);
  MapResult out;
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> order(labels.size());
  for (Eigen::Index k = 0; k < scores.cols(); ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores(static_cast<Eigen::Index>(a), k) > scores(static_cast<Eigen::Index>(b), k);
    });
    std::size_t hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[order[r]] == static_cast<std::uint32_t>(k)) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) {
      ++out.excluded_classes;
      continue;
    }
    total += ap / static_cast<double>(hits);
    ++counted;
  }
  if (counted == 0) fail(Errc::insufficient_data, kModule, "no class has a positive sample");
  out.value = total / static_cast<double>(counted);
  return out;
}

Vector multiview_scores(const ViewSet& views, const HeadSpec& spec, const HeadParams& head, const Matrix& w) {
  if (views.clips * views.crops < 1 || views.views.size() != views.clips * views.crops) {
    fail(Errc::dimension, kModule, "view set must hold clips * crops >= 1 views");
  }
  Vector acc = Vector::Zero(w.rows());
  for (const auto& v : views.views) {
    const Vector logits = w * forward(spec, head, v);
    const Vector e = (logits.array() - logits.maxCoeff()).exp();
    acc += e / e.sum();
  }
  return acc / static_cast<double>(views.views.size());
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = std::string(to_string(protocol));
  j["repeats"] = repeats;
  j["top1"] = top1;
  j["top5"] = top5;
  j["mAP"] = map ? nlohmann::ordered_json(*map) : nlohmann::ordered_json(nullptr);
  j["map_excluded_classes"] = map_excluded_classes;
  j["mean"] = mean;
  j["std"] = std ? nlohmann::ordered_json(*std) : nlohmann::ordered_json(nullptr);
  j["repeat_top1"] = repeat_top1;
  j["subsets"] = subsets;
  j["class_names"] = class_names;
  j["per_class_accuracy"] = per_class_accuracy;
  return j;
}

std::string EvalReport::per_class_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "class,accuracy\n";
  for (std::size_t k = 0; k < per_class_accuracy.size(); ++k) {
    os << (k < class_names.size() ? class_names[k] : std::to_string(k)) << "," << per_class_accuracy[k] << "\n";
  }
  return os.str();
}

namespace {

EvalReport report_from_scores(const Matrix& scores, std::span<const std::uint32_t> labels, Protocol protocol,
                              std::vector<std::string> names) {
  EvalReport r;
  r.protocol = protocol;
  r.class_names = std::move(names);
  r.top1 = topk_accuracy(scores, labels, 1);
  r.top5 = topk_accuracy(scores, labels, std::min<std::size_t>(5, static_cast<std::size_t>(scores.cols())));
  r.mean = r.top1;
  r.repeat_top1 = {r.top1};
  const auto c = static_cast<std::size_t>(scores.cols());
  std::vector<std::size_t> hits(c, 0), counts(c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[labels[i]];
    hits[labels[i]] += label_rank(scores, static_cast<Eigen::Index>(i), labels[i]) == 0;
  }
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class_accuracy.push_back(counts[k] ? static_cast<double>(hits[k]) / static_cast<double>(counts[k]) : 0.0);
  }
  if (!labels.empty()) {
    const MapResult m = mean_average_precision(scores, labels);
    r.map = m.value;
    r.map_excluded_classes = m.excluded_classes;
  }
  return r;
}

}  // namespace

EvalReport evaluate(const FeatureStore& store, const HeadSpec& spec, const HeadParams& head, const ClassifierMatrix& w,
                    bool cosine) {
  if (static_cast<std::size_t>(w.classes()) != store.num_classes()) {
    fail(Errc::dimension, kModule, "classifier rows != store classes");
  }
  return report_from_scores(score_matrix(spec, head, store, w.weights, cosine), store.labels, Protocol::General,
                            store.class_names);
}

EvalReport zero_shot(const FeatureStore& target, const ClassifierMatrix& text_w, const HeadSpec& spec,
                     const HeadParams& head, Rng& rng, const ZeroShotOptions& options) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t k = 0; k < text_w.class_names.size(); ++k) row_of.emplace(text_w.class_names[k], static_cast<Eigen::Index>(k));
  if (text_w.class_names.size() != static_cast<std::size_t>(text_w.classes())) {
    fail(Errc::manifest, kModule, "text classifier has no class names for its rows");
  }
  std::vector<std::size_t> pool;
  for (std::size_t k = 0; k < target.num_classes(); ++k) {
    const auto& name = target.class_names[k];
    if (!row_of.contains(name)) fail(Errc::manifest, kModule, "class '" + name + "' has no text classifier row");
    if (std::find(options.exclude_classes.begin(), options.exclude_classes.end(), name) == options.exclude_classes.end()) {
      pool.push_back(k);
    }
  }
  for (const auto& name : options.exclude_classes) {
    if (std::find(target.class_names.begin(), target.class_names.end(), name) == target.class_names.end()) {
      fail(Errc::manifest, kModule, "excluded class '" + name + "' is not in the target store");
    }
  }
  if (pool.size() < 2) fail(Errc::insufficient_data, kModule, "fewer than 2 candidate classes");

  const Matrix z = embed_store(spec, head, target);
  auto evaluate_subset = [&](const std::vector<std::size_t>& classes, Protocol protocol) {
    std::vector<std::int64_t> position(target.num_classes(), -1);
    Matrix w(static_cast<Eigen::Index>(classes.size()), text_w.dim());
    std::vector<std::string> names;
    for (std::size_t j = 0; j < classes.size(); ++j) {
      position[classes[j]] = static_cast<std::int64_t>(j);
      w.row(static_cast<Eigen::Index>(j)) = text_w.weights.row(row_of.at(target.class_names[classes[j]]));
      names.push_back(target.class_names[classes[j]]);
    }
    std::vector<Eigen::Index> rows;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (position[target.labels[i]] >= 0) {
        rows.push_back(static_cast<Eigen::Index>(i));
        labels.push_back(static_cast<std::uint32_t>(position[target.labels[i]]));
      }
    }
    if (rows.empty()) fail(Errc::insufficient_data, kModule, "no test samples for the selected classes");
    const Matrix scores = z(rows, Eigen::placeholders::all) * w.transpose();
    return report_from_scores(scores, labels, protocol, std::move(names));
  };

  if (!options.half) {
    EvalReport r = evaluate_subset(pool, Protocol::ZeroShotFull);
    r.subsets = {pool};
    return r;
  }
  if (options.repeats < 1) fail(Errc::spec, kModule, "repeats must be >= 1");
  const std::size_t size = options.subset_size.value_or(pool.size() / 2);
  if (size < 1 || size > pool.size()) fail(Errc::spec, kModule, "zero-shot subset size out of range");

  EvalReport out;
  out.protocol = Protocol::ZeroShotHalf;
  out.repeats = options.repeats;
  double top5 = 0.0;
  for (std::size_t r = 0; r < options.repeats; ++r) {
    std::vector<std::size_t> picked;
    for (auto j : rng.sample_without_replacement(pool.size(), size)) picked.push_back(pool[j]);
    std::sort(picked.begin(), picked.end());
    const EvalReport part = evaluate_subset(picked, Protocol::ZeroShotHalf);
    out.repeat_top1.push_back(part.top1);
    top5 += part.top5;
    out.subsets.push_back(std::move(picked));
  }
  out.mean = std::accumulate(out.repeat_top1.begin(), out.repeat_top1.end(), 0.0) / static_cast<double>(options.repeats);
  out.top1 = out.mean;
  out.top5 = top5 / static_cast<double>(options.repeats);
  if (options.repeats > 1) out.std = population_std(out.repeat_top1, out.mean);
  for (auto k : pool) out.class_names.push_back(target.class_names[k]);
  return out;
}

std::pair<FeatureStore, FeatureStore> fewshot_split(const FeatureStore& train, const FeatureStore& test, std::size_t k,
                                                    Rng& rng) {
  return {k_shot_subset(train, k, rng), test};
}

}  // namespace t4v
