#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "t4v/classifier.hpp"
#include "t4v/datastore.hpp"
#include "t4v/headnet.hpp"

namespace t4v {

enum class Protocol { General, ZeroShotHalf, ZeroShotFull, FewShot };

std::string_view to_string(Protocol protocol) noexcept;

/// n x d video embeddings of every sample in store order.
Matrix embed_store(const HeadSpec& spec, const HeadParams& head, const FeatureStore& store);

/// n x c logits: embeddings times W transposed. With `cosine`, embeddings and rows of W
/// are L2-normalized first.
Matrix score_matrix(const HeadSpec& spec, const HeadParams& head, const FeatureStore& store, const Matrix& w,
                    bool cosine = false);

/// Fraction of rows whose label ranks among the k highest scores. Equal scores rank the
/// lower class index first.
double topk_accuracy(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k);

struct MapResult {
  double value = 0.0;
  std::size_t excluded_classes = 0;  // classes without any positive sample
};

/// Per class: rank samples by score (ties: lower sample index first), AP = mean of
/// precision at each positive; mAP = mean over classes that have a positive.
MapResult mean_average_precision(const Matrix& scores, std::span<const std::uint32_t> labels);

/// Temporal clips x spatial crops of one video, each a T x d frame block.
struct ViewSet {
  std::size_t clips = 1;
  std::size_t crops = 1;
  std::vector<Matrix> views;  // clips * crops entries, clip-major
};

/// Softmax of every view's logits, averaged over views.
Vector multiview_scores(const ViewSet& views, const HeadSpec& spec, const HeadParams& head, const Matrix& w);

struct EvalReport {
  Protocol protocol = Protocol::General;
  double top1 = 0.0;
  double top5 = 0.0;
  std::optional<double> map;
  std::vector<double> per_class_accuracy;  // empty for half-class zero-shot
  std::vector<std::string> class_names;
  std::size_t repeats = 1;
  double mean = 0.0;           // mean top-1 over repeats
  std::optional<double> std;   // population std of top-1, present iff repeats > 1
  std::vector<double> repeat_top1;
  std::vector<std::vector<std::size_t>> subsets;  // class indices evaluated per repeat
  std::size_t map_excluded_classes = 0;

  nlohmann::ordered_json to_json() const;
  /// class,accuracy rows in class order.
  std::string per_class_csv() const;
};

/// General protocol: single pass over every class of the store.
EvalReport evaluate(const FeatureStore& store, const HeadSpec& spec, const HeadParams& head, const ClassifierMatrix& w,
                    bool cosine = false);

struct ZeroShotOptions {
  bool half = true;
  std::size_t repeats = 10;
  std::optional<std::size_t> subset_size;    // default floor(c / 2) of the candidate classes
  std::vector<std::string> exclude_classes;  // removed before sampling
};

/// Zero-shot evaluation of a trained head with a text classifier. Classifier rows are
/// matched to the store's classes by name.
EvalReport zero_shot(const FeatureStore& target, const ClassifierMatrix& text_w, const HeadSpec& spec,
                     const HeadParams& head, Rng& rng, const ZeroShotOptions& options = {});

/// K samples of every class from `train`; the test split is passed through unchanged.
std::pair<FeatureStore, FeatureStore> fewshot_split(const FeatureStore& train, const FeatureStore& test, std::size_t k,
                                                    Rng& rng);

}  // namespace t4v
