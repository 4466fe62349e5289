#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "t4v/datastore.hpp"
#include "t4v/numkit.hpp"

namespace t4v {

enum class InitKind { RandomNormal, RandomOrthogonal, LDA, Textual, LearnableBaseline };

std::string_view to_string(InitKind kind) noexcept;
InitKind parse_init_kind(std::string_view text);

/// c x d projection from video embeddings to class logits.
struct ClassifierMatrix {
  Matrix weights;
  InitKind init_kind = InitKind::RandomNormal;
  bool frozen = true;
  std::vector<std::string> class_names;
  /// Construction notes, e.g. a ridge fallback; copied into run logs.
  std::vector<std::string> notes;

  Eigen::Index classes() const noexcept { return weights.rows(); }
  Eigen::Index dim() const noexcept { return weights.cols(); }
  std::string digest() const;
  void validate() const;
};

inline constexpr std::size_t kDefaultLdaPerClassCap = 60;

ClassifierMatrix build_random_normal(Eigen::Index d, Eigen::Index c, Rng& rng);
/// First c rows of the orthogonal factor of a d x d Gaussian matrix.
ClassifierMatrix build_random_orthogonal(Eigen::Index d, Eigen::Index c, Rng& rng);

/// Fisher LDA on TAP-pooled video embeddings: row k = Sw^-1 mu_k, no intercept, with Sw the
/// pooled within-class covariance (denominator n - c). Uses the first `per_class_cap`
/// samples of every class in store order. A singular Sw gets a ridge of
/// 1e-6 * trace(Sw) / d, recorded in `notes`.
ClassifierMatrix build_lda(const FeatureStore& features, std::size_t per_class_cap = kDefaultLdaPerClassCap);

/// L2-normalized text embeddings, one row per class.
ClassifierMatrix build_textual(const Matrix& embeddings, std::vector<std::string> class_names);

/// Trainable baseline classifier: N(0, 1/d) entries, not frozen.
ClassifierMatrix build_learnable_baseline(Eigen::Index d, Eigen::Index c, Rng& rng);

struct PromptSet {
  std::vector<std::string> templates;
  std::vector<std::string> class_names;
};

inline constexpr std::string_view kPromptPlaceholder = "{}";
inline constexpr std::string_view kDefaultPromptTemplate = "a video of a person {}.";

/// Template-major expansion: all classes through template 0, then template 1, ...
std::vector<std::string> expand_prompts(const PromptSet& prompts);

// Classifier files: <stem>.ckpt holds tensor "classifier.weights"; <stem>.json holds
// init_kind, frozen, class_names, digest and notes.
void save_classifier(const ClassifierMatrix& w, const std::filesystem::path& stem);
ClassifierMatrix load_classifier(const std::filesystem::path& stem);

}  // namespace t4v
