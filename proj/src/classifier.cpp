#include "t4v/classifier.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "t4v/tensor_io.hpp"

namespace t4v {

namespace {

constexpr const char* kModule = "classifier";

void check_random_dims(Eigen::Index d, Eigen::Index c) {
  if (c < 2 || d < c) {
    std::ostringstream os;
    os << "need d >= c >= 2, got d=" << d << " c=" << c;
    fail(Errc::dimension, kModule, os.str());
  }
}

std::vector<std::string> numbered_names(Eigen::Index c) {
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < c; ++k) names.push_back(std::to_string(k));
  return names;
}

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  if (stem.extension() == ".json" || stem.extension() == ".ckpt") stem.replace_extension();
  stem += ext;
  return stem;
}

}  // namespace

std::string_view to_string(InitKind kind) noexcept {
  switch (kind) {
    case InitKind::RandomNormal: return "random-normal";
    case InitKind::RandomOrthogonal: return "random-orthogonal";
    case InitKind::LDA: return "lda";
    case InitKind::Textual: return "textual";
    case InitKind::LearnableBaseline: return "learnable-baseline";
  }
  return "unknown";
}

InitKind parse_init_kind(std::string_view text) {
  if (text == "random-normal" || text == "normal") return InitKind::RandomNormal;
  if (text == "random-orthogonal" || text == "orthogonal") return InitKind::RandomOrthogonal;
  if (text == "lda") return InitKind::LDA;
  if (text == "textual") return InitKind::Textual;
  if (text == "learnable-baseline" || text == "learnable") return InitKind::LearnableBaseline;
  fail(Errc::usage, kModule, "unknown classifier kind '" + std::string(text) + "'");
}

std::string ClassifierMatrix::digest() const { return tensor_digest(weights); }

void ClassifierMatrix::validate() const {
  if (static_cast<std::size_t>(weights.rows()) != class_names.size()) {
    fail(Errc::manifest, kModule, "classifier rows != number of class names");
  }
  if (!weights.allFinite()) fail(Errc::numeric, kModule, "classifier has non-finite weights");
}

ClassifierMatrix build_random_normal(Eigen::Index d, Eigen::Index c, Rng& rng) {
  check_random_dims(d, c);
  return {gaussian_matrix(c, d, rng), InitKind::RandomNormal, true, numbered_names(c), {}};
}

ClassifierMatrix build_random_orthogonal(Eigen::Index d, Eigen::Index c, Rng& rng) {
  check_random_dims(d, c);
  const Matrix q = qr_row_orthogonalize(gaussian_matrix(d, d, rng));
  return {q.topRows(c), InitKind::RandomOrthogonal, true, numbered_names(c), {}};
}

ClassifierMatrix build_lda(const FeatureStore& features, std::size_t per_class_cap) {
  features.validate();
  if (per_class_cap < 2) fail(Errc::insufficient_data, kModule, "LDA per-class cap must be >= 2");
  const auto c = static_cast<Eigen::Index>(features.num_classes());
  const auto d = static_cast<Eigen::Index>(features.dim);
  const Matrix pooled = features.pooled();

  std::vector<std::vector<std::size_t>> members = features.indices_by_class();
  Matrix means = Matrix::Zero(c, d);
  std::size_t total = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    auto& rows = members[static_cast<std::size_t>(k)];
    if (rows.size() > per_class_cap) rows.resize(per_class_cap);
    if (rows.size() < 2) {
      fail(Errc::insufficient_data, kModule,
           "class '" + features.class_names[static_cast<std::size_t>(k)] + "' has " + std::to_string(rows.size()) +
               " samples, LDA needs >= 2");
    }
    for (auto i : rows) means.row(k) += pooled.row(static_cast<Eigen::Index>(i));
    means.row(k) /= static_cast<double>(rows.size());
    total += rows.size();
  }
  if (total <= static_cast<std::size_t>(c)) fail(Errc::insufficient_data, kModule, "LDA needs n > c");

  Matrix within = Matrix::Zero(d, d);
  for (Eigen::Index k = 0; k < c; ++k) {
    for (auto i : members[static_cast<std::size_t>(k)]) {
      const Vector dev = (pooled.row(static_cast<Eigen::Index>(i)) - means.row(k)).transpose();
      within.selfadjointView<Eigen::Lower>().rankUpdate(dev);
    }
  }
  within = within.selfadjointView<Eigen::Lower>();
  within /= static_cast<double>(total - static_cast<std::size_t>(c));

  ClassifierMatrix out;
  out.init_kind = InitKind::LDA;
  out.frozen = true;
  out.class_names = features.class_names;

  Eigen::LLT<Matrix> probe(within);
  if (probe.info() != Eigen::Success || !(probe.rcond() > 1e-12)) {
    const double trace = within.trace();
    if (!(trace > 0.0)) fail(Errc::insufficient_data, kModule, "within-class covariance is identically zero");
    const double ridge = 1e-6 * trace / static_cast<double>(d);
    within.diagonal().array() += ridge;
    std::ostringstream os;
    os << "lda: singular within-class covariance, added ridge " << ridge << " * I";
    out.notes.push_back(os.str());
  }
  out.weights = solve_spd(within, means.transpose()).transpose();
  return out;
}

ClassifierMatrix build_textual(const Matrix& embeddings, std::vector<std::string> class_names) {
  if (static_cast<std::size_t>(embeddings.rows()) != class_names.size()) {
    fail(Errc::manifest, kModule,
         "embedding rows (" + std::to_string(embeddings.rows()) + ") != class names (" +
             std::to_string(class_names.size()) + ")");
  }
  return {normalize_rows(embeddings), InitKind::Textual, true, std::move(class_names), {}};
}

ClassifierMatrix build_learnable_baseline(Eigen::Index d, Eigen::Index c, Rng& rng) {
  if (c < 2 || d < 1) fail(Errc::dimension, kModule, "learnable classifier needs c >= 2, d >= 1");
  Matrix w = gaussian_matrix(c, d, rng) / std::sqrt(static_cast<double>(d));
  return {std::move(w), InitKind::LearnableBaseline, false, numbered_names(c), {}};
}

std::vector<std::string> expand_prompts(const PromptSet& prompts) {
  std::vector<std::string> out;
  out.reserve(prompts.templates.size() * prompts.class_names.size());
  for (const auto& tmpl : prompts.templates) {
    const auto at = tmpl.find(kPromptPlaceholder);
    if (at == std::string::npos) fail(Errc::format, kModule, "template '" + tmpl + "' has no {} placeholder");
    if (tmpl.find(kPromptPlaceholder, at + kPromptPlaceholder.size()) != std::string::npos) {
      fail(Errc::format, kModule, "template '" + tmpl + "' has more than one {} placeholder");
    }
    for (const auto& name : prompts.class_names) {
      std::string s = tmpl;
      s.replace(at, kPromptPlaceholder.size(), name);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void save_classifier(const ClassifierMatrix& w, const std::filesystem::path& stem) {
  w.validate();
  const NamedTensor tensor{"classifier.weights", w.weights};
  write_tensors(std::span<const NamedTensor>(&tensor, 1), with_ext(stem, ".ckpt"));
  nlohmann::ordered_json j;
  j["init_kind"] = std::string(to_string(w.init_kind));
  j["frozen"] = w.frozen;
  j["rows"] = w.weights.rows();
  j["cols"] = w.weights.cols();
  j["digest"] = w.digest();
  j["class_names"] = w.class_names;
  j["notes"] = w.notes;
  std::ofstream out(with_ext(stem, ".json"));
  if (!out) fail(Errc::io, kModule, "cannot write classifier metadata");
  out << j.dump(2) << "\n";
}

ClassifierMatrix load_classifier(const std::filesystem::path& stem) {
  std::ifstream in(with_ext(stem, ".json"));
  if (!in) fail(Errc::io, kModule, "cannot open " + with_ext(stem, ".json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, kModule, e.what());
  }
  const auto tensors = read_tensors(with_ext(stem, ".ckpt"));
  if (tensors.size() != 1 || tensors[0].name != "classifier.weights") {
    fail(Errc::format, kModule, "classifier checkpoint must hold exactly 'classifier.weights'");
  }
  ClassifierMatrix w;
  w.weights = tensors[0].value;
  w.init_kind = parse_init_kind(j.at("init_kind").get<std::string>());
  w.frozen = j.at("frozen").get<bool>();
  w.class_names = j.at("class_names").get<std::vector<std::string>>();
  w.notes = j.value("notes", std::vector<std::string>{});
  if (j.contains("digest") && j["digest"].get<std::string>() != w.digest()) {
    fail(Errc::format, kModule, "classifier digest does not match its weights");
  }
  w.validate();
  return w;
}

}  // namespace t4v
