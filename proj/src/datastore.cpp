#include "t4v/datastore.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace t4v {

namespace {

constexpr const char* kModule = "datastore";
constexpr std::size_t kHeaderBytes = 20;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>((v >> (8 * k)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const unsigned char> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(bytes[offset + k]) << (8 * k);
  return v;
}

[[noreturn]] void format_error(std::size_t offset, const std::string& what) {
  std::ostringstream os;
  os << what << " (byte offset " << offset << ")";
  fail(Errc::format, kModule, os.str());
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> default_class_names(std::span<const std::uint32_t> labels) {
  std::uint32_t c = 0;
  for (auto l : labels) c = std::max(c, l + 1);
  std::vector<std::string> names;
  for (std::uint32_t k = 0; k < c; ++k) names.push_back(std::to_string(k));
  return names;
}

StoreHeader parse_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < kHeaderBytes) format_error(bytes.size(), "file shorter than the 20-byte header");
  if (std::memcmp(bytes.data(), kStoreMagic, 4) != 0) format_error(0, "bad magic, expected \"T4V1\"");
  StoreHeader h;
  h.version = get_u32(bytes, 4);
  if (h.version != kStoreVersion) format_error(4, "unsupported version " + std::to_string(h.version));
  h.n = get_u32(bytes, 8);
  h.frames = get_u32(bytes, 12);
  h.dim = get_u32(bytes, 16);
  if (h.frames < 1) format_error(12, "frame count must be >= 1");
  if (h.dim < 1) format_error(16, "dimension must be >= 1");
  return h;
}

}  // namespace

Matrix FeatureStore::frames_of(std::size_t i) const {
  Matrix out(frames, dim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < dim; ++c) out(t, c) = payload(i, t * dim + c);
  return out;
}

Matrix FeatureStore::pooled() const {
  Matrix out = Matrix::Zero(size(), dim);
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t c = 0; c < dim; ++c) out(i, c) += payload(i, t * dim + c);
  }
  out /= static_cast<double>(frames);
  return out;
}

std::vector<std::vector<std::size_t>> FeatureStore::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(num_classes());
  for (std::size_t i = 0; i < size(); ++i) out.at(labels[i]).push_back(i);
  return out;
}

FeatureStore FeatureStore::subset(std::span<const std::size_t> rows) const {
  FeatureStore out;
  out.frames = frames;
  out.dim = dim;
  out.split = split;
  out.class_names = class_names;
  out.payload.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(frames * dim));
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) fail(Errc::index, kModule, "subset row out of range");
    out.payload.row(static_cast<Eigen::Index>(r)) = payload.row(static_cast<Eigen::Index>(rows[r]));
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

void FeatureStore::validate() const {
  if (frames < 1) fail(Errc::dimension, kModule, "store needs T >= 1");
  if (dim < 1) fail(Errc::dimension, kModule, "store needs d >= 1");
  if (static_cast<std::size_t>(payload.rows()) != size() ||
      static_cast<std::size_t>(payload.cols()) != frames * dim) {
    fail(Errc::dimension, kModule, "payload shape does not match n x T*d");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= class_names.size()) {
      fail(Errc::index, kModule,
           "label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " exceeds class count " +
               std::to_string(class_names.size()));
    }
  }
}

void quantize_to_f32(RowMatrix& payload) {
  payload = payload.cast<float>().cast<double>();
}

std::uint32_t payload_crc32(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<unsigned char> encode_store(const FeatureStore& store) {
  store.validate();
  const std::size_t n = store.size();
  const std::size_t count = n * store.frames * store.dim;
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + 4 * n + 4 * count + 4);
  out.insert(out.end(), kStoreMagic, kStoreMagic + 4);
  put_u32(out, kStoreVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(store.frames));
  put_u32(out, static_cast<std::uint32_t>(store.dim));
  for (auto l : store.labels) put_u32(out, l);
  const std::size_t payload_start = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < store.payload.cols(); ++j) {
      const auto f = static_cast<float>(store.payload(static_cast<Eigen::Index>(i), j));
      put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  put_u32(out, payload_crc32(std::span(out).subspan(payload_start)));
  return out;
}

FeatureStore decode_store(std::span<const unsigned char> bytes, std::vector<std::string> class_names) {
  const StoreHeader h = parse_header(bytes);
  const std::size_t n = h.n;
  const std::size_t width = static_cast<std::size_t>(h.frames) * h.dim;
  const std::size_t labels_at = kHeaderBytes;
  const std::size_t payload_at = labels_at + 4 * n;
  const std::size_t crc_at = payload_at + 4 * n * width;
  if (bytes.size() < crc_at + 4) format_error(bytes.size(), "truncated file, expected " + std::to_string(crc_at + 4) + " bytes");
  if (bytes.size() > crc_at + 4) format_error(crc_at + 4, "trailing bytes after CRC");

  const auto payload_bytes = bytes.subspan(payload_at, crc_at - payload_at);
  const std::uint32_t stored = get_u32(bytes, crc_at);
  const std::uint32_t actual = payload_crc32(payload_bytes);
  if (stored != actual) {
    std::ostringstream os;
    os << "CRC mismatch: stored 0x" << std::hex << stored << ", computed 0x" << actual;
    format_error(crc_at, os.str());
  }

  FeatureStore store;
  store.frames = h.frames;
  store.dim = h.dim;
  store.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) store.labels[i] = get_u32(bytes, labels_at + 4 * i);
  store.payload.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const auto bits = get_u32(bytes, payload_at + 4 * (i * width + j));
      const float f = std::bit_cast<float>(bits);
      if (!std::isfinite(f)) format_error(payload_at + 4 * (i * width + j), "non-finite payload value");
      store.payload(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f;
    }
  }
  store.class_names = class_names.empty() ? default_class_names(store.labels) : std::move(class_names);
  for (std::size_t i = 0; i < n; ++i) {
    if (store.labels[i] >= store.class_names.size())
      format_error(labels_at + 4 * i, "label exceeds class count");
  }
  return store;
}

void write_store(const FeatureStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_store(store);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io, kModule, "short write to " + path.string());
}

FeatureStore read_store(const std::filesystem::path& path, std::vector<std::string> class_names) {
  return decode_store(slurp(path), std::move(class_names));
}

StoreHeader read_store_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  std::vector<unsigned char> head(kHeaderBytes);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(kHeaderBytes));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return parse_header(head);
}

// ---------------------------------------------------------------------------
// Manifest

std::filesystem::path Manifest::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(file)) file /= "manifest.json";
  if (!std::filesystem::exists(file) && std::filesystem::exists(std::filesystem::path(file) += ".json")) file += ".json";
  std::ifstream in(file);
  if (!in) fail(Errc::manifest, kModule, "cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::manifest, kModule, file.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = file.parent_path();
  try {
    m.name = j.value("name", std::string{});
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.train = j.value("train", std::string{});
    m.test = j.value("test", std::string{});
    m.text_embeddings = j.value("text_embeddings", std::string{});
    if (j.contains("zero_shot_classes") && !j["zero_shot_classes"].is_null())
      m.zero_shot_classes = j["zero_shot_classes"].get<std::size_t>();
    m.exclude_classes = j.value("exclude_classes", std::vector<std::string>{});
    m.notes = j.value("notes", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::manifest, kModule, file.string() + ": " + e.what());
  }
  if (m.class_names.empty()) fail(Errc::manifest, kModule, "manifest lists no classes");
  for (const auto& name : m.class_names)
    if (name.empty()) fail(Errc::manifest, kModule, "empty class name in manifest");
  for (const auto* rel : {&m.train, &m.test, &m.text_embeddings}) {
    if (rel->empty()) continue;
    const auto p = m.resolve(*rel);
    if (!std::filesystem::exists(p)) fail(Errc::manifest, kModule, "referenced file missing: " + p.string());
    (void)read_store_header(p);
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["name"] = manifest.name;
  j["class_names"] = manifest.class_names;
  j["train"] = manifest.train.generic_string();
  j["test"] = manifest.test.generic_string();
  j["text_embeddings"] = manifest.text_embeddings.generic_string();
  j["zero_shot_classes"] = manifest.zero_shot_classes ? nlohmann::ordered_json(*manifest.zero_shot_classes)
                                                      : nlohmann::ordered_json(nullptr);
  j["exclude_classes"] = manifest.exclude_classes;
  j["notes"] = manifest.notes;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

FeatureStore load_split(const Manifest& manifest, Split split) {
  const auto& rel = split == Split::Train ? manifest.train : manifest.test;
  if (rel.empty()) fail(Errc::manifest, kModule, "manifest has no " + std::string(split == Split::Train ? "train" : "test") + " split");
  auto store = read_store(manifest.resolve(rel), manifest.class_names);
  store.split = split;
  return store;
}

Matrix load_text_embeddings(const Manifest& manifest) {
  if (manifest.text_embeddings.empty()) fail(Errc::manifest, kModule, "manifest has no text_embeddings entry");
  const auto path = manifest.resolve(manifest.text_embeddings);
  auto store = read_store(path);
  if (store.frames != 1) fail(Errc::manifest, kModule, "text embedding file must have T = 1");
  if (store.size() != manifest.class_names.size()) {
    fail(Errc::manifest, kModule,
         "text embedding rows (" + std::to_string(store.size()) + ") != class count (" +
             std::to_string(manifest.class_names.size()) + ")");
  }
  return Matrix(store.payload);
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::size_t SyntheticSpec::classes() const {
  std::size_t c = 0;
  for (auto g : groups) c += g;
  return c;
}

void SyntheticSpec::validate() const {
  const std::size_t c = classes();
  if (groups.empty() || c < 2) fail(Errc::spec, kModule, "synthetic spec needs >= 2 classes");
  for (auto g : groups)
    if (g == 0) fail(Errc::spec, kModule, "empty class group");
  if (!(rho_in >= 0.0 && rho_in < 1.0)) fail(Errc::spec, kModule, "rho_in must lie in [0, 1)");
  if (!(rho_out >= 0.0 && rho_out <= rho_in)) fail(Errc::spec, kModule, "rho_out must lie in [0, rho_in]");
  if (dim < c) fail(Errc::spec, kModule, "synthetic spec needs d >= c");
  if (frames < 1) fail(Errc::spec, kModule, "synthetic spec needs T >= 1");
  if (!(noise_std >= 0.0) || !(misalignment >= 0.0)) fail(Errc::spec, kModule, "noise and misalignment must be >= 0");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto c = static_cast<Eigen::Index>(spec.classes());
  const auto d = static_cast<Eigen::Index>(spec.dim);

  std::vector<std::size_t> group_of;
  for (std::size_t g = 0; g < spec.groups.size(); ++g)
    for (std::size_t k = 0; k < spec.groups[g]; ++k) group_of.push_back(g);

  Matrix gram(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      gram(i, j) = i == j ? 1.0 : (group_of[i] == group_of[j] ? spec.rho_in : spec.rho_out);
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) fail(Errc::spec, kModule, "target Gram matrix is not positive definite");
  const Matrix factor = llt.matrixL();

  Rng root(spec.seed);
  Rng basis_rng = root.fork(1);
  const Matrix basis = qr_row_orthogonalize(gaussian_matrix(c, d, basis_rng));

  SyntheticData out;
  out.prototypes = factor * basis;
  if (spec.misalignment > 0.0) {
    Rng warp_rng = root.fork(2);
    const Matrix warp = Matrix::Identity(d, d) + spec.misalignment / std::sqrt(static_cast<double>(d)) *
                                                     gaussian_matrix(d, d, warp_rng);
    out.centers = out.prototypes * warp;
  } else {
    out.centers = out.prototypes;
  }

  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < c; ++k) {
    std::ostringstream os;
    os << "g" << group_of[k] << "_c" << (k < 10 ? "0" : "") << k;
    names.push_back(os.str());
  }

  auto make_split = [&](Split split, std::size_t per_class, Rng rng) {
    FeatureStore s;
    s.frames = spec.frames;
    s.dim = spec.dim;
    s.split = split;
    s.class_names = names;
    s.payload.resize(c * static_cast<Eigen::Index>(per_class), static_cast<Eigen::Index>(spec.frames) * d);
    Eigen::Index row = 0;
    for (Eigen::Index k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < per_class; ++i, ++row) {
        for (std::size_t t = 0; t < spec.frames; ++t)
          for (Eigen::Index ch = 0; ch < d; ++ch)
            s.payload(row, static_cast<Eigen::Index>(t) * d + ch) = out.centers(k, ch) + spec.noise_std * rng.normal();
        s.labels.push_back(static_cast<std::uint32_t>(k));
      }
    }
    quantize_to_f32(s.payload);
    return s;
  };
  out.train = make_split(Split::Train, spec.train_per_class, root.fork(3));
  out.test = make_split(Split::Test, spec.test_per_class, root.fork(4));
  return out;
}

FeatureStore stratified_fraction(const FeatureStore& store, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(Errc::sampler, kModule, "fraction must lie in (0, 1]");
  std::vector<std::size_t> keep;
  for (const auto& members : store.indices_by_class()) {
    if (members.empty()) continue;
    const double exact = fraction * static_cast<double>(members.size());
    auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
    count = std::clamp<std::size_t>(count, 1, members.size());
    for (auto pick : rng.sample_without_replacement(members.size(), count)) keep.push_back(members[pick]);
  }
  std::sort(keep.begin(), keep.end());
  return store.subset(keep);
}

FeatureStore k_shot_subset(const FeatureStore& store, std::size_t k, Rng& rng) {
  std::vector<std::size_t> keep;
  const auto members = store.indices_by_class();
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].size() < k) {
      fail(Errc::insufficient_data, kModule,
           "class '" + store.class_names[c] + "' has " + std::to_string(members[c].size()) + " samples, " +
               std::to_string(k) + "-shot needs " + std::to_string(k));
    }
    for (auto pick : rng.sample_without_replacement(members[c].size(), k)) keep.push_back(members[c][pick]);
  }
  std::sort(keep.begin(), keep.end());
  return store.subset(keep);
}

}  // namespace t4v
