#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t4v/numkit.hpp"

namespace t4v {

enum class Split { Train, Test };

/// n videos x T frames x d channels of frame embeddings plus labels.
///
/// Values are held as f64 but are always f32-representable, so a write/read cycle through
/// the on-disk format is bit-exact.
struct FeatureStore {
  std::size_t frames = 1;
  std::size_t dim = 0;
  RowMatrix payload;  // n x (frames * dim), frame-major within a row
  std::vector<std::uint32_t> labels;
  Split split = Split::Train;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }

  /// T x d frame block of sample i.
  Matrix frames_of(std::size_t i) const;
  /// n x d temporal average of every sample.
  Matrix pooled() const;
  /// Per-class sample indices, in store order.
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  FeatureStore subset(std::span<const std::size_t> rows) const;

  void validate() const;
};

/// Rounds every entry through f32.
void quantize_to_f32(RowMatrix& payload);

// T4V1 binary layout, all integers u32 little-endian:
//   0  magic "T4V1"
//   4  version (1)
//   8  n
//  12  T
//  16  d
//  20  labels[n]
//  20+4n  payload f32[n*T*d], row-major (sample, frame, channel)
//  end-4  CRC-32 (zlib polynomial) over the payload bytes only
inline constexpr char kStoreMagic[4] = {'T', '4', 'V', '1'};
inline constexpr std::uint32_t kStoreVersion = 1;

struct StoreHeader {
  std::uint32_t version = 0;
  std::uint32_t n = 0;
  std::uint32_t frames = 0;
  std::uint32_t dim = 0;
};

std::vector<unsigned char> encode_store(const FeatureStore& store);
FeatureStore decode_store(std::span<const unsigned char> bytes,
                          std::vector<std::string> class_names = {});
void write_store(const FeatureStore& store, const std::filesystem::path& path);
/// With empty class_names, classes are named "0".."max label".
FeatureStore read_store(const std::filesystem::path& path, std::vector<std::string> class_names = {});
StoreHeader read_store_header(const std::filesystem::path& path);
std::uint32_t payload_crc32(std::span<const unsigned char> bytes);

/// Dataset description. Stored as JSON; paths are relative to the manifest file.
struct Manifest {
  std::string name;
  std::vector<std::string> class_names;
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path text_embeddings;
  std::optional<std::size_t> zero_shot_classes;
  std::vector<std::string> exclude_classes;
  std::string notes;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
FeatureStore load_split(const Manifest& manifest, Split split);
/// c x d text embeddings (T = 1 store with one row per class, in manifest class order).
Matrix load_text_embeddings(const Manifest& manifest);

struct SyntheticSpec {
  std::vector<std::size_t> groups = {4, 4};  // group sizes; sum = number of classes
  double rho_in = 0.6;
  double rho_out = 0.1;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 40;
  double noise_std = 0.5;
  std::size_t frames = 4;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  /// Strength of a fixed linear distortion between the visual cluster centres and the
  /// prototypes (0 = visual centres equal prototypes).
  double misalignment = 0.0;

  std::size_t classes() const;
  void validate() const;
};

struct SyntheticData {
  FeatureStore train;
  FeatureStore test;
  Matrix prototypes;  // c x d, unit rows; serves as the text embedding matrix
  Matrix centers;     // c x d, visual cluster centres
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Keeps ceil(fraction * n_k) samples of every class k, chosen uniformly under rng.
FeatureStore stratified_fraction(const FeatureStore& store, double fraction, Rng& rng);

/// Exactly k samples of every class (k = 0 gives an empty store).
FeatureStore k_shot_subset(const FeatureStore& store, std::size_t k, Rng& rng);

}  // namespace t4v
