#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "t4v/numkit.hpp"
#include "t4v/tensor_io.hpp"

namespace t4v {

enum class HeadKind { TAP, T1D, TTrans };

std::string_view to_string(HeadKind kind) noexcept;
HeadKind parse_head_kind(std::string_view text);

/// Architecture of the trainable temporal head that maps T x d frame features to one
/// d-dimensional video embedding.
struct HeadSpec {
  HeadKind kind = HeadKind::TAP;
  std::size_t frames = 8;
  std::size_t dim = 512;
  std::size_t layers = 1;    // TTrans
  std::size_t heads = 1;     // TTrans attention heads; must divide dim
  std::size_t kernel = 3;    // T1D temporal kernel, odd
  std::size_t ffn_mult = 4;  // TTrans feed-forward width = ffn_mult * dim

  std::size_t ffn_width() const noexcept { return ffn_mult * dim; }
  void validate() const;
};

/// Trainable tensors of a head, in a fixed kind-dependent order.
///
///   T1D:    "t1d.kernel" (d x kernel)
///   TTrans: "pos" (T x d), then for each layer l the tensors
///           "layer{l}.ln1.gamma" (1 x d)  "layer{l}.ln1.beta" (1 x d)
///           "layer{l}.attn.wq|wk|wv|wo" (d x d)
///           "layer{l}.ln2.gamma" (1 x d)  "layer{l}.ln2.beta" (1 x d)
///           "layer{l}.ffn.w1" (d x f)  "layer{l}.ffn.b1" (1 x f)
///           "layer{l}.ffn.w2" (f x d)  "layer{l}.ffn.b2" (1 x d)
///   TAP:    no tensors
///
/// Tokens are rows, so projections right-multiply: Q = LN(H) * Wq.
struct HeadParams {
  std::vector<NamedTensor> tensors;

  std::size_t size() const noexcept { return tensors.size(); }
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  bool all_finite() const;
  /// Same layout, all zeros.
  HeadParams zeros_like() const;
};

struct TapeGradients {
  HeadParams params;
  Matrix input;  // T x d
};

HeadParams init_params(const HeadSpec& spec, Rng& rng);

/// Video embedding (length d) for one T x d frame block.
Vector forward(const HeadSpec& spec, const HeadParams& params, const Matrix& frames);

/// Exact gradients of dot(upstream, forward(spec, params, frames)).
TapeGradients backward(const HeadSpec& spec, const HeadParams& params, const Matrix& frames,
                       const Vector& upstream);

/// Whether AdamW decoupled weight decay applies to the named tensor: attention and
/// feed-forward matrices and the classifier do; T1D kernels, gains, biases and positional
/// embeddings do not.
bool decays(std::string_view tensor_name);

/// Checkpoint = T4VC container with "head.spec" (1 x 7: kind, frames, dim, layers, heads,
/// kernel, ffn_mult) followed by the parameter tensors.
void save_head(const HeadSpec& spec, const HeadParams& params, const std::filesystem::path& path);
std::pair<HeadSpec, HeadParams> load_head(const std::filesystem::path& path);

}  // namespace t4v
