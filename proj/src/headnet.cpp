#include "t4v/headnet.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace t4v {

namespace {

constexpr const char* kModule = "headnet";
constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr std::size_t kTensorsPerLayer = 12;

enum LayerSlot : std::size_t {
  kLn1Gamma, kLn1Beta, kWq, kWk, kWv, kWo, kLn2Gamma, kLn2Beta, kW1, kB1, kW2, kB2,
};

constexpr const char* kSlotNames[kTensorsPerLayer] = {
    "ln1.gamma", "ln1.beta", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
    "ln2.gamma", "ln2.beta", "ffn.w1",  "ffn.b1",  "ffn.w2",  "ffn.b2",
};

std::size_t slot(std::size_t layer, LayerSlot s) { return 1 + kTensorsPerLayer * layer + s; }

void check_frames(const HeadSpec& spec, const Matrix& frames) {
  if (static_cast<std::size_t>(frames.rows()) != spec.frames || static_cast<std::size_t>(frames.cols()) != spec.dim) {
    std::ostringstream os;
    os << "frames are " << frames.rows() << "x" << frames.cols() << ", head expects " << spec.frames << "x" << spec.dim;
    fail(Errc::dimension, kModule, os.str());
  }
}

void check_params(const HeadSpec& spec, const HeadParams& params) {
  std::size_t expected = 0;
  if (spec.kind == HeadKind::T1D) expected = 1;
  if (spec.kind == HeadKind::TTrans) expected = 1 + kTensorsPerLayer * spec.layers;
  if (params.size() != expected) fail(Errc::dimension, kModule, "parameter count does not match head spec");
}

Vector column_mean(const Matrix& m) {
  Vector acc = Vector::Zero(m.cols());
  for (Eigen::Index t = 0; t < m.rows(); ++t) acc += m.row(t).transpose();
  return acc / static_cast<double>(m.rows());
}

// ---- layer norm over each token row ----

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& xhat, Vector& inv) {
  const Eigen::Index rows = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(rows, x.cols());
  inv.resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double mu = x.row(t).sum() / d;
    const auto centered = (x.row(t).array() - mu).eval();
    const double var = centered.square().sum() / d;
    inv(t) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(t) = centered * inv(t);
  }
  Matrix y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& inv, const Matrix& gamma,
                           Matrix& dgamma, Matrix& dbeta) {
  dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const double mean_dxhat = dxhat.row(t).sum() / d;
    const double mean_dxhat_xhat = dxhat.row(t).dot(xhat.row(t)) / d;
    dx.row(t) = inv(t) * (dxhat.row(t).array() - mean_dxhat - xhat.row(t).array() * mean_dxhat_xhat).matrix();
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double u) {
  const double cdf = 0.5 * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + u * pdf;
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

// ---- temporal transformer ----

struct LayerCache {
  Matrix h_in, a, xhat1, q, k, v, o, h_mid, b, xhat2, u, g;
  Vector inv1, inv2;
  std::vector<Matrix> probs;  // per attention head, T x T
};

struct TransformerTape {
  std::vector<LayerCache> layers;
  Matrix h_out;
};

void ttrans_forward(const HeadSpec& spec, const HeadParams& p, const Matrix& frames, TransformerTape& tape) {
  const auto& w = p.tensors;
  const auto heads = static_cast<Eigen::Index>(spec.heads);
  const Eigen::Index dh = static_cast<Eigen::Index>(spec.dim) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix h = frames + w[0].value;
  tape.layers.assign(spec.layers, {});
  for (std::size_t l = 0; l < spec.layers; ++l) {
    auto& c = tape.layers[l];
    c.h_in = h;
    c.a = layer_norm(h, w[slot(l, kLn1Gamma)].value, w[slot(l, kLn1Beta)].value, c.xhat1, c.inv1);
    c.q = c.a * w[slot(l, kWq)].value;
    c.k = c.a * w[slot(l, kWk)].value;
    c.v = c.a * w[slot(l, kWv)].value;
    c.o.setZero(h.rows(), h.cols());
    c.probs.resize(spec.heads);
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      Matrix s = scale * (c.q.middleCols(hd * dh, dh) * c.k.middleCols(hd * dh, dh).transpose());
      softmax_rows(s);
      c.o.middleCols(hd * dh, dh) = s * c.v.middleCols(hd * dh, dh);
      c.probs[static_cast<std::size_t>(hd)] = std::move(s);
    }
    h += c.o * w[slot(l, kWo)].value;
    c.h_mid = h;
    c.b = layer_norm(h, w[slot(l, kLn2Gamma)].value, w[slot(l, kLn2Beta)].value, c.xhat2, c.inv2);
    c.u = c.b * w[slot(l, kW1)].value;
    c.u.rowwise() += w[slot(l, kB1)].value.row(0);
    c.g = c.u.unaryExpr([](double x) { return gelu(x); });
    Matrix f = c.g * w[slot(l, kW2)].value;
    f.rowwise() += w[slot(l, kB2)].value.row(0);
    h += f;
  }
  tape.h_out = std::move(h);
}

void ttrans_backward(const HeadSpec& spec, const HeadParams& p, const TransformerTape& tape, const Vector& upstream,
                     TapeGradients& grads) {
  const auto& w = p.tensors;
  auto& gw = grads.params.tensors;
  const auto heads = static_cast<Eigen::Index>(spec.heads);
  const Eigen::Index dh = static_cast<Eigen::Index>(spec.dim) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index rows = tape.h_out.rows();

  Matrix dh_acc = (Vector::Ones(rows) * upstream.transpose()) / static_cast<double>(rows);
  for (std::size_t li = spec.layers; li-- > 0;) {
    const auto& c = tape.layers[li];
    // feed-forward block
    gw[slot(li, kW2)].value += c.g.transpose() * dh_acc;
    gw[slot(li, kB2)].value.row(0) += dh_acc.colwise().sum();
    Matrix du = dh_acc * w[slot(li, kW2)].value.transpose();
    du.array() *= c.u.unaryExpr([](double x) { return gelu_grad(x); }).array();
    gw[slot(li, kW1)].value += c.b.transpose() * du;
    gw[slot(li, kB1)].value.row(0) += du.colwise().sum();
    const Matrix db = du * w[slot(li, kW1)].value.transpose();
    dh_acc += layer_norm_backward(db, c.xhat2, c.inv2, w[slot(li, kLn2Gamma)].value, gw[slot(li, kLn2Gamma)].value,
                                  gw[slot(li, kLn2Beta)].value);
    // attention block
    gw[slot(li, kWo)].value += c.o.transpose() * dh_acc;
    const Matrix d_o = dh_acc * w[slot(li, kWo)].value.transpose();
    Matrix dq = Matrix::Zero(rows, c.q.cols()), dk = dq, dv = dq;
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      const Matrix& prob = c.probs[static_cast<std::size_t>(hd)];
      const auto doh = d_o.middleCols(hd * dh, dh);
      const Matrix dp = doh * c.v.middleCols(hd * dh, dh).transpose();
      dv.middleCols(hd * dh, dh) = prob.transpose() * doh;
      const Vector row_dot = (dp.array() * prob.array()).rowwise().sum();
      const Matrix ds = prob.array() * (dp.colwise() - row_dot).array();
      dq.middleCols(hd * dh, dh) = scale * (ds * c.k.middleCols(hd * dh, dh));
      dk.middleCols(hd * dh, dh) = scale * (ds.transpose() * c.q.middleCols(hd * dh, dh));
    }
    gw[slot(li, kWq)].value += c.a.transpose() * dq;
    gw[slot(li, kWk)].value += c.a.transpose() * dk;
    gw[slot(li, kWv)].value += c.a.transpose() * dv;
    const Matrix da = dq * w[slot(li, kWq)].value.transpose() + dk * w[slot(li, kWk)].value.transpose() +
                      dv * w[slot(li, kWv)].value.transpose();
    dh_acc += layer_norm_backward(da, c.xhat1, c.inv1, w[slot(li, kLn1Gamma)].value, gw[slot(li, kLn1Gamma)].value,
                                  gw[slot(li, kLn1Beta)].value);
  }
  gw[0].value += dh_acc;
  grads.input = std::move(dh_acc);
}

// ---- channel-wise temporal convolution ----

Matrix t1d_apply(const Matrix& kernel, const Matrix& frames) {
  const Eigen::Index rows = frames.rows(), d = frames.cols(), k = kernel.cols(), r = k / 2;
  Matrix y = Matrix::Zero(rows, d);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index src = t + j - r;
      if (src < 0 || src >= rows) continue;
      y.row(t).array() += kernel.col(j).transpose().array() * frames.row(src).array();
    }
  return y;
}

}  // namespace

std::string_view to_string(HeadKind kind) noexcept {
  switch (kind) {
    case HeadKind::TAP: return "tap";
    case HeadKind::T1D: return "t1d";
    case HeadKind::TTrans: return "ttrans";
  }
  return "unknown";
}

HeadKind parse_head_kind(std::string_view text) {
  if (text == "tap") return HeadKind::TAP;
  if (text == "t1d") return HeadKind::T1D;
  if (text == "ttrans" || text == "t-trans") return HeadKind::TTrans;
  fail(Errc::usage, kModule, "unknown head kind '" + std::string(text) + "'");
}

void HeadSpec::validate() const {
  if (frames < 1 || dim < 1) fail(Errc::dimension, kModule, "head needs T >= 1 and d >= 1");
  if (kind == HeadKind::T1D && (kernel < 1 || kernel % 2 == 0)) fail(Errc::spec, kModule, "T1D kernel size must be odd");
  if (kind == HeadKind::TTrans) {
    if (layers < 1) fail(Errc::spec, kModule, "TTrans needs >= 1 layer");
    if (heads < 1 || dim % heads != 0) fail(Errc::spec, kModule, "TTrans heads must divide d");
    if (ffn_mult < 1) fail(Errc::spec, kModule, "TTrans feed-forward multiplier must be >= 1");
  }
}

Matrix& HeadParams::at(std::string_view name) {
  for (auto& t : tensors)
    if (t.name == name) return t.value;
  fail(Errc::index, kModule, "no tensor named '" + std::string(name) + "'");
}

const Matrix& HeadParams::at(std::string_view name) const { return const_cast<HeadParams*>(this)->at(name); }

bool HeadParams::all_finite() const {
  for (const auto& t : tensors)
    if (!t.value.allFinite()) return false;
  return true;
}

HeadParams HeadParams::zeros_like() const {
  HeadParams out;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.push_back({t.name, Matrix::Zero(t.value.rows(), t.value.cols())});
  return out;
}

HeadParams init_params(const HeadSpec& spec, Rng& rng) {
  spec.validate();
  const auto d = static_cast<Eigen::Index>(spec.dim);
  HeadParams p;
  if (spec.kind == HeadKind::T1D) {
    Matrix kernel = Matrix::Zero(d, static_cast<Eigen::Index>(spec.kernel));
    kernel.col(static_cast<Eigen::Index>(spec.kernel / 2)).setOnes();
    p.tensors.push_back({"t1d.kernel", std::move(kernel)});
  } else if (spec.kind == HeadKind::TTrans) {
    const auto f = static_cast<Eigen::Index>(spec.ffn_width());
    p.tensors.push_back({"pos", Matrix::Zero(static_cast<Eigen::Index>(spec.frames), d)});
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      auto add = [&](LayerSlot s, Matrix m) { p.tensors.push_back({prefix + kSlotNames[s], std::move(m)}); };
      add(kLn1Gamma, Matrix::Ones(1, d));
      add(kLn1Beta, Matrix::Zero(1, d));
      add(kWq, kInitStd * gaussian_matrix(d, d, rng));
      add(kWk, kInitStd * gaussian_matrix(d, d, rng));
      add(kWv, kInitStd * gaussian_matrix(d, d, rng));
      add(kWo, kInitStd * gaussian_matrix(d, d, rng));
      add(kLn2Gamma, Matrix::Ones(1, d));
      add(kLn2Beta, Matrix::Zero(1, d));
      add(kW1, kInitStd * gaussian_matrix(d, f, rng));
      add(kB1, Matrix::Zero(1, f));
      add(kW2, kInitStd * gaussian_matrix(f, d, rng));
      add(kB2, Matrix::Zero(1, d));
    }
  }
  return p;
}

Vector forward(const HeadSpec& spec, const HeadParams& params, const Matrix& frames) {
  check_frames(spec, frames);
  check_params(spec, params);
  switch (spec.kind) {
    case HeadKind::TAP:
      return column_mean(frames);
    case HeadKind::T1D:
      return column_mean(t1d_apply(params.tensors[0].value, frames));
    case HeadKind::TTrans: {
      TransformerTape tape;
      ttrans_forward(spec, params, frames, tape);
      return column_mean(tape.h_out);
    }
  }
  return {};
}

TapeGradients backward(const HeadSpec& spec, const HeadParams& params, const Matrix& frames, const Vector& upstream) {
  check_frames(spec, frames);
  check_params(spec, params);
  if (static_cast<std::size_t>(upstream.size()) != spec.dim) fail(Errc::dimension, kModule, "upstream gradient length != d");
  const Eigen::Index rows = frames.rows();
  const double inv_t = 1.0 / static_cast<double>(rows);
  TapeGradients g{params.zeros_like(), Matrix()};
  switch (spec.kind) {
    case HeadKind::TAP:
      g.input = Vector::Ones(rows) * (upstream.transpose() * inv_t);
      break;
    case HeadKind::T1D: {
      const Matrix& kernel = params.tensors[0].value;
      Matrix& dkernel = g.params.tensors[0].value;
      const Eigen::Index k = kernel.cols(), r = k / 2;
      const Vector scaled = upstream * inv_t;
      g.input = Matrix::Zero(rows, frames.cols());
      for (Eigen::Index t = 0; t < rows; ++t)
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::Index src = t + j - r;
          if (src < 0 || src >= rows) continue;
          dkernel.col(j).array() += scaled.array() * frames.row(src).transpose().array();
          g.input.row(src).array() += (scaled.array() * kernel.col(j).array()).transpose();
        }
      break;
    }
    case HeadKind::TTrans: {
      TransformerTape tape;
      ttrans_forward(spec, params, frames, tape);
      ttrans_backward(spec, params, tape, upstream, g);
      break;
    }
  }
  return g;
}

bool decays(std::string_view tensor_name) {
  return tensor_name.ends_with(".wq") || tensor_name.ends_with(".wk") || tensor_name.ends_with(".wv") ||
         tensor_name.ends_with(".wo") || tensor_name.ends_with(".w1") || tensor_name.ends_with(".w2") ||
         tensor_name == "classifier.weights";
}

void save_head(const HeadSpec& spec, const HeadParams& params, const std::filesystem::path& path) {
  std::vector<NamedTensor> all;
  Matrix meta(1, 7);
  meta << static_cast<double>(spec.kind), static_cast<double>(spec.frames), static_cast<double>(spec.dim),
      static_cast<double>(spec.layers), static_cast<double>(spec.heads), static_cast<double>(spec.kernel),
      static_cast<double>(spec.ffn_mult);
  all.push_back({"head.spec", meta});
  all.insert(all.end(), params.tensors.begin(), params.tensors.end());
  write_tensors(all, path);
}

std::pair<HeadSpec, HeadParams> load_head(const std::filesystem::path& path) {
  auto all = read_tensors(path);
  if (all.empty() || all[0].name != "head.spec" || all[0].value.size() != 7) {
    fail(Errc::format, kModule, path.string() + " is not a head checkpoint");
  }
  const Matrix& m = all[0].value;
  HeadSpec spec;
  const auto kind = static_cast<int>(m(0, 0));
  if (kind < 0 || kind > 2) fail(Errc::format, kModule, "unknown head kind in checkpoint");
  spec.kind = static_cast<HeadKind>(kind);
  spec.frames = static_cast<std::size_t>(m(0, 1));
  spec.dim = static_cast<std::size_t>(m(0, 2));
  spec.layers = static_cast<std::size_t>(m(0, 3));
  spec.heads = static_cast<std::size_t>(m(0, 4));
  spec.kernel = static_cast<std::size_t>(m(0, 5));
  spec.ffn_mult = static_cast<std::size_t>(m(0, 6));
  spec.validate();
  HeadParams params;
  params.tensors.assign(std::make_move_iterator(all.begin() + 1), std::make_move_iterator(all.end()));
  check_params(spec, params);
  Rng probe(0);
  const HeadParams reference = init_params(spec, probe);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.tensors[i].name != reference.tensors[i].name ||
        params.tensors[i].value.rows() != reference.tensors[i].value.rows() ||
        params.tensors[i].value.cols() != reference.tensors[i].value.cols()) {
      fail(Errc::format, kModule, "checkpoint tensor '" + params.tensors[i].name + "' does not match the head layout");
    }
  }
  return {spec, std::move(params)};
}

}  // namespace t4v
