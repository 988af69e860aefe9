#pragma once

// DDM-aware transformer encoder. Produces the 64-dimensional CLS output
// token that feeds the quantum (or convolutional) refinement stage.

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "iwd/adam.hpp"
#include "iwd/autodiff.hpp"
#include "iwd/ddm.hpp"

namespace iwd::dat {

inline constexpr std::size_t kWidth = 64;
inline constexpr std::size_t kPatch = 2;
inline constexpr std::size_t kPatchRows = (kDelayBins - 1) / kPatch;    // 8
inline constexpr std::size_t kPatchCols = (kDopplerBins - 1) / kPatch;  // 5
inline constexpr std::size_t kPatches = kPatchRows * kPatchCols;        // 40
inline constexpr std::size_t kPatchValues = kPatch * kPatch;            // 4
inline constexpr std::size_t kTokens = kPatches + 1;                    // 41

struct DatConfig {
  std::size_t ffn_hidden = 128;
  std::size_t heads = 1;
  double dropout = 0.1;

  void validate() const {
    if (heads == 0 || kWidth % heads != 0) throw ConfigError("attention heads must divide 64");
    if (ffn_hidden == 0) throw ConfigError("ffn_hidden must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  }
};

/// Per-call state shared by every stochastic op in one forward pass.
struct ForwardContext {
  bool train = false;
  std::mt19937_64* rng = nullptr;
  std::vector<std::vector<double>>* attention_trace = nullptr;  // one weight row per head

  std::mt19937_64& generator() const {
    if (!rng) throw std::logic_error("training-mode forward pass requires an RNG");
    return *rng;
  }
};

/// Leaf Vars for every parameter of a model, keyed like the ParameterSet.
class Bound {
 public:
  Bound() = default;
  Bound(const ParameterSet& params, bool requires_grad) {
    for (const auto& [name, t] : params) vars_.emplace(name, requires_grad ? ad::parameter(t) : ad::constant(t));
  }

  const ad::Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  std::map<std::string, Tensor> gradients() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : vars_) out.emplace(name, v->grad.size() ? v->grad : Tensor(v->value.shape(), 0.0));
    return out;
  }

 private:
  std::map<std::string, ad::Var> vars_;
};

template <class Rng>
void init_params(ParameterSet& p, const DatConfig& cfg, Rng& rng) {
  cfg.validate();
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kWidth)));
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.vec()) v = normal(rng);
    return t;
  };
  p["dat.patch_proj"] = random(kPatchValues, kWidth);
  p["dat.cls"] = Tensor::matrix(1, kWidth);
  p["dat.pos_embed"] = Tensor::matrix(kTokens, kWidth);
  p["dat.alpha_raw"] = Tensor::scalar(0.0);
  p["dat.central_proj"] = random(kCentralSize, kWidth);
  p["dat.central_bias"] = Tensor::matrix(1, kWidth);
  p["dat.wq"] = random(kWidth, kWidth);
  p["dat.wk"] = random(kWidth, kWidth);
  p["dat.wv"] = random(kWidth, kWidth);
  p["dat.ln1_gamma"] = Tensor::matrix(1, kWidth, 1.0);
  p["dat.ln1_beta"] = Tensor::matrix(1, kWidth);
  p["dat.ln2_gamma"] = Tensor::matrix(1, kWidth, 1.0);
  p["dat.ln2_beta"] = Tensor::matrix(1, kWidth);
  p["dat.ffn_w1"] = random(kWidth, cfg.ffn_hidden);
  p["dat.ffn_b1"] = Tensor::matrix(1, cfg.ffn_hidden);
  p["dat.ffn_w2"] = random(cfg.ffn_hidden, kWidth);
  p["dat.ffn_b2"] = Tensor::matrix(1, kWidth);
}

/// Drops the last delay row and Doppler column, then tiles 2x2 patches in
/// row-major patch order; each patch is flattened row-major.
inline Tensor patchify(const DelayDopplerMap& ddm) {
  Tensor out = Tensor::matrix(kPatches, kPatchValues);
  for (std::size_t k = 0; k < kPatches; ++k) {
    const std::size_t r0 = kPatch * (k / kPatchCols);
    const std::size_t c0 = kPatch * (k % kPatchCols);
    for (std::size_t a = 0; a < kPatch; ++a)
      for (std::size_t b = 0; b < kPatch; ++b) out(k, a * kPatch + b) = ddm(r0 + a, c0 + b);
  }
  return out;
}

/// d = GELU(x_central * W + b)
inline ad::Var embed_central(const ad::Var& x_central, const Bound& p) {
  return ad::gelu(ad::linear(x_central, p["dat.central_proj"], p["dat.central_bias"]));
}

inline ad::Var alpha(const Bound& p) { return ad::sigmoid(p["dat.alpha_raw"]); }

/// (1 - alpha) c + alpha d
inline ad::Var ddm_aware_cls(const ad::Var& c, const ad::Var& d, const ad::Var& alpha) {
  return ad::add(ad::mul_scalar(ad::one_minus(alpha), c), ad::mul_scalar(alpha, d));
}

/// (c_DDM row || patches * L) + E
inline ad::Var build_sequence(const ad::Var& patches, const ad::Var& c_ddm, const Bound& p) {
  return ad::add(ad::concat_rows(c_ddm, ad::matmul(patches, p["dat.patch_proj"])), p["dat.pos_embed"]);
}

/// CLS-query attention over the patch tokens followed by the feed-forward
/// block; returns output row 0.
///
/// Keys and values are never materialized: q K^T = (q W_K^T) N^T and
/// softmax(.) V = (softmax(.) N) W_V, with N the normalized patch tokens.
/// Layer norm and the FFN act row-wise, so only row 0 is pushed through
/// the FFN.
inline ad::Var attend(const ad::Var& seq, const Bound& p, const DatConfig& cfg, const ForwardContext& ctx) {
  if (seq->value.rows() != kTokens || seq->value.cols() != kWidth) {
    throw ShapeError("attend: expected a 41x64 token sequence, got " + shape_str(seq->value.shape()));
  }
  const ad::Var normed = ad::layer_norm_rows(seq, p["dat.ln1_gamma"], p["dat.ln1_beta"]);
  const ad::Var t_cls = ad::slice_rows(seq, 0, 1);
  const ad::Var n_cls = ad::slice_rows(normed, 0, 1);
  const ad::Var n_local = ad::slice_rows(normed, 1, kTokens);
  const ad::Var q = ad::matmul(n_cls, p["dat.wq"]);

  const std::size_t dh = kWidth / cfg.heads;
  std::vector<ad::Var> head_out;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    ad::Var qh = q, wk = p["dat.wk"], wv = p["dat.wv"];
    if (cfg.heads > 1) {
      qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      wk = ad::slice_cols(wk, h * dh, (h + 1) * dh);
      wv = ad::slice_cols(wv, h * dh, (h + 1) * dh);
    }
    const ad::Var scores =
        ad::scale(ad::matmul_nt(ad::matmul_nt(qh, wk), n_local), 1.0 / std::sqrt(static_cast<double>(dh)));
    const ad::Var weights = ad::softmax_rows(scores);
    if (ctx.attention_trace) ctx.attention_trace->push_back(weights->value.vec());
    head_out.push_back(ad::matmul(ad::matmul(weights, n_local), wv));
  }
  const ad::Var mha = cfg.heads > 1 ? ad::concat_cols(head_out) : head_out.front();
  const ad::Var row0 = ad::add(mha, t_cls);

  const ad::Var h0 = ad::layer_norm_rows(row0, p["dat.ln2_gamma"], p["dat.ln2_beta"]);
  ad::Var f = ad::gelu(ad::linear(h0, p["dat.ffn_w1"], p["dat.ffn_b1"]));
  if (ctx.train) f = ad::dropout(f, cfg.dropout, true, ctx.generator());
  f = ad::linear(f, p["dat.ffn_w2"], p["dat.ffn_b2"]);
  if (ctx.train) f = ad::dropout(f, cfg.dropout, true, ctx.generator());
  return ad::add(row0, f);
}

/// Full encoder on a max-normalized DDM.
inline ad::Var forward(const DelayDopplerMap& normalized, const Bound& p, const DatConfig& cfg,
                       const ForwardContext& ctx) {
  const auto central = central_region(normalized);
  const ad::Var x_central = ad::constant(Tensor::row({central.begin(), central.end()}));
  const ad::Var d = embed_central(x_central, p);
  const ad::Var c_ddm = ddm_aware_cls(p["dat.cls"], d, alpha(p));
  const ad::Var seq = build_sequence(ad::constant(patchify(normalized)), c_ddm, p);
  return attend(seq, p, cfg, ctx);
}

}  // namespace iwd::dat
