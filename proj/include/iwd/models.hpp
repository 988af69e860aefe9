#pragma once

// IWD-QUEEN (DAT -> QFRB -> MLP) and IWD-Transformer (DAT -> CFEB -> MLP).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "iwd/adam.hpp"
#include "iwd/autodiff.hpp"
#include "iwd/dat.hpp"
#include "iwd/ddm.hpp"
#include "iwd/qsim.hpp"

namespace iwd {

enum class ModelKind { Queen, Transformer };

inline std::string to_string(ModelKind k) { return k == ModelKind::Queen ? "queen" : "transformer"; }
inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "queen") return ModelKind::Queen;
  if (s == "transformer") return ModelKind::Transformer;
  throw ConfigError("unknown model kind '" + s + "' (expected queen|transformer)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::Queen;
  bool use_se = true;
  dat::DatConfig dat;
  std::size_t mlp_hidden = 16;
  double mlp_dropout = 0.1;
  qsim::XxPairing pairing = qsim::XxPairing::Adjacent;
  double threshold = 0.5;

  qsim::CircuitOptions circuit() const { return {use_se, pairing}; }
  std::size_t feature_width() const { return kind == ModelKind::Queen ? 2 * qsim::kHeads : qsim::kHeads; }

  void validate() const {
    dat.validate();
    if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
    if (mlp_dropout < 0.0 || mlp_dropout >= 1.0) throw ConfigError("mlp_dropout must be in [0,1)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0,1)");
  }
};

// ---------------------------------------------------------------------------
// Refinement stages

/// 16 independent 4-qubit heads on contiguous 4-slices of the token.
/// token: 1x64, angles: 16x28 -> 1x32 Pauli-Z features.
inline ad::Var qfrb_forward(const ad::Var& token, const ad::Var& angles, const qsim::CircuitOptions& opt) {
  using namespace qsim;
  if (token->value.size() != kHeads * kQubits) {
    throw ShapeError("qfrb: expected a 64-value token, got " + shape_str(token->value.shape()));
  }
  if (angles->value.rows() != kHeads || angles->value.cols() != kAnglesPerHead) {
    throw ShapeError("qfrb: expected 16x28 angles, got " + shape_str(angles->value.shape()));
  }
  auto head_params = [angles](std::size_t h) {
    QuantumHeadParams hp;
    for (std::size_t k = 0; k < kAnglesPerHead; ++k) hp.angles[k] = angles->value(h, k);
    return hp;
  };
  Tensor out = Tensor::matrix(1, 2 * kHeads);
  for (std::size_t h = 0; h < kHeads; ++h) {
    const auto o = run_head(token->value.data().subspan(h * kQubits, kQubits), head_params(h), opt);
    out[2 * h] = o[0];
    out[2 * h + 1] = o[1];
  }
  return ad::make_node(std::move(out), {token, angles}, "qfrb", [token, angles, opt, head_params](ad::Node& self) {
    for (std::size_t h = 0; h < kHeads; ++h) {
      const double up[2] = {self.grad[2 * h], self.grad[2 * h + 1]};
      if (up[0] == 0.0 && up[1] == 0.0) continue;
      const auto g = head_gradient(token->value.data().subspan(h * kQubits, kQubits), head_params(h), up, opt);
      if (token->requires_grad) {
        auto& tg = token->grad_buffer();
        for (std::size_t i = 0; i < kQubits; ++i) tg[h * kQubits + i] += g.inputs[i];
      }
      if (angles->requires_grad) {
        auto& ag = angles->grad_buffer();
        for (std::size_t k = 0; k < kAnglesPerHead; ++k) ag(h, k) += g.params[k];
      }
    }
  });
}

/// Per-channel 2D convolution. input: C x (H*W), kernel: C x (KH*KW),
/// bias: C values. `same` pads with zeros on the right/bottom only.
inline ad::Var depthwise_conv2d(const ad::Var& input, const ad::Var& kernel, const ad::Var& bias, std::size_t h,
                                std::size_t w, std::size_t kh, std::size_t kw, bool same) {
  const std::size_t channels = input->value.rows();
  if (input->value.cols() != h * w || kernel->value.rows() != channels || kernel->value.cols() != kh * kw ||
      bias->value.size() != channels) {
    throw ShapeError("depthwise_conv2d: shape mismatch input " + shape_str(input->value.shape()) + " kernel " +
                     shape_str(kernel->value.shape()) + " bias " + shape_str(bias->value.shape()));
  }
  if (!same && (kh > h || kw > w)) throw ShapeError("depthwise_conv2d: kernel larger than input");
  const std::size_t ho = same ? h : h - kh + 1;
  const std::size_t wo = same ? w : w - kw + 1;
  Tensor out = Tensor::matrix(channels, ho * wo);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double s = bias->value[c];
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            if (i + a >= h || j + b >= w) continue;
            s += kernel->value(c, a * kw + b) * input->value(c, (i + a) * w + (j + b));
          }
        out(c, i * wo + j) = s;
      }
  return ad::make_node(std::move(out), {input, kernel, bias}, "depthwise_conv2d",
                       [=](ad::Node& self) {
                         for (std::size_t c = 0; c < channels; ++c)
                           for (std::size_t i = 0; i < ho; ++i)
                             for (std::size_t j = 0; j < wo; ++j) {
                               const double g = self.grad(c, i * wo + j);
                               if (bias->requires_grad) bias->grad_buffer()[c] += g;
                               for (std::size_t a = 0; a < kh; ++a)
                                 for (std::size_t b = 0; b < kw; ++b) {
                                   if (i + a >= h || j + b >= w) continue;
                                   const std::size_t in_idx = (i + a) * w + (j + b);
                                   if (kernel->requires_grad)
                                     kernel->grad_buffer()(c, a * kw + b) += g * input->value(c, in_idx);
                                   if (input->requires_grad)
                                     input->grad_buffer()(c, in_idx) += g * kernel->value(c, a * kw + b);
                                 }
                             }
                       });
}

/// 64 -> 16 channels of 2x2 -> same-padded 2x2 depthwise conv + GELU ->
/// valid 2x2 depthwise conv -> one scalar per channel (1x16).
inline ad::Var cfeb_forward(const ad::Var& token, const dat::Bound& p) {
  const ad::Var x = ad::reshape(token, {qsim::kHeads, 4});
  const ad::Var h = ad::gelu(depthwise_conv2d(x, p["cfeb.k1"], p["cfeb.b1"], 2, 2, 2, 2, true));
  const ad::Var y = depthwise_conv2d(h, p["cfeb.k2"], p["cfeb.b2"], 2, 2, 2, 2, false);
  return ad::reshape(y, {1, qsim::kHeads});
}

/// Sigmoid(LP(DO(GELU(LP(s)))))
inline ad::Var mlp_fuse(const ad::Var& s, const dat::Bound& p, const ModelConfig& cfg, const dat::ForwardContext& ctx) {
  ad::Var h = ad::gelu(ad::linear(s, p["mlp.w1"], p["mlp.b1"]));
  if (ctx.train) h = ad::dropout(h, cfg.mlp_dropout, true, ctx.generator());
  return ad::sigmoid(ad::linear(h, p["mlp.w2"], p["mlp.b2"]));
}

// ---------------------------------------------------------------------------

struct ParameterCensus {
  std::size_t qubits = 0;
  std::size_t quantum_angles = 0;
  std::size_t classical = 0;
  std::size_t dat = 0;
  std::size_t cfeb = 0;
  std::size_t mlp = 0;
};

class IwdModel {
 public:
  IwdModel(ModelConfig cfg, ParameterSet params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    check_parameters();
  }

  static IwdModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ParameterSet p;
    dat::init_params(p, cfg.dat, rng);
    if (cfg.kind == ModelKind::Queen) {
      const auto q = qsim::init_qfrb(rng);
      Tensor angles = Tensor::matrix(qsim::kHeads, qsim::kAnglesPerHead);
      for (std::size_t h = 0; h < qsim::kHeads; ++h)
        for (std::size_t k = 0; k < qsim::kAnglesPerHead; ++k) angles(h, k) = q.heads[h].angles[k];
      p["qfrb.angles"] = std::move(angles);
    } else {
      std::normal_distribution<double> kn(0.0, 0.5);
      for (const char* name : {"cfeb.k1", "cfeb.k2"}) {
        Tensor k = Tensor::matrix(qsim::kHeads, 4);
        for (auto& v : k.vec()) v = kn(rng);
        p[name] = std::move(k);
      }
      p["cfeb.b1"] = Tensor::matrix(1, qsim::kHeads);
      p["cfeb.b2"] = Tensor::matrix(1, qsim::kHeads);
    }
    const std::size_t in = cfg.feature_width();
    std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden)));
    Tensor w1 = Tensor::matrix(in, cfg.mlp_hidden);
    for (auto& v : w1.vec()) v = n1(rng);
    Tensor w2 = Tensor::matrix(cfg.mlp_hidden, 1);
    for (auto& v : w2.vec()) v = n2(rng);
    p["mlp.w1"] = std::move(w1);
    p["mlp.b1"] = Tensor::matrix(1, cfg.mlp_hidden);
    p["mlp.w2"] = std::move(w2);
    p["mlp.b2"] = Tensor::matrix(1, 1);
    return IwdModel(cfg, std::move(p));
  }

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  /// Refined feature vector (1x32 for QUEEN, 1x16 for the transformer).
  ad::Var features(const ad::Var& token, const dat::Bound& p) const {
    if (cfg_.kind == ModelKind::Queen) return qfrb_forward(token, p["qfrb.angles"], cfg_.circuit());
    return cfeb_forward(token, p);
  }

  /// Probability node for one DDM (normalized inside).
  ad::Var forward(const DelayDopplerMap& raw, const dat::Bound& p, const dat::ForwardContext& ctx) const {
    const DelayDopplerMap x = normalize(raw);
    const ad::Var token = dat::forward(x, p, cfg_.dat, ctx);
    return mlp_fuse(features(token, p), p, cfg_, ctx);
  }

  /// Eval-mode probability.
  double predict(const DdmRecord& r) const {
    const dat::Bound p(params_, false);
    return forward(r.ddm, p, {})->value.item();
  }

  int classify(double p) const { return p >= cfg_.threshold ? 1 : 0; }

  ParameterCensus census() const {
    ParameterCensus c;
    for (const auto& [name, t] : params_) {
      if (name.rfind("qfrb.", 0) == 0) continue;
      c.classical += t.size();
      if (name.rfind("dat.", 0) == 0) c.dat += t.size();
      if (name.rfind("cfeb.", 0) == 0) c.cfeb += t.size();
      if (name.rfind("mlp.", 0) == 0) c.mlp += t.size();
    }
    if (cfg_.kind == ModelKind::Queen) {
      c.qubits = qsim::kHeads * qsim::kQubits;
      c.quantum_angles = qsim::kHeads * (qsim::kFeAngles + (cfg_.use_se ? qsim::kSeAngles : 0));
    }
    return c;
  }

 private:
  void check_parameters() const {
    auto need = [&](const std::string& name, std::size_t rows, std::size_t cols) {
      auto it = params_.find(name);
      if (it == params_.end()) throw DataError("model is missing parameter '" + name + "'");
      if (it->second.size() != rows * cols) {
        throw DataError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected [" +
                        std::to_string(rows) + "x" + std::to_string(cols) + "]");
      }
      if (!it->second.all_finite()) throw DataError("parameter '" + name + "' contains non-finite values");
    };
    using namespace dat;
    need("dat.patch_proj", kPatchValues, kWidth);
    need("dat.cls", 1, kWidth);
    need("dat.pos_embed", kTokens, kWidth);
    need("dat.alpha_raw", 1, 1);
    need("dat.central_proj", kCentralSize, kWidth);
    need("dat.central_bias", 1, kWidth);
    for (const char* n : {"dat.wq", "dat.wk", "dat.wv"}) need(n, kWidth, kWidth);
    for (const char* n : {"dat.ln1_gamma", "dat.ln1_beta", "dat.ln2_gamma", "dat.ln2_beta", "dat.ffn_b2"}) need(n, 1, kWidth);
    need("dat.ffn_w1", kWidth, cfg_.dat.ffn_hidden);
    need("dat.ffn_b1", 1, cfg_.dat.ffn_hidden);
    need("dat.ffn_w2", cfg_.dat.ffn_hidden, kWidth);
    if (cfg_.kind == ModelKind::Queen) {
      need("qfrb.angles", qsim::kHeads, qsim::kAnglesPerHead);
    } else {
      for (const char* n : {"cfeb.k1", "cfeb.k2"}) need(n, qsim::kHeads, 4);
      for (const char* n : {"cfeb.b1", "cfeb.b2"}) need(n, 1, qsim::kHeads);
    }
    need("mlp.w1", cfg_.feature_width(), cfg_.mlp_hidden);
    need("mlp.b1", 1, cfg_.mlp_hidden);
    need("mlp.w2", cfg_.mlp_hidden, 1);
    need("mlp.b2", 1, 1);
  }

  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace iwd
