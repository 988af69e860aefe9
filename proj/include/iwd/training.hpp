#pragma once

// Losses (binary cross-entropy + differentiable kappa) and the mini-batch
// training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "iwd/adam.hpp"
#include "iwd/ddm.hpp"
#include "iwd/errors.hpp"
#include "iwd/evaluation.hpp"
#include "iwd/models.hpp"
#include "iwd/parallel.hpp"

namespace iwd {

enum class KappaForm {
  Printed,  // 1 - [2Σpy - ΣpΣy/B] / [Σp² + Σy² - 2Σpy/B]
  Cohen,    // 1 - [2Σpy - 2ΣpΣy/B] / [Σp + Σy - 2ΣpΣy/B]
};

inline std::string to_string(KappaForm f) { return f == KappaForm::Printed ? "printed" : "cohen"; }
inline KappaForm kappa_form_from_string(const std::string& s) {
  if (s == "printed") return KappaForm::Printed;
  if (s == "cohen") return KappaForm::Cohen;
  throw ConfigError("unknown kappa form '" + s + "' (expected printed|cohen)");
}

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t epochs = 150;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double bce_weight = 1.0;
  double kappa_weight = 1.0;
  double clamp_eps = 1e-7;
  double kappa_degenerate_tol = 1e-12;
  KappaForm kappa_form = KappaForm::Printed;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (kappa_weight != 0.0 && batch_size < 2) throw ConfigError("batch_size must be >= 2 when the kappa loss is on");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
    if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must be in (0, 0.5)");
    if (!std::isfinite(bce_weight) || !std::isfinite(kappa_weight)) throw ConfigError("loss weights must be finite");
  }
};

namespace detail {
inline void check_batch(std::span<const double> p, std::span<const int> y, const char* what) {
  if (p.empty()) throw DomainError(std::string(what) + ": empty batch");
  if (p.size() != y.size()) throw ShapeError(std::string(what) + ": prediction/label length mismatch");
  for (int v : y)
    if (v != 0 && v != 1) throw DomainError(std::string(what) + ": labels must be 0 or 1");
}
}  // namespace detail

struct LossValue {
  std::optional<double> value;  // empty when the term was skipped
  std::vector<double> grad;     // d value / d p_i (zeros when skipped)
};

/// -mean(y log p + (1-y) log(1-p)) with p clamped to [eps, 1-eps].
inline LossValue bce_loss(std::span<const double> p, std::span<const int> y, double eps = 1e-7) {
  detail::check_batch(p, y, "bce_loss");
  const double b = static_cast<double>(p.size());
  LossValue out;
  out.grad.assign(p.size(), 0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], eps, 1.0 - eps);
    s += y[i] ? std::log(pc) : std::log(1.0 - pc);
    if (p[i] > eps && p[i] < 1.0 - eps) out.grad[i] = -(y[i] ? 1.0 / pc : -1.0 / (1.0 - pc)) / b;
  }
  out.value = -s / b;
  return out;
}

/// Differentiable kappa loss. Batches whose denominator magnitude falls
/// below `tol` (or with fewer than two samples) are skipped.
inline LossValue kappa_loss(std::span<const double> p, std::span<const int> y, KappaForm form = KappaForm::Printed,
                            double tol = 1e-12) {
  detail::check_batch(p, y, "kappa_loss");
  LossValue out;
  out.grad.assign(p.size(), 0.0);
  if (p.size() < 2) return out;
  const double b = static_cast<double>(p.size());
  double spy = 0, sp = 0, sy = 0, spp = 0, syy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    spy += p[i] * y[i];
    sp += p[i];
    sy += y[i];
    spp += p[i] * p[i];
    syy += y[i] * y[i];
  }
  double num = 0, den = 0;
  if (form == KappaForm::Printed) {
    num = 2 * spy - sp * sy / b;
    den = spp + syy - 2 * spy / b;
  } else {
    num = 2 * spy - 2 * sp * sy / b;
    den = sp + sy - 2 * sp * sy / b;
  }
  if (!(std::abs(den) >= tol)) return out;
  out.value = 1.0 - num / den;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double dnum = 0, dden = 0;
    if (form == KappaForm::Printed) {
      dnum = 2.0 * y[i] - sy / b;
      dden = 2.0 * p[i] - 2.0 * y[i] / b;
    } else {
      dnum = 2.0 * y[i] - 2.0 * sy / b;
      dden = 1.0 - 2.0 * sy / b;
    }
    out.grad[i] = -(dnum * den - num * dden) / (den * den);
  }
  return out;
}

struct BatchLoss {
  double total = 0.0;
  double bce = 0.0;
  std::optional<double> kappa;
  std::vector<double> grad;
};

inline BatchLoss total_loss(std::span<const double> p, std::span<const int> y, const TrainConfig& cfg) {
  const LossValue b = bce_loss(p, y, cfg.clamp_eps);
  BatchLoss out;
  out.bce = *b.value;
  out.total = cfg.bce_weight * out.bce;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out.grad[i] = cfg.bce_weight * b.grad[i];
  if (cfg.kappa_weight != 0.0) {
    const LossValue k = kappa_loss(p, y, cfg.kappa_form, cfg.kappa_degenerate_tol);
    out.kappa = k.value;
    if (k.value) {
      out.total += cfg.kappa_weight * *k.value;
      for (std::size_t i = 0; i < p.size(); ++i) out.grad[i] += cfg.kappa_weight * k.grad[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data split

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic split keyed on the record id alone: (FNV-1a(id) mod 100)
/// below `train_percent` goes to training.
inline bool is_train_id(std::string_view id, unsigned train_percent = 80) { return fnv1a64(id) % 100 < train_percent; }

struct Split {
  std::vector<DdmRecord> train;
  std::vector<DdmRecord> val;
};

inline Split split_by_id(const std::vector<DdmRecord>& records, unsigned train_percent = 80) {
  Split s;
  for (const auto& r : records) (is_train_id(r.id, train_percent) ? s.train : s.val).push_back(r);
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

inline std::vector<double> predict_all(const IwdModel& model, std::span<const DdmRecord> records,
                                       std::size_t threads = 0) {
  std::vector<double> p(records.size());
  const dat::Bound bound(model.params(), false);
  parallel_for(records.size(), threads, [&](std::size_t i) { p[i] = model.forward(records[i].ddm, bound, {})->value.item(); });
  return p;
}

inline ConfusionCounts confusion_of(const IwdModel& model, std::span<const DdmRecord> records,
                                    std::span<const double> p) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < records.size(); ++i) c.add(model.classify(p[i]), records[i].label.value());
  return c;
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_bce = 0.0;
  std::optional<double> train_kappa;
  Metrics val;
  std::size_t kappa_skips = 0;
};

inline std::string metrics_csv_header() {
  return "epoch,train_loss,train_bce,train_kappa,val_recall,val_precision,val_f1,val_oa,val_kappa_metric,kappa_skips\n";
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline std::string metrics_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.train_bce) << ','
     << format_optional(e.train_kappa) << ',' << format_optional(e.val.recall) << ','
     << format_optional(e.val.precision) << ',' << format_optional(e.val.f1) << ',' << format_optional(e.val.oa)
     << ',' << format_optional(e.val.kappa) << ',' << e.kappa_skips << '\n';
  return os.str();
}

struct BatchGradient {
  BatchLoss loss;
  std::map<std::string, Tensor> grad;
};

/// Total-loss gradient over a batch in train mode. Each sample gets its own
/// graph and dropout stream, and per-sample gradients are reduced in index
/// order so results do not depend on the thread count.
inline BatchGradient batch_gradient(const IwdModel& model, std::span<const DdmRecord* const> batch,
                                    const TrainConfig& cfg, std::uint64_t stream_seed) {
  const std::size_t n = batch.size();
  std::vector<dat::Bound> bounds(n);
  std::vector<ad::Var> outputs(n);
  std::vector<double> p(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!batch[i]->label) throw DataError("record '" + batch[i]->id + "' has no label");
    y[i] = *batch[i]->label;
  }
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    std::mt19937_64 rng(mix_seed(stream_seed, i));
    dat::ForwardContext ctx{true, &rng, nullptr};
    try {
      bounds[i] = dat::Bound(model.params(), true);
      outputs[i] = model.forward(batch[i]->ddm, bounds[i], ctx);
    } catch (const NumericalError& e) {
      throw NumericalError("record '" + batch[i]->id + "' (batch position " + std::to_string(i) + "): " + e.what());
    }
    p[i] = outputs[i]->value.item();
  });
  BatchLoss loss = total_loss(p, y, cfg);
  if (!std::isfinite(loss.total)) {
    std::ostringstream os;
    os << "non-finite loss " << loss.total << " (bce " << loss.bce << ") on a batch of " << n << ", first id "
       << batch.front()->id;
    throw NumericalError(os.str());
  }
  std::vector<std::map<std::string, Tensor>> grads(n);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    ad::backward(outputs[i], Tensor::matrix(1, 1, loss.grad[i]));
    grads[i] = bounds[i].gradients();
    outputs[i].reset();
    bounds[i] = {};
  });
  std::map<std::string, Tensor> total = std::move(grads[0]);
  for (std::size_t i = 1; i < n; ++i)
    for (auto& [name, g] : total) {
      const auto& gi = grads[i].at(name);
      auto dst = g.data();
      auto src = gi.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  return {std::move(loss), std::move(total)};
}

/// One Adam step on a batch; returns the batch loss.
inline BatchLoss train_step(IwdModel& model, AdamOptimizer& opt, std::span<const DdmRecord* const> batch,
                            const TrainConfig& cfg, std::uint64_t stream_seed) {
  BatchGradient g = batch_gradient(model, batch, cfg, stream_seed);
  opt.step(model.params(), g.grad);
  return std::move(g.loss);
}

struct TrainResult {
  std::vector<EpochLog> epochs;
};

inline TrainResult train(IwdModel& model, const std::vector<DdmRecord>& train_set, const std::vector<DdmRecord>& val_set,
                         const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  for (const auto& r : val_set)
    if (!r.label) throw DataError("validation record '" + r.id + "' has no label");
  AdamOptimizer opt(cfg.lr);
  std::vector<const DdmRecord*> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = &train_set[i];
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5eed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    double kappa_sum = 0.0;
    std::size_t kappa_n = 0, batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const DdmRecord* const> batch(order.data() + start, end - start);
      const BatchLoss loss = train_step(model, opt, batch, cfg, mix_seed(cfg.seed, epoch, b));
      log.train_loss += loss.total;
      log.train_bce += loss.bce;
      ++batches;
      if (loss.kappa) {
        kappa_sum += *loss.kappa;
        ++kappa_n;
      } else if (cfg.kappa_weight != 0.0) {
        ++log.kappa_skips;
      }
    }
    log.train_loss /= static_cast<double>(batches);
    log.train_bce /= static_cast<double>(batches);
    if (kappa_n) log.train_kappa = kappa_sum / static_cast<double>(kappa_n);
    if (!val_set.empty()) {
      const auto p = predict_all(model, val_set, cfg.threads);
      log.val = metrics(confusion_of(model, val_set, p));
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace iwd
