#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// A Var is a node in a dynamically built graph. Each op computes its value
// eagerly and, when any input requires a gradient, records a closure that
// pushes the output gradient back to its inputs. backward() walks the graph
// in reverse topological order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "iwd/errors.hpp"
#include "iwd/tensor.hpp"

namespace iwd::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
    return grad;
  }
};

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite value produced by ") + op);
}

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  check_finite(n->value, "constant");
  return n;
}

inline Var parameter(Tensor value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

/// Creates an op node. `backward` receives the finished node (with grad set)
/// and is only stored when some parent needs a gradient.
inline Var make_node(Tensor value, std::vector<Var> parents, const char* op,
                     std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.shape() != b->value.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  }
}

/// Runs reverse accumulation from `root`, seeding its gradient with `seed`.
inline void backward(const Var& root, const Tensor& seed) {
  if (seed.shape() != root->value.shape()) {
    throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " vs root " +
                     shape_str(root->value.shape()));
  }
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& g = root->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

/// Scalar-loss entry point.
inline void backward(const Var& loss) {
  if (loss->value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss->value.shape()));
  }
  if (!std::isfinite(loss->value[0])) throw NumericalError("backward on non-finite loss");
  backward(loss, Tensor(loss->value.shape(), 1.0));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m,k] * b[k,n]
inline Var matmul(const Var& a, const Var& b) {
  const auto m = a->value.rows(), k = a->value.cols();
  const auto k2 = b->value.rows(), n = b->value.cols();
  if (k != k2) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a->value.shape()) + " x " + shape_str(b->value.shape()));
  }
  Tensor out = Tensor::matrix(m, n);
  const double* A = a->value.data().data();
  const double* B = b->value.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  return make_node(std::move(out), {a, b}, "matmul", [a, b, m, k, n](Node& self) {
    const double* G = self.grad.data().data();
    if (a->requires_grad) {
      // dA = G * B^T
      const double* B = b->value.data().data();
      double* dA = a->grad_buffer().data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          const double* grow = G + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          dA[i * k + p] += s;
        }
    }
    if (b->requires_grad) {
      // dB = A^T * G
      const double* A = a->value.data().data();
      double* dB = b->grad_buffer().data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = G + i * n;
          double* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
    }
  });
}

/// a[m,k] * b[n,k]^T
inline Var matmul_nt(const Var& a, const Var& b) {
  const auto m = a->value.rows(), k = a->value.cols();
  const auto n = b->value.rows(), k2 = b->value.cols();
  if (k != k2) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a->value.shape()) + " x " +
                     shape_str(b->value.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(m, n);
  const double* A = a->value.data().data();
  const double* B = b->value.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out(i, j) = s;
    }
  return make_node(std::move(out), {a, b}, "matmul_nt", [a, b, m, k, n](Node& self) {
    const double* G = self.grad.data().data();
    const double* A = a->value.data().data();
    const double* B = b->value.data().data();
    if (a->requires_grad) {
      double* dA = a->grad_buffer().data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
        }
    }
    if (b->requires_grad) {
      double* dB = b->grad_buffer().data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A[i * k + p];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, "add", [a, b](Node& self) {
    for (const Var* p : {&a, &b}) {
      if (!(*p)->requires_grad) continue;
      auto& g = (*p)->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// a[m,n] + bias[1,n] broadcast over rows
inline Var add_row(const Var& a, const Var& bias) {
  const auto m = a->value.rows(), n = a->value.cols();
  if (bias->value.size() != n) {
    throw ShapeError("add_row: shape mismatch " + shape_str(a->value.shape()) + " vs bias " +
                     shape_str(bias->value.shape()));
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bias->value[j];
  return make_node(std::move(out), {a, bias}, "add_row", [a, bias, m, n](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bias->requires_grad) {
      auto& g = bias->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad(i, j);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, "mul", [a, b](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a->value[i];
    }
  });
}

/// k * a for a fixed constant k
inline Var scale(const Var& a, double k) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= k;
  return make_node(std::move(out), {a}, "scale", [a, k](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

/// 1 - a
inline Var one_minus(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = 1.0 - v;
  return make_node(std::move(out), {a}, "one_minus", [a](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

/// s * a where s holds a single value
inline Var mul_scalar(const Var& s, const Var& a) {
  if (s->value.size() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s->value.shape()));
  const double k = s->value[0];
  Tensor out = a->value;
  for (auto& v : out.vec()) v *= k;
  return make_node(std::move(out), {s, a}, "mul_scalar", [s, a](Node& self) {
    if (s->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * a->value[i];
      s->grad_buffer()[0] += acc;
    }
    if (a->requires_grad) {
      const double k = s->value[0];
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data()) s += v;
  return make_node(Tensor::scalar(s), {a}, "sum", [a](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var concat_rows(const Var& a, const Var& b) {
  const auto n = a->value.cols();
  if (b->value.cols() != n) {
    throw ShapeError("concat_rows: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  }
  const auto ra = a->value.rows(), rb = b->value.rows();
  std::vector<double> data(a->value.vec());
  data.insert(data.end(), b->value.vec().begin(), b->value.vec().end());
  return make_node(Tensor({ra + rb, n}, std::move(data)), {a, b}, "concat_rows", [a, b, ra, n](Node& self) {
    if (a->requires_grad) {
      auto& g = a->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& g = b->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[ra * n + i];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const auto m = parts.front()->value.rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != m) {
      throw ShapeError("concat_cols: shape mismatch " + shape_str(parts.front()->value.shape()) + " vs " +
                       shape_str(p->value.shape()));
    }
    total += p->value.cols();
  }
  Tensor out = Tensor::matrix(m, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto c = p->value.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out(i, off + j) = p->value(i, j);
    off += c;
  }
  return make_node(std::move(out), parts, "concat_cols", [parts, m](Node& self) {
    std::size_t off = 0;
    const auto total = self.value.cols();
    for (const auto& p : parts) {
      const auto c = p->value.cols();
      if (p->requires_grad) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * total + off + j];
      }
      off += c;
    }
  });
}

/// rows [begin, end)
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const auto m = a->value.rows(), n = a->value.cols();
  if (begin >= end || end > m) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(a->value.shape()));
  }
  std::vector<double> data(a->value.vec().begin() + begin * n, a->value.vec().begin() + end * n);
  return make_node(Tensor({end - begin, n}, std::move(data)), {a}, "slice_rows", [a, begin, n](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

/// cols [begin, end)
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const auto m = a->value.rows(), n = a->value.cols();
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(a->value.shape()));
  }
  const auto w = end - begin;
  Tensor out = Tensor::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = a->value(i, begin + j);
  return make_node(std::move(out), {a}, "slice_cols", [a, begin, m, n, w](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out = a->value;
  out.reshape(std::move(shape));
  return make_node(std::move(out), {a}, "reshape", [a](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

inline Var softmax_rows(const Var& a) {
  const auto m = a->value.rows(), n = a->value.cols();
  Tensor out = a->value;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, out(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out(i, j) = std::exp(out(i, j) - mx));
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  return make_node(std::move(out), {a}, "softmax_rows", [a, m, n](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < n; ++j) g(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
    }
  });
}

/// Per-row standardization followed by an elementwise affine map.
inline Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const auto m = a->value.rows(), n = a->value.cols();
  if (gamma->value.size() != n || beta->value.size() != n) {
    throw ShapeError("layer_norm_rows: affine shape mismatch " + shape_str(gamma->value.shape()) + "/" +
                     shape_str(beta->value.shape()) + " for input " + shape_str(a->value.shape()));
  }
  Tensor xhat = Tensor::matrix(m, n);
  std::vector<double> inv_std(m);
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += a->value(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = a->value(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(i, j) = (a->value(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gamma->value[j] + beta->value[j];
    }
  }
  return make_node(std::move(out), {a, gamma, beta}, "layer_norm_rows",
                   [a, gamma, beta, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                     if (gamma->requires_grad || beta->requires_grad) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) {
                           if (gamma->requires_grad) gamma->grad_buffer()[j] += self.grad(i, j) * xhat(i, j);
                           if (beta->requires_grad) beta->grad_buffer()[j] += self.grad(i, j);
                         }
                     }
                     if (!a->requires_grad) return;
                     auto& g = a->grad_buffer();
                     const double inv_n = 1.0 / static_cast<double>(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double mean_g = 0.0, mean_gx = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gj = self.grad(i, j) * gamma->value[j];
                         mean_g += gj;
                         mean_gx += gj * xhat(i, j);
                       }
                       mean_g *= inv_n;
                       mean_gx *= inv_n;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gj = self.grad(i, j) * gamma->value[j];
                         g(i, j) += inv_std[i] * (gj - mean_g - xhat(i, j) * mean_gx);
                       }
                     }
                   });
}

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * (std::numbers::sqrt2 / 2))); }
inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * (std::numbers::sqrt2 / 2)));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

/// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = gelu_value(v);
  return make_node(std::move(out), {a}, "gelu", [a](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_derivative(a->value[i]);
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = sigmoid_value(v);
  return make_node(std::move(out), {a}, "sigmoid", [a](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

/// Inverted dropout. Identity (same node) when not training or rate == 0.
template <class Rng>
Var dropout(const Var& a, double rate, bool train_mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!train_mode || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  std::vector<double> mask(a->value.size());
  for (auto& m : mask) m = coin(rng) ? 1.0 / keep : 0.0;
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {a}, "dropout", [a, mask = std::move(mask)](Node& self) {
    auto& g = a->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

/// x[m,k] * w[k,n] + b[1,n]
inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

}  // namespace iwd::ad
