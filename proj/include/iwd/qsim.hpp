#pragma once

// Exact 4-qubit state-vector simulation of one quantum head:
//   RX angle embedding -> FE (RY, XX, RX, XX, RY) -> SE (four CRX blocks)
//   -> Pauli-Z expectations on qubits 0 and 2.
// Gradients use the adjoint method; the parameter-shift rule is provided as
// an independent route.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iwd/complex_ops.hpp"
#include "iwd/errors.hpp"
#include "iwd/tensor.hpp"

namespace iwd::qsim {

inline constexpr std::size_t kQubits = 4;
inline constexpr std::size_t kDim = 16;
inline constexpr std::size_t kHeads = 16;
inline constexpr std::size_t kFeAngles = 16;
inline constexpr std::size_t kSeAngles = 12;
inline constexpr std::size_t kAnglesPerHead = kFeAngles + kSeAngles;
inline constexpr std::array<std::size_t, 2> kMeasuredQubits{0, 2};

// ---------------------------------------------------------------------------
// Gate matrices

inline Gate2 rx_matrix(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  return {Complex(c, 0), Complex(0, -s), Complex(0, -s), Complex(c, 0)};
}

inline Gate2 ry_matrix(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  return {Complex(c, 0), Complex(-s, 0), Complex(s, 0), Complex(c, 0)};
}

inline Gate4 xx_matrix(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  const Complex d(c, 0), o(0, -s), z(0, 0);
  return {d, z, z, o,  //
          z, d, o, z,  //
          z, o, d, z,  //
          o, z, z, d};
}

inline Gate2 rx_derivative(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  return {Complex(-s / 2, 0), Complex(0, -c / 2), Complex(0, -c / 2), Complex(-s / 2, 0)};
}

inline Gate2 ry_derivative(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  return {Complex(-s / 2, 0), Complex(-c / 2, 0), Complex(c / 2, 0), Complex(-s / 2, 0)};
}

inline Gate4 xx_derivative(double theta) {
  const double c = std::cos(theta / 2), s = std::sin(theta / 2);
  const Complex d(-s / 2, 0), o(0, -c / 2), z(0, 0);
  return {d, z, z, o,  //
          z, d, o, z,  //
          z, o, d, z,  //
          o, z, z, d};
}

// ---------------------------------------------------------------------------
// State

class StateVector {
 public:
  StateVector() : amps_({kDim}) { amps_.re()[0] = 1.0; }

  /// Computational basis state |index>.
  static StateVector basis(std::size_t index) {
    if (index >= kDim) throw std::out_of_range("basis index " + std::to_string(index) + " >= 16");
    StateVector s;
    s.amps_.re()[0] = 0.0;
    s.amps_.re()[index] = 1.0;
    return s;
  }

  Complex amplitude(std::size_t i) const { return {amps_.re()[i], amps_.im()[i]}; }
  void set_amplitude(std::size_t i, Complex a) {
    amps_.re()[i] = a.real();
    amps_.im()[i] = a.imag();
  }
  double norm_squared() const { return amps_.norm_squared(); }

  ComplexTensor& amplitudes() { return amps_; }
  const ComplexTensor& amplitudes() const { return amps_; }

 private:
  ComplexTensor amps_;
};

inline void apply_rx(StateVector& s, std::size_t qubit, double theta) {
  apply_gate(s.amplitudes(), qubit, rx_matrix(theta));
}
inline void apply_ry(StateVector& s, std::size_t qubit, double theta) {
  apply_gate(s.amplitudes(), qubit, ry_matrix(theta));
}
inline void apply_xx(StateVector& s, std::size_t qa, std::size_t qb, double theta) {
  apply_gate(s.amplitudes(), qa, qb, xx_matrix(theta));
}
inline void apply_crx(StateVector& s, std::size_t control, std::size_t target, double theta) {
  apply_controlled_gate(s.amplitudes(), control, target, rx_matrix(theta));
}

/// <Z> on one qubit.
inline double measure_z(const StateVector& s, std::size_t qubit) {
  const std::size_t bit = qubit_mask(kQubits, qubit);
  double e = 0.0;
  for (std::size_t i = 0; i < kDim; ++i) {
    const double p = std::norm(s.amplitude(i));
    e += (i & bit) ? -p : p;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Parameters and circuit layout

/// 28 angles of one head, laid out as
///   [0,4)  RY layer 1      [4,6)  XX layer 1     [6,10) RX layer
///   [10,12) XX layer 2     [12,16) RY layer 2    [16,28) SE CRX angles
/// SE angles are grouped per CRX block (control 0,1,2,3), targets ascending.
struct QuantumHeadParams {
  std::array<double, kAnglesPerHead> angles{};

  std::span<double, 4> fe_ry1() { return std::span<double, 4>(angles.data(), 4); }
  std::span<double, 2> fe_xx1() { return std::span<double, 2>(angles.data() + 4, 2); }
  std::span<double, 4> fe_rx() { return std::span<double, 4>(angles.data() + 6, 4); }
  std::span<double, 2> fe_xx2() { return std::span<double, 2>(angles.data() + 10, 2); }
  std::span<double, 4> fe_ry2() { return std::span<double, 4>(angles.data() + 12, 4); }
  std::span<double, kSeAngles> se_crx() { return std::span<double, kSeAngles>(angles.data() + kFeAngles, kSeAngles); }

  bool all_finite() const {
    for (double a : angles)
      if (!std::isfinite(a)) return false;
    return true;
  }
};

/// Which disjoint qubit pairs the two XX layers couple.
enum class XxPairing { Adjacent, Interleaved };

inline std::string to_string(XxPairing p) { return p == XxPairing::Adjacent ? "adjacent" : "interleaved"; }
inline XxPairing pairing_from_string(const std::string& s) {
  if (s == "adjacent") return XxPairing::Adjacent;
  if (s == "interleaved") return XxPairing::Interleaved;
  throw ConfigError("unknown XX pairing '" + s + "' (expected adjacent|interleaved)");
}

struct CircuitOptions {
  bool use_se = true;
  XxPairing pairing = XxPairing::Adjacent;
};

enum class GateKind { RX, RY, XX, CRX };

struct GateOp {
  GateKind kind;
  std::size_t q0;  // target, first qubit of a pair, or control for CRX
  std::size_t q1;  // second qubit of a pair, or target for CRX
  bool from_input;  // angle comes from the embedded data vector
  std::size_t index;  // into the input vector or the 28 head angles
};

inline std::array<std::array<std::size_t, 2>, 2> xx_pairs(XxPairing p) {
  if (p == XxPairing::Adjacent) return {{{0, 1}, {2, 3}}};
  return {{{0, 2}, {1, 3}}};
}

inline std::vector<GateOp> embedding_ops() {
  std::vector<GateOp> ops;
  for (std::size_t q = 0; q < kQubits; ++q) ops.push_back({GateKind::RX, q, 0, true, q});
  return ops;
}

inline std::vector<GateOp> fe_ops(XxPairing pairing) {
  std::vector<GateOp> ops;
  const auto pairs = xx_pairs(pairing);
  for (std::size_t q = 0; q < kQubits; ++q) ops.push_back({GateKind::RY, q, 0, false, q});
  for (std::size_t k = 0; k < 2; ++k) ops.push_back({GateKind::XX, pairs[k][0], pairs[k][1], false, 4 + k});
  for (std::size_t q = 0; q < kQubits; ++q) ops.push_back({GateKind::RX, q, 0, false, 6 + q});
  for (std::size_t k = 0; k < 2; ++k) ops.push_back({GateKind::XX, pairs[k][0], pairs[k][1], false, 10 + k});
  for (std::size_t q = 0; q < kQubits; ++q) ops.push_back({GateKind::RY, q, 0, false, 12 + q});
  return ops;
}

/// CRXM(123|0), CRXM(023|1), CRXM(013|2), CRXM(012|3).
inline std::vector<GateOp> se_ops() {
  std::vector<GateOp> ops;
  std::size_t idx = kFeAngles;
  for (std::size_t control = 0; control < kQubits; ++control)
    for (std::size_t target = 0; target < kQubits; ++target) {
      if (target == control) continue;
      ops.push_back({GateKind::CRX, control, target, false, idx++});
    }
  return ops;
}

inline std::vector<GateOp> head_circuit(const CircuitOptions& opt) {
  auto ops = embedding_ops();
  auto fe = fe_ops(opt.pairing);
  ops.insert(ops.end(), fe.begin(), fe.end());
  if (opt.use_se) {
    auto se = se_ops();
    ops.insert(ops.end(), se.begin(), se.end());
  }
  return ops;
}

namespace detail {

inline double op_angle(const GateOp& op, std::span<const double> x, const QuantumHeadParams& p) {
  return op.from_input ? x[op.index] : p.angles[op.index];
}

inline void apply_op(ComplexTensor& s, const GateOp& op, double theta) {
  switch (op.kind) {
    case GateKind::RX: apply_gate(s, op.q0, rx_matrix(theta)); break;
    case GateKind::RY: apply_gate(s, op.q0, ry_matrix(theta)); break;
    case GateKind::XX: apply_gate(s, op.q0, op.q1, xx_matrix(theta)); break;
    case GateKind::CRX: apply_controlled_gate(s, op.q0, op.q1, rx_matrix(theta)); break;
  }
}

inline void apply_op_adjoint(ComplexTensor& s, const GateOp& op, double theta) {
  switch (op.kind) {
    case GateKind::RX: apply_gate(s, op.q0, adjoint(rx_matrix(theta))); break;
    case GateKind::RY: apply_gate(s, op.q0, adjoint(ry_matrix(theta))); break;
    case GateKind::XX: apply_gate(s, op.q0, op.q1, adjoint(xx_matrix(theta))); break;
    case GateKind::CRX: apply_controlled_gate(s, op.q0, op.q1, adjoint(rx_matrix(theta))); break;
  }
}

/// s <- (dG/dtheta) s
inline void apply_op_derivative(ComplexTensor& s, const GateOp& op, double theta) {
  switch (op.kind) {
    case GateKind::RX: apply_gate(s, op.q0, rx_derivative(theta)); break;
    case GateKind::RY: apply_gate(s, op.q0, ry_derivative(theta)); break;
    case GateKind::XX: apply_gate(s, op.q0, op.q1, xx_derivative(theta)); break;
    case GateKind::CRX: {
      apply_controlled_gate(s, op.q0, op.q1, rx_derivative(theta));
      // the control-0 block of DIAG(I, RX) is constant
      const std::size_t cbit = qubit_mask(kQubits, op.q0);
      for (std::size_t i = 0; i < kDim; ++i)
        if (!(i & cbit)) s.re()[i] = s.im()[i] = 0.0;
      break;
    }
  }
}

inline void run_ops(ComplexTensor& s, const std::vector<GateOp>& ops, std::span<const double> x,
                    const QuantumHeadParams& p) {
  for (const auto& op : ops) apply_op(s, op, op_angle(op, x, p));
}

}  // namespace detail

inline StateVector angle_embed(std::span<const double> x) {
  if (x.size() != kQubits) throw ShapeError("angle_embed expects 4 values, got " + std::to_string(x.size()));
  for (double v : x)
    if (!std::isfinite(v)) throw NumericalError("angle_embed: non-finite input");
  StateVector s;
  for (std::size_t q = 0; q < kQubits; ++q) apply_rx(s, q, x[q]);
  return s;
}

inline StateVector run_fe(StateVector s, const QuantumHeadParams& p, XxPairing pairing = XxPairing::Adjacent) {
  detail::run_ops(s.amplitudes(), fe_ops(pairing), {}, p);
  return s;
}

inline StateVector run_se(StateVector s, const QuantumHeadParams& p) {
  detail::run_ops(s.amplitudes(), se_ops(), {}, p);
  return s;
}

inline StateVector run_circuit(std::span<const double> x, const QuantumHeadParams& p, const CircuitOptions& opt) {
  StateVector s = angle_embed(x);
  s = run_fe(std::move(s), p, opt.pairing);
  if (opt.use_se) s = run_se(std::move(s), p);
  return s;
}

/// (<Z_0>, <Z_2>) after embedding, FE and (optionally) SE.
inline std::array<double, 2> run_head(std::span<const double> x, const QuantumHeadParams& p,
                                      const CircuitOptions& opt = {}) {
  const StateVector s = run_circuit(x, p, opt);
  return {measure_z(s, kMeasuredQubits[0]), measure_z(s, kMeasuredQubits[1])};
}

struct HeadGradient {
  std::array<double, kAnglesPerHead> params{};
  std::array<double, kQubits> inputs{};
};

/// Exact gradient of upstream . run_head(x, p) by adjoint back-propagation of
/// the complex amplitudes.
inline HeadGradient head_gradient(std::span<const double> x, const QuantumHeadParams& p,
                                  std::span<const double> upstream, const CircuitOptions& opt = {}) {
  if (upstream.size() != 2) throw ShapeError("head_gradient expects a 2-vector upstream gradient");
  if (x.size() != kQubits) throw ShapeError("head_gradient expects 4 inputs, got " + std::to_string(x.size()));
  HeadGradient out;
  if (upstream[0] == 0.0 && upstream[1] == 0.0) return out;

  const auto ops = head_circuit(opt);
  ComplexTensor psi = StateVector().amplitudes();
  detail::run_ops(psi, ops, x, p);

  // lambda = M psi with M = u0 Z_0 + u1 Z_2 (diagonal)
  ComplexTensor lam = psi;
  const std::size_t b0 = qubit_mask(kQubits, kMeasuredQubits[0]);
  const std::size_t b1 = qubit_mask(kQubits, kMeasuredQubits[1]);
  for (std::size_t i = 0; i < kDim; ++i) {
    const double m = ((i & b0) ? -upstream[0] : upstream[0]) + ((i & b1) ? -upstream[1] : upstream[1]);
    lam.re()[i] *= m;
    lam.im()[i] *= m;
  }

  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    const double theta = detail::op_angle(*it, x, p);
    detail::apply_op_adjoint(psi, *it, theta);
    ComplexTensor dpsi = psi;
    detail::apply_op_derivative(dpsi, *it, theta);
    double g = 0.0;  // 2 Re <lam | dG psi>
    for (std::size_t i = 0; i < kDim; ++i) g += lam.re()[i] * dpsi.re()[i] + lam.im()[i] * dpsi.im()[i];
    g *= 2.0;
    if (it->from_input)
      out.inputs[it->index] += g;
    else
      out.params[it->index] += g;
    detail::apply_op_adjoint(lam, *it, theta);
  }
  return out;
}

/// Same quantity as head_gradient via circuit re-evaluation at shifted
/// angles: two-term rule for RX/RY/XX, four-term rule for CRX (whose
/// generator has three distinct eigenvalues).
inline HeadGradient parameter_shift_gradient(std::span<const double> x, const QuantumHeadParams& p,
                                             std::span<const double> upstream, const CircuitOptions& opt = {}) {
  if (upstream.size() != 2) throw ShapeError("parameter_shift_gradient expects a 2-vector upstream gradient");
  const std::vector<double> xv(x.begin(), x.end());
  auto f = [&](const std::vector<double>& xs, const QuantumHeadParams& ps) {
    const auto o = run_head(xs, ps, opt);
    return upstream[0] * o[0] + upstream[1] * o[1];
  };
  constexpr double h = std::numbers::pi / 2;
  HeadGradient out;
  for (std::size_t i = 0; i < kQubits; ++i) {
    auto xp = xv, xm = xv;
    xp[i] += h;
    xm[i] -= h;
    out.inputs[i] = 0.5 * (f(xp, p) - f(xm, p));
  }
  const std::size_t n_angles = opt.use_se ? kAnglesPerHead : kFeAngles;
  const double cp = (std::numbers::sqrt2 + 1) / (4 * std::numbers::sqrt2);
  const double cm = (std::numbers::sqrt2 - 1) / (4 * std::numbers::sqrt2);
  auto shifted = [&](std::size_t k, double delta) {
    QuantumHeadParams q = p;
    q.angles[k] += delta;
    return f(xv, q);
  };
  for (std::size_t k = 0; k < n_angles; ++k) {
    if (k < kFeAngles) {
      out.params[k] = 0.5 * (shifted(k, h) - shifted(k, -h));
    } else {
      out.params[k] = cp * (shifted(k, h) - shifted(k, -h)) - cm * (shifted(k, 3 * h) - shifted(k, -3 * h));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// The 16-head block

struct QfrbParams {
  std::vector<QuantumHeadParams> heads = std::vector<QuantumHeadParams>(kHeads);
};

/// Near-identity start: every angle uniform in [-pi/10, pi/10].
template <class Rng>
QfrbParams init_qfrb(Rng& rng) {
  std::uniform_real_distribution<double> u(-std::numbers::pi / 10, std::numbers::pi / 10);
  QfrbParams q;
  for (auto& h : q.heads)
    for (auto& a : h.angles) a = u(rng);
  return q;
}

/// Splits a 64-vector into 16 contiguous 4-vectors and runs one head on each.
inline std::vector<double> qfrb_outputs(std::span<const double> token, const QfrbParams& q,
                                        const CircuitOptions& opt = {}) {
  if (token.size() != kHeads * kQubits) {
    throw ShapeError("QFRB expects a 64-vector, got " + std::to_string(token.size()));
  }
  if (q.heads.size() != kHeads) throw ShapeError("QFRB requires exactly 16 heads");
  std::vector<double> s(2 * kHeads);
  for (std::size_t h = 0; h < kHeads; ++h) {
    const auto o = run_head(token.subspan(h * kQubits, kQubits), q.heads[h], opt);
    s[2 * h] = o[0];
    s[2 * h + 1] = o[1];
  }
  return s;
}

}  // namespace iwd::qsim
