#pragma once

// Dense gate application on a register of qubits stored in a ComplexTensor.
// Qubit 0 is the most significant bit of the basis index.

#include <array>
#include <complex>
#include <cstddef>
#include <string>

#include "iwd/errors.hpp"
#include "iwd/tensor.hpp"

namespace iwd {

using Complex = std::complex<double>;
using Gate2 = std::array<Complex, 4>;   // row-major 2x2
using Gate4 = std::array<Complex, 16>;  // row-major 4x4, basis |ab> with a = first qubit

inline std::size_t register_qubits(const ComplexTensor& state) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < state.size()) ++n;
  if ((std::size_t{1} << n) != state.size()) {
    throw ShapeError("state length " + std::to_string(state.size()) + " is not a power of two");
  }
  return n;
}

inline std::size_t qubit_mask(std::size_t n_qubits, std::size_t qubit) {
  if (qubit >= n_qubits) {
    throw std::out_of_range("qubit index " + std::to_string(qubit) + " out of range for " +
                            std::to_string(n_qubits) + "-qubit register");
  }
  return std::size_t{1} << (n_qubits - 1 - qubit);
}

/// Applies a 2x2 matrix to one qubit.
inline void apply_gate(ComplexTensor& state, std::size_t qubit, const Gate2& g) {
  const std::size_t n = register_qubits(state);
  const std::size_t bit = qubit_mask(n, qubit);
  auto re = state.re();
  auto im = state.im();
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (i & bit) continue;
    const std::size_t j = i | bit;
    const Complex a0(re[i], im[i]), a1(re[j], im[j]);
    const Complex b0 = g[0] * a0 + g[1] * a1;
    const Complex b1 = g[2] * a0 + g[3] * a1;
    re[i] = b0.real();
    im[i] = b0.imag();
    re[j] = b1.real();
    im[j] = b1.imag();
  }
}

/// Applies a 2x2 matrix to `target` only where `control` is 1.
inline void apply_controlled_gate(ComplexTensor& state, std::size_t control, std::size_t target, const Gate2& g) {
  const std::size_t n = register_qubits(state);
  if (control == target) throw std::invalid_argument("control and target qubit must differ");
  const std::size_t cbit = qubit_mask(n, control);
  const std::size_t tbit = qubit_mask(n, target);
  auto re = state.re();
  auto im = state.im();
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!(i & cbit) || (i & tbit)) continue;
    const std::size_t j = i | tbit;
    const Complex a0(re[i], im[i]), a1(re[j], im[j]);
    const Complex b0 = g[0] * a0 + g[1] * a1;
    const Complex b1 = g[2] * a0 + g[3] * a1;
    re[i] = b0.real();
    im[i] = b0.imag();
    re[j] = b1.real();
    im[j] = b1.imag();
  }
}

/// Applies a 4x4 matrix to the ordered qubit pair (qa, qb).
inline void apply_gate(ComplexTensor& state, std::size_t qa, std::size_t qb, const Gate4& g) {
  const std::size_t n = register_qubits(state);
  if (qa == qb) throw std::invalid_argument("two-qubit gate needs distinct qubits");
  const std::size_t abit = qubit_mask(n, qa);
  const std::size_t bbit = qubit_mask(n, qb);
  auto re = state.re();
  auto im = state.im();
  for (std::size_t i = 0; i < state.size(); ++i) {
    if ((i & abit) || (i & bbit)) continue;
    const std::array<std::size_t, 4> idx{i, i | bbit, i | abit, i | abit | bbit};
    std::array<Complex, 4> a;
    for (int k = 0; k < 4; ++k) a[k] = Complex(re[idx[k]], im[idx[k]]);
    for (int r = 0; r < 4; ++r) {
      Complex s = 0.0;
      for (int c = 0; c < 4; ++c) s += g[r * 4 + c] * a[c];
      re[idx[r]] = s.real();
      im[idx[r]] = s.imag();
    }
  }
}

inline Gate2 adjoint(const Gate2& g) {
  return {std::conj(g[0]), std::conj(g[2]), std::conj(g[1]), std::conj(g[3])};
}

inline Gate4 adjoint(const Gate4& g) {
  Gate4 out;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = std::conj(g[c * 4 + r]);
  return out;
}

}  // namespace iwd
