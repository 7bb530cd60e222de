#pragma once

#include <random>

#include "lbf/basis.hpp"
#include "lbf/lbf.hpp"
#include "oracles.hpp"

namespace support {

using namespace lbf;

/// Frame with complex Gaussian inputs and outputs, centred at t = k + n.
inline Frame random_frame(std::mt19937_64& rng, int K, int n) {
    Frame fr;
    fr.k = half_width(K);
    fr.n = n;
    fr.t = fr.k + n;
    fr.y = oracle::random_vec(rng, K);
    fr.phi = oracle::random_mat(rng, n, K);
    return fr;
}

/// Outputs y(t + j) = beta^H psi(t, j) for the frame regressors, plus noise.
inline VecC in_span_outputs(const MatC& psi, const VecC& beta) { return (psi.adjoint() * beta).conjugate(); }

inline BasisSet flat_basis(int K, int m, double rate = 0.05) {
    return eigenbasis(ParameterModel{SpectrumKind::FlatDoppler, rate, 1.0}, K, m);
}

inline BasisSet constant_basis(int K) {
    return BasisSet(MatC::Constant(K, 1, cplx{1.0 / std::sqrt(static_cast<double>(K)), 0.0}), VecR::Constant(1, K));
}

}  // namespace support
