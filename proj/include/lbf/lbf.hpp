#pragma once

// Plain local basis function (LBF) least-squares estimator on one window.

#include <limits>
#include <optional>
#include <span>
#include <stdexcept>

#include "lbf/basis.hpp"
#include "lbf/core.hpp"

namespace lbf {

/// Samples of one analysis window centred at t.
///
/// Column r of `phi` is the regression vector phi(t + j), j = r - k, with
/// entries u(t + j), u(t + j - 1), ..., u(t + j - n + 1).
struct Frame {
    long t{0};
    int k{0};
    int n{1};
    VecC y;
    MatC phi;

    int K() const { return 2 * k + 1; }
    cplx y_at(int j) const { return y(j + k); }
    auto phi_at(int j) const { return phi.col(j + k); }
};

/// Regression vector phi(s) from an input stream; inputs before s = 0 read as zero.
inline VecC regressor(std::span<const cplx> u, long s, int n) {
    VecC out = VecC::Zero(n);
    for (int i = 0; i < n; ++i) {
        const long idx = s - i;
        if (idx >= 0 && idx < static_cast<long>(u.size())) out(i) = u[static_cast<std::size_t>(idx)];
    }
    return out;
}

inline Frame make_frame(std::span<const cplx> u, std::span<const cplx> y, long t, int k, int n) {
    if (t - k < 0 || t + k >= static_cast<long>(y.size()))
        throw std::out_of_range("make_frame: window exceeds the data record");
    Frame fr;
    fr.t = t;
    fr.k = k;
    fr.n = n;
    fr.y.resize(fr.K());
    fr.phi.resize(n, fr.K());
    for (int j = -k; j <= k; ++j) {
        fr.y(j + k) = y[static_cast<std::size_t>(t + j)];
        fr.phi.col(j + k) = regressor(u, t + j, n);
    }
    return fr;
}

/// Generalized regressors psi(t, j) = phi(t + j) (x) f(j) as the columns of an
/// mn x K matrix, parameter-major: entry i*m + l holds phi_i(t + j) f_l(j).
inline MatC regression_vectors(const Frame& frame, const BasisSet& basis) {
    if (basis.K() != frame.K()) throw std::invalid_argument("regression_vectors: window width mismatch");
    const int n = frame.n;
    const int m = basis.m();
    const int K = frame.K();
    const MatC& f = basis.f();
    MatC psi(n * m, K);
    for (int r = 0; r < K; ++r)
        for (int i = 0; i < n; ++i) {
            const cplx a = frame.phi(i, r);
            for (int l = 0; l < m; ++l) psi(i * m + l, r) = a * f(r, l);
        }
    return psi;
}

/// psi(t, j) for one sample given its regression vector; j selects f(j).
inline VecC regression_vector(const VecC& phi, const BasisSet& basis, int j) {
    const int n = static_cast<int>(phi.size());
    const int m = basis.m();
    VecC psi(n * m);
    for (int i = 0; i < n; ++i) psi.segment(i * m, m) = phi(i) * basis.at(j);
    return psi;
}

struct NormalEquations {
    MatC P;
    VecC p;
};

/// P = sum psi psi^H and p = sum y* psi over the positions in omega.
inline NormalEquations normal_equations(const MatC& psi, const VecC& y, const IndexSet& omega) {
    const auto dim = psi.rows();
    if (static_cast<Eigen::Index>(omega.size()) < dim)
        throw IdentifiabilityError("normal_equations: retained set smaller than mn");
    const int k = half_width(static_cast<int>(psi.cols()));
    MatC sel(dim, static_cast<Eigen::Index>(omega.size()));
    VecC ysel(static_cast<Eigen::Index>(omega.size()));
    for (std::size_t c = 0; c < omega.size(); ++c) {
        sel.col(static_cast<Eigen::Index>(c)) = psi.col(omega[c] + k);
        ysel(static_cast<Eigen::Index>(c)) = y(omega[c] + k);
    }
    NormalEquations ne;
    ne.P = MatC::Zero(dim, dim);
    ne.P.selfadjointView<Eigen::Lower>().rankUpdate(sel);
    ne.P.triangularView<Eigen::StrictlyUpper>() = ne.P.adjoint();
    ne.p = sel * ysel.conjugate();
    return ne;
}

inline NormalEquations normal_equations(const Frame& frame, const BasisSet& basis, const IndexSet& omega) {
    return normal_equations(regression_vectors(frame, basis), frame.y, omega);
}

/// Condition estimate of a Hermitian positive-definite matrix from its
/// Cholesky factor, (max L_ii / min L_ii)^2; infinite when the factorization fails.
inline double cholesky_condition(const Eigen::LLT<MatC>& llt) {
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const VecR d = llt.matrixLLT().diagonal().real();
    const double lo = d.minCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    const double ratio = d.maxCoeff() / lo;
    return ratio * ratio;
}

inline bool well_conditioned(const Eigen::LLT<MatC>& llt) { return cholesky_condition(llt) < 1.0 / kMinRcond; }

/// Hermitian positive-definite solve with a condition guard.
struct SolveResult {
    VecC beta;
    bool ill_conditioned{false};
};

inline SolveResult solve_normal(const MatC& P, const VecC& p) {
    SolveResult out;
    Eigen::LLT<MatC> llt(P);
    if (!well_conditioned(llt)) {
        out.ill_conditioned = true;
        out.beta = VecC::Zero(p.size());
        return out;
    }
    out.beta = llt.solve(p);
    return out;
}

/// Explicit inverse of a Hermitian positive-definite matrix; empty on failure.
inline std::optional<MatC> hermitian_inverse(const MatC& P) {
    Eigen::LLT<MatC> llt(P);
    if (!well_conditioned(llt)) return std::nullopt;
    MatC inv = llt.solve(MatC::Identity(P.rows(), P.cols()));
    return MatC(0.5 * (inv + inv.adjoint()));
}

/// theta = F0 beta, i.e. theta_i = f^H(0) beta_i.
inline VecC theta_at(const BasisSet& basis, const VecC& beta, int j = 0) {
    const int m = basis.m();
    const auto n = beta.size() / m;
    VecC theta(n);
    const VecC fj = basis.at(j);
    for (Eigen::Index i = 0; i < n; ++i) theta(i) = fj.dot(beta.segment(i * m, m));
    return theta;
}

/// Estimated trajectory theta(t + j | t) = F(j) beta as an n x K matrix.
inline MatC trajectory(const BasisSet& basis, const VecC& beta) {
    const int m = basis.m();
    const auto n = beta.size() / m;
    const Eigen::Map<const MatC> coeffs(beta.data(), m, n);
    return (basis.f().conjugate() * coeffs).transpose();
}

/// eps(t + j | t) = y(t + j) - beta^H psi(t, j) for every column of psi.
inline VecC residuals(const MatC& psi, const VecC& y, const VecC& beta) {
    return y - (psi.adjoint() * beta).conjugate();
}

struct LbfEstimate {
    VecC beta;
    VecC theta;
    MatC P;
    VecC p;
    bool cond_flag{false};
};

inline LbfEstimate estimate_from(const BasisSet& basis, NormalEquations ne) {
    LbfEstimate est;
    auto solved = solve_normal(ne.P, ne.p);
    est.cond_flag = solved.ill_conditioned;
    est.beta = std::move(solved.beta);
    est.theta = theta_at(basis, est.beta);
    est.P = std::move(ne.P);
    est.p = std::move(ne.p);
    return est;
}

/// Least-squares LBF estimate over the full window.
inline LbfEstimate lbf_estimate(const MatC& psi, const VecC& y, const BasisSet& basis) {
    return estimate_from(basis, normal_equations(psi, y, full_window(half_width(static_cast<int>(psi.cols())))));
}

inline LbfEstimate lbf_estimate(const Frame& frame, const BasisSet& basis) {
    return lbf_estimate(regression_vectors(frame, basis), frame.y, basis);
}

}  // namespace lbf
