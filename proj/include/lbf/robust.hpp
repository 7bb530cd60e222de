#pragma once

// Sequential data trimming for the LBF estimator, the known-missing-sample
// extension, and the local statistics used to adapt the number of basis
// functions on the fly.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>

#include "lbf/basis.hpp"
#include "lbf/core.hpp"
#include "lbf/lbf.hpp"

namespace lbf {

/// Trimming level for a window of width K.
struct TrimConfig {
    int K{1};
    int delta{0};               // outlier-driven rejections
    IndexSet forced_exclusions; // known missing positions, relative to the window centre

    int retained() const { return K - delta; }
    double gamma() const { return static_cast<double>(retained()) / K; }
    double mu() const { return 1.0 - gamma(); }

    /// K_tilde = int[gamma K], delta = K - K_tilde.
    static TrimConfig from_gamma(double gamma, int K) {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrimConfig: gamma must lie in (0, 1]");
        const int kept = static_cast<int>(std::floor(gamma * K + 1e-9));
        return TrimConfig{K, K - kept, {}};
    }

    /// delta = int[mu K], the percentage-of-window convention.
    static TrimConfig from_mu(double mu, int K) {
        if (!(mu >= 0.0 && mu < 1.0)) throw std::invalid_argument("TrimConfig: mu must lie in [0, 1)");
        return TrimConfig{K, static_cast<int>(std::floor(mu * K + 1e-9)), {}};
    }
};

namespace detail {

inline cplx anticipated_error(const VecC& beta_prev, const BasisSet& basis_prev, cplx y_new, const VecC& phi_new) {
    const VecC psi = regression_vector(phi_new, basis_prev, basis_prev.k());
    return y_new - beta_prev.dot(psi);
}

}  // namespace detail

/// Errors used to rank the samples of window t, given the residuals of the
/// window t - 1 fit (all K positions) and the newest sample y(t + k), phi(t + k).
inline VecC advance_errors(const VecC& prev_residuals, const VecC& beta_prev, const BasisSet& basis_prev,
                           cplx y_new, const VecC& phi_new) {
    const auto K = prev_residuals.size();
    VecC errors(K);
    errors.head(K - 1) = prev_residuals.tail(K - 1);
    errors(K - 1) = detail::anticipated_error(beta_prev, basis_prev, y_new, phi_new);
    return errors;
}

/// Modeling errors for window t computed from the window t - 1 estimate.
/// `basis` must have as many functions as beta_prev carries per tap.
inline VecC frame_errors(const VecC& beta_prev, const Frame& prev_frame, cplx y_new, const VecC& phi_new,
                         const BasisSet& basis) {
    const MatC psi = regression_vectors(prev_frame, basis);
    return advance_errors(residuals(psi, prev_frame.y, beta_prev), beta_prev, basis, y_new, phi_new);
}

struct TrimSets {
    IndexSet omega;
    IndexSet omega_bar;
};

/// Rejects the forced positions plus the delta largest-modulus errors among
/// the rest. Equal moduli keep the earlier position.
inline TrimSets trim_set(const VecC& errors, int delta, const IndexSet& forced_exclusions = {},
                         int min_retained = 0) {
    const int K = static_cast<int>(errors.size());
    const int k = half_width(K);
    std::vector<char> forced(K, 0);
    for (int j : forced_exclusions) {
        if (j < -k || j > k) throw std::out_of_range("trim_set: forced exclusion outside the window");
        forced[j + k] = 1;
    }
    std::vector<int> candidates;
    candidates.reserve(K);
    for (int r = 0; r < K; ++r)
        if (!forced[r]) candidates.push_back(r);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return std::norm(errors(a)) < std::norm(errors(b)); });

    const int rejected = std::clamp(delta, 0, static_cast<int>(candidates.size()));
    std::vector<char> out(forced);
    for (std::size_t c = candidates.size() - rejected; c < candidates.size(); ++c) out[candidates[c]] = 1;

    TrimSets sets;
    for (int r = 0; r < K; ++r) (out[r] ? sets.omega_bar : sets.omega).push_back(r - k);
    if (static_cast<int>(sets.omega.size()) < min_retained)
        throw IdentifiabilityError("trim_set: too few samples retained to identify the model");
    return sets;
}

struct TrimmedEstimate {
    VecC beta;
    VecC theta;
    IndexSet omega;
    IndexSet omega_bar;
    MatC P;
    VecC p;
    VecC residuals;  // eps(t + j | t) for every j, excluded positions included
    bool cond_flag{false};
    std::optional<MatC> P_inv;

    const MatC& inverse() {
        if (!P_inv) P_inv = hermitian_inverse(P);
        if (!P_inv) throw NumericalError("TrimmedEstimate: normal matrix is not invertible");
        return *P_inv;
    }
};

/// Least squares over the retained positions only.
inline TrimmedEstimate trimmed_estimate(const MatC& psi, const VecC& y, const BasisSet& basis, IndexSet omega) {
    const int K = static_cast<int>(psi.cols());
    const int k = half_width(K);
    TrimmedEstimate out;
    auto est = estimate_from(basis, normal_equations(psi, y, omega));
    out.beta = std::move(est.beta);
    out.theta = std::move(est.theta);
    out.P = std::move(est.P);
    out.p = std::move(est.p);
    out.cond_flag = est.cond_flag;
    std::vector<char> kept(K, 0);
    for (int j : omega) kept[j + k] = 1;
    for (int r = 0; r < K; ++r)
        if (!kept[r]) out.omega_bar.push_back(r - k);
    out.omega = std::move(omega);
    out.residuals = residuals(psi, y, out.beta);
    return out;
}

inline TrimmedEstimate trimmed_estimate(const Frame& frame, const BasisSet& basis, IndexSet omega) {
    return trimmed_estimate(regression_vectors(frame, basis), frame.y, basis, std::move(omega));
}

/// Mean squared residual over the retained positions.
inline double noise_variance(const VecC& residuals, const IndexSet& omega) {
    if (omega.empty()) throw std::invalid_argument("noise_variance: empty retained set");
    const int k = half_width(static_cast<int>(residuals.size()));
    double acc = 0.0;
    for (int j : omega) acc += std::norm(residuals(j + k));
    return acc / static_cast<double>(omega.size());
}

/// Spread of the estimated trajectory around its window mean, computed from
/// the expansion coefficients alone: (1/K)||beta||^2 - ||G beta||^2.
inline double theta_variance(const VecC& beta, const BasisSet& basis) {
    const int m = basis.m();
    const auto n = beta.size() / m;
    const VecC g = basis.g();
    double mean_sq = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mean_sq += std::norm(g.dot(beta.segment(i * m, m)));
    return beta.squaredNorm() / static_cast<double>(basis.K()) - mean_sq;
}

/// Exponentially weighted input covariance update.
inline MatC phi_update(const MatC& phi_hat, const VecC& phi, double eta0) {
    MatC out = eta0 * phi_hat + (1.0 - eta0) * (phi * phi.adjoint());
    return 0.5 * (out + out.adjoint());
}

/// Running statistics behind the adaptive basis-count rule.
struct AdaptiveState {
    double sigma_e_sq_hat{0.0};
    double sigma_theta_sq_hat{0.0};
    MatC phi_hat;
    double eta0{0.99};
    int m_hat{1};
    long regularized_events{0};

    /// tr(Phi_hat^-1); a singular Phi_hat gets a 1e-8 diagonal load.
    double trace_phi_inverse() {
        const auto n = phi_hat.rows();
        Eigen::LLT<MatC> llt(phi_hat);
        if (well_conditioned(llt))
            return llt.solve(MatC::Identity(n, n)).trace().real();
        ++regularized_events;
        Eigen::LLT<MatC> loaded(phi_hat + 1e-8 * MatC::Identity(n, n));
        return loaded.solve(MatC::Identity(n, n)).trace().real();
    }
};

/// Basis count for window t from the statistics of window t - 1, with
/// M_tilde = K_tilde / n.
inline int adaptive_m(AdaptiveState& state, const VecR& lambdas, int K_tilde, int n) {
    const int M_tilde = K_tilde / n;
    const double tr = state.trace_phi_inverse();
    state.m_hat = select_m_optimal(lambdas, state.sigma_e_sq_hat, state.sigma_theta_sq_hat, tr, M_tilde);
    return state.m_hat;
}

/// Re-expresses per-tap coefficients for a different number of nested basis
/// functions (truncation or zero padding).
inline VecC resize_coefficients(const VecC& beta, int n, int m_from, int m_to) {
    VecC out = VecC::Zero(static_cast<Eigen::Index>(n) * m_to);
    const int common = std::min(m_from, m_to);
    for (int i = 0; i < n; ++i) out.segment(i * m_to, common) = beta.segment(i * m_from, common);
    return out;
}

}  // namespace lbf
