#pragma once

// Least absolute deviations LBF estimate by iteratively reweighted least squares.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "lbf/core.hpp"
#include "lbf/lbf.hpp"

namespace lbf {

struct LadConfig {
    int max_iters{10};
    double epsilon_reg{1e-6};
};

struct LadResult {
    VecC beta;
    VecC theta;
    VecC residuals;
    std::vector<double> objective;  // entry 0 is the starting point
};

/// Sum of residual moduli.
inline double lad_objective(const MatC& psi, const VecC& y, const VecC& beta) {
    return residuals(psi, y, beta).cwiseAbs().sum();
}

namespace detail {

inline std::optional<VecC> weighted_solve(const MatC& psi, const VecC& y, const VecC& res, double eps) {
    const auto K = psi.cols();
    VecR w(K);
    for (Eigen::Index r = 0; r < K; ++r) w(r) = 1.0 / std::max(std::abs(res(r)), eps);
    const MatC scaled = psi * w.cwiseSqrt().asDiagonal();
    MatC P = MatC::Zero(psi.rows(), psi.rows());
    P.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
    P.triangularView<Eigen::StrictlyUpper>() = P.adjoint();
    const VecC p = psi * w.cwiseProduct(y.conjugate()).eval();
    auto solved = solve_normal(P, p);
    if (solved.ill_conditioned) return std::nullopt;
    return solved.beta;
}

}  // namespace detail

/// IRLS iterations from `warm_start` (or the LBF estimate when absent),
/// stopping after max_iters or as soon as a step would raise the objective.
inline LadResult lad_estimate(const MatC& psi, const VecC& y, const BasisSet& basis, const LadConfig& config,
                              const std::optional<VecC>& warm_start = std::nullopt) {
    if (psi.cols() < psi.rows()) throw IdentifiabilityError("lad_estimate: window shorter than mn");
    LadResult out;
    if (warm_start) {
        out.beta = *warm_start;
    } else {
        auto start = lbf_estimate(psi, y, basis);
        if (start.cond_flag) throw NumericalError("lad_estimate: LBF starting point is ill-conditioned");
        out.beta = std::move(start.beta);
    }
    out.residuals = residuals(psi, y, out.beta);
    out.objective.push_back(out.residuals.cwiseAbs().sum());

    for (int it = 0; it < config.max_iters; ++it) {
        auto next = detail::weighted_solve(psi, y, out.residuals, config.epsilon_reg);
        if (!next) next = detail::weighted_solve(psi, y, out.residuals, 10.0 * config.epsilon_reg);
        if (!next) throw NumericalError("lad_estimate: weighted normal equations are singular");
        VecC res = residuals(psi, y, *next);
        const double obj = res.cwiseAbs().sum();
        if (obj > out.objective.back()) break;
        out.beta = std::move(*next);
        out.residuals = std::move(res);
        out.objective.push_back(obj);
    }
    out.theta = theta_at(basis, out.beta);
    return out;
}

inline LadResult lad_estimate(const Frame& frame, const BasisSet& basis, const LadConfig& config,
                              const std::optional<VecC>& warm_start = std::nullopt) {
    return lad_estimate(regression_vectors(frame, basis), frame.y, basis, config, warm_start);
}

}  // namespace lbf
