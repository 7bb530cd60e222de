#pragma once

// Building blocks of the parallel estimator bank: leave-one-out deleted
// residuals, the Woodbury chain linking nested trimming levels, and the
// circular register holding the cross-validation statistics.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "lbf/core.hpp"
#include "lbf/lbf.hpp"

namespace lbf {

/// Self-influence c = psi^H P^-1 psi of the centre sample.
inline double leverage(const MatC& P_inv, const VecC& psi0) {
    const double c = psi0.dot(P_inv * psi0).real();
    if (!(c < 1.0 - 1e-12)) throw NumericalError("leverage: centre sample carries the whole fit");
    return std::max(c, 0.0);
}

/// Leave-one-out interpolation error eps / (1 - c).
inline cplx deleted_residual(cplx eps_tt, double c) {
    if (!(c < 1.0)) throw NumericalError("deleted_residual: leverage must be below one");
    return eps_tt / (1.0 - c);
}

struct ChainLevel {
    MatC P_inv;
    VecC p;
    bool fell_back{false};
};

/// Inverse normal matrices of every trimming level, obtained from the most
/// heavily trimmed one by restoring the extra rejected samples level by level:
///   P_{i-1}^-1 = P_i^-1 - P_i^-1 Psi (I + Psi^H P_i^-1 Psi)^-1 Psi^H P_i^-1.
///
/// `omega_bars[i]` is the rejected set of level i, nested so that
/// omega_bars[i - 1] is a subset of omega_bars[i]. Level omega_bars.size()-1
/// corresponds to (P_inv_top, p_top).
inline std::vector<ChainLevel> downdate_chain(const MatC& P_inv_top, const VecC& p_top, const MatC& psi,
                                              const VecC& y, const std::vector<IndexSet>& omega_bars) {
    const auto levels = omega_bars.size();
    if (levels == 0) return {};
    const int K = static_cast<int>(psi.cols());
    const int k = half_width(K);
    std::vector<ChainLevel> out(levels);
    out.back() = ChainLevel{P_inv_top, p_top, false};

    for (std::size_t i = levels - 1; i > 0; --i) {
        std::vector<char> lower(K, 0);
        for (int j : omega_bars[i - 1]) lower[j + k] = 1;
        IndexSet restored;
        for (int j : omega_bars[i])
            if (!lower[j + k]) restored.push_back(j);
        if (restored.size() + omega_bars[i - 1].size() != omega_bars[i].size())
            throw std::invalid_argument("downdate_chain: rejected sets are not nested");

        const auto r = static_cast<Eigen::Index>(restored.size());
        const ChainLevel& upper = out[i];
        ChainLevel& next = out[i - 1];
        if (r == 0) {
            next = upper;
            continue;
        }
        MatC Psi(psi.rows(), r);
        VecC ys(r);
        for (Eigen::Index c = 0; c < r; ++c) {
            Psi.col(c) = psi.col(restored[c] + k);
            ys(c) = y(restored[c] + k);
        }
        next.p = upper.p + Psi * ys.conjugate();

        const MatC PPsi = upper.P_inv * Psi;
        MatC inner = MatC::Identity(r, r) + Psi.adjoint() * PPsi;
        Eigen::LLT<MatC> llt(inner);
        if (well_conditioned(llt)) {
            next.P_inv = upper.P_inv - PPsi * llt.solve(PPsi.adjoint());
            next.P_inv = 0.5 * (next.P_inv + next.P_inv.adjoint()).eval();
            next.fell_back = false;
        } else {
            std::vector<char> rejected(K, 0);
            for (int j : omega_bars[i - 1]) rejected[j + k] = 1;
            IndexSet omega;
            for (int r2 = 0; r2 < K; ++r2)
                if (!rejected[r2]) omega.push_back(r2 - k);
            auto inv = hermitian_inverse(normal_equations(psi, y, omega).P);
            if (!inv) throw NumericalError("downdate_chain: level normal matrix is singular");
            next.P_inv = std::move(*inv);
            next.fell_back = true;
        }
    }
    return out;
}

/// Sliding sums of squared agreed deleted residuals, one per bank member.
class CvRegister {
public:
    CvRegister(int p, int L) : L_(L), xi_(MatC::Zero(p, L)), E_(VecR::Zero(p)) {
        if (p < 1 || L < 1) throw std::invalid_argument("CvRegister: p and L must be positive");
    }

    int p() const { return static_cast<int>(E_.size()); }
    int L() const { return L_; }
    int position() const { return l_; }
    long agreed_events() const { return agreed_; }
    const VecR& E() const { return E_; }
    const MatC& registers() const { return xi_; }

    /// Replaces the oldest entry of every register when the sample was retained
    /// by all members; otherwise leaves the statistics untouched.
    void update(bool agreed, std::span<const cplx> deleted) {
        if (!agreed) return;
        if (static_cast<int>(deleted.size()) != p()) throw std::invalid_argument("CvRegister: residual count mismatch");
        for (int i = 0; i < p(); ++i) {
            E_(i) += std::norm(deleted[i]) - std::norm(xi_(i, l_));
            xi_(i, l_) = deleted[i];
        }
        l_ = (l_ + 1) % L_;
        ++agreed_;
        // refresh once per lap to stop rounding drift in the running sums
        if (l_ == 0) E_ = xi_.cwiseAbs2().rowwise().sum();
    }

private:
    int L_;
    int l_{0};
    long agreed_{0};
    MatC xi_;
    VecR E_;
};

/// argmin_i E_i; ties go to the smallest index (least trimming).
inline int select_best(const VecR& E) {
    int best = 0;
    for (int i = 1; i < E.size(); ++i)
        if (E(i) < E(best)) best = i;
    return best;
}

}  // namespace lbf
