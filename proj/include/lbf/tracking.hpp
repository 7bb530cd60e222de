#pragma once

// Sliding-window trackers: plain LBF, sequentially trimmed LBF, adaptive
// LAD and the cross-validated bank of trimmed estimators. Each tracker is
// fed consecutive frames t0, t0 + 1, ... and returns theta_hat(t).

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lbf/bank.hpp"
#include "lbf/basis.hpp"
#include "lbf/core.hpp"
#include "lbf/lad.hpp"
#include "lbf/lbf.hpp"
#include "lbf/robust.hpp"

namespace lbf {

/// How the number of basis functions is chosen per window.
struct MPolicy {
    enum class Kind { Fixed, Known, Adaptive };
    Kind kind{Kind::Adaptive};
    int fixed_m{1};

    static MPolicy fixed(int m) { return {Kind::Fixed, m}; }
    static MPolicy known() { return {Kind::Known, 1}; }
    static MPolicy adaptive() { return {Kind::Adaptive, 1}; }

    std::string label() const {
        switch (kind) {
            case Kind::Fixed: return "fixed:" + std::to_string(fixed_m);
            case Kind::Known: return "known";
            case Kind::Adaptive: return "adaptive";
        }
        return "?";
    }
};

enum class InitMethod { Lad, IteratedTrim };

struct TrackerSettings {
    int n{1};
    std::shared_ptr<const BasisFamily> basis;
    MPolicy policy{};
    int m_init{0};                    // first adaptive window; 0 starts from M_tilde - 1
    double known_sigma_e_sq{0.0};     // Known policy
    double known_sigma_theta_sq{1.0}; // Known policy
    bool phi_known{false};            // use Phi = sigma_u^2 I instead of the running estimate
    double sigma_u_sq{1.0};
    double eta0{0.99};
    LadConfig lad{};
    InitMethod init{InitMethod::Lad};
    double lad_variance_mu{0.15};     // trimming used for the LAD noise-variance estimate
    const std::vector<char>* missing{nullptr};  // known missing samples, indexed by absolute time
};

struct StepResult {
    VecC theta;
    int m{1};
    int delta{0};
    bool degraded{false};
};

/// Chooses m for the next window and accumulates the statistics it needs.
class BasisCountController {
public:
    explicit BasisCountController(const TrackerSettings& s) : s_(s) { state_.eta0 = s.eta0; }

    const AdaptiveState& state() const { return state_; }
    AdaptiveState& state() { return state_; }

    /// Basis count for a window that retains K_tilde samples.
    int next_m(const Frame& frame, int K_tilde) {
        if (state_.phi_hat.size() == 0) state_.phi_hat = (frame.phi * frame.phi.adjoint()) / frame.K();
        const int cap = std::max(1, std::min(s_.basis->m_max(), K_tilde / s_.n));
        int m = 1;
        switch (s_.policy.kind) {
            case MPolicy::Kind::Fixed: m = s_.policy.fixed_m; break;
            case MPolicy::Kind::Known:
                m = select_m_optimal(s_.basis->full().lambdas(), s_.known_sigma_e_sq, s_.known_sigma_theta_sq,
                                     tr_phi_inv(), K_tilde / s_.n);
                break;
            case MPolicy::Kind::Adaptive:
                if (!primed_) {
                    m = s_.m_init > 0 ? s_.m_init : K_tilde / s_.n - 1;
                } else if (s_.phi_known) {
                    m = select_m_optimal(s_.basis->full().lambdas(), state_.sigma_e_sq_hat,
                                         state_.sigma_theta_sq_hat, tr_phi_inv(), K_tilde / s_.n);
                } else {
                    m = adaptive_m(state_, s_.basis->full().lambdas(), K_tilde, s_.n);
                }
                break;
        }
        state_.m_hat = std::clamp(m, 1, cap);
        return state_.m_hat;
    }

    void observe(const Frame& frame, double sigma_e_sq, const VecC& beta, const BasisSet& basis) {
        state_.sigma_e_sq_hat = sigma_e_sq;
        state_.sigma_theta_sq_hat = std::max(0.0, theta_variance(beta, basis));
        state_.phi_hat = phi_update(state_.phi_hat, frame.phi.col(frame.k), state_.eta0);
        primed_ = true;
    }

private:
    double tr_phi_inv() {
        if (s_.phi_known) return s_.n / s_.sigma_u_sq;
        return state_.trace_phi_inverse();
    }

    const TrackerSettings& s_;
    AdaptiveState state_;
    bool primed_{false};
};

class Tracker {
public:
    virtual ~Tracker() = default;
    virtual StepResult step(const Frame& frame) = 0;
};

inline IndexSet missing_in_window(const TrackerSettings& s, const Frame& frame) {
    IndexSet out;
    if (!s.missing) return out;
    for (int j = -frame.k; j <= frame.k; ++j) {
        const long idx = frame.t + j;
        if (idx >= 0 && idx < static_cast<long>(s.missing->size()) && (*s.missing)[idx]) out.push_back(j);
    }
    return out;
}

/// Ordinary least-squares LBF tracker.
class LbfTracker final : public Tracker {
public:
    explicit LbfTracker(TrackerSettings s) : s_(std::move(s)), ctl_(s_) {}

    StepResult step(const Frame& frame) override {
        const int K = frame.K();
        const int m = ctl_.next_m(frame, K);
        const BasisSet& basis = (*s_.basis)[m];
        const MatC psi = regression_vectors(frame, basis);
        auto est = lbf_estimate(psi, frame.y, basis);
        if (est.cond_flag) {
            if (!last_) throw NumericalError("LBF: ill-conditioned first window", frame.t);
            StepResult held = *last_;
            held.degraded = true;
            return held;
        }
        const VecC res = residuals(psi, frame.y, est.beta);
        ctl_.observe(frame, res.squaredNorm() / K, est.beta, basis);
        last_ = StepResult{est.theta, m, 0, false};
        return *last_;
    }

private:
    TrackerSettings s_;
    BasisCountController ctl_;
    std::optional<StepResult> last_;
};

namespace detail {

// Starting coefficients for the first window of a trimmed pipeline.
inline VecC initial_beta(const TrackerSettings& s, const MatC& psi, const VecC& y, const BasisSet& basis, int delta,
                         const IndexSet& forced, long t) {
    if (s.init == InitMethod::Lad) {
        try {
            return lad_estimate(psi, y, basis, s.lad).beta;
        } catch (const NumericalError&) {
            throw NumericalError("initial LAD estimate failed", t);
        }
    }
    auto est = lbf_estimate(psi, y, basis);
    if (est.cond_flag) throw NumericalError("initial LBF estimate is ill-conditioned", t);
    VecC beta = est.beta;
    for (int it = 0; it < 5; ++it) {
        const auto sets = trim_set(residuals(psi, y, beta), delta, forced, static_cast<int>(psi.rows()));
        auto refit = trimmed_estimate(psi, y, basis, sets.omega);
        if (refit.cond_flag) break;
        beta = refit.beta;
    }
    return beta;
}

}  // namespace detail

/// Sequentially trimmed LBF tracker with a fixed trimming level.
class TrimmedTracker final : public Tracker {
public:
    TrimmedTracker(TrackerSettings s, int delta) : s_(std::move(s)), delta_(delta), ctl_(s_) {}

    StepResult step(const Frame& frame) override {
        const IndexSet forced = missing_in_window(s_, frame);
        const int K_tilde = frame.K() - delta_ - static_cast<int>(forced.size());
        const int m = ctl_.next_m(frame, K_tilde);
        const BasisSet& basis = (*s_.basis)[m];
        const MatC psi = regression_vectors(frame, basis);

        VecC errors;
        if (!prev_) {
            const VecC beta0 = detail::initial_beta(s_, psi, frame.y, basis, delta_, forced, frame.t);
            errors = residuals(psi, frame.y, beta0);
        } else {
            errors = advance_errors(prev_->residuals, prev_->beta, (*s_.basis)[prev_->m], frame.y(frame.K() - 1),
                                    frame.phi.col(frame.K() - 1));
        }
        const auto sets = trim_set(errors, delta_, forced, static_cast<int>(psi.rows()));
        auto est = trimmed_estimate(psi, frame.y, basis, sets.omega);

        if (est.cond_flag) {
            if (!prev_) throw NumericalError("trimmed LBF: ill-conditioned first window", frame.t);
            const BasisSet& held_basis = (*s_.basis)[prev_->m];
            prev_->residuals = residuals(regression_vectors(frame, held_basis), frame.y, prev_->beta);
            StepResult held{theta_at(held_basis, prev_->beta), prev_->m, delta_, true};
            return held;
        }
        ctl_.observe(frame, noise_variance(est.residuals, est.omega), est.beta, basis);
        prev_ = Memory{est.beta, std::move(est.residuals), m};
        return StepResult{est.theta, m, delta_, false};
    }

private:
    struct Memory {
        VecC beta;
        VecC residuals;
        int m;
    };
    TrackerSettings s_;
    int delta_;
    BasisCountController ctl_;
    std::optional<Memory> prev_;
};

/// Adaptive LAD tracker warm-started from the previous window.
class LadTracker final : public Tracker {
public:
    explicit LadTracker(TrackerSettings s) : s_(std::move(s)), ctl_(s_) {}

    StepResult step(const Frame& frame) override {
        const int K = frame.K();
        const int m = ctl_.next_m(frame, K);
        const BasisSet& basis = (*s_.basis)[m];
        const MatC psi = regression_vectors(frame, basis);
        std::optional<VecC> warm;
        if (prev_beta_) warm = resize_coefficients(*prev_beta_, s_.n, prev_m_, m);
        LadResult est;
        try {
            est = lad_estimate(psi, frame.y, basis, s_.lad, warm);
        } catch (const NumericalError&) {
            if (!prev_beta_) throw NumericalError("LAD: first window failed", frame.t);
            return StepResult{theta_at((*s_.basis)[prev_m_], *prev_beta_), prev_m_, 0, true};
        }
        const int delta = TrimConfig::from_mu(s_.lad_variance_mu, K).delta;
        const auto sets = trim_set(est.residuals, delta);
        ctl_.observe(frame, noise_variance(est.residuals, sets.omega), est.beta, basis);
        prev_beta_ = est.beta;
        prev_m_ = m;
        return StepResult{est.theta, m, 0, false};
    }

private:
    TrackerSettings s_;
    BasisCountController ctl_;
    std::optional<VecC> prev_beta_;
    int prev_m_{1};
};

/// Bank configuration: trimming levels and the decision window length.
struct BankConfig {
    std::vector<int> deltas;
    int L{40};
    enum class Ranking { Shared, PerMember };
    Ranking ranking{Ranking::Shared};

    int p() const { return static_cast<int>(deltas.size()); }

    void validate(int K, int n) const {
        if (deltas.empty()) throw std::invalid_argument("BankConfig: no trimming levels");
        for (std::size_t i = 1; i < deltas.size(); ++i)
            if (deltas[i] <= deltas[i - 1]) throw std::invalid_argument("BankConfig: deltas must increase strictly");
        if (deltas.front() < 0) throw std::invalid_argument("BankConfig: negative trimming level");
        if (K - deltas.back() < n) throw IdentifiabilityError("BankConfig: largest trimming level leaves too few samples");
        if (L < 1) throw std::invalid_argument("BankConfig: L must be positive");
    }

    static BankConfig from_mu(const std::vector<double>& mus, int K, int L) {
        BankConfig cfg;
        cfg.L = L;
        for (double mu : mus) cfg.deltas.push_back(TrimConfig::from_mu(mu, K).delta);
        return cfg;
    }
};

/// p trimmed LBF estimators run side by side; the output at each instant is
/// the member with the smallest sum of the L most recent agreed deleted residuals.
class BankTracker final : public Tracker {
public:
    BankTracker(TrackerSettings s, BankConfig cfg)
        : s_(std::move(s)), cfg_(std::move(cfg)), ctl_(s_), cv_(cfg_.p(), cfg_.L),
          i_star_((cfg_.p() - 1) / 2) {}

    int selected() const { return i_star_; }
    const CvRegister& cv() const { return cv_; }
    long chain_fallbacks() const { return chain_fallbacks_; }

    StepResult step(const Frame& frame) override {
        const int p = cfg_.p();
        const int K = frame.K();
        const IndexSet forced = missing_in_window(s_, frame);
        const int K_tilde = K - cfg_.deltas.back() - static_cast<int>(forced.size());
        const int m = ctl_.next_m(frame, K_tilde);
        const BasisSet& basis = (*s_.basis)[m];
        const MatC psi = regression_vectors(frame, basis);
        const auto mn = static_cast<int>(psi.rows());

        // rejected sets per member
        std::vector<IndexSet> omega_bars(p);
        std::vector<IndexSet> omegas(p);
        if (members_.empty()) {
            const VecC beta0 = detail::initial_beta(s_, psi, frame.y, basis, cfg_.deltas.back(), forced, frame.t);
            const VecC errors = residuals(psi, frame.y, beta0);
            for (int i = 0; i < p; ++i) {
                auto sets = trim_set(errors, cfg_.deltas[i], forced, mn);
                omegas[i] = std::move(sets.omega);
                omega_bars[i] = std::move(sets.omega_bar);
            }
        } else if (cfg_.ranking == BankConfig::Ranking::Shared) {
            const Member& lead = members_[i_star_];
            const VecC errors = advance_errors(lead.residuals, lead.beta, (*s_.basis)[prev_m_],
                                               frame.y(K - 1), frame.phi.col(K - 1));
            for (int i = 0; i < p; ++i) {
                auto sets = trim_set(errors, cfg_.deltas[i], forced, mn);
                omegas[i] = std::move(sets.omega);
                omega_bars[i] = std::move(sets.omega_bar);
            }
        } else {
            for (int i = 0; i < p; ++i) {
                const Member& own = members_[i];
                const VecC errors = advance_errors(own.residuals, own.beta, (*s_.basis)[prev_m_], frame.y(K - 1),
                                                   frame.phi.col(K - 1));
                auto sets = trim_set(errors, cfg_.deltas[i], forced, mn);
                omegas[i] = std::move(sets.omega);
                omega_bars[i] = std::move(sets.omega_bar);
            }
        }

        // inverse normal matrices per member
        std::vector<MatC> P_inv(p);
        std::vector<VecC> pvec(p);
        bool ok = true;
        if (cfg_.ranking == BankConfig::Ranking::Shared) {
            auto top = normal_equations(psi, frame.y, omegas.back());
            auto inv = hermitian_inverse(top.P);
            if (inv) {
                auto chain = downdate_chain(*inv, top.p, psi, frame.y, omega_bars);
                for (int i = 0; i < p; ++i) {
                    chain_fallbacks_ += chain[i].fell_back ? 1 : 0;
                    P_inv[i] = std::move(chain[i].P_inv);
                    pvec[i] = std::move(chain[i].p);
                }
            } else {
                ok = false;
            }
        } else {
            for (int i = 0; i < p && ok; ++i) {
                auto ne = normal_equations(psi, frame.y, omegas[i]);
                auto inv = hermitian_inverse(ne.P);
                if (!inv) {
                    ok = false;
                    break;
                }
                P_inv[i] = std::move(*inv);
                pvec[i] = std::move(ne.p);
            }
        }

        if (!ok) {
            if (members_.empty()) throw NumericalError("bank: ill-conditioned first window", frame.t);
            const BasisSet& held = (*s_.basis)[prev_m_];
            const MatC held_psi = regression_vectors(frame, held);
            for (auto& mem : members_) mem.residuals = residuals(held_psi, frame.y, mem.beta);
            return StepResult{theta_at(held, members_[i_star_].beta), prev_m_, cfg_.deltas[i_star_], true};
        }

        std::vector<Member> next(p);
        for (int i = 0; i < p; ++i) {
            next[i].beta = P_inv[i] * pvec[i];
            next[i].residuals = residuals(psi, frame.y, next[i].beta);
        }

        // cross-validation on agreed deleted residuals
        bool agreed = true;
        for (int i = 0; i < p && agreed; ++i)
            agreed = std::find(omega_bars[i].begin(), omega_bars[i].end(), 0) == omega_bars[i].end();
        std::vector<cplx> deleted(p);
        if (agreed) {
            const VecC psi0 = psi.col(frame.k);
            for (int i = 0; i < p && agreed; ++i) {
                const double c = psi0.dot(P_inv[i] * psi0).real();
                if (!(c < 1.0 - 1e-12)) {
                    agreed = false;
                    break;
                }
                deleted[i] = deleted_residual(next[i].residuals(frame.k), std::max(c, 0.0));
            }
        }
        cv_.update(agreed, deleted);
        i_star_ = cv_.agreed_events() >= cfg_.L ? select_best(cv_.E()) : (p - 1) / 2;

        ctl_.observe(frame, noise_variance(next.back().residuals, omegas.back()), next.back().beta, basis);
        members_ = std::move(next);
        prev_m_ = m;
        return StepResult{theta_at(basis, members_[i_star_].beta), m, cfg_.deltas[i_star_], false};
    }

private:
    struct Member {
        VecC beta;
        VecC residuals;
    };
    TrackerSettings s_;
    BankConfig cfg_;
    BasisCountController ctl_;
    CvRegister cv_;
    int i_star_;
    int prev_m_{1};
    long chain_fallbacks_{0};
    std::vector<Member> members_;
};

}  // namespace lbf
