#pragma once

// One Monte-Carlo realization: generate channel, input and noise, run the
// requested trackers on the same data and average their tracking errors.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbf/basis.hpp"
#include "lbf/sim.hpp"
#include "lbf/tracking.hpp"

namespace lbf {

/// Algorithm identifiers: lbf, lbf-clean (plain LBF on the outlier-free
/// twin realization), trimmed(mu), adaptive-bank, lad.
struct Algorithm {
    enum class Kind { Lbf, LbfClean, Trimmed, Bank, Lad };
    Kind kind{Kind::Lbf};
    double mu{0.0};

    static Algorithm parse(const std::string& name) {
        if (name == "lbf") return {Kind::Lbf};
        if (name == "lbf-clean") return {Kind::LbfClean};
        if (name == "adaptive-bank") return {Kind::Bank};
        if (name == "lad") return {Kind::Lad};
        const std::string prefix = "trimmed(";
        if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() + 1 && name.back() == ')') {
            const std::string arg = name.substr(prefix.size(), name.size() - prefix.size() - 1);
            std::size_t used = 0;
            double mu = 0.0;
            try {
                mu = std::stod(arg, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == arg.size() && mu >= 0.0 && mu < 1.0) return {Kind::Trimmed, mu};
        }
        throw std::invalid_argument("unknown algorithm '" + name + "'");
    }

    std::string name() const {
        switch (kind) {
            case Kind::Lbf: return "lbf";
            case Kind::LbfClean: return "lbf-clean";
            case Kind::Bank: return "adaptive-bank";
            case Kind::Lad: return "lad";
            case Kind::Trimmed: {
                char buf[48];
                std::snprintf(buf, sizeof buf, "trimmed(%g)", mu);
                return buf;
            }
        }
        return "?";
    }
};

struct Scenario {
    sim::ChannelConfig channel{};
    sim::NoiseConfig noise{};
    int K{151};
    std::size_t T{20000};
    std::uint64_t seed{1};
    std::vector<Algorithm> algorithms{};
    std::vector<double> bank_mu{0.005, 0.05, 0.15};
    int bank_L{40};
    BankConfig::Ranking ranking{BankConfig::Ranking::Shared};
    MPolicy policy{MPolicy::adaptive()};
    int m_init{0};
    bool phi_known{false};
    double eta0{0.99};
    LadConfig lad{};
    InitMethod init{InitMethod::Lad};
    std::optional<ParameterModel> hypermodel{};  // defaults to flat Doppler at the channel bandwidth
    std::size_t max_frames{0};                   // 0: whole record; otherwise stop after this many windows

    ParameterModel model() const {
        if (hypermodel) return *hypermodel;
        return ParameterModel{SpectrumKind::FlatDoppler, 2.0 * std::numbers::pi * channel.bandwidth,
                              channel.total_power()};
    }
    int k() const { return half_width(K); }
    /// First window included in the error average.
    long first_scored() const { return k() + 2L * K; }
};

struct AlgorithmResult {
    Algorithm algorithm;
    double mse{0.0};
    double mean_m{0.0};
    double mean_delta_selected{0.0};
    double wall_time_ms{0.0};  // estimator work only
    std::size_t frames{0};
    std::size_t degraded{0};
};

struct RunResult {
    Scenario scenario;
    std::vector<AlgorithmResult> algorithms;
};

/// Shared pieces of one realization.
struct Realization {
    MatC theta;
    std::vector<cplx> u;
    std::vector<cplx> y;
    std::vector<cplx> y_clean;
};

inline Realization realize(const Scenario& sc) {
    Realization r;
    r.theta = sim::gen_channel(sc.channel, sc.T, sc.seed);
    r.u = sim::gen_qpsk(sc.T, sc.seed);
    const auto e = sim::gen_noise(sc.noise, sc.T, sc.seed);
    r.y = sim::fir_output(r.theta, r.u, e);
    bool need_clean = false;
    for (const auto& a : sc.algorithms) need_clean |= a.kind == Algorithm::Kind::LbfClean;
    if (need_clean) {
        sim::NoiseConfig clean = sc.noise;
        if (clean.kind == sim::NoiseConfig::Kind::ContaminatedGaussian) {
            clean.eps = 0.0;
        } else {
            clean.alpha = 2.0;
        }
        r.y_clean = sim::fir_output(r.theta, r.u, sim::gen_noise(clean, sc.T, sc.seed));
    }
    return r;
}

inline TrackerSettings tracker_settings(const Scenario& sc, std::shared_ptr<const BasisFamily> family) {
    TrackerSettings s;
    s.n = sc.channel.n;
    s.basis = std::move(family);
    s.policy = sc.policy;
    s.m_init = sc.m_init;
    s.known_sigma_e_sq = sc.noise.nominal_variance();
    s.known_sigma_theta_sq = sc.channel.total_power();
    s.phi_known = sc.phi_known;
    s.sigma_u_sq = 1.0;
    s.eta0 = sc.eta0;
    s.lad = sc.lad;
    s.init = sc.init;
    return s;
}

inline std::unique_ptr<Tracker> make_tracker(const Algorithm& a, const Scenario& sc, const TrackerSettings& s) {
    switch (a.kind) {
        case Algorithm::Kind::Lbf:
        case Algorithm::Kind::LbfClean: return std::make_unique<LbfTracker>(s);
        case Algorithm::Kind::Lad: return std::make_unique<LadTracker>(s);
        case Algorithm::Kind::Trimmed: return std::make_unique<TrimmedTracker>(s, TrimConfig::from_mu(a.mu, sc.K).delta);
        case Algorithm::Kind::Bank: {
            auto cfg = BankConfig::from_mu(sc.bank_mu, sc.K, sc.bank_L);
            cfg.ranking = sc.ranking;
            cfg.validate(sc.K, s.n);
            return std::make_unique<BankTracker>(s, cfg);
        }
    }
    throw std::logic_error("make_tracker: unhandled algorithm");
}

inline std::shared_ptr<const BasisFamily> basis_for(const Scenario& sc) {
    const int m_max = std::max(1, std::min(sc.K, identifiability_bound(sc.K, sc.channel.n)));
    return std::make_shared<BasisFamily>(eigenbasis(sc.model(), sc.K, m_max));
}

/// Runs one tracker over the record and scores it against the true channel.
inline AlgorithmResult track(const Algorithm& a, const Scenario& sc, const Realization& r,
                             std::shared_ptr<const BasisFamily> family) {
    const auto settings = tracker_settings(sc, std::move(family));
    auto tracker = make_tracker(a, sc, settings);
    const std::vector<cplx>& y = a.kind == Algorithm::Kind::LbfClean ? r.y_clean : r.y;
    const int k = sc.k();
    const int n = sc.channel.n;
    const long first = k;
    long last = static_cast<long>(sc.T) - k - 1;
    if (sc.max_frames > 0) last = std::min(last, first + static_cast<long>(sc.max_frames) - 1);
    if (last < first) throw std::invalid_argument("record too short for the analysis window");

    AlgorithmResult out;
    out.algorithm = a;
    double err = 0.0, msum = 0.0, dsum = 0.0;
    std::size_t scored = 0;
    std::chrono::duration<double, std::milli> busy{0};
    for (long t = first; t <= last; ++t) {
        const Frame frame = make_frame(r.u, y, t, k, n);
        const auto start = std::chrono::steady_clock::now();
        StepResult step;
        try {
            step = tracker->step(frame);
        } catch (const IdentifiabilityError& ex) {
            throw NumericalError(ex.what(), t);
        }
        busy += std::chrono::steady_clock::now() - start;
        ++out.frames;
        out.degraded += step.degraded ? 1 : 0;
        if (!step.theta.allFinite()) throw NumericalError("non-finite estimate", t);
        if (t >= sc.first_scored()) {
            err += (step.theta - r.theta.col(t)).squaredNorm();
            msum += step.m;
            dsum += step.delta;
            ++scored;
        }
    }
    if (scored == 0) throw std::invalid_argument("record too short: no window survives the burn-in");
    out.mse = err / static_cast<double>(scored);
    out.mean_m = msum / static_cast<double>(scored);
    out.mean_delta_selected = dsum / static_cast<double>(scored);
    out.wall_time_ms = busy.count();
    return out;
}

inline RunResult run_experiment(const Scenario& sc) {
    if (sc.K < 1 || sc.K % 2 == 0) throw std::invalid_argument("K must be odd and positive");
    if (sc.algorithms.empty()) throw std::invalid_argument("no algorithms requested");
    sc.noise.validate();
    RunResult res;
    res.scenario = sc;
    const auto family = basis_for(sc);
    const Realization r = realize(sc);
    for (const auto& a : sc.algorithms) res.algorithms.push_back(track(a, sc, r, family));
    return res;
}

}  // namespace lbf
