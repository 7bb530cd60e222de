#pragma once

// Signal generators for Monte-Carlo identification experiments: QPSK input,
// lowpass-filtered Gaussian channel taps, contaminated Gaussian and
// symmetric alpha-stable measurement noise.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "lbf/core.hpp"

namespace lbf::sim {

/// Independent seeded stream for a (seed, purpose) pair.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x5eedu};
    return std::mt19937_64(seq);
}

enum Stream : std::uint64_t { kInput = 1, kChannel = 2, kNoise = 3 };

/// Unit-power QPSK symbols (+-1 +-i)/sqrt(2).
inline std::vector<cplx> gen_qpsk(std::size_t T, std::uint64_t seed) {
    auto rng = make_rng(seed, kInput);
    const double a = std::numbers::sqrt2 / 2.0;
    std::vector<cplx> u(T);
    for (auto& s : u) {
        const auto bits = rng();
        s = cplx{(bits & 1u) ? a : -a, (bits & 2u) ? a : -a};
    }
    return u;
}

struct ChannelConfig {
    int n{10};
    double decay{0.69};
    double bandwidth{0.003};  // cutoff in cycles per sample
    int filter_order{2001};   // number of FIR taps, odd

    double tap_variance(int i) const { return std::pow(decay, i); }
    double total_power() const {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += tap_variance(i);
        return s;
    }
};

/// Hamming-windowed sinc lowpass with unit DC gain.
inline std::vector<double> lowpass_fir(double cutoff, int length) {
    if (length < 1 || length % 2 == 0) throw std::invalid_argument("lowpass_fir: length must be odd");
    std::vector<double> h(length);
    const int c = length / 2;
    double sum = 0.0;
    for (int i = 0; i < length; ++i) {
        const double x = i - c;
        const double sinc = x == 0.0 ? 2.0 * cutoff : std::sin(2.0 * std::numbers::pi * cutoff * x) / (std::numbers::pi * x);
        const double win = length == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (length - 1));
        h[i] = sinc * win;
        sum += h[i];
    }
    for (auto& v : h) v /= sum;
    return h;
}

/// Tap trajectories theta_i(t), stored as an n x T matrix. Each tap is
/// filtered circular Gaussian noise rescaled to mean power decay^(i).
inline MatC gen_channel(const ChannelConfig& cfg, std::size_t T, std::uint64_t seed) {
    if (cfg.n < 1) throw std::invalid_argument("gen_channel: n must be positive");
    const auto h = lowpass_fir(cfg.bandwidth, cfg.filter_order);
    const std::size_t L = h.size();
    auto rng = make_rng(seed, kChannel);
    std::normal_distribution<double> normal(0.0, std::numbers::sqrt2 / 2.0);
    MatC theta(cfg.n, static_cast<Eigen::Index>(T));
    std::vector<double> re(T + L - 1), im(T + L - 1);
    for (int i = 0; i < cfg.n; ++i) {
        for (std::size_t s = 0; s < re.size(); ++s) {
            re[s] = normal(rng);
            im[s] = normal(rng);
        }
        double power = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            double ar = 0.0, ai = 0.0;
            const double* xr = re.data() + t;
            const double* xi = im.data() + t;
            for (std::size_t q = 0; q < L; ++q) {
                ar += h[q] * xr[q];
                ai += h[q] * xi[q];
            }
            theta(i, static_cast<Eigen::Index>(t)) = cplx{ar, ai};
            power += ar * ar + ai * ai;
        }
        power /= static_cast<double>(T);
        theta.row(i) *= std::sqrt(cfg.tap_variance(i) / power);
    }
    return theta;
}

struct NoiseConfig {
    enum class Kind { ContaminatedGaussian, AlphaStable };
    Kind kind{Kind::ContaminatedGaussian};
    double sigma1_sq{0.032};
    double sigma2_sq{32.0};
    double eps{0.0};
    double alpha{2.0};
    double sigma{0.09};

    static NoiseConfig contaminated(double s1, double s2, double eps) {
        NoiseConfig c;
        c.kind = Kind::ContaminatedGaussian;
        c.sigma1_sq = s1;
        c.sigma2_sq = s2;
        c.eps = eps;
        return c;
    }
    static NoiseConfig alpha_stable(double alpha, double sigma) {
        NoiseConfig c;
        c.kind = Kind::AlphaStable;
        c.alpha = alpha;
        c.sigma = sigma;
        return c;
    }

    void validate() const {
        if (kind == Kind::ContaminatedGaussian) {
            if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("noise: eps must lie in [0, 1)");
            if (!(sigma1_sq >= 0.0 && sigma2_sq >= 0.0)) throw std::invalid_argument("noise: negative variance");
        } else {
            if (!(alpha > 0.0 && alpha <= 2.0)) throw std::invalid_argument("noise: alpha must lie in (0, 2]");
            if (!(sigma > 0.0)) throw std::invalid_argument("noise: sigma must be positive");
        }
    }

    /// Nominal (outlier-free) complex noise variance.
    double nominal_variance() const {
        return kind == Kind::ContaminatedGaussian ? sigma1_sq : 4.0 * sigma * sigma;
    }
};

/// Standard symmetric alpha-stable variate, characteristic function exp(-|z|^alpha),
/// by the Chambers-Mallows-Stuck transform.
template <class Rng>
double sas_standard(double alpha, Rng& rng) {
    std::uniform_real_distribution<double> angle(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
    std::exponential_distribution<double> expo(1.0);
    const double V = angle(rng);
    const double W = expo(rng);
    if (alpha == 1.0) return std::tan(V);
    return std::sin(alpha * V) / std::pow(std::cos(V), 1.0 / alpha) *
           std::pow(std::cos((1.0 - alpha) * V) / W, (1.0 - alpha) / alpha);
}

/// Measurement noise sequence. The contaminated model draws a unit circular
/// Gaussian and a uniform selector for every sample, so realizations that
/// differ only in eps share all Gaussian draws.
inline std::vector<cplx> gen_noise(const NoiseConfig& cfg, std::size_t T, std::uint64_t seed) {
    cfg.validate();
    auto rng = make_rng(seed, kNoise);
    std::vector<cplx> e(T);
    if (cfg.kind == NoiseConfig::Kind::ContaminatedGaussian) {
        std::normal_distribution<double> normal(0.0, std::numbers::sqrt2 / 2.0);
        std::uniform_real_distribution<double> pick(0.0, 1.0);
        const double s1 = std::sqrt(cfg.sigma1_sq);
        const double s2 = std::sqrt(cfg.sigma2_sq);
        for (auto& v : e) {
            const double re = normal(rng);
            const double im = normal(rng);
            const double sel = pick(rng);
            v = cplx{re, im} * (sel < cfg.eps ? s2 : s1);
        }
    } else {
        for (auto& v : e) {
            const double re = sas_standard(cfg.alpha, rng);
            const double im = sas_standard(cfg.alpha, rng);
            v = cfg.sigma * cplx{re, im};
        }
    }
    return e;
}

/// y(t) = theta^H(t) phi(t) + e(t) with phi(t) = [u(t), ..., u(t - n + 1)]^T.
inline std::vector<cplx> fir_output(const MatC& theta, std::span<const cplx> u, std::span<const cplx> e) {
    const auto n = theta.rows();
    const auto T = static_cast<std::size_t>(theta.cols());
    std::vector<cplx> y(T);
    for (std::size_t t = 0; t < T; ++t) {
        cplx acc = e[t];
        for (Eigen::Index i = 0; i < n; ++i) {
            if (static_cast<long>(t) - i < 0) break;
            acc += std::conj(theta(i, static_cast<Eigen::Index>(t))) * u[t - static_cast<std::size_t>(i)];
        }
        y[t] = acc;
    }
    return y;
}

}  // namespace lbf::sim
