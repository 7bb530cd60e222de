#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "lbf/experiment.hpp"
#include "lbf/sim.hpp"

using namespace lbf;
using Catch::Approx;

TEST_CASE("QPSK symbols have unit modulus", "[sim]") {
    const auto u = sim::gen_qpsk(20000, 3);
    const double a = std::numbers::sqrt2 / 2.0;
    cplx sum = 0.0;
    for (const auto& s : u) {
        CHECK(std::abs(std::abs(s) - 1.0) < 1e-15);
        CHECK(std::abs(std::abs(s.real()) - a) < 1e-16);
        CHECK(std::abs(std::abs(s.imag()) - a) < 1e-16);
        sum += s;
    }
    CHECK(std::abs(sum) / std::sqrt(20000.0) < 5.0);
    CHECK(sim::gen_qpsk(500, 3) == std::vector<cplx>(u.begin(), u.begin() + 500));
    CHECK(sim::gen_qpsk(500, 4) != std::vector<cplx>(u.begin(), u.begin() + 500));
}

TEST_CASE("QPSK regressors are white", "[sim]") {
    const std::size_t T = 100000;
    const int n = 5;
    const auto u = sim::gen_qpsk(T, 7);
    MatC acc = MatC::Zero(n, n);
    for (std::size_t t = n; t < T; ++t) {
        const VecC phi = regressor(u, static_cast<long>(t), n);
        acc += phi * phi.adjoint();
    }
    acc /= static_cast<double>(T - n);
    CHECK((acc - MatC::Identity(n, n)).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("lowpass prototype", "[sim]") {
    const auto h = sim::lowpass_fir(0.003, 2001);
    double sum = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        sum += h[i];
        CHECK(h[i] == Approx(h[h.size() - 1 - i]).margin(1e-18));
    }
    CHECK(sum == Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(sim::lowpass_fir(0.1, 10), std::invalid_argument);
}

TEST_CASE("channel power profile", "[sim]") {
    sim::ChannelConfig cfg;
    CHECK(cfg.tap_variance(0) == 1.0);
    CHECK(cfg.tap_variance(9) == Approx(0.0354521).epsilon(1e-5));
    CHECK(cfg.total_power() == Approx(3.1469).epsilon(1e-4));
    CHECK(10.0 * std::log10(cfg.total_power() / 0.032) == Approx(19.93).margin(0.01));
}

TEST_CASE("channel taps meet their variance and bandwidth", "[sim][slow]") {
    sim::ChannelConfig cfg;
    const std::size_t T = 100000;
    const MatC theta = sim::gen_channel(cfg, T, 11);
    REQUIRE(theta.rows() == 10);
    REQUIRE(theta.cols() == static_cast<Eigen::Index>(T));
    for (int i = 0; i < cfg.n; ++i) {
        const double power = theta.row(i).squaredNorm() / static_cast<double>(T);
        CHECK(power == Approx(cfg.tap_variance(i)).epsilon(0.02));
    }
    // periodogram power within 1.5 B, summed bin by bin; Parseval supplies the total
    for (int i : {0, 9}) {
        const double total = theta.row(i).squaredNorm() * static_cast<double>(T);
        const int bins = static_cast<int>(std::floor(1.5 * cfg.bandwidth * static_cast<double>(T)));
        double low = 0.0;
        for (int b = -bins; b <= bins; ++b) {
            const cplx step = std::polar(1.0, -2.0 * std::numbers::pi * b / static_cast<double>(T));
            cplx w = 1.0, acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                acc += theta(i, static_cast<Eigen::Index>(t)) * w;
                w *= step;
                if ((t & 4095) == 4095) w /= std::abs(w);
            }
            low += std::norm(acc);
        }
        CHECK(low / total >= 0.99);
    }
}

TEST_CASE("channel taps are reproducible and independent across seeds", "[sim]") {
    sim::ChannelConfig cfg;
    cfg.n = 2;
    cfg.filter_order = 101;
    const MatC a = sim::gen_channel(cfg, 3000, 5);
    CHECK(a == sim::gen_channel(cfg, 3000, 5));
    const MatC b = sim::gen_channel(cfg, 3000, 6);
    const cplx corr = a.row(0).dot(b.row(0)) / (a.row(0).norm() * b.row(0).norm());
    CHECK(std::abs(corr) < 0.3);
}

TEST_CASE("Gaussian noise variance", "[sim]") {
    const std::size_t T = 100000;
    const auto e = sim::gen_noise(sim::NoiseConfig::contaminated(0.032, 32.0, 0.0), T, 2);
    double p = 0.0;
    for (const auto& v : e) p += std::norm(v);
    CHECK(p / T == Approx(0.032).epsilon(0.03));
}

TEST_CASE("contaminated noise variance", "[sim]") {
    const std::size_t T = 100000;
    const auto e = sim::gen_noise(sim::NoiseConfig::contaminated(0.032, 32.0, 0.1), T, 2);
    double p = 0.0;
    for (const auto& v : e) p += std::norm(v);
    CHECK(p / T == Approx(0.9 * 0.032 + 0.1 * 32.0).epsilon(0.05));
}

TEST_CASE("clean twin shares the Gaussian draws", "[sim]") {
    const auto clean = sim::gen_noise(sim::NoiseConfig::contaminated(0.032, 32.0, 0.0), 5000, 8);
    const auto dirty = sim::gen_noise(sim::NoiseConfig::contaminated(0.032, 32.0, 0.1), 5000, 8);
    int same = 0, scaled = 0;
    for (std::size_t t = 0; t < clean.size(); ++t) {
        if (clean[t] == dirty[t]) {
            ++same;
        } else {
            CHECK(std::abs(dirty[t] - clean[t] * std::sqrt(1000.0)) < 1e-12);
            ++scaled;
        }
    }
    CHECK(scaled > 400);
    CHECK(scaled < 600);
    CHECK(same + scaled == 5000);
}

TEST_CASE("alpha-stable noise reduces to Gaussian at alpha two", "[sim]") {
    const std::size_t T = 100000;
    const auto cfg = sim::NoiseConfig::alpha_stable(2.0, 0.09);
    const auto e = sim::gen_noise(cfg, T, 3);
    double re = 0.0, p = 0.0;
    for (const auto& v : e) {
        re += v.real() * v.real();
        p += std::norm(v);
    }
    CHECK(re / T == Approx(2.0 * 0.09 * 0.09).epsilon(0.05));
    CHECK(p / T == Approx(0.0324).epsilon(0.05));
    CHECK(cfg.nominal_variance() == Approx(0.0324));
}

TEST_CASE("heavy tails below alpha two", "[sim]") {
    const std::size_t T = 100000;
    const double sigma = 0.09;
    for (double alpha : {1.6, 1.2, 1.0}) {
        const auto e = sim::gen_noise(sim::NoiseConfig::alpha_stable(alpha, sigma), T, 4);
        std::size_t big = 0;
        for (const auto& v : e) big += std::abs(v) > 10.0 * sigma ? 1 : 0;
        // |e| of the alpha = 2 law is Rayleigh with E|e|^2 = 4 sigma^2
        const double gaussian = std::exp(-100.0 / 4.0);
        CHECK(static_cast<double>(big) / T > gaussian);
        CHECK(big > 100);
    }
}

TEST_CASE("noise configuration checks", "[sim]") {
    CHECK_THROWS_AS(sim::NoiseConfig::contaminated(0.1, 1.0, 1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(sim::NoiseConfig::contaminated(-0.1, 1.0, 0.1).validate(), std::invalid_argument);
    CHECK_THROWS_AS(sim::NoiseConfig::alpha_stable(2.5, 0.1).validate(), std::invalid_argument);
    CHECK_THROWS_AS(sim::NoiseConfig::alpha_stable(1.5, 0.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(sim::gen_noise(sim::NoiseConfig::alpha_stable(0.0, 0.1), 10, 1), std::invalid_argument);
}

TEST_CASE("FIR output convention", "[sim]") {
    MatC theta(2, 3);
    theta << cplx{1, 1}, cplx{2, 0}, cplx{0, 1}, cplx{0.5, 0}, cplx{0, -1}, cplx{1, 1};
    const std::vector<cplx> u{cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}};
    const std::vector<cplx> e{cplx{0.1, 0}, cplx{0, 0}, cplx{0, 0.2}};
    const auto y = sim::fir_output(theta, u, e);
    CHECK(std::abs(y[0] - (std::conj(theta(0, 0)) * u[0] + e[0])) < 1e-15);
    CHECK(std::abs(y[2] - (std::conj(theta(0, 2)) * u[2] + std::conj(theta(1, 2)) * u[1] + e[2])) < 1e-15);
}

TEST_CASE("algorithm names round trip", "[sim]") {
    for (const char* name : {"lbf", "lbf-clean", "adaptive-bank", "lad", "trimmed(0.05)", "trimmed(0.15)"})
        CHECK(Algorithm::parse(name).name() == name);
    CHECK_THROWS_AS(Algorithm::parse("trimmed(x)"), std::invalid_argument);
    CHECK_THROWS_AS(Algorithm::parse("trimmed(1.5)"), std::invalid_argument);
    CHECK_THROWS_AS(Algorithm::parse("rls"), std::invalid_argument);
}

TEST_CASE("light trimming is nearly harmless on clean data", "[sim][slow]") {
    Scenario sc;
    sc.T = 20000;
    sc.noise = sim::NoiseConfig::contaminated(0.032, 32.0, 0.0);
    sc.algorithms = {Algorithm::parse("lbf"), Algorithm::parse("trimmed(0.005)")};
    const auto res = run_experiment(sc);
    const double ratio = res.algorithms[1].mse / res.algorithms[0].mse;
    CHECK(ratio >= 0.9);
    CHECK(ratio <= 1.3);
}

TEST_CASE("experiments are reproducible", "[sim]") {
    Scenario sc;
    sc.T = 1500;
    sc.K = 51;
    sc.channel.filter_order = 301;
    sc.noise = sim::NoiseConfig::contaminated(0.032, 32.0, 0.1);
    sc.algorithms = {Algorithm::parse("lbf"), Algorithm::parse("adaptive-bank"), Algorithm::parse("lad")};
    const auto a = run_experiment(sc);
    const auto b = run_experiment(sc);
    for (std::size_t i = 0; i < a.algorithms.size(); ++i) {
        CHECK(a.algorithms[i].mse == b.algorithms[i].mse);
        CHECK(a.algorithms[i].mean_m == b.algorithms[i].mean_m);
        CHECK(a.algorithms[i].mean_delta_selected == b.algorithms[i].mean_delta_selected);
        CHECK(a.algorithms[i].frames == 1500 - 50);
    }
}

TEST_CASE("experiment argument checks", "[sim]") {
    Scenario sc;
    sc.T = 100;
    sc.algorithms = {Algorithm::parse("lbf")};
    CHECK_THROWS_AS(run_experiment(sc), std::invalid_argument);
    sc.K = 50;
    CHECK_THROWS_AS(run_experiment(sc), std::invalid_argument);
    sc.K = 11;
    sc.algorithms.clear();
    CHECK_THROWS_AS(run_experiment(sc), std::invalid_argument);
}
