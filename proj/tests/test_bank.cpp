#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lbf/bank.hpp"
#include "lbf/experiment.hpp"
#include "lbf/robust.hpp"
#include "support.hpp"

using namespace lbf;
using support::random_frame;

namespace {

std::vector<int> columns(const IndexSet& omega, int k) {
    std::vector<int> cols;
    for (int j : omega) cols.push_back(j + k);
    return cols;
}

}  // namespace

TEST_CASE("leverage of a lone sample is one", "[bank]") {
    MatC psi(1, 1);
    psi << cplx{0.6, -0.8};
    VecC y = VecC::Ones(1);
    const auto ne = normal_equations(psi, y, IndexSet{0});
    const auto inv = hermitian_inverse(ne.P);
    REQUIRE(inv.has_value());
    CHECK_THROWS_AS(leverage(*inv, psi.col(0)), NumericalError);
}

TEST_CASE("zero regressor has no leverage", "[bank]") {
    CHECK(leverage(MatC::Identity(3, 3), VecC::Zero(3)) == 0.0);
}

TEST_CASE("leverage matches a dense solve", "[bank]") {
    std::mt19937_64 rng(1);
    const Frame fr = random_frame(rng, 21, 2);
    const BasisSet basis = support::flat_basis(21, 2);
    const MatC psi = regression_vectors(fr, basis);
    const auto ne = normal_equations(psi, fr.y, full_window(10));
    const VecC psi0 = psi.col(10);
    const double expect = psi0.dot(oracle::dense_solve(ne.P, psi0).col(0)).real();
    CHECK(std::abs(leverage(*hermitian_inverse(ne.P), psi0) - expect) < 1e-10);
}

TEST_CASE("deleted residual arithmetic", "[bank]") {
    CHECK(deleted_residual(cplx{0.3, 0.2}, 0.0) == cplx{0.3, 0.2});
    CHECK(deleted_residual(cplx{1.0, 1.0}, 0.5) == cplx{2.0, 2.0});
    CHECK_THROWS_AS(deleted_residual(cplx{1.0, 0.0}, 1.0), NumericalError);
}

TEST_CASE("deleted residual equals the leave-one-out refit", "[bank]") {
    std::mt19937_64 rng(2);
    for (int n : {1, 2, 10}) {
        for (int m = 1; m <= 4; ++m) {
            const int K = std::max(21, 2 * n * m + 11) | 1;
            const int k = K / 2;
            const Frame fr = random_frame(rng, K, n);
            const BasisSet basis = support::flat_basis(K, m, 0.1);
            const MatC psi = regression_vectors(fr, basis);
            auto sets = trim_set(oracle::random_vec(rng, K), 3);
            if (std::find(sets.omega.begin(), sets.omega.end(), 0) == sets.omega.end()) continue;
            auto est = trimmed_estimate(psi, fr.y, basis, sets.omega);
            const double c = leverage(est.inverse(), psi.col(k));
            const cplx fast = deleted_residual(est.residuals(k), c);
            const cplx slow = oracle::holey_refit_error(psi, fr.y, columns(sets.omega, k), k);
            CHECK(std::abs(fast - slow) <= 1e-8 * std::abs(slow));
        }
    }
}

TEST_CASE("single level chain is the identity", "[bank]") {
    std::mt19937_64 rng(3);
    const Frame fr = random_frame(rng, 15, 1);
    const MatC psi = regression_vectors(fr, support::flat_basis(15, 2));
    const MatC A = oracle::random_mat(rng, 2, 4);
    const MatC P_inv = A * A.adjoint();
    const VecC p = oracle::random_vec(rng, 2);
    const auto chain = downdate_chain(P_inv, p, psi, fr.y, {IndexSet{-2}});
    REQUIRE(chain.size() == 1);
    CHECK(chain[0].P_inv == P_inv);
    CHECK(chain[0].p == p);
    CHECK(downdate_chain(P_inv, p, psi, fr.y, {}).empty());
}

TEST_CASE("restoring one sample is the Sherman-Morrison update", "[bank]") {
    std::mt19937_64 rng(4);
    const Frame fr = random_frame(rng, 21, 2);
    const MatC psi = regression_vectors(fr, support::flat_basis(21, 2));
    const IndexSet lower{}, upper{4};
    IndexSet omega_upper;
    for (int j = -10; j <= 10; ++j)
        if (j != 4) omega_upper.push_back(j);
    const auto top = normal_equations(psi, fr.y, omega_upper);
    const MatC P_inv = *hermitian_inverse(top.P);
    const auto chain = downdate_chain(P_inv, top.p, psi, fr.y, {lower, upper});
    const VecC v = psi.col(14);
    const MatC sm = P_inv - (P_inv * v) * (v.adjoint() * P_inv) / (1.0 + v.dot(P_inv * v));
    CHECK(oracle::rel_fro(chain[0].P_inv, sm) < 1e-10);
    CHECK((chain[0].p - (top.p + std::conj(fr.y(14)) * v)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_FALSE(chain[0].fell_back);
}

TEST_CASE("chain levels match dense inverses", "[bank]") {
    std::mt19937_64 rng(5);
    const int K = 301, k = 150;
    const std::vector<int> deltas{1, 15, 45};
    for (int trial = 0; trial < 5; ++trial) {
        const Frame fr = random_frame(rng, K, 10);
        const BasisSet basis = support::flat_basis(K, 3, 0.02);
        const MatC psi = regression_vectors(fr, basis);
        const VecC errors = oracle::random_vec(rng, K);
        std::vector<IndexSet> bars, omegas;
        for (int d : deltas) {
            auto s = trim_set(errors, d);
            bars.push_back(s.omega_bar);
            omegas.push_back(s.omega);
        }
        const auto top = normal_equations(psi, fr.y, omegas.back());
        const auto chain = downdate_chain(*hermitian_inverse(top.P), top.p, psi, fr.y, bars);
        for (int i = 0; i < 3; ++i) {
            MatC P;
            VecC p;
            oracle::naive_normal(psi, fr.y, columns(omegas[i], k), P, p);
            CHECK(oracle::rel_fro(chain[i].P_inv, oracle::dense_inverse(P)) <= 1e-8);
            CHECK(oracle::rel_fro(chain[i].p, p) <= 1e-12);
        }
    }
}

TEST_CASE("chain rejects rejected sets that are not nested", "[bank]") {
    std::mt19937_64 rng(6);
    const Frame fr = random_frame(rng, 15, 1);
    const MatC psi = regression_vectors(fr, support::flat_basis(15, 1));
    CHECK_THROWS_AS(downdate_chain(MatC::Identity(1, 1), VecC::Zero(1), psi, fr.y, {IndexSet{1}, IndexSet{2, 3}}),
                    std::invalid_argument);
}

TEST_CASE("shared ranking yields nested rejected sets", "[bank]") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const VecC errors = oracle::random_vec(rng, 151);
        IndexSet prev;
        for (int d : {0, 7, 22, 40}) {
            const auto s = trim_set(errors, d, IndexSet{-3, 60});
            CHECK(std::includes(s.omega_bar.begin(), s.omega_bar.end(), prev.begin(), prev.end()));
            prev = s.omega_bar;
        }
    }
}

TEST_CASE("register reaches the steady sum", "[bank]") {
    CvRegister cv(3, 2);
    const std::vector<cplx> ones(3, cplx{1.0, 0.0});
    for (int i = 0; i < 7; ++i) cv.update(true, ones);
    for (int i = 0; i < 3; ++i) CHECK(cv.E()(i) == 2.0);
}

TEST_CASE("register ignores disagreed samples", "[bank]") {
    CvRegister cv(2, 4);
    const std::vector<cplx> big(2, cplx{9.0, 9.0});
    for (int i = 0; i < 10; ++i) cv.update(false, big);
    CHECK(cv.E().isZero());
    CHECK(cv.agreed_events() == 0);
    CHECK(cv.position() == 0);
}

TEST_CASE("register sums replay the agreed history", "[bank]") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution agree(0.7);
    const int p = 3, L = 40;
    CvRegister cv(p, L);
    std::vector<std::pair<bool, std::vector<cplx>>> log;
    for (int step = 0; step < 500; ++step) {
        const bool ok = agree(rng);
        std::vector<cplx> values(p);
        for (auto& v : values) v = oracle::random_vec(rng, 1, 2.0)(0);
        cv.update(ok, values);
        log.emplace_back(ok, values);
        const auto ref = oracle::replay_register(log, p, L);
        for (int i = 0; i < p; ++i) REQUIRE(std::abs(cv.E()(i) - ref[i]) < 1e-9);
    }
}

TEST_CASE("L agreed events evict the initial contents", "[bank]") {
    const int L = 5;
    CvRegister cv(1, L);
    const std::vector<cplx> big{cplx{100.0, 0.0}}, small{cplx{1.0, 0.0}};
    for (int i = 0; i < L; ++i) cv.update(true, big);
    for (int i = 0; i < L; ++i) cv.update(true, small);
    CHECK(cv.E()(0) == Catch::Approx(static_cast<double>(L)));
    CHECK((cv.registers() - MatC::Ones(1, L)).isZero());
}

TEST_CASE("best member selection", "[bank]") {
    VecR E(3);
    E << 5.0, 3.0, 7.0;
    CHECK(select_best(E) == 1);
    E << 2.0, 2.0, 2.0;
    CHECK(select_best(E) == 0);
    CHECK_THROWS_AS(CvRegister(0, 4), std::invalid_argument);
}

TEST_CASE("bank configuration checks", "[bank]") {
    const auto cfg = BankConfig::from_mu({0.005, 0.05, 0.15}, 151, 40);
    CHECK(cfg.deltas == std::vector<int>{0, 7, 22});
    CHECK_NOTHROW(cfg.validate(151, 10));
    BankConfig bad = cfg;
    bad.deltas = {7, 7};
    CHECK_THROWS_AS(bad.validate(151, 10), std::invalid_argument);
    bad.deltas = {0, 145};
    CHECK_THROWS_AS(bad.validate(151, 10), IdentifiabilityError);
    bad = cfg;
    bad.L = 0;
    CHECK_THROWS_AS(bad.validate(151, 10), std::invalid_argument);
}

TEST_CASE("bank keeps the middle member during warm-up", "[bank]") {
    sim::ChannelConfig ch;
    ch.n = 2;
    ch.filter_order = 201;
    ch.bandwidth = 0.01;
    const std::size_t T = 600;
    const auto theta = sim::gen_channel(ch, T, 9);
    const auto u = sim::gen_qpsk(T, 9);
    const auto y = sim::fir_output(theta, u, sim::gen_noise(sim::NoiseConfig::contaminated(0.01, 10, 0.1), T, 9));
    TrackerSettings s;
    s.n = 2;
    s.basis = std::make_shared<BasisFamily>(eigenbasis(ParameterModel{SpectrumKind::FlatDoppler, 0.06, 1.0}, 31, 10));
    s.policy = MPolicy::fixed(3);
    for (auto ranking : {BankConfig::Ranking::Shared, BankConfig::Ranking::PerMember}) {
        BankConfig cfg = BankConfig::from_mu({0.0, 0.05, 0.15}, 31, 10);
        cfg.ranking = ranking;
        BankTracker bank(s, cfg);
        for (long t = 15; t < static_cast<long>(T) - 15; ++t) {
            const auto step = bank.step(make_frame(u, y, t, 15, 2));
            if (bank.cv().agreed_events() < cfg.L) CHECK(bank.selected() == 1);
            CHECK(step.delta == cfg.deltas[bank.selected()]);
            CHECK(step.theta.allFinite());
        }
        CHECK(bank.cv().agreed_events() >= cfg.L);
        if (ranking == BankConfig::Ranking::PerMember) CHECK(bank.chain_fallbacks() == 0);
    }
}

TEST_CASE("bank error approaches the best fixed trimming level", "[bank][slow]") {
    Scenario sc;
    sc.T = 8000;
    sc.seed = 4;
    sc.noise = sim::NoiseConfig::contaminated(0.032, 32.0, 0.1);
    for (const char* name : {"trimmed(0.005)", "trimmed(0.05)", "trimmed(0.15)", "adaptive-bank"})
        sc.algorithms.push_back(Algorithm::parse(name));
    const auto res = run_experiment(sc);
    const double best = std::min({res.algorithms[0].mse, res.algorithms[1].mse, res.algorithms[2].mse});
    CHECK(res.algorithms[3].mse <= 1.1 * best);
}
