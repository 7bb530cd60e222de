#pragma once

// Karhunen-Loeve basis functions for the local basis function estimator,
// built from the normalized autocorrelation of the parameter trajectories,
// together with the closed-form bias/variance expressions that drive the
// choice of the number of basis functions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lbf/core.hpp"

namespace lbf {

enum class SpectrumKind { Jakes, FlatDoppler };

/// Stationary hypermodel of parameter variation.
struct ParameterModel {
    SpectrumKind kind{SpectrumKind::FlatDoppler};
    double rate{0.01};            // Doppler rate in radians per sample
    double sigma_theta_sq{1.0};   // total parameter power

    void validate() const {
        if (!(rate > 0.0 && rate <= std::numbers::pi))
            throw std::invalid_argument("ParameterModel: rate must lie in (0, pi]");
        if (!(sigma_theta_sq > 0.0))
            throw std::invalid_argument("ParameterModel: sigma_theta_sq must be positive");
    }
};

/// Normalized autocorrelation of a parameter trajectory at lag tau.
inline double rho(const ParameterModel& model, int tau) {
    const double x = model.rate * static_cast<double>(std::abs(tau));
    double value = 1.0;
    if (x != 0.0) {
        value = model.kind == SpectrumKind::Jakes ? std::cyl_bessel_j(0.0, x) : std::sin(x) / x;
    }
    return std::clamp(value, -1.0, 1.0);
}

/// K x K Toeplitz matrix [R]_ij = rho(j - i).
inline MatR correlation_matrix(const ParameterModel& model, int K) {
    if (K < 1 || K % 2 == 0) throw std::invalid_argument("correlation_matrix: K must be odd and positive");
    VecR lags(K);
    for (int tau = 0; tau < K; ++tau) lags(tau) = rho(model, tau);
    MatR R(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) R(i, j) = lags(std::abs(j - i));
    return R;
}

/// Orthonormal basis sequences f_1..f_m on the window [-k, k].
///
/// Row r of `f()` holds f(j) for j = r - k. The functions are conjugate
/// symmetric, f_i(-j) = conj(f_i(j)), so that f_i(0) is real; eigenvectors
/// of even parity are stored real and those of odd parity purely imaginary.
class BasisSet {
public:
    BasisSet() = default;
    BasisSet(MatC f, VecR lambdas) : f_(std::move(f)), lambdas_(std::move(lambdas)) {
        if (f_.rows() % 2 == 0) throw std::invalid_argument("BasisSet: window width must be odd");
        if (f_.cols() != lambdas_.size()) throw std::invalid_argument("BasisSet: eigenvalue count mismatch");
    }

    int K() const { return static_cast<int>(f_.rows()); }
    int k() const { return half_width(K()); }
    int m() const { return static_cast<int>(f_.cols()); }

    const MatC& f() const { return f_; }
    const VecR& lambdas() const { return lambdas_; }

    /// f(j) as an m-vector.
    auto at(int j) const { return f_.row(j + k()).transpose(); }

    /// Real values f_i(0).
    VecR f0() const { return f_.row(k()).transpose().real(); }

    /// Smoothing kernel h(j) = f^H(0) f(j), indexed j + k.
    VecC kernel() const { return f_ * f_.row(k()).adjoint(); }

    /// g = (1/K) sum_j f(j).
    VecC g() const { return f_.colwise().sum().transpose() / static_cast<double>(K()); }

    /// Leading m functions.
    BasisSet leading(int m) const {
        if (m < 1 || m > this->m()) throw std::out_of_range("BasisSet::leading: m out of range");
        return BasisSet(f_.leftCols(m), lambdas_.head(m));
    }

    /// I_n (x) f^H(j), the n x mn map from coefficients to theta(t + j).
    MatC F(int n, int j) const { return kron_identity(n, at(j).adjoint()); }
    MatC F0(int n) const { return F(n, 0); }
    MatC G(int n) const { return kron_identity(n, g().adjoint()); }

private:
    static MatC kron_identity(int n, const Eigen::RowVectorXcd& row) {
        const auto m = row.size();
        MatC out = MatC::Zero(n, n * m);
        for (int i = 0; i < n; ++i) out.block(i, i * m, 1, m) = row;
        return out;
    }

    MatC f_;
    VecR lambdas_;
};

/// One BasisSet per basis count 1..m_max, all sharing the same eigenvectors.
class BasisFamily {
public:
    BasisFamily() = default;
    explicit BasisFamily(const BasisSet& full) {
        sets_.reserve(full.m());
        for (int m = 1; m <= full.m(); ++m) sets_.push_back(full.leading(m));
    }
    int m_max() const { return static_cast<int>(sets_.size()); }
    int K() const { return sets_.front().K(); }
    const BasisSet& operator[](int m) const { return sets_.at(m - 1); }
    const BasisSet& full() const { return sets_.back(); }

private:
    std::vector<BasisSet> sets_;
};

namespace detail {

inline bool is_centrosymmetric(const MatR& R) {
    const auto K = R.rows();
    const double scale = std::max(1.0, R.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < K; ++i)
        for (Eigen::Index j = 0; j < K; ++j)
            if (std::abs(R(i, j) - R(K - 1 - i, K - 1 - j)) > 1e-14 * scale) return false;
    return true;
}

// Fix the phase of a purely real or purely imaginary vector: f(0) >= 0,
// otherwise the first nonzero entry gets a positive nonzero component.
inline void fix_phase(Eigen::Ref<VecC> v, int center) {
    constexpr double tiny = 1e-14;
    double lead = v(center).real() + v(center).imag();
    if (std::abs(lead) <= tiny) {
        lead = 0.0;
        for (Eigen::Index r = 0; r < v.size(); ++r) {
            const double c = v(r).real() + v(r).imag();
            if (std::abs(c) > tiny) {
                lead = c;
                break;
            }
        }
    }
    if (lead < 0.0) v = -v;
}

inline void reorthonormalize(MatC& f) {
    for (Eigen::Index i = 0; i < f.cols(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) f.col(i) -= f.col(j).dot(f.col(i)) * f.col(j);
        f.col(i).normalize();
    }
}

}  // namespace detail

/// Dominant m_max eigenvectors of a symmetric PSD correlation matrix as
/// basis sequences, in order of non-increasing eigenvalue.
///
/// Centrosymmetric inputs (every stationary correlation matrix) are split
/// into even and odd parity blocks, which pins every eigenvector to a pure
/// parity even when eigenvalues cluster.
inline BasisSet eigenbasis(const MatR& R, int m_max) {
    const int K = static_cast<int>(R.rows());
    if (R.cols() != K || K % 2 == 0) throw std::invalid_argument("eigenbasis: R must be square with odd size");
    if (m_max < 1 || m_max > K) throw std::invalid_argument("eigenbasis: m_max out of range");
    const int k = half_width(K);

    struct Pair {
        double lambda;
        VecC vec;  // in q ordering: entry r is f(k - r)
    };
    std::vector<Pair> pairs;
    pairs.reserve(K);

    if (detail::is_centrosymmetric(R)) {
        const double s = std::numbers::sqrt2 / 2.0;
        MatR even = MatR::Zero(K, k + 1);
        MatR odd = MatR::Zero(K, k);
        even(k, 0) = 1.0;
        for (int j = 1; j <= k; ++j) {
            even(k + j, j) = s;
            even(k - j, j) = s;
            odd(k + j, j - 1) = s;
            odd(k - j, j - 1) = -s;
        }
        auto collect = [&](const MatR& S, cplx phase) {
            if (S.cols() == 0) return;
            Eigen::SelfAdjointEigenSolver<MatR> es(S.transpose() * R * S);
            if (es.info() != Eigen::Success) throw NumericalError("eigenbasis: eigensolver failed");
            const MatR V = S * es.eigenvectors();
            for (Eigen::Index c = 0; c < V.cols(); ++c)
                pairs.push_back({es.eigenvalues()(c), V.col(c).cast<cplx>() * phase});
        };
        collect(even, cplx{1.0, 0.0});
        collect(odd, cplx{0.0, 1.0});
    } else {
        Eigen::SelfAdjointEigenSolver<MatR> es(R);
        if (es.info() != Eigen::Success) throw NumericalError("eigenbasis: eigensolver failed");
        for (int c = 0; c < K; ++c) pairs.push_back({es.eigenvalues()(c), es.eigenvectors().col(c).cast<cplx>()});
    }

    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.lambda > b.lambda; });

    MatC f(K, m_max);
    VecR lambdas(m_max);
    for (int i = 0; i < m_max; ++i) {
        f.col(i) = pairs[i].vec.reverse();
        lambdas(i) = pairs[i].lambda;
    }

    const MatC gram = f.adjoint() * f;
    if ((gram - MatC::Identity(m_max, m_max)).cwiseAbs().maxCoeff() > 1e-12) detail::reorthonormalize(f);
    for (int i = 0; i < m_max; ++i) detail::fix_phase(f.col(i), k);

    return BasisSet(std::move(f), std::move(lambdas));
}

inline BasisSet eigenbasis(const ParameterModel& model, int K, int m_max) {
    return eigenbasis(correlation_matrix(model, K), m_max);
}

struct MsePrediction {
    double bias{0.0};
    double variance{0.0};
    double mse{0.0};
};

/// Closed-form bias and variance of the LBF estimator with m basis functions.
inline MsePrediction predicted_mse(const BasisSet& basis, int m, double sigma_e_sq, double sigma_theta_sq,
                                   double tr_phi_inv) {
    if (m < 1 || m > basis.m()) throw std::out_of_range("predicted_mse: m out of range");
    const VecR f0 = basis.f0().head(m);
    const VecR f0sq = f0.cwiseAbs2();
    const double captured = basis.lambdas().head(m).dot(f0sq);
    MsePrediction out;
    out.bias = sigma_theta_sq * (1.0 - captured);
    if (out.bias < 0.0 && out.bias >= -1e-10) out.bias = 0.0;
    out.variance = sigma_e_sq * tr_phi_inv * f0sq.sum();
    out.mse = out.bias + out.variance;
    return out;
}

/// Largest m in [1, M - 1] whose eigenvalue exceeds sigma_e^2 tr(Phi^-1) / sigma_theta^2.
/// Falls back to m = 1 when no eigenvalue clears the threshold. A zero
/// noise level lets every eigenvalue through.
inline int select_m_optimal(std::span<const double> lambdas, double sigma_e_sq, double sigma_theta_sq,
                            double tr_phi_inv, int M) {
    if (M < 2) return 1;
    const int upper = std::min<int>(M - 1, static_cast<int>(lambdas.size()));
    const double noise = sigma_e_sq * tr_phi_inv;
    int best = 1;
    for (int m = 1; m <= upper; ++m) {
        bool passes;
        if (noise <= 0.0)
            passes = true;
        else if (!(sigma_theta_sq > 0.0))
            passes = false;
        else
            passes = lambdas[m - 1] > noise / sigma_theta_sq;
        if (passes) best = m;
    }
    return best;
}

inline int select_m_optimal(const VecR& lambdas, double sigma_e_sq, double sigma_theta_sq, double tr_phi_inv,
                            int M) {
    return select_m_optimal(std::span<const double>(lambdas.data(), static_cast<std::size_t>(lambdas.size())),
                            sigma_e_sq, sigma_theta_sq, tr_phi_inv, M);
}

/// Identifiability bound floor(K / n).
inline int identifiability_bound(int K, int n) { return K / n; }

}  // namespace lbf
