#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lbf {

using cplx = std::complex<double>;
using VecC = Eigen::VectorXcd;
using VecR = Eigen::VectorXd;
using MatC = Eigen::MatrixXcd;
using MatR = Eigen::MatrixXd;

/// Positions inside an analysis window, j in [-k, k].
using IndexSet = std::vector<int>;

/// Raised when a retained set cannot identify mn coefficients.
class IdentifiabilityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Singular or ill-conditioned systems, degenerate leverage.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, long window = -1)
        : std::runtime_error(what), window_(window) {}
    long window() const noexcept { return window_; }

private:
    long window_;
};

/// Reciprocal condition number below which a normal matrix is rejected.
inline constexpr double kMinRcond = 1e-12;

inline int half_width(int K) { return (K - 1) / 2; }

inline IndexSet full_window(int k) {
    IndexSet all;
    all.reserve(2 * k + 1);
    for (int j = -k; j <= k; ++j) all.push_back(j);
    return all;
}

}  // namespace lbf
