#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "fuio/errors.hpp"
#include "fuio/time_expr.hpp"

namespace fuio {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

constexpr double kDefaultZeroTol = 1e-9;

// ẋ = A x + B f,  y = C x  with unmeasured input f.
struct LtiSystem {
    Matrix A;  // n×n
    Matrix B;  // n×m
    Matrix C;  // l×n

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
    Eigen::Index l() const { return C.rows(); }
};

// Integrator chain of order n with time-varying output row
// y = c_1(t) x_1 + ... + c_n(t) x_n. The state matrix is implicitly the
// upshift matrix and the input column the last basis vector.
struct LtvCanonicalSystem {
    int n = 0;
    std::vector<TimeExpr> c;  // c_1 ... c_n

    Matrix chain_A() const {
        Matrix A = Matrix::Zero(n, n);
        A.topRightCorner(n - 1, n - 1).setIdentity();
        return A;
    }
    Vector chain_B() const {
        Vector b = Vector::Zero(n);
        b(n - 1) = 1.0;
        return b;
    }
    Vector c_at(double t) const {
        Vector v(n);
        for (int i = 0; i < n; ++i) v(i) = c[static_cast<std::size_t>(i)].eval(t);
        return v;
    }
};

struct RelativeDegreeProfile {
    std::vector<int> r;            // one per output, 1 <= r_i <= n
    int r_max = 0;
    std::vector<bool> structural;  // true: structurally exact; false: user override
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> issues;
    Eigen::Index rank_B = 0;
    bool input_absent = false;  // rank(B) == 0: nothing to decouple

    void fail(std::string msg) {
        ok = false;
        issues.push_back(std::move(msg));
    }
};

namespace detail {

inline Eigen::Index numerical_rank(const Matrix& M, double rank_tol = 0.0) {
    if (M.rows() == 0 || M.cols() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& s = svd.singularValues();
    const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
    const double thresh = static_cast<double>(std::max(M.rows(), M.cols())) * eps * s(0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++rank;
    return rank;
}

inline Eigen::Index numerical_rank(const Eigen::MatrixXcd& M, double rank_tol = 0.0) {
    if (M.rows() == 0 || M.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    const auto& s = svd.singularValues();
    const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
    const double thresh = static_cast<double>(std::max(M.rows(), M.cols())) * eps * s(0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++rank;
    return rank;
}

// Smallest j >= 1 with C_i A^{j-1} B nonzero beyond the scaled tolerance.
inline std::optional<int> structural_degree(const LtiSystem& sys, Eigen::Index output,
                                            double zero_tol) {
    const Eigen::Index n = sys.n();
    Eigen::RowVectorXd row = sys.C.row(output);
    const double b_scale = sys.B.size() ? sys.B.cwiseAbs().maxCoeff() : 0.0;
    for (int j = 1; j <= static_cast<int>(n); ++j) {
        const Eigen::RowVectorXd probe = row * sys.B;
        const double scale = std::max(1.0, row.cwiseAbs().maxCoeff() * b_scale);
        if (probe.cwiseAbs().maxCoeff() > zero_tol * scale) return j;
        row = row * sys.A;
    }
    return std::nullopt;
}

}  // namespace detail

inline ValidationReport validate_lti(const LtiSystem& sys) {
    ValidationReport rep;
    const Eigen::Index n = sys.A.rows();
    if (n < 1 || sys.B.rows() < 1 || sys.C.rows() < 1 || sys.B.cols() < 1)
        rep.fail("system dimensions must satisfy n >= 1, m >= 1, l >= 1");
    if (sys.A.cols() != n)
        rep.fail("A must be square, got " + std::to_string(sys.A.rows()) + "x" +
                 std::to_string(sys.A.cols()));
    if (sys.B.rows() != n)
        rep.fail("B must have n rows, got " + std::to_string(sys.B.rows()));
    if (sys.C.cols() != n)
        rep.fail("C must have n columns, got " + std::to_string(sys.C.cols()));
    if (!sys.A.allFinite() || !sys.B.allFinite() || !sys.C.allFinite())
        rep.fail("non-finite matrix entry");
    if (rep.ok) {
        rep.rank_B = detail::numerical_rank(sys.B);
        if (rep.rank_B == 0) rep.input_absent = true;  // unknown input absent
    }
    return rep;
}

inline RelativeDegreeProfile compute_relative_degrees(const LtiSystem& sys,
                                                      double zero_tol = kDefaultZeroTol) {
    RelativeDegreeProfile prof;
    for (Eigen::Index i = 0; i < sys.l(); ++i) {
        const auto r_i = detail::structural_degree(sys, i, zero_tol);
        if (!r_i)
            throw InfeasibleError("output " + std::to_string(i + 1) +
                                  " has no relative degree: C_i A^{j-1} B vanishes for all j <= n");
        prof.r.push_back(*r_i);
        prof.structural.push_back(true);
    }
    prof.r_max = *std::max_element(prof.r.begin(), prof.r.end());
    return prof;
}

// Per-output override. Values below the structural degree are legal (they
// introduce zero rows in N, checked downstream by the decoupling gate).
inline RelativeDegreeProfile override_relative_degrees(const LtiSystem& sys,
                                                       const std::vector<int>& r,
                                                       double zero_tol = kDefaultZeroTol) {
    if (static_cast<Eigen::Index>(r.size()) != sys.l())
        throw InfeasibleError("r override needs one entry per output");
    RelativeDegreeProfile prof;
    for (Eigen::Index i = 0; i < sys.l(); ++i) {
        const int value = r[static_cast<std::size_t>(i)];
        if (value < 1 || value > static_cast<int>(sys.n()))
            throw InfeasibleError("relative degree override out of range 1..n for output " +
                                  std::to_string(i + 1));
        const auto exact = detail::structural_degree(sys, i, zero_tol);
        prof.r.push_back(value);
        prof.structural.push_back(exact && *exact == value);
    }
    prof.r_max = *std::max_element(prof.r.begin(), prof.r.end());
    return prof;
}

// P row i = C_i A^{r_i}
inline Matrix build_P(const LtiSystem& sys, const RelativeDegreeProfile& prof) {
    Matrix P(sys.l(), sys.n());
    for (Eigen::Index i = 0; i < sys.l(); ++i) {
        Eigen::RowVectorXd row = sys.C.row(i);
        for (int j = 0; j < prof.r[static_cast<std::size_t>(i)]; ++j) row = row * sys.A;
        P.row(i) = row;
    }
    return P;
}

// N entry (i,k) = C_i A^{r_i - 1} B_k
inline Matrix build_N(const LtiSystem& sys, const RelativeDegreeProfile& prof) {
    Matrix N(sys.l(), sys.m());
    for (Eigen::Index i = 0; i < sys.l(); ++i) {
        Eigen::RowVectorXd row = sys.C.row(i);
        for (int j = 0; j + 1 < prof.r[static_cast<std::size_t>(i)]; ++j) row = row * sys.A;
        N.row(i) = row * sys.B;
    }
    return N;
}

// Index of the last coefficient that is not structurally zero (1-based).
// The reduction needs beta >= 2; beta == 1 leaves no dynamics to observe.
inline int beta_index(const LtvCanonicalSystem& sys) {
    int beta = 0;
    for (int i = 0; i < sys.n; ++i)
        if (!sys.c[static_cast<std::size_t>(i)].is_structurally_zero()) beta = i + 1;
    if (beta == 0) throw InfeasibleError("all output coefficients are structurally zero");
    if (beta == 1)
        throw InfeasibleError("beta = 1: no reducible dynamics (the w-system is empty)");
    return beta;
}

// PBH test: every eigenvalue with Re >= -stability_margin must keep
// rank [lambda I - A; C] = n.
inline bool check_detectability(const Matrix& A, const Matrix& C,
                                double stability_margin = 0.0) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || C.cols() != n) throw Error("check_detectability: dimension mismatch");
    Eigen::EigenSolver<Matrix> es(A);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue computation failed");
    const Eigen::VectorXcd lambdas = es.eigenvalues();

    std::vector<Complex> tested;
    for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
        const Complex lambda = lambdas(k);
        if (lambda.real() < -stability_margin) continue;
        bool seen = false;
        for (const Complex& mu : tested)
            if (std::abs(mu - lambda) <= 1e-8 * std::max(1.0, std::abs(lambda))) seen = true;
        if (seen) continue;
        tested.push_back(lambda);

        Eigen::MatrixXcd pbh(n + C.rows(), n);
        pbh.topRows(n) = lambda * Eigen::MatrixXcd::Identity(n, n) - A.cast<Complex>();
        pbh.bottomRows(C.rows()) = C.cast<Complex>();
        if (detail::numerical_rank(pbh) < n) return false;
    }
    return true;
}

}  // namespace fuio
