#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fuio/errors.hpp"
#include "fuio/system_model.hpp"

namespace fuio {

constexpr double kDefaultPoleTol = 1e-6;

// Gains of the ideal (derivative-fed) unknown-input observer
//   x̂̇ = F x̂ + L y + G y^{(r)},  F = M - L C.
struct UioGains {
    Matrix G;  // n×l
    Matrix M;  // n×n, M = A - G P
    Matrix L;  // n×l
    Matrix F;  // n×n
    std::vector<Complex> poles;  // requested spectrum of F
};

// Unique decoupling solution G = B (N^T N)^{-1} N^T.
inline Matrix compute_G(const Matrix& B, const Matrix& N, double rank_tol = 0.0) {
    const Eigen::Index m = N.cols();
    const Eigen::Index rank_N = detail::numerical_rank(N, rank_tol);
    if (rank_N < m)
        throw InfeasibleError("N^T N is singular (rank " + std::to_string(rank_N) + " of " +
                              std::to_string(m) + "): decoupling gain undefined");
    const Eigen::Index rank_B = detail::numerical_rank(B, rank_tol);
    if (rank_N != rank_B)
        throw InfeasibleError("decoupling impossible: rank(N) = " + std::to_string(rank_N) +
                              " but rank(B) = " + std::to_string(rank_B));
    const Matrix NtN = N.transpose() * N;
    const Matrix G = B * NtN.llt().solve(N.transpose());
    const double b_scale = std::max(1.0, B.cwiseAbs().maxCoeff());
    const double residual = (B - G * N).cwiseAbs().maxCoeff();
    if (residual > 1e-9 * b_scale)
        throw NumericError("decoupling residual ||B - G N|| = " + std::to_string(residual));
    return G;
}

inline Matrix compute_M(const Matrix& A, const Matrix& G, const Matrix& P) {
    if (G.cols() != P.rows() || A.rows() != G.rows() || A.cols() != P.cols())
        throw Error("compute_M: dimension mismatch");
    return A - G * P;
}

namespace detail {

inline Matrix real_nullspace(const Matrix& M, double rank_tol = 0.0) {
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
    const double thresh =
        s.size() ? static_cast<double>(std::max(M.rows(), M.cols())) * eps * s(0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++rank;
    return svd.matrixV().rightCols(M.cols() - rank);
}

inline Eigen::MatrixXcd complex_nullspace(const Eigen::MatrixXcd& M, double rank_tol = 0.0) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
    const double thresh =
        s.size() ? static_cast<double>(std::max(M.rows(), M.cols())) * eps * s(0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++rank;
    return svd.matrixV().rightCols(M.cols() - rank);
}

inline double smallest_singular_value(const Matrix& M) {
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues().minCoeff();
}

inline std::string format_spectrum(const Eigen::VectorXcd& eigs) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < eigs.size(); ++i) {
        if (i) os << ", ";
        os << eigs(i).real();
        if (std::abs(eigs(i).imag()) > 1e-12) os << (eigs(i).imag() >= 0 ? "+" : "") << eigs(i).imag() << "i";
    }
    return os.str();
}

inline void validate_pole_set(const std::vector<Complex>& poles, Eigen::Index n) {
    if (static_cast<Eigen::Index>(poles.size()) != n)
        throw InfeasibleError("need exactly n = " + std::to_string(n) + " poles, got " +
                              std::to_string(poles.size()));
    for (std::size_t i = 0; i < poles.size(); ++i) {
        if (poles[i].real() >= 0.0)
            throw InfeasibleError("observer poles must have negative real part");
        for (std::size_t j = i + 1; j < poles.size(); ++j)
            if (std::abs(poles[i] - poles[j]) <= 1e-9 * std::max(1.0, std::abs(poles[i])))
                throw InfeasibleError("repeated poles are unsupported (eigenstructure assignment "
                                      "needs a distinct pole set)");
        if (std::abs(poles[i].imag()) > 1e-12) {
            bool paired = false;
            for (const Complex& q : poles)
                if (std::abs(q - std::conj(poles[i])) <= 1e-9 * std::max(1.0, std::abs(poles[i])))
                    paired = true;
            if (!paired)
                throw InfeasibleError("complex poles must come in conjugate pairs");
        }
    }
}

// Unobservable eigenvalues of (M, C) by the PBH test, for diagnostics.
inline std::vector<Complex> fixed_modes(const Matrix& M, const Matrix& C) {
    Eigen::EigenSolver<Matrix> es(M);
    std::vector<Complex> modes;
    if (es.info() != Eigen::Success) return modes;
    const Eigen::Index n = M.rows();
    for (Eigen::Index k = 0; k < n; ++k) {
        const Complex lambda = es.eigenvalues()(k);
        Eigen::MatrixXcd pbh(n + C.rows(), n);
        pbh.topRows(n) = lambda * Eigen::MatrixXcd::Identity(n, n) - M.cast<Complex>();
        pbh.bottomRows(C.rows()) = C.cast<Complex>();
        if (numerical_rank(pbh) < n) {
            bool seen = false;
            for (const Complex& mu : modes)
                if (std::abs(mu - lambda) <= 1e-6 * std::max(1.0, std::abs(lambda))) seen = true;
            if (!seen) modes.push_back(lambda);
        }
    }
    return modes;
}

}  // namespace detail

// Eigenstructure assignment on the dual pair (M^T, C^T): for each pole pick a
// kernel direction of [M^T - lambda I | C^T], assemble the dual feedback,
// transpose back. Candidate directions are chosen greedily to keep the
// eigenvector matrix well conditioned.
inline Matrix place_observer_gain(const Matrix& M, const Matrix& C,
                                  const std::vector<Complex>& poles,
                                  double pole_tol = kDefaultPoleTol) {
    const Eigen::Index n = M.rows();
    const Eigen::Index l = C.rows();
    if (M.cols() != n || C.cols() != n) throw Error("place_observer_gain: dimension mismatch");
    detail::validate_pole_set(poles, n);

    Matrix V(n, n), W(l, n);
    Eigen::Index filled = 0;
    std::vector<bool> handled(poles.size(), false);

    auto pick_columns = [&](const Matrix& cand_v, const Matrix& cand_w, Eigen::Index ncols) {
        // cand_v: n×k candidates, each candidate contributes ncols columns
        Eigen::Index best = -1;
        double best_sigma = -1.0;
        for (Eigen::Index c = 0; c + ncols <= cand_v.cols(); c += ncols) {
            Matrix trial(n, filled + ncols);
            trial.leftCols(filled) = V.leftCols(filled);
            trial.rightCols(ncols) = cand_v.middleCols(c, ncols);
            const double sigma = detail::smallest_singular_value(trial);
            if (sigma > best_sigma) {
                best_sigma = sigma;
                best = c;
            }
        }
        V.middleCols(filled, ncols) = cand_v.middleCols(best, ncols);
        W.middleCols(filled, ncols) = cand_w.middleCols(best, ncols);
        filled += ncols;
    };

    for (std::size_t idx = 0; idx < poles.size(); ++idx) {
        if (handled[idx]) continue;
        const Complex lambda = poles[idx];
        if (std::abs(lambda.imag()) <= 1e-12) {
            Matrix pencil(n, n + l);
            pencil.leftCols(n) = M.transpose() - lambda.real() * Matrix::Identity(n, n);
            pencil.rightCols(l) = C.transpose();
            const Matrix ns = detail::real_nullspace(pencil);
            if (ns.cols() == 0)
                throw InfeasibleError("no assignable direction for pole " +
                                      std::to_string(lambda.real()));
            pick_columns(ns.topRows(n), ns.bottomRows(l), 1);
        } else {
            Eigen::MatrixXcd pencil(n, n + l);
            pencil.leftCols(n) =
                M.transpose().cast<Complex>() - lambda * Eigen::MatrixXcd::Identity(n, n);
            pencil.rightCols(l) = C.transpose().cast<Complex>();
            const Eigen::MatrixXcd ns = detail::complex_nullspace(pencil);
            if (ns.cols() == 0)
                throw InfeasibleError("no assignable direction for complex pole");
            // real/imaginary parts of one complex direction serve the pair
            Matrix cand_v(n, 2 * ns.cols()), cand_w(l, 2 * ns.cols());
            for (Eigen::Index c = 0; c < ns.cols(); ++c) {
                cand_v.col(2 * c) = ns.col(c).head(n).real();
                cand_v.col(2 * c + 1) = ns.col(c).head(n).imag();
                cand_w.col(2 * c) = ns.col(c).tail(l).real();
                cand_w.col(2 * c + 1) = ns.col(c).tail(l).imag();
            }
            pick_columns(cand_v, cand_w, 2);
            for (std::size_t j = 0; j < poles.size(); ++j)
                if (j != idx && !handled[j] &&
                    std::abs(poles[j] - std::conj(lambda)) <=
                        1e-9 * std::max(1.0, std::abs(lambda))) {
                    handled[j] = true;
                    break;
                }
        }
        handled[idx] = true;
    }

    Eigen::JacobiSVD<Matrix> svd_v(V);
    const auto& sv = svd_v.singularValues();
    if (sv.minCoeff() <= static_cast<double>(n) * 1e3 * std::numeric_limits<double>::epsilon() *
                             sv.maxCoeff()) {
        std::string msg = "pole set is not assignable: eigenvector matrix is singular";
        const auto fixed = detail::fixed_modes(M, C);
        if (!fixed.empty()) {
            msg += "; (M, C) has unassignable fixed mode(s) at ";
            for (std::size_t i = 0; i < fixed.size(); ++i) {
                if (i) msg += ", ";
                msg += std::to_string(fixed[i].real());
                if (std::abs(fixed[i].imag()) > 1e-12)
                    msg += (fixed[i].imag() >= 0 ? "+" : "") + std::to_string(fixed[i].imag()) + "i";
            }
            msg += " which must appear in the requested set";
        }
        throw InfeasibleError(msg);
    }

    // K V = -W  =>  V^T K^T = -W^T
    const Matrix K = V.transpose().fullPivLu().solve(-W.transpose()).transpose();
    const Matrix L = K.transpose();

    // verify the achieved spectrum against the request
    Eigen::EigenSolver<Matrix> es(M - L * C);
    if (es.info() != Eigen::Success) throw NumericError("eigensolver failed after placement");
    Eigen::VectorXcd achieved = es.eigenvalues();
    std::vector<bool> used(achieved.size(), false);
    for (const Complex& p : poles) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index best_i = -1;
        for (Eigen::Index i = 0; i < achieved.size(); ++i) {
            if (used[i]) continue;
            const double d = std::abs(achieved(i) - p);
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        used[best_i] = true;
        if (best > pole_tol * std::max(1.0, std::abs(p)))
            throw InfeasibleError("achieved spectrum {" + detail::format_spectrum(achieved) +
                                  "} misses requested pole " + std::to_string(p.real()));
    }
    return L;
}

// T = [B, A B, ..., A^{r_max-2} B]; empty for r_max = 1.
inline Matrix build_T(const Matrix& A, const Matrix& B, int r_max) {
    const Eigen::Index n = A.rows();
    const Eigen::Index m = B.cols();
    if (r_max < 1) throw Error("build_T: r_max must be >= 1");
    Matrix T(n, m * (r_max - 1));
    Matrix block = B;
    for (int i = 0; i + 2 <= r_max; ++i) {
        T.middleCols(static_cast<Eigen::Index>(i) * m, m) = block;
        block = A * block;
    }
    return T;
}

enum class QMode { full, reduced };

namespace detail {

// Flip rows so the largest-magnitude entry is positive; keeps the output of
// the SVD-based bases reproducible across runs.
inline void canonicalize_rows(Matrix& Q) {
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
        Eigen::Index arg = 0;
        Q.row(i).cwiseAbs().maxCoeff(&arg);
        if (Q(i, arg) < 0.0) Q.row(i) = -Q.row(i);
    }
}

}  // namespace detail

// Orthonormal rows spanning the orthogonal complement of col(T). In reduced
// mode the direction of the output row with maximal relative degree (first
// such output on ties) is projected out and one near-zero row dropped.
inline Matrix functional_matrix(const Matrix& T, const Matrix& C, const RelativeDegreeProfile& r,
                                QMode mode, double rank_tol = 0.0) {
    const Eigen::Index n = T.rows();
    Matrix Q_full;
    if (T.cols() == 0) {
        Q_full = Matrix::Identity(n, n);
    } else {
        Eigen::JacobiSVD<Matrix> svd(T, Eigen::ComputeFullU);
        const auto& s = svd.singularValues();
        const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
        const double thresh = static_cast<double>(std::max(T.rows(), T.cols())) * eps * s(0);
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s(i) > thresh) ++rank;
        if (rank == n)
            throw InfeasibleError("col(T) spans the whole state space: no functional rows exist");
        Q_full = svd.matrixU().rightCols(n - rank).transpose();
    }
    if (mode == QMode::full) {
        detail::canonicalize_rows(Q_full);
        return Q_full;
    }

    const auto it = std::max_element(r.r.begin(), r.r.end());
    const Eigen::Index out = static_cast<Eigen::Index>(it - r.r.begin());
    const Vector c_row = C.row(out).transpose();
    const Vector p = Q_full.transpose() * (Q_full * c_row);  // projection onto the row space
    const double p_norm = p.norm();
    if (p_norm <= 1e-12 * std::max(1.0, c_row.norm()))
        throw InfeasibleError("output row " + std::to_string(out + 1) +
                              " is orthogonal to the complement: nothing to extract");
    const Vector u = p / p_norm;
    Matrix deflated = Q_full - (Q_full * u) * u.transpose();

    Eigen::JacobiSVD<Matrix> svd(deflated, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double eps = rank_tol > 0.0 ? rank_tol : std::numeric_limits<double>::epsilon();
    const double thresh =
        s.size() ? static_cast<double>(std::max(deflated.rows(), deflated.cols())) * eps * s(0)
                 : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > thresh) ++rank;
    Matrix Q = svd.matrixV().leftCols(rank).transpose();
    detail::canonicalize_rows(Q);
    return Q;
}

struct ConditionReport {
    bool ok = true;
    std::vector<double> residuals;  // max |Q A^i B| per i = 0 .. r_max-2
    std::vector<double> scales;

    double worst_ratio() const {
        double w = 0.0;
        for (std::size_t i = 0; i < residuals.size(); ++i)
            w = std::max(w, residuals[i] / scales[i]);
        return w;
    }
};

inline ConditionReport verify_functional_condition(const Matrix& Q, const Matrix& A,
                                                   const Matrix& B, int r_max,
                                                   double tol_factor = 1e-9) {
    ConditionReport rep;
    Matrix power = B;                     // A^i B
    Matrix bound = B.cwiseAbs();          // |A|^i |B|, magnitude envelope
    const Matrix absA = A.cwiseAbs();
    const Matrix absQ = Q.cwiseAbs();
    for (int i = 0; i + 2 <= r_max; ++i) {
        const double residual = (Q * power).cwiseAbs().maxCoeff();
        const double scale = std::max(1.0, (absQ * bound).maxCoeff());
        rep.residuals.push_back(residual);
        rep.scales.push_back(scale);
        if (residual > tol_factor * scale) rep.ok = false;
        power = A * power;
        bound = absA * bound;
    }
    return rep;
}

// Derivative-free realization of the auxiliary-variable chain: the z-state
// evolves on measurable signals only, and the functional estimate needs just
// z and y.
//   ż = F z + Σ_i Γ_i y_i + L y,   x̄̂ = Q z + Σ_i Θ_i y_i
struct FunctionalObserverRealization {
    Matrix F;  // n×n
    Matrix L;  // n×l
    Matrix G;  // n×l
    Matrix Q;  // q×n
    RelativeDegreeProfile r;
    Matrix Gamma;  // n×l, column i = F^{r_i} G e_i
    Matrix Theta;  // q×l, column i = Q F^{r_i-1} G e_i (zero columns kept)
    Matrix injection;  // Gamma + L, cached for the integration loop

    Eigen::Index state_dim() const { return F.rows(); }
    Eigen::Index functional_dim() const { return Q.rows(); }
    Eigen::Index output_dim() const { return L.cols(); }

    void finalize() { injection = Gamma + L; }
};

inline FunctionalObserverRealization build_realization(const LtiSystem& sys, const UioGains& gains,
                                                       const Matrix& Q,
                                                       const RelativeDegreeProfile& r) {
    const Eigen::Index n = sys.n();
    const Eigen::Index l = sys.l();
    const ConditionReport cond = verify_functional_condition(Q, sys.A, sys.B, r.r_max);
    if (!cond.ok)
        throw InfeasibleError("Q A^i B condition violated (worst relative residual " +
                              std::to_string(cond.worst_ratio()) + ")");
    Eigen::EigenSolver<Matrix> es(gains.F);
    if (es.info() != Eigen::Success) throw NumericError("eigensolver failed on F");
    if (es.eigenvalues().real().maxCoeff() >= 0.0)
        throw InfeasibleError("F is not Hurwitz: realization would not converge");

    FunctionalObserverRealization real;
    real.F = gains.F;
    real.L = gains.L;
    real.G = gains.G;
    real.Q = Q;
    real.r = r;

    std::vector<Matrix> f_pow;  // F^0 .. F^{r_max}
    f_pow.push_back(Matrix::Identity(n, n));
    for (int k = 1; k <= r.r_max; ++k) f_pow.push_back(gains.F * f_pow.back());

    real.Gamma.resize(n, l);
    real.Theta.resize(Q.rows(), l);
    for (Eigen::Index i = 0; i < l; ++i) {
        const int ri = r.r[static_cast<std::size_t>(i)];
        const Vector g_col = gains.G.col(i);

        // The chain is derivative-free only when Q annihilates every
        // derivative-carrying term of this output: Q F^k G e_i = 0 for
        // k <= r_i - 2. The Q A^i B condition transfers to powers of F when
        // the degree profile is tight (min r_i >= r_max - 1); low-degree
        // outputs can leak through L C otherwise, so check it directly.
        for (int k = 0; k + 2 <= ri; ++k) {
            const Vector fkg = f_pow[static_cast<std::size_t>(k)] * g_col;
            const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff() * fkg.norm());
            if ((Q * fkg).cwiseAbs().maxCoeff() > 1e-9 * scale)
                throw InfeasibleError(
                    "derivative term of output " + std::to_string(i + 1) + " survives: Q F^" +
                    std::to_string(k) + " G e_i is not annihilated (mixed relative degrees "
                    "leak through the output injection)");
        }

        real.Gamma.col(i) = f_pow[static_cast<std::size_t>(ri)] * g_col;
        Vector theta = Q * (f_pow[static_cast<std::size_t>(ri - 1)] * g_col);
        // measurable correction; columns forced to zero by the chain
        // condition are stored as exact zeros
        const double scale =
            std::max(1.0, Q.cwiseAbs().maxCoeff() *
                              (f_pow[static_cast<std::size_t>(ri - 1)] * g_col).norm());
        if (theta.cwiseAbs().maxCoeff() <= 1e-9 * scale) theta.setZero();
        real.Theta.col(i) = theta;
    }
    real.finalize();
    return real;
}

// (ż, x̄̂) for the current auxiliary state and measured output.
inline void realization_rhs(const FunctionalObserverRealization& real,
                            const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& y,
                            Vector& dz, Vector& xbar) {
    if (z.size() != real.state_dim() || y.size() != real.output_dim())
        throw Error("realization_rhs: dimension mismatch");
    dz.noalias() = real.F * z;
    dz.noalias() += real.injection * y;
    xbar.noalias() = real.Q * z;
    xbar.noalias() += real.Theta * y;
}

// Constant offset S with z = x̂ - S x along matched trajectories: the stacked
// chain corrections Σ_i Σ_{k<r_i} F^k G e_i C_i A^{r_i-1-k}. All output
// derivatives of order < r_i are input-free, so S is a plain matrix.
inline Matrix derivative_chain_offset(const LtiSystem& sys, const UioGains& gains,
                                      const RelativeDegreeProfile& r) {
    const Eigen::Index n = sys.n();
    Matrix S = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < sys.l(); ++i) {
        const int ri = r.r[static_cast<std::size_t>(i)];
        Vector left = gains.G.col(i);                    // F^k G e_i
        for (int k = 0; k < ri; ++k) {
            Eigen::RowVectorXd right = sys.C.row(i);     // C_i A^{r_i-1-k}
            for (int j = 0; j < ri - 1 - k; ++j) right = right * sys.A;
            S.noalias() += left * right;
            left = gains.F * left;
        }
    }
    return S;
}

// z(0) making the realization reproduce the ideal observer started at xhat0.
inline Vector matched_initial_z(const LtiSystem& sys, const UioGains& gains,
                                const RelativeDegreeProfile& r, const Vector& xhat0,
                                const Vector& x0) {
    return xhat0 - derivative_chain_offset(sys, gains, r) * x0;
}

struct SynthesisOptions {
    std::vector<int> r_override;  // empty: use structural degrees
    QMode mode = QMode::full;
    double zero_tol = kDefaultZeroTol;
    double rank_tol = 0.0;  // 0: machine epsilon rule
    double pole_tol = kDefaultPoleTol;
};

// Everything the synthesis pipeline produces, kept together for reporting.
struct UioDesign {
    RelativeDegreeProfile r;
    Matrix P, N, T;
    UioGains gains;
    Matrix Q;
    ConditionReport condition;
    FunctionalObserverRealization realization;
    bool detectable_AC = false;
    bool detectable_MC = false;
};

inline UioDesign design_functional_uio(const LtiSystem& sys, const std::vector<Complex>& poles,
                                       const SynthesisOptions& opts = {}) {
    const ValidationReport v = validate_lti(sys);
    if (!v.ok) throw InfeasibleError("invalid system: " + v.issues.front());

    UioDesign d;
    d.r = opts.r_override.empty() ? compute_relative_degrees(sys, opts.zero_tol)
                                  : override_relative_degrees(sys, opts.r_override, opts.zero_tol);
    d.P = build_P(sys, d.r);
    d.N = build_N(sys, d.r);
    d.gains.G = compute_G(sys.B, d.N, opts.rank_tol);
    d.gains.M = compute_M(sys.A, d.gains.G, d.P);
    d.detectable_AC = check_detectability(sys.A, sys.C);
    d.detectable_MC = check_detectability(d.gains.M, sys.C);
    if (!d.detectable_MC)
        throw InfeasibleError("(M, C) is not detectable: no stabilizing gain exists");
    d.gains.L = place_observer_gain(d.gains.M, sys.C, poles, opts.pole_tol);
    d.gains.F = d.gains.M - d.gains.L * sys.C;
    d.gains.poles = poles;
    d.T = build_T(sys.A, sys.B, d.r.r_max);
    d.Q = functional_matrix(d.T, sys.C, d.r, opts.mode, opts.rank_tol);
    d.condition = verify_functional_condition(d.Q, sys.A, sys.B, d.r.r_max);
    d.realization = build_realization(sys, d.gains, d.Q, d.r);
    return d;
}

}  // namespace fuio
