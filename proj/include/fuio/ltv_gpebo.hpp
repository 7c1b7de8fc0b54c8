#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fuio/errors.hpp"
#include "fuio/system_model.hpp"

namespace fuio {

// ẇ = R(t) w + D(t) y, the order-(beta-1) system obtained by expressing the
// highest output-visible derivative of x_1 through the measured output.
struct ReducedLtvSystem {
    int beta = 0;
    std::vector<TimeExpr> c;  // c_1 ... c_beta, c_beta not structurally zero

    int dim() const { return beta - 1; }

    // Companion arrangement: upshift block over the row -c_i(t)/c_beta(t).
    Matrix R_at(double t) const {
        const int d = dim();
        const double cb = c[static_cast<std::size_t>(beta - 1)].eval(t);
        if (cb == 0.0) throw EvalError("c_beta vanishes", t);
        Matrix R = Matrix::Zero(d, d);
        if (d > 1) R.topRightCorner(d - 1, d - 1).setIdentity();
        for (int i = 0; i < d; ++i)
            R(d - 1, i) = -c[static_cast<std::size_t>(i)].eval(t) / cb;
        return R;
    }

    Vector D_at(double t) const {
        const double cb = c[static_cast<std::size_t>(beta - 1)].eval(t);
        if (cb == 0.0) throw EvalError("c_beta vanishes", t);
        Vector D = Vector::Zero(dim());
        D(dim() - 1) = 1.0 / cb;
        return D;
    }
};

// Copy-observer state: xi tracks w, Phi is the fundamental matrix of the
// homogeneous error dynamics (Phi(0) = I).
struct GpeboState {
    Vector xi;
    Matrix Phi;
};

inline ReducedLtvSystem reduce_to_w(const LtvCanonicalSystem& sys) {
    const int beta = beta_index(sys);  // throws for beta < 2
    ReducedLtvSystem red;
    red.beta = beta;
    red.c.assign(sys.c.begin(), sys.c.begin() + beta);
    return red;
}

// (xi_dot, Phi_dot) = (R xi + D y, R Phi)
inline std::pair<Vector, Matrix> gpebo_rhs(const GpeboState& state, const Matrix& R_t,
                                           const Vector& D_t, double y) {
    if (state.xi.size() != R_t.rows() || state.Phi.rows() != R_t.rows())
        throw Error("gpebo_rhs: dimension mismatch");
    return {R_t * state.xi + D_t * y, R_t * state.Phi};
}

// Q = [I_{beta-1} 0], selecting the first beta-1 chain states.
inline Matrix functional_matrix_ltv(int n, int beta) {
    if (beta < 2 || beta > n) throw InfeasibleError("functional_matrix_ltv: need 2 <= beta <= n");
    Matrix Q = Matrix::Zero(beta - 1, n);
    Q.leftCols(beta - 1).setIdentity();
    return Q;
}

// One extra measurable combination: the beta-th chain state recovered from
// y and the estimates of the first beta-1 states.
inline double reconstruct_x_beta(const Vector& xhat, double y, const LtvCanonicalSystem& sys,
                                 double t) {
    const int beta = static_cast<int>(xhat.size()) + 1;
    const double cb = sys.c[static_cast<std::size_t>(beta - 1)].eval(t);
    if (cb == 0.0) throw EvalError("c_beta vanishes, x_beta not reconstructible", t);
    double acc = y;
    for (int i = 0; i + 1 < beta; ++i)
        acc -= sys.c[static_cast<std::size_t>(i)].eval(t) * xhat(i);
    return acc / cb;
}

struct StabilityScan {
    double margin = 0.0;       // min over grid of -max Re eig(R(t))
    double argmin_time = 0.0;  // grid point attaining the minimum
    // Pointwise eigenvalues say nothing rigorous about time-varying decay.
    std::string caveat = "frozen-eigenvalue scan: necessary-style heuristic, not sufficient";
};

inline StabilityScan frozen_stability_scan(const ReducedLtvSystem& red,
                                           const std::vector<double>& t_grid) {
    if (t_grid.empty()) throw Error("frozen_stability_scan: empty grid");
    StabilityScan scan;
    scan.margin = std::numeric_limits<double>::infinity();
    for (double t : t_grid) {
        Eigen::EigenSolver<Matrix> es(red.R_at(t));
        if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver failed in scan");
        const double max_re = es.eigenvalues().real().maxCoeff();
        if (-max_re < scan.margin) {
            scan.margin = -max_re;
            scan.argmin_time = t;
        }
    }
    return scan;
}

}  // namespace fuio
