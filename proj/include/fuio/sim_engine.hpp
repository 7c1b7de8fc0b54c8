#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fuio/errors.hpp"
#include "fuio/ltv_gpebo.hpp"
#include "fuio/system_model.hpp"
#include "fuio/uio_synth.hpp"

namespace fuio {

// Sampled trajectory: one state row per grid point.
struct Trajectory {
    std::vector<double> times;
    Matrix samples;  // (#times) × dim

    Eigen::Index dim() const { return samples.cols(); }
    Eigen::Index size() const { return samples.rows(); }
};

struct ErrorMetrics {
    double final_error = 0.0;                // ∞-norm of the last error sample
    std::optional<double> decay_rate;        // LSQ slope of log ||e|| over the tail half
    bool exact = false;                      // error identically zero (rate undefined)
    std::optional<double> time_to_threshold; // first grid time with ||e|| <= threshold
    double threshold = 1e-3;
};

using VectorField = std::function<void(double t, const Vector& x, Vector& dx)>;

// Classic fixed-step fourth-order Runge-Kutta; the last step is shortened to
// land exactly on t_final.
inline Trajectory rk4_integrate(const VectorField& field, const Vector& x0, double t0,
                                double t_final, double dt,
                                std::size_t max_steps = 50'000'000) {
    if (!(dt > 0.0)) throw Error("rk4_integrate: dt must be positive");
    if (t_final < t0) throw Error("rk4_integrate: t_final < t0");
    const double span = t_final - t0;
    auto steps = static_cast<std::size_t>(std::ceil(span / dt - 1e-9));
    if (steps == 0 && span > 0.0) steps = 1;
    if (steps > max_steps)
        throw Error("rk4_integrate: step budget exceeded (" + std::to_string(steps) + " steps)");

    Trajectory traj;
    traj.times.reserve(steps + 1);
    traj.samples.resize(static_cast<Eigen::Index>(steps) + 1, x0.size());

    Vector x = x0;
    Vector k1(x.size()), k2(x.size()), k3(x.size()), k4(x.size()), xt(x.size());
    traj.times.push_back(t0);
    traj.samples.row(0) = x.transpose();

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * dt;
        const double t_next = (k + 1 == steps) ? t_final : t0 + static_cast<double>(k + 1) * dt;
        const double h = t_next - t;

        field(t, x, k1);
        xt = x + (h / 2) * k1;
        field(t + h / 2, xt, k2);
        xt = x + (h / 2) * k2;
        field(t + h / 2, xt, k3);
        xt = x + h * k3;
        field(t + h, xt, k4);
        x += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);

        if (!x.allFinite())
            throw NumericError("state diverged at step " + std::to_string(k + 1) +
                               "; last finite time t = " + std::to_string(t));
        traj.times.push_back(t_next);
        traj.samples.row(static_cast<Eigen::Index>(k) + 1) = x.transpose();
    }
    return traj;
}

inline ErrorMetrics error_metrics(const Trajectory& error, double threshold = 1e-3) {
    if (error.size() == 0) throw Error("error_metrics: empty result");
    ErrorMetrics m;
    m.threshold = threshold;

    const Eigen::Index count = error.size();
    Vector norms(count);
    for (Eigen::Index k = 0; k < count; ++k)
        norms(k) = error.samples.row(k).cwiseAbs().maxCoeff();
    m.final_error = norms(count - 1);

    for (Eigen::Index k = 0; k < count; ++k)
        if (norms(k) <= threshold) {
            m.time_to_threshold = error.times[static_cast<std::size_t>(k)];
            break;
        }

    // fit log||e|| over the tail half, ignoring samples at the roundoff floor
    const double peak = norms.maxCoeff();
    if (peak == 0.0) {
        m.exact = true;
        return m;
    }
    const double floor = peak * 1e-13;
    double sum_t = 0, sum_y = 0, sum_tt = 0, sum_ty = 0;
    Eigen::Index used = 0;
    for (Eigen::Index k = count / 2; k < count; ++k) {
        if (norms(k) <= floor) continue;
        const double t = error.times[static_cast<std::size_t>(k)];
        const double y = std::log(norms(k));
        sum_t += t;
        sum_y += y;
        sum_tt += t * t;
        sum_ty += t * y;
        ++used;
    }
    if (used >= 2) {
        const double denom = used * sum_tt - sum_t * sum_t;
        if (denom > 0.0) m.decay_rate = (used * sum_ty - sum_t * sum_y) / denom;
    } else if (norms.tail(count - count / 2).maxCoeff() <= floor) {
        m.exact = true;  // tail sits at the numerical floor
    }
    return m;
}

struct ScenarioResult {
    Trajectory state;     // plant state x
    Trajectory estimate;  // functional estimate
    Trajectory error;     // Q x - estimate (one column per estimated channel)
    ErrorMetrics metrics;
    std::optional<double> gpebo_identity_residual;  // LTV runs only
    std::optional<double> phi_final_norm;           // LTV runs only
    std::optional<Matrix> phi_final;                // fundamental matrix at t_final
};

// Co-integrates the plant and the derivative-free realization; the estimate
// channels are Q x̂ and the recorded error is Q x - x̄̂.
inline ScenarioResult run_mimo_scenario(const LtiSystem& plant,
                                        const FunctionalObserverRealization& real,
                                        const std::vector<TimeExpr>& f, const Vector& x0,
                                        const Vector& z0, double t_final, double dt,
                                        double metrics_threshold = 1e-3) {
    const Eigen::Index n = plant.n();
    const Eigen::Index q = real.functional_dim();
    if (x0.size() != n || z0.size() != real.state_dim() ||
        static_cast<Eigen::Index>(f.size()) != plant.m() || real.Q.cols() != n)
        throw Error("run_mimo_scenario: dimension mismatch");

    Vector joint(n + real.state_dim());
    joint << x0, z0;
    Vector fv(plant.m()), y(plant.l()), dz(real.state_dim()), xbar(q);
    const VectorField field = [&](double t, const Vector& s, Vector& ds) {
        const auto x = s.head(n);
        const auto z = s.tail(real.state_dim());
        for (Eigen::Index i = 0; i < fv.size(); ++i)
            fv(i) = f[static_cast<std::size_t>(i)].eval(t);
        y.noalias() = plant.C * x;
        ds.head(n).noalias() = plant.A * x;
        ds.head(n).noalias() += plant.B * fv;
        realization_rhs(real, z, y, dz, xbar);
        ds.tail(real.state_dim()) = dz;
    };
    const Trajectory joint_traj = rk4_integrate(field, joint, 0.0, t_final, dt);

    ScenarioResult res;
    const Eigen::Index count = joint_traj.size();
    res.state.times = joint_traj.times;
    res.state.samples = joint_traj.samples.leftCols(n);
    res.estimate.times = joint_traj.times;
    res.estimate.samples.resize(count, q);
    res.error.times = joint_traj.times;
    res.error.samples.resize(count, q);
    for (Eigen::Index k = 0; k < count; ++k) {
        const Vector x = joint_traj.samples.row(k).head(n).transpose();
        const Vector z = joint_traj.samples.row(k).tail(real.state_dim()).transpose();
        y.noalias() = plant.C * x;
        xbar.noalias() = real.Q * z;
        xbar.noalias() += real.Theta * y;
        res.estimate.samples.row(k) = xbar.transpose();
        res.error.samples.row(k) = (real.Q * x - xbar).transpose();
    }
    res.metrics = error_metrics(res.error, metrics_threshold);
    return res;
}

// Ideal observer fed with exact output derivatives reconstructed from the
// true state: y_i^{(r_i)} = C_i A^{r_i} x + C_i A^{r_i-1} B f. Ground truth
// for realization equivalence checks.
inline Trajectory derivative_feed_oracle(const LtiSystem& plant, const UioGains& gains,
                                         const RelativeDegreeProfile& r,
                                         const std::vector<TimeExpr>& f, const Vector& x0,
                                         const Vector& xhat0, double t_final, double dt) {
    const Eigen::Index n = plant.n();
    if (x0.size() != n || xhat0.size() != n ||
        static_cast<Eigen::Index>(f.size()) != plant.m())
        throw Error("derivative_feed_oracle: dimension mismatch");
    const Matrix P = build_P(plant, r);
    const Matrix N = build_N(plant, r);

    Vector joint(2 * n);
    joint << x0, xhat0;
    Vector fv(plant.m()), y(plant.l()), ydr(plant.l());
    const VectorField field = [&](double t, const Vector& s, Vector& ds) {
        const auto x = s.head(n);
        const auto xh = s.tail(n);
        for (Eigen::Index i = 0; i < fv.size(); ++i)
            fv(i) = f[static_cast<std::size_t>(i)].eval(t);
        y.noalias() = plant.C * x;
        ydr.noalias() = P * x;
        ydr.noalias() += N * fv;
        ds.head(n).noalias() = plant.A * x;
        ds.head(n).noalias() += plant.B * fv;
        ds.tail(n).noalias() = gains.F * xh;
        ds.tail(n).noalias() += gains.L * y;
        ds.tail(n).noalias() += gains.G * ydr;
    };
    const Trajectory joint_traj = rk4_integrate(field, joint, 0.0, t_final, dt);

    Trajectory xhat;
    xhat.times = joint_traj.times;
    xhat.samples = joint_traj.samples.rightCols(n);
    return xhat;
}

// True plant (possibly with state feedback folded into its A) co-integrated
// with the copy observer and its fundamental matrix. Estimate channels are
// the first beta-1 chain states plus the reconstructed beta-th state.
inline ScenarioResult run_ltv_scenario(const Matrix& plant_A, const Vector& plant_B,
                                       const LtvCanonicalSystem& sys, const TimeExpr& u,
                                       const Vector& x0, const Vector& xi0, double t_final,
                                       double dt, double metrics_threshold = 1e-3) {
    const Eigen::Index n = plant_A.rows();
    if (plant_A.cols() != n || plant_B.size() != n || sys.n != static_cast<int>(n))
        throw Error("run_ltv_scenario: plant dimensions disagree with the canonical system");
    const ReducedLtvSystem red = reduce_to_w(sys);
    const Eigen::Index d = red.dim();
    if (xi0.size() != d) throw Error("run_ltv_scenario: xi0 must have beta-1 entries");

    // joint layout: [x (n); w (d); xi (d); Phi (d*d, column-major)]
    Vector joint(n + 2 * d + d * d);
    joint.head(n) = x0;
    joint.segment(n, d) = x0.head(d);  // chain states are the leading x entries
    joint.segment(n + d, d) = xi0;
    Eigen::Map<Matrix>(joint.data() + n + 2 * d, d, d) = Matrix::Identity(d, d);

    const VectorField field = [&](double t, const Vector& s, Vector& ds) {
        const auto x = s.head(n);
        const auto w = s.segment(n, d);
        const auto xi = s.segment(n + d, d);
        const Eigen::Map<const Matrix> Phi(s.data() + n + 2 * d, d, d);
        const double y = sys.c_at(t).dot(x);
        const Matrix R = red.R_at(t);
        const Vector D = red.D_at(t);
        ds.head(n).noalias() = plant_A * x;
        ds.head(n).noalias() += plant_B * u.eval(t);
        ds.segment(n, d).noalias() = R * w + D * y;
        ds.segment(n + d, d).noalias() = R * xi + D * y;
        Eigen::Map<Matrix>(ds.data() + n + 2 * d, d, d).noalias() = R * Phi;
    };
    const Trajectory joint_traj = rk4_integrate(field, joint, 0.0, t_final, dt);

    ScenarioResult res;
    const Eigen::Index count = joint_traj.size();
    res.state.times = joint_traj.times;
    res.state.samples = joint_traj.samples.leftCols(n);
    res.estimate.times = joint_traj.times;
    res.estimate.samples.resize(count, d + 1);
    res.error.times = joint_traj.times;
    res.error.samples.resize(count, d + 1);

    const Vector e0 = joint_traj.samples.row(0).segment(n, d).transpose() -
                      joint_traj.samples.row(0).segment(n + d, d).transpose();
    double worst_identity = 0.0;
    for (Eigen::Index k = 0; k < count; ++k) {
        const double t = joint_traj.times[static_cast<std::size_t>(k)];
        const Vector x = joint_traj.samples.row(k).head(n).transpose();
        const Vector w = joint_traj.samples.row(k).segment(n, d).transpose();
        const Vector xi = joint_traj.samples.row(k).segment(n + d, d).transpose();
        const Matrix PhiK = joint_traj.samples.block(k, n + 2 * d, 1, d * d).reshaped(d, d);
        const double y = sys.c_at(t).dot(x);
        const double xbeta = reconstruct_x_beta(xi, y, sys, t);
        res.estimate.samples.row(k).head(d) = xi.transpose();
        res.estimate.samples(k, d) = xbeta;
        res.error.samples.row(k).head(d) = (x.head(d) - xi).transpose();
        res.error.samples(k, d) = x(d) - xbeta;
        worst_identity =
            std::max(worst_identity, ((w - xi) - PhiK * e0).cwiseAbs().maxCoeff());
        if (k + 1 == count) {
            res.phi_final_norm = PhiK.cwiseAbs().maxCoeff();
            res.phi_final = PhiK;
        }
    }
    res.gpebo_identity_residual = worst_identity;
    res.metrics = error_metrics(res.error, metrics_threshold);
    return res;
}

namespace detail {

// 4-state chain with one output used by the bilinear cascade demo.
inline LtiSystem bilinear_demo_plant() {
    LtiSystem sys;
    sys.A = Matrix::Zero(4, 4);
    sys.A.topRightCorner(3, 3).setIdentity();
    sys.B = Matrix::Zero(4, 1);
    sys.B(3, 0) = 1.0;
    sys.C = Matrix::Zero(1, 4);
    sys.C(0, 0) = 1.0;
    sys.C(0, 1) = 1.0;
    return sys;
}

}  // namespace detail

// Bilinear plant ẋ = A x + B x1 x3 observed by the cascade: the functional
// realization estimates x1, x2 (and their measurable derivative feed), and a
// full-state observer on the substituted nonlinearity recovers all of x.
// The chain pair (M, C) keeps an unassignable stable mode at -1, so the
// internal F spectrum is {-1, -2, -3, -4}.
inline ScenarioResult run_bilinear_demo(const Matrix& K, const Vector& x0, double t_final,
                                        double dt, double metrics_threshold = 1e-3,
                                        double escape_bound = 1e3,
                                        const std::optional<Vector>& z0 = std::nullopt,
                                        const std::optional<Vector>& xi0 = std::nullopt) {
    const LtiSystem sys = detail::bilinear_demo_plant();
    const Eigen::Index n = 4;
    if (K.rows() != n || K.cols() != 1 || x0.size() != n)
        throw Error("run_bilinear_demo: K must be 4x1 and x0 length 4");
    {
        Eigen::EigenSolver<Matrix> es(sys.A - K * sys.C);
        if (es.info() != Eigen::Success) throw NumericError("eigensolver failed on A - K C");
        if (es.eigenvalues().real().maxCoeff() >= 0.0)
            throw InfeasibleError("A - K C is not Hurwitz");
    }

    SynthesisOptions opts;
    UioDesign design = design_functional_uio(
        sys, {Complex(-1, 0), Complex(-2, 0), Complex(-3, 0), Complex(-4, 0)}, opts);
    // the demo needs the estimate channels in state order: x1 then x2
    Matrix Q(2, 4);
    Q << 1, 0, 0, 0, 0, 1, 0, 0;
    FunctionalObserverRealization real = build_realization(sys, design.gains, Q, design.r);

    // joint layout: [x (4); z (4); xi (4)]
    Vector joint = Vector::Zero(12);
    joint.head(4) = x0;
    if (z0) joint.segment(4, 4) = *z0;
    if (xi0) joint.tail(4) = *xi0;
    const Vector B = sys.B.col(0);
    Vector dz(4), xbar(2), y1(1), zeta(4);
    const VectorField field = [&](double t, const Vector& s, Vector& ds) {
        (void)t;
        const auto x = s.head(4);
        const auto z = s.segment(4, 4);
        const auto xi = s.tail(4);
        if (x.cwiseAbs().maxCoeff() > escape_bound)
            throw NumericError("plant escaped the bounded-state region (|x| > " +
                               std::to_string(escape_bound) + ")");
        const double y = sys.C.row(0).dot(x);
        y1(0) = y;
        realization_rhs(real, z, y1, dz, xbar);
        const double x1h = xbar(0);
        const double x2h = xbar(1);
        const double x1h_dot = dz(0);  // Theta row 1 vanishes, so x̂1 = z1
        zeta = xi + B * (x1h * y);
        ds.head(4).noalias() = sys.A * x;
        ds.head(4).noalias() += B * (x(0) * x(2));
        ds.segment(4, 4) = dz;
        ds.tail(4).noalias() = sys.A * zeta + K * (y - sys.C.row(0).dot(zeta));
        ds.tail(4).noalias() -= B * (x1h_dot * y + x1h * x2h);
    };
    const Trajectory joint_traj = rk4_integrate(field, joint, 0.0, t_final, dt);

    ScenarioResult res;
    const Eigen::Index count = joint_traj.size();
    res.state.times = joint_traj.times;
    res.state.samples = joint_traj.samples.leftCols(4);
    res.estimate.times = joint_traj.times;
    res.estimate.samples.resize(count, 4);
    res.error.times = joint_traj.times;
    res.error.samples.resize(count, 4);
    for (Eigen::Index k = 0; k < count; ++k) {
        const Vector x = joint_traj.samples.row(k).head(4).transpose();
        const Vector z = joint_traj.samples.row(k).segment(4, 4).transpose();
        const Vector xi = joint_traj.samples.row(k).tail(4).transpose();
        const double y = sys.C.row(0).dot(x);
        const double x1h = real.Q.row(0).dot(z) + real.Theta(0, 0) * y;
        const Vector zeta_k = xi + B * (x1h * y);
        res.estimate.samples.row(k) = zeta_k.transpose();
        res.error.samples.row(k) = (x - zeta_k).transpose();
    }
    res.metrics = error_metrics(res.error, metrics_threshold);
    return res;
}

}  // namespace fuio
