#include "fuio/ltv_gpebo.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fuio/reference_systems.hpp"

namespace fuio {
namespace {

TEST(Reduce, ReferenceChain) {
    const ReducedLtvSystem red = reduce_to_w(reference_ltv_chain());
    EXPECT_EQ(red.beta, 3);
    EXPECT_EQ(red.dim(), 2);
    for (double t : {0.0, 1.7, 12.0}) {
        const double a = 2.0 + std::sin(0.3 * t);
        const Matrix R = red.R_at(t);
        EXPECT_DOUBLE_EQ(R(0, 0), 0.0);
        EXPECT_DOUBLE_EQ(R(0, 1), 1.0);
        EXPECT_DOUBLE_EQ(R(1, 0), -1.0);
        EXPECT_DOUBLE_EQ(R(1, 1), -a);
        const Vector D = red.D_at(t);
        EXPECT_DOUBLE_EQ(D(0), 0.0);
        EXPECT_DOUBLE_EQ(D(1), 1.0);
    }
}

TEST(Reduce, SmallestCaseConstantCoefficients) {
    LtvCanonicalSystem sys;
    sys.n = 2;
    sys.c = {parse_time_expr("3"), parse_time_expr("2")};
    const ReducedLtvSystem red = reduce_to_w(sys);
    EXPECT_EQ(red.beta, 2);
    EXPECT_DOUBLE_EQ(red.R_at(5.0)(0, 0), -1.5);  // -a/b
    EXPECT_DOUBLE_EQ(red.D_at(5.0)(0), 0.5);      // 1/b
}

TEST(Reduce, ZeroLeadingCoefficients) {
    LtvCanonicalSystem sys;
    sys.n = 3;
    sys.c = {parse_time_expr("0"), parse_time_expr("0"), parse_time_expr("1")};
    const ReducedLtvSystem red = reduce_to_w(sys);
    EXPECT_EQ(red.beta, 3);
    const Matrix R = red.R_at(0.0);
    EXPECT_DOUBLE_EQ(R(0, 1), 1.0);
    EXPECT_EQ(R.row(1).cwiseAbs().maxCoeff(), 0.0);  // last row all zero
    EXPECT_DOUBLE_EQ(red.D_at(0.0)(1), 1.0);
}

TEST(GpeboRhs, LinearInState) {
    const ReducedLtvSystem red = reduce_to_w(reference_ltv_chain());
    const Matrix R = red.R_at(0.0);
    GpeboState state{Vector::Zero(2), Matrix::Identity(2, 2)};
    auto [dxi, dphi] = gpebo_rhs(state, R, red.D_at(0.0), 0.0);
    EXPECT_EQ(dxi.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((dphi - R).cwiseAbs().maxCoeff(), 1e-15);

    GpeboState s2{Vector::Zero(2), Matrix::Zero(2, 2)};
    Vector D(2);
    D << 0, 1;
    auto [dxi2, dphi2] = gpebo_rhs(s2, Matrix::Zero(2, 2), D, 2.0);
    EXPECT_DOUBLE_EQ(dxi2(0), 0.0);
    EXPECT_DOUBLE_EQ(dxi2(1), 2.0);
    EXPECT_EQ(dphi2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GpeboRhs, ReferenceValuesAtTimeZero) {
    // c2(0) = 2, so R(0) = [[0, 1], [-1, -2]]; with xi = [1, 1], y = 1 the
    // second component is -1 - 2 + 1 = -2
    const ReducedLtvSystem red = reduce_to_w(reference_ltv_chain());
    GpeboState state{Vector::Ones(2), Matrix::Identity(2, 2)};
    auto [dxi, dphi] = gpebo_rhs(state, red.R_at(0.0), red.D_at(0.0), 1.0);
    EXPECT_DOUBLE_EQ(dxi(0), 1.0);
    EXPECT_DOUBLE_EQ(dxi(1), -2.0);
    // at the in-band peak sin(0.3 t) = 1 the same slot reads -1 - 3 + 1 = -3
    const double t_peak = M_PI / 0.6;
    auto [dxi3, dphi3] = gpebo_rhs(state, red.R_at(t_peak), red.D_at(t_peak), 1.0);
    EXPECT_NEAR(dxi3(1), -3.0, 1e-12);
    (void)dphi;
    (void)dphi3;
}

TEST(FunctionalMatrixLtv, BlockShapes) {
    const Matrix Q = functional_matrix_ltv(4, 3);
    Matrix expected(2, 4);
    expected << 1, 0, 0, 0, 0, 1, 0, 0;
    EXPECT_LT((Q - expected).cwiseAbs().maxCoeff(), 1e-15);

    const Matrix Q2 = functional_matrix_ltv(5, 5);
    EXPECT_EQ(Q2.rows(), 4);
    EXPECT_LT((Q2.leftCols(4) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(Q2.col(4).cwiseAbs().maxCoeff(), 0.0);

    const Matrix Q3 = functional_matrix_ltv(3, 2);
    EXPECT_EQ(Q3.rows(), 1);
    EXPECT_DOUBLE_EQ(Q3(0, 0), 1.0);

    EXPECT_THROW(functional_matrix_ltv(4, 1), InfeasibleError);
    EXPECT_THROW(functional_matrix_ltv(4, 5), InfeasibleError);
}

TEST(ReconstructXBeta, ReferenceFormula) {
    const LtvCanonicalSystem sys = reference_ltv_chain();
    Vector xhat(2);
    xhat << 0.4, -1.1;
    for (double t : {0.0, 3.3, 10.0}) {
        const double y = 2.5;
        const double expected = y - 0.4 - (2.0 + std::sin(0.3 * t)) * (-1.1);
        EXPECT_NEAR(reconstruct_x_beta(xhat, y, sys, t), expected, 1e-14);
    }
}

TEST(ReconstructXBeta, DefinitionAndGuard) {
    LtvCanonicalSystem sys;
    sys.n = 2;
    sys.c = {parse_time_expr("3"), parse_time_expr("2")};
    Vector xhat(1);
    xhat << 0.5;
    EXPECT_DOUBLE_EQ(reconstruct_x_beta(xhat, 4.0, sys, 0.0), (4.0 - 1.5) / 2.0);

    LtvCanonicalSystem pure;
    pure.n = 3;
    pure.c = {parse_time_expr("0"), parse_time_expr("0"), parse_time_expr("1")};
    Vector xh2 = Vector::Zero(2);
    EXPECT_DOUBLE_EQ(reconstruct_x_beta(xh2, 7.25, pure, 1.0), 7.25);

    LtvCanonicalSystem crossing;
    crossing.n = 2;
    crossing.c = {parse_time_expr("1"), parse_time_expr("t")};
    Vector xh1(1);
    xh1 << 1.0;
    EXPECT_THROW(reconstruct_x_beta(xh1, 1.0, crossing, 0.0), EvalError);
    EXPECT_NO_THROW(reconstruct_x_beta(xh1, 1.0, crossing, 2.0));
}

TEST(FrozenScan, ReferenceMarginMatchesClosedForm) {
    // roots of s^2 + a s + 1 over a in [1, 3]; slowest at a = 3: (-3+sqrt 5)/2
    const ReducedLtvSystem red = reduce_to_w(reference_ltv_chain());
    std::vector<double> grid;
    for (int k = 0; k <= 2100; ++k) grid.push_back(0.01 * k);
    const StabilityScan scan = frozen_stability_scan(red, grid);
    EXPECT_NEAR(scan.margin, (3.0 - std::sqrt(5.0)) / 2.0, 1e-3);
    EXPECT_NEAR(std::sin(0.3 * scan.argmin_time), 1.0, 1e-3);
    EXPECT_FALSE(scan.caveat.empty());
}

TEST(FrozenScan, ConstantMatrices) {
    LtvCanonicalSystem hurwitz;
    hurwitz.n = 3;
    hurwitz.c = {parse_time_expr("2"), parse_time_expr("3"), parse_time_expr("1")};
    // R = [[0,1],[-2,-3]]: eigenvalues -1, -2
    const StabilityScan scan = frozen_stability_scan(reduce_to_w(hurwitz), {0.0, 1.0});
    EXPECT_NEAR(scan.margin, 1.0, 1e-12);

    LtvCanonicalSystem unstable;
    unstable.n = 3;
    unstable.c = {parse_time_expr("-1"), parse_time_expr("0"), parse_time_expr("1")};
    // R = [[0,1],[1,0]]: eigenvalues +-1
    const StabilityScan scan2 = frozen_stability_scan(reduce_to_w(unstable), {0.0});
    EXPECT_NEAR(scan2.margin, -1.0, 1e-12);

    EXPECT_THROW(frozen_stability_scan(reduce_to_w(hurwitz), {}), Error);
}

}  // namespace
}  // namespace fuio
