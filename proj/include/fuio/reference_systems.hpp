#pragma once

#include <vector>

#include "fuio/system_model.hpp"

namespace fuio {

// Packaged reference designs used by the CLI demos and the test suites.

// Two-output fifth-order plant with a single unmeasured input. Structural
// relative degrees are [4, 3]; the packaged design overrides to [3, 3].
inline LtiSystem reference_mimo_plant() {
    LtiSystem sys;
    sys.A.resize(5, 5);
    sys.A << 0, 1, 0, 0, 0,
             0, 0, 1, 0, 0,
             0, 0, 0, 1, 0,
             0, 0, 0, 0, 1,
            -1, -2, -3, -5, -5;
    sys.B = Matrix::Zero(5, 1);
    sys.B(4, 0) = 1.0;
    sys.C.resize(2, 5);
    sys.C << 1, 1, 0, 0, 0,
             1, 0, 1, 0, 0;
    return sys;
}

inline std::vector<int> reference_mimo_r_override() { return {3, 3}; }

inline std::vector<Complex> reference_mimo_poles() {
    return {Complex(-4, 0), Complex(-5, 0), Complex(-6, 0), Complex(-7, 0), Complex(-8, 0)};
}

// Fourth-order chain with a time-varying output row; the true plant carries
// the state feedback folded into its last row, so the chain input is unknown
// to the observer.
inline LtvCanonicalSystem reference_ltv_chain() {
    LtvCanonicalSystem sys;
    sys.n = 4;
    sys.c = {parse_time_expr("1"), parse_time_expr("2+sin(0.3*t)"), parse_time_expr("1"),
             parse_time_expr("0")};
    return sys;
}

inline Matrix reference_ltv_plant_A() {
    Matrix A(4, 4);
    A << 0, 1, 0, 0,
         0, 0, 1, 0,
         0, 0, 0, 1,
        -1, -4, -6, -4;
    return A;
}

inline Vector reference_ltv_plant_B() {
    Vector b = Vector::Zero(4);
    b(3) = 1.0;
    return b;
}

// Single-output fourth-order chain used for the kernel construction example
// and as the linear part of the bilinear demo.
inline LtiSystem reference_chain4_plant() {
    LtiSystem sys;
    sys.A = Matrix::Zero(4, 4);
    sys.A.topRightCorner(3, 3).setIdentity();
    sys.B = Matrix::Zero(4, 1);
    sys.B(3, 0) = 1.0;
    sys.C.resize(1, 4);
    sys.C << 1, 1, 0, 0;
    return sys;
}

}  // namespace fuio
