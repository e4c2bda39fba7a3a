#pragma once

// Elementwise interval boxes over dense vectors/matrices, plus the two
// product-bound kernels everything else in this library is built on:
//
//   mul_const_interval     known matrix  * boxed vector
//   mul_interval_interval  boxed matrix  * boxed vector
//
// Bounds are the classical positive/negative part decompositions. They are
// computed in plain double arithmetic (no directed rounding); the kernels
// accumulate left-to-right so that a brute-force corner evaluation done the
// same way lands exactly on the bound instead of one rounding step away.

#include <Eigen/Dense>
#include <utility>

#include "ivp/errors.hpp"

namespace ivp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// max(0, M) and max(0, -M); M == plus - minus always holds.
std::pair<Matrix, Matrix> split_parts(const Matrix& m);

struct IntervalVector {
    Vector lower;
    Vector upper;

    IntervalVector() = default;
    IntervalVector(Vector lo, Vector hi);

    // Degenerate box [v, v].
    static IntervalVector point(const Vector& v);

    Eigen::Index size() const { return lower.size(); }
    Vector width() const { return upper - lower; }
    Vector midpoint() const { return 0.5 * (lower + upper); }
    bool contains(const Vector& v, double slack = 0.0) const;
};

struct IntervalMatrix {
    Matrix lower;
    Matrix upper;

    IntervalMatrix() = default;
    IntervalMatrix(Matrix lo, Matrix hi);

    static IntervalMatrix point(const Matrix& m);

    Eigen::Index rows() const { return lower.rows(); }
    Eigen::Index cols() const { return lower.cols(); }
};

// Bounds on A*x for known A and x in a box:
//   A+ x_lo - A- x_hi  <=  A x  <=  A+ x_hi - A- x_lo
IntervalVector mul_const_interval(const Matrix& a, const IntervalVector& x);

// Bounds on A*x when both A and x live in boxes:
//   lo = Alo+ xlo+ - Ahi+ xlo- - Alo- xhi+ + Ahi- xhi-
//   hi = Ahi+ xhi+ - Alo+ xhi- - Ahi- xlo+ + Alo- xlo-
// Valid for every A in [Alo, Ahi] and x in [xlo, xhi]; not tight in general.
IntervalVector mul_interval_interval(const IntervalMatrix& a, const IntervalVector& x);

namespace detail {

// Raw kernels behind the two products above. They skip the ordering checks so
// integrator stages (which may carry momentarily inverted bounds) can reuse
// the exact same arithmetic.
void mul_const_bounds(const Matrix& a, const Vector& xlo, const Vector& xhi, Vector& lo,
                      Vector& hi);
void mul_interval_bounds(const Matrix& alo, const Matrix& ahi, const Vector& xlo,
                         const Vector& xhi, Vector& lo, Vector& hi);

}  // namespace detail

}  // namespace ivp
