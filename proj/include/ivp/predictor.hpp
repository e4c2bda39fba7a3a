#pragma once

// Interval predictors for uncertain linear dynamics
//
//     xdot = A(theta) x + B d(t),   A(theta) = a0 + sum_i lambda_i(theta) deltas[i]
//
// with lambda on the unit simplex and d(t) boxed. Two tube propagators:
//
//   naive   direct interval image of the boxed matrix; sound for any A but can
//           blow up even when every realisation is stable
//   stable  keeps a0 acting on the bounds themselves and pushes all the
//           uncertainty through positive parts; requires a0 Metzler, stays
//           bounded whenever the companion certificate (stability.hpp) holds
//
// Integration is fixed-step RK4 on the stacked (lower, upper) system, with
// the positive/negative-part kinks evaluated exactly at every stage.

#include <utility>
#include <vector>

#include "ivp/interval.hpp"

namespace ivp {

struct PolytopicModel {
    Matrix a0;                  // Metzler centre (checked, tol 1e-9)
    std::vector<Matrix> deltas; // polytope vertex offsets from a0
    Matrix b;                   // input matrix
    Matrix delta_plus;          // sum_i max(0,  deltas[i])
    Matrix delta_minus;         // sum_i max(0, -deltas[i])

    PolytopicModel(Matrix a0_, std::vector<Matrix> deltas_, Matrix b_);

    Eigen::Index dim() const { return a0.rows(); }
    Eigen::Index inputs() const { return b.cols(); }

    // Entrywise range of A(theta) over the simplex: [a0 + min_i deltas,
    // a0 + max_i deltas] (equals {a0} when there are no vertices).
    IntervalMatrix interval_hull() const;
};

// Piecewise-constant disturbance bounds, left-continuous: the value at t is
// the one attached to the greatest sample time <= t (clamped to the first
// sample before the start).
struct SignalBounds {
    std::vector<double> times;
    std::vector<IntervalVector> values;

    static SignalBounds constant(IntervalVector v);
    SignalBounds(std::vector<double> t, std::vector<IntervalVector> v);

    const IntervalVector& at(double t) const;
};

// Time derivative of the two bound trajectories. Not an interval: when a tube
// contracts the lower bound can move faster than the upper one.
struct BoxDerivative {
    Vector lower;
    Vector upper;
};

BoxDerivative naive_rhs(const IntervalMatrix& a, const Matrix& b, const IntervalVector& x,
                        const IntervalVector& d);
BoxDerivative stable_rhs(const PolytopicModel& model, const IntervalVector& x,
                         const IntervalVector& d);

enum class Method { Naive, Stable };
const char* method_name(Method m);

struct IntervalTrajectory {
    std::vector<double> times;
    std::vector<IntervalVector> states;
    Method method = Method::Stable;
    double dt = 0.0;
    bool truncated = false;  // hit a non-finite state; stopped at last finite step
};

IntervalTrajectory integrate(const PolytopicModel& model, Method method,
                             const IntervalVector& x0, const SignalBounds& d, double horizon,
                             double dt);

// Naive propagation straight from an interval matrix (no polytope needed).
IntervalTrajectory integrate_naive(const IntervalMatrix& a, const Matrix& b,
                                   const IntervalVector& x0, const SignalBounds& d,
                                   double horizon, double dt);

// The stacked 2n-dimensional form of the stable predictor,
//   Xdot = a_cal X + r_plus X+ - r_minus X- + delta(d),
// used by the stability certificates. X = (lower; upper).
struct ExtendedMatrices {
    Matrix a_cal;
    Matrix r_plus;
    Matrix r_minus;
};

ExtendedMatrices extended_system_matrices(const PolytopicModel& model);

// delta(d) = (B+ d_lo - B- d_hi ; B+ d_hi - B- d_lo)
Vector extended_input(const Matrix& b, const IntervalVector& d);

}  // namespace ivp
