#include "ivp/predictor.hpp"

#include <algorithm>
#include <cmath>

#include "ivp/metzler.hpp"

namespace ivp {

namespace {

Vector pos(const Vector& v) { return v.cwiseMax(0.0); }
Vector neg(const Vector& v) { return (-v).cwiseMax(0.0); }

// Raw stacked-state versions of the predictor derivatives. They must accept
// momentarily inverted bounds: RK4 stage states carry no ordering invariant.
struct NaiveRhs {
    IntervalMatrix a;
    Matrix b;

    NaiveRhs(IntervalMatrix a_, Matrix b_) : a(std::move(a_)), b(std::move(b_)) {}

    void operator()(const Vector& lo, const Vector& hi, const IntervalVector& d, Vector& dlo,
                    Vector& dhi) const {
        detail::mul_interval_bounds(a.lower, a.upper, lo, hi, dlo, dhi);
        Vector ulo, uhi;
        detail::mul_const_bounds(b, d.lower, d.upper, ulo, uhi);
        dlo += ulo;
        dhi += uhi;
    }
};

struct StableRhs {
    const PolytopicModel& m;
    Matrix b_plus, b_minus;

    explicit StableRhs(const PolytopicModel& m_) : m(m_) {
        std::tie(b_plus, b_minus) = split_parts(m.b);
    }

    void operator()(const Vector& lo, const Vector& hi, const IntervalVector& d, Vector& dlo,
                    Vector& dhi) const {
        dlo = m.a0 * lo - m.delta_plus * neg(lo) - m.delta_minus * pos(hi);
        dhi = m.a0 * hi + m.delta_plus * pos(hi) + m.delta_minus * neg(lo);
        dlo += b_plus * d.lower - b_minus * d.upper;
        dhi += b_plus * d.upper - b_minus * d.lower;
    }
};

template <typename Rhs>
IntervalTrajectory run_rk4(const Rhs& rhs, Method method, const IntervalVector& x0,
                           const SignalBounds& d, double horizon, double dt) {
    if (!(dt > 0.0)) throw ValidationError("integrate: dt must be positive");
    if (horizon < 0.0) throw ValidationError("integrate: horizon must be nonnegative");

    IntervalTrajectory out;
    out.method = method;
    out.dt = dt;
    out.times.push_back(0.0);
    out.states.push_back(x0);

    Vector lo = x0.lower, hi = x0.upper;
    Vector k1lo, k1hi, k2lo, k2hi, k3lo, k3hi, k4lo, k4hi;

    double t = 0.0;
    const double eps = 1e-9 * dt;
    while (t < horizon - eps) {
        const double h = std::min(dt, horizon - t);
        rhs(lo, hi, d.at(t), k1lo, k1hi);
        rhs(lo + 0.5 * h * k1lo, hi + 0.5 * h * k1hi, d.at(t + 0.5 * h), k2lo, k2hi);
        rhs(lo + 0.5 * h * k2lo, hi + 0.5 * h * k2hi, d.at(t + 0.5 * h), k3lo, k3hi);
        rhs(lo + h * k3lo, hi + h * k3hi, d.at(t + h), k4lo, k4hi);
        Vector nlo = lo + (h / 6.0) * (k1lo + 2.0 * k2lo + 2.0 * k3lo + k4lo);
        Vector nhi = hi + (h / 6.0) * (k1hi + 2.0 * k2hi + 2.0 * k3hi + k4hi);
        t += h;

        if (!nlo.allFinite() || !nhi.allFinite()) {
            out.truncated = true;  // divergence overflow: stop at last finite step
            break;
        }
        for (Eigen::Index i = 0; i < nlo.size(); ++i) {
            if (nlo(i) > nhi(i)) {
                if (nlo(i) - nhi(i) > 1e-12) {
                    throw OrderViolation("integrate: lower bound crossed upper bound", t);
                }
                nlo(i) = nhi(i) = 0.5 * (nlo(i) + nhi(i));  // rounding-level crossing
            }
        }
        lo = std::move(nlo);
        hi = std::move(nhi);
        out.times.push_back(t);
        out.states.emplace_back(lo, hi);
    }
    return out;
}

}  // namespace

PolytopicModel::PolytopicModel(Matrix a0_, std::vector<Matrix> deltas_, Matrix b_)
    : a0(std::move(a0_)), deltas(std::move(deltas_)), b(std::move(b_)) {
    if (a0.rows() != a0.cols()) {
        throw DimensionError("PolytopicModel: a0 must be square");
    }
    if (!is_metzler(a0, 1e-9)) {
        throw ValidationError("PolytopicModel: a0 must be Metzler (off-diagonals >= -1e-9)");
    }
    for (const Matrix& d : deltas) {
        if (d.rows() != a0.rows() || d.cols() != a0.cols()) {
            throw DimensionError("PolytopicModel: vertex offset shape mismatch");
        }
    }
    if (b.rows() != a0.rows()) {
        throw DimensionError("PolytopicModel: b row count mismatch");
    }
    delta_plus = Matrix::Zero(a0.rows(), a0.cols());
    delta_minus = Matrix::Zero(a0.rows(), a0.cols());
    for (const Matrix& d : deltas) {
        auto [p, m] = split_parts(d);
        delta_plus += p;
        delta_minus += m;
    }
}

IntervalMatrix PolytopicModel::interval_hull() const {
    if (deltas.empty()) return IntervalMatrix::point(a0);
    Matrix lo = deltas[0], hi = deltas[0];
    for (size_t i = 1; i < deltas.size(); ++i) {
        lo = lo.cwiseMin(deltas[i]);
        hi = hi.cwiseMax(deltas[i]);
    }
    return IntervalMatrix(a0 + lo, a0 + hi);
}

SignalBounds::SignalBounds(std::vector<double> t, std::vector<IntervalVector> v)
    : times(std::move(t)), values(std::move(v)) {
    if (times.empty() || times.size() != values.size()) {
        throw ValidationError("SignalBounds: need one value per sample time");
    }
    for (size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) {
            throw ValidationError("SignalBounds: sample times must be strictly increasing");
        }
    }
    for (size_t i = 1; i < values.size(); ++i) {
        if (values[i].size() != values[0].size()) {
            throw DimensionError("SignalBounds: inconsistent value dimensions");
        }
    }
}

SignalBounds SignalBounds::constant(IntervalVector v) {
    return SignalBounds({0.0}, {std::move(v)});
}

const IntervalVector& SignalBounds::at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const size_t idx = it == times.begin() ? 0 : static_cast<size_t>(it - times.begin() - 1);
    return values[idx];
}

const char* method_name(Method m) { return m == Method::Naive ? "naive" : "stable"; }

BoxDerivative naive_rhs(const IntervalMatrix& a, const Matrix& b, const IntervalVector& x,
                        const IntervalVector& d) {
    if (a.cols() != x.size() || b.cols() != d.size() || a.rows() != b.rows()) {
        throw DimensionError("naive_rhs: dimension mismatch");
    }
    NaiveRhs rhs(a, b);
    BoxDerivative out;
    rhs(x.lower, x.upper, d, out.lower, out.upper);
    return out;
}

BoxDerivative stable_rhs(const PolytopicModel& model, const IntervalVector& x,
                         const IntervalVector& d) {
    if (model.dim() != x.size() || model.inputs() != d.size()) {
        throw DimensionError("stable_rhs: dimension mismatch");
    }
    StableRhs rhs(model);
    BoxDerivative out;
    rhs(x.lower, x.upper, d, out.lower, out.upper);
    return out;
}

IntervalTrajectory integrate(const PolytopicModel& model, Method method,
                             const IntervalVector& x0, const SignalBounds& d, double horizon,
                             double dt) {
    if (model.dim() != x0.size()) throw DimensionError("integrate: x0 dimension mismatch");
    if (model.inputs() != d.values[0].size()) {
        throw DimensionError("integrate: disturbance dimension mismatch");
    }
    if (method == Method::Naive) {
        NaiveRhs rhs(model.interval_hull(), model.b);
        return run_rk4(rhs, method, x0, d, horizon, dt);
    }
    StableRhs rhs(model);
    return run_rk4(rhs, method, x0, d, horizon, dt);
}

IntervalTrajectory integrate_naive(const IntervalMatrix& a, const Matrix& b,
                                   const IntervalVector& x0, const SignalBounds& d,
                                   double horizon, double dt) {
    if (a.cols() != x0.size() || b.cols() != d.values[0].size()) {
        throw DimensionError("integrate_naive: dimension mismatch");
    }
    NaiveRhs rhs(a, b);
    return run_rk4(rhs, Method::Naive, x0, d, horizon, dt);
}

ExtendedMatrices extended_system_matrices(const PolytopicModel& model) {
    const Eigen::Index n = model.dim();
    ExtendedMatrices m;
    m.a_cal = Matrix::Zero(2 * n, 2 * n);
    m.a_cal.topLeftCorner(n, n) = model.a0;
    m.a_cal.bottomRightCorner(n, n) = model.a0;
    m.r_plus = Matrix::Zero(2 * n, 2 * n);
    m.r_plus.topRightCorner(n, n) = -model.delta_minus;
    m.r_plus.bottomRightCorner(n, n) = model.delta_plus;
    m.r_minus = Matrix::Zero(2 * n, 2 * n);
    m.r_minus.topLeftCorner(n, n) = model.delta_plus;
    m.r_minus.bottomLeftCorner(n, n) = -model.delta_minus;
    return m;
}

Vector extended_input(const Matrix& b, const IntervalVector& d) {
    auto [bp, bm] = split_parts(b);
    Vector out(2 * b.rows());
    out.head(b.rows()) = bp * d.lower - bm * d.upper;
    out.tail(b.rows()) = bp * d.upper - bm * d.lower;
    return out;
}

}  // namespace ivp
