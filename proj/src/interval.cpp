#include "ivp/interval.hpp"

#include <cmath>
#include <string>

namespace ivp {

namespace {

void require_ordered(const Vector& lo, const Vector& hi, const char* what) {
    if (lo.size() != hi.size()) {
        throw DimensionError(std::string(what) + ": bound sizes differ");
    }
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        if (!(lo(i) <= hi(i))) {  // also trips on NaN
            throw OrderViolation(std::string(what) + ": lower > upper at index " +
                                     std::to_string(i),
                                 0.0);
        }
    }
}

void require_ordered(const Matrix& lo, const Matrix& hi, const char* what) {
    if (lo.rows() != hi.rows() || lo.cols() != hi.cols()) {
        throw DimensionError(std::string(what) + ": bound shapes differ");
    }
    for (Eigen::Index i = 0; i < lo.rows(); ++i) {
        for (Eigen::Index j = 0; j < lo.cols(); ++j) {
            if (!(lo(i, j) <= hi(i, j))) {
                throw OrderViolation(std::string(what) + ": lower > upper at (" +
                                         std::to_string(i) + "," + std::to_string(j) + ")",
                                     0.0);
            }
        }
    }
}

}  // namespace

std::pair<Matrix, Matrix> split_parts(const Matrix& m) {
    Matrix plus = m.cwiseMax(0.0);
    Matrix minus = plus - m;
    return {std::move(plus), std::move(minus)};
}

IntervalVector::IntervalVector(Vector lo, Vector hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
    require_ordered(lower, upper, "IntervalVector");
}

IntervalVector IntervalVector::point(const Vector& v) { return IntervalVector(v, v); }

bool IntervalVector::contains(const Vector& v, double slack) const {
    if (v.size() != lower.size()) return false;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) < lower(i) - slack || v(i) > upper(i) + slack) return false;
    }
    return true;
}

IntervalMatrix::IntervalMatrix(Matrix lo, Matrix hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
    require_ordered(lower, upper, "IntervalMatrix");
}

IntervalMatrix IntervalMatrix::point(const Matrix& m) { return IntervalMatrix(m, m); }

namespace detail {

// Explicit loops, ascending j: keeps the extremal-corner evaluation bitwise
// identical to a naive dot product done in the same order.
void mul_const_bounds(const Matrix& a, const Vector& xlo, const Vector& xhi, Vector& lo,
                      Vector& hi) {
    lo.resize(a.rows());
    hi.resize(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double acc_lo = 0.0, acc_hi = 0.0;
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double ap = std::max(a(i, j), 0.0);
            const double am = ap - a(i, j);
            acc_lo += ap * xlo(j) - am * xhi(j);
            acc_hi += ap * xhi(j) - am * xlo(j);
        }
        lo(i) = acc_lo;
        hi(i) = acc_hi;
    }
}

void mul_interval_bounds(const Matrix& alo, const Matrix& ahi, const Vector& xlo,
                         const Vector& xhi, Vector& lo, Vector& hi) {
    lo.resize(alo.rows());
    hi.resize(alo.rows());
    for (Eigen::Index i = 0; i < alo.rows(); ++i) {
        double acc_lo = 0.0, acc_hi = 0.0;
        for (Eigen::Index j = 0; j < alo.cols(); ++j) {
            const double alp = std::max(alo(i, j), 0.0);
            const double alm = alp - alo(i, j);
            const double aup = std::max(ahi(i, j), 0.0);
            const double aum = aup - ahi(i, j);
            const double xlp = std::max(xlo(j), 0.0);
            const double xlm = xlp - xlo(j);
            const double xup = std::max(xhi(j), 0.0);
            const double xum = xup - xhi(j);
            acc_lo += alp * xlp - aup * xlm - alm * xup + aum * xum;
            acc_hi += aup * xup - alp * xum - aum * xlp + alm * xlm;
        }
        lo(i) = acc_lo;
        hi(i) = acc_hi;
    }
}

}  // namespace detail

IntervalVector mul_const_interval(const Matrix& a, const IntervalVector& x) {
    if (a.cols() != x.size()) {
        throw DimensionError("mul_const_interval: A cols != x size");
    }
    Vector lo, hi;
    detail::mul_const_bounds(a, x.lower, x.upper, lo, hi);
    return IntervalVector(std::move(lo), std::move(hi));
}

IntervalVector mul_interval_interval(const IntervalMatrix& a, const IntervalVector& x) {
    if (a.cols() != x.size()) {
        throw DimensionError("mul_interval_interval: A cols != x size");
    }
    Vector lo, hi;
    detail::mul_interval_bounds(a.lower, a.upper, x.lower, x.upper, lo, hi);
    return IntervalVector(std::move(lo), std::move(hi));
}

}  // namespace ivp
