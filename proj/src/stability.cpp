#include "ivp/stability.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "ivp/errors.hpp"

namespace ivp {

namespace {

void require_length(const Vector& v, Eigen::Index m, const char* name) {
    if (v.size() != m) {
        throw DimensionError(std::string("certificate vector ") + name + " has length " +
                             std::to_string(v.size()) + ", expected " + std::to_string(m));
    }
}

// The ten vectors in a fixed order, for packing into a flat parameter vector.
std::array<Vector LmiCertificate::*, 10> fields() {
    return {&LmiCertificate::p,        &LmiCertificate::q,         &LmiCertificate::q_plus,
            &LmiCertificate::q_minus,  &LmiCertificate::z_plus,    &LmiCertificate::z_minus,
            &LmiCertificate::psi_plus, &LmiCertificate::psi_minus, &LmiCertificate::psi,
            &LmiCertificate::gamma};
}

Vector pack(const LmiCertificate& c) {
    const Eigen::Index m = c.size();
    Vector flat(10 * m);
    Eigen::Index at = 0;
    for (auto f : fields()) {
        flat.segment(at, m) = c.*f;
        at += m;
    }
    return flat;
}

LmiCertificate unpack(const Vector& flat, Eigen::Index m) {
    LmiCertificate c;
    Eigen::Index at = 0;
    for (auto f : fields()) {
        c.*f = flat.segment(at, m);
        at += m;
    }
    return c;
}

double top_eigenvalue(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

// Positivity margins of the three elementwise conditions.
struct Margins {
    double m1, m2, m3;
    Eigen::Index i1, i2, i3;  // argmin rows, kept for subgradients
};

Margins margins_of(const LmiCertificate& c) {
    Vector v1 = c.p + c.z_plus.cwiseMin(c.z_minus);
    Vector v2 = c.q + c.q_plus.cwiseMin(c.q_minus) + 2.0 * c.psi_plus.cwiseMin(c.psi_minus);
    Margins m{};
    m.m1 = v1.minCoeff(&m.i1);
    m.m2 = v2.minCoeff(&m.i2);
    m.m3 = c.gamma.minCoeff(&m.i3);
    return m;
}

}  // namespace

LmiCertificate LmiCertificate::zero(Eigen::Index two_n) {
    LmiCertificate c;
    for (auto f : fields()) c.*f = Vector::Zero(two_n);
    return c;
}

Eigen::Index LmiCertificate::size() const {
    const Eigen::Index m = p.size();
    require_length(q, m, "q");
    require_length(q_plus, m, "q_plus");
    require_length(q_minus, m, "q_minus");
    require_length(z_plus, m, "z_plus");
    require_length(z_minus, m, "z_minus");
    require_length(psi_plus, m, "psi_plus");
    require_length(psi_minus, m, "psi_minus");
    require_length(psi, m, "psi");
    require_length(gamma, m, "gamma");
    return m;
}

Matrix build_upsilon(const PolytopicModel& model, const LmiCertificate& c) {
    const Eigen::Index m = 2 * model.dim();
    require_length(c.p, m, "p");
    c.size();

    const auto ext = extended_system_matrices(model);
    const Matrix& a = ext.a_cal;
    const Matrix& rp = ext.r_plus;
    const Matrix& rm = ext.r_minus;
    const auto dp = c.p.asDiagonal();
    const auto dzp = c.z_plus.asDiagonal();
    const auto dzm = c.z_minus.asDiagonal();

    Matrix b11 = a.transpose() * dp;
    b11 += dp * a;
    b11 += Matrix(c.q.asDiagonal());
    Matrix b12 = a.transpose() * dzp;
    b12 += dp * rp;
    b12 += Matrix(c.psi_plus.asDiagonal());
    Matrix b13 = a.transpose() * dzm;
    b13 += dp * rm;
    b13 += Matrix(c.psi_minus.asDiagonal());
    Matrix b22 = dzp * rp;
    b22 += rp.transpose() * dzp;
    b22 += Matrix(c.q_plus.asDiagonal());
    Matrix b23 = dzp * rm;
    b23 += rp.transpose() * dzm;
    b23 += Matrix(c.psi.asDiagonal());
    Matrix b33 = dzm * rm;
    b33 += rm.transpose() * dzm;
    b33 += Matrix(c.q_minus.asDiagonal());

    Matrix u = Matrix::Zero(4 * m, 4 * m);
    u.block(0, 0, m, m) = b11;
    u.block(0, m, m, m) = b12;
    u.block(m, 0, m, m) = b12.transpose();
    u.block(0, 2 * m, m, m) = b13;
    u.block(2 * m, 0, m, m) = b13.transpose();
    u.block(0, 3 * m, m, m) = Matrix(dp);
    u.block(3 * m, 0, m, m) = Matrix(dp);
    u.block(m, m, m, m) = b22;
    u.block(m, 2 * m, m, m) = b23;
    u.block(2 * m, m, m, m) = b23.transpose();
    u.block(m, 3 * m, m, m) = Matrix(dzp);
    u.block(3 * m, m, m, m) = Matrix(dzp);
    u.block(2 * m, 2 * m, m, m) = b33;
    u.block(2 * m, 3 * m, m, m) = Matrix(dzm);
    u.block(3 * m, 2 * m, m, m) = Matrix(dzm);
    u.block(3 * m, 3 * m, m, m) = Matrix((-c.gamma).asDiagonal());
    return u;
}

CertificateReport check_certificate(const PolytopicModel& model, const LmiCertificate& c,
                                    double tol) {
    const Matrix u = build_upsilon(model, c);
    const Margins m = margins_of(c);
    CertificateReport r;
    r.positivity1_margin = m.m1;
    r.positivity2_margin = m.m2;
    r.gamma_margin = m.m3;
    r.upsilon_max_eig = top_eigenvalue(u);
    r.feasible = m.m1 > 0.0 && m.m2 > 0.0 && m.m3 > 0.0 && r.upsilon_max_eig <= tol;
    return r;
}

double lyapunov_value(const LmiCertificate& c, const IntervalVector& box) {
    const Eigen::Index m = c.size();
    if (2 * box.size() != m) {
        throw DimensionError("lyapunov_value: box dimension " + std::to_string(box.size()) +
                             " does not match certificate length " + std::to_string(m));
    }
    Vector x(m);
    x << box.lower, box.upper;
    const Vector xp = x.cwiseMax(0.0);
    const Vector xm = xp - x;
    double v = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        v += c.p(i) * x(i) * x(i);
        v += c.z_plus(i) * x(i) * xp(i);
        v -= c.z_minus(i) * x(i) * xm(i);
    }
    return v;
}

std::optional<LmiCertificate> search_certificate(const PolytopicModel& model,
                                                 const SearchOptions& options) {
    const Eigen::Index m = 2 * model.dim();
    const Eigen::Index params = 10 * m;

    // Upsilon is linear in the certificate, so precompute its value on each
    // basis vector once; the eigenvalue subgradient is then v' Upsilon_k v.
    std::vector<Matrix> basis;
    basis.reserve(static_cast<size_t>(params));
    for (Eigen::Index k = 0; k < params; ++k) {
        Vector e = Vector::Zero(params);
        e(k) = 1.0;
        basis.push_back(build_upsilon(model, unpack(e, m)));
    }

    // Flat-vector offsets of the ten fields, in pack() order.
    const Eigen::Index at_p = 0, at_q = m, at_qp = 2 * m, at_qm = 3 * m, at_zp = 4 * m,
                       at_zm = 5 * m, at_pp = 6 * m, at_pm = 7 * m, at_gamma = 9 * m;

    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    for (int start = 0; start < options.starts; ++start) {
        Vector c(params);
        if (start == 0) {
            // Neutral deterministic start: identity-like weights.
            c.setZero();
            c.segment(at_p, m).setOnes();
            c.segment(at_q, m).setOnes();
            c.segment(at_zp, m).setConstant(0.5);
            c.segment(at_zm, m).setConstant(0.5);
            c.segment(at_gamma, m).setConstant(10.0);
        } else {
            for (Eigen::Index k = 0; k < params; ++k) c(k) = -1.0 + 2.0 * u01(rng);
            c.segment(at_p, m) = c.segment(at_p, m).cwiseAbs() + Vector::Constant(m, 0.5);
            c.segment(at_gamma, m) = 5.0 * c.segment(at_gamma, m).cwiseAbs() +
                                     Vector::Constant(m, 1.0);
        }

        for (int it = 0; it < options.iterations; ++it) {
            const LmiCertificate cert = unpack(c, m);
            const Margins mg = margins_of(cert);
            const Matrix ups = build_upsilon(model, cert);
            Eigen::SelfAdjointEigenSolver<Matrix> es(ups);
            const Eigen::Index top = 4 * m - 1;
            const double lmax = es.eigenvalues()(top);

            if (mg.m1 > 0.0 && mg.m2 > 0.0 && mg.m3 > 0.0 && lmax <= options.tol) {
                return cert;
            }

            // Subgradient of F = max(lmax, 1 - m1, 1 - m2, 1 - m3).
            Vector g = Vector::Zero(params);
            const double f = std::max({lmax, 1.0 - mg.m1, 1.0 - mg.m2, 1.0 - mg.m3});
            if (f == lmax) {
                const Vector v = es.eigenvectors().col(top);
                for (Eigen::Index k = 0; k < params; ++k) g(k) = v.dot(basis[static_cast<size_t>(k)] * v);
            } else if (f == 1.0 - mg.m1) {
                g(at_p + mg.i1) = -1.0;
                g((cert.z_plus(mg.i1) <= cert.z_minus(mg.i1) ? at_zp : at_zm) + mg.i1) = -1.0;
            } else if (f == 1.0 - mg.m2) {
                g(at_q + mg.i2) = -1.0;
                g((cert.q_plus(mg.i2) <= cert.q_minus(mg.i2) ? at_qp : at_qm) + mg.i2) = -1.0;
                g((cert.psi_plus(mg.i2) <= cert.psi_minus(mg.i2) ? at_pp : at_pm) + mg.i2) = -2.0;
            } else {
                g(at_gamma + mg.i3) = -1.0;
            }

            const double norm = g.norm();
            if (norm == 0.0) break;  // flat subgradient: stuck, try next start
            c -= (1.0 / std::sqrt(it + 1.0)) * (g / norm);
        }
    }
    return std::nullopt;
}

}  // namespace ivp
