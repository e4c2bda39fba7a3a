#include "ivp/metzler.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace ivp {

namespace {

// Flip column signs so the largest-magnitude component is positive; ties go
// to the first such component. Keeps the output deterministic across runs.
void fix_column_signs(Matrix& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            const double mag = std::abs(m(r, c));
            if (mag > best) {
                best = mag;
                imax = r;
            }
        }
        if (m(imax, c) < 0.0) m.col(c) *= -1.0;
    }
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

// Eigenvalues of a symmetric matrix, sorted descending, with the matching
// sign-fixed orthonormal eigenvector columns.
std::pair<Vector, Matrix> symmetric_eigs_desc(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success) {
        throw Error("symmetric eigendecomposition did not converge");
    }
    const Eigen::Index n = m.rows();
    Vector vals(n);
    Matrix vecs(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {  // Eigen sorts ascending
        vals(i) = es.eigenvalues()(n - 1 - i);
        vecs.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    fix_column_signs(vecs);
    return {std::move(vals), std::move(vecs)};
}

}  // namespace

bool is_metzler(const Matrix& a, double tol) {
    if (a.rows() != a.cols()) {
        throw DimensionError("is_metzler: matrix must be square");
    }
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (i != j && a(i, j) < -tol) return false;
        }
    }
    return true;
}

SimilarityTransform eigendecomposition_transform(const Matrix& a0) {
    if (a0.rows() != a0.cols()) {
        throw DimensionError("eigendecomposition_transform: matrix must be square");
    }
    const Eigen::Index n = a0.rows();
    Eigen::EigenSolver<Matrix> es(a0);
    if (es.info() != Eigen::Success) {
        throw Error("eigendecomposition did not converge");
    }

    const double imag_tol = 1e-9 * spectral_norm(a0);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(es.eigenvalues()(i).imag()) > imag_tol) {
            throw NotRealDiagonalisable(
                "eigendecomposition_transform: complex eigenvalue pair present");
        }
    }

    Vector vals = es.eigenvalues().real();
    Matrix vecs = es.eigenvectors().real();

    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return vals(a) > vals(b); });

    Matrix s(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector col = vecs.col(order[i]);
        const double nrm = col.norm();
        if (!(nrm > 0.0)) {
            throw IllConditioned("eigendecomposition_transform: zero eigenvector");
        }
        s.col(i) = col / nrm;
    }
    fix_column_signs(s);

    Eigen::JacobiSVD<Matrix> svd(s);
    const double smin = svd.singularValues()(n - 1);
    const double smax = svd.singularValues()(0);
    if (!(smin > 0.0) || smax / smin > 1e12) {
        throw IllConditioned(
            "eigendecomposition_transform: eigenvector matrix condition number exceeds 1e12 "
            "(matrix is defective or nearly so)");
    }

    SimilarityTransform t;
    t.s = s;
    t.s_inv = s.inverse();
    t.transformed_center = t.s_inv * a0 * s;
    return t;
}

SimilarityTransform lemma3_transform(const Matrix& da, const Matrix& delta, double mu) {
    if (da.rows() != da.cols()) {
        throw DimensionError("lemma3_transform: da must be square");
    }
    if (delta.rows() != da.rows() || delta.cols() != da.cols()) {
        throw DimensionError("lemma3_transform: delta shape must match da");
    }
    const Eigen::Index n = da.rows();
    const double scale = da.cwiseAbs().maxCoeff();
    if ((da - da.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, scale)) {
        throw ValidationError("lemma3_transform: da must be symmetric");
    }
    if (delta.minCoeff() < 0.0) {
        throw ValidationError("lemma3_transform: delta must be elementwise nonnegative");
    }
    if (!(mu > static_cast<double>(n) * delta.cwiseAbs().maxCoeff())) {
        throw MuTooSmall("lemma3_transform: need mu > n * max|delta|");
    }

    auto [target, u] = symmetric_eigs_desc(da);

    // Find diagonal upsilon with eig(mu*ones - diag(upsilon)) == eig(da), by
    // damped Newton on the sorted-eigenvalue residual. The derivative of the
    // k-th eigenvalue w.r.t. upsilon_i is -w_k(i)^2 for eigenvector w_k.
    const Matrix ones = Matrix::Ones(n, n);
    const double conv_tol = 1e-11 * std::max(1.0, target.cwiseAbs().maxCoeff());
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);

    Vector upsilon;
    Vector yvals;
    Matrix w;
    bool converged = false;
    for (int restart = 0; restart < 6 && !converged; ++restart) {
        upsilon = Vector::Constant(n, mu * static_cast<double>(n)) - target;
        if (restart > 0) {
            for (Eigen::Index i = 0; i < n; ++i) {
                upsilon(i) += jitter(rng) * std::max(1.0, scale);
            }
        }
        double resid = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 200; ++iter) {
            Matrix y = mu * ones - Matrix(upsilon.asDiagonal());
            std::tie(yvals, w) = symmetric_eigs_desc(y);
            Vector f = yvals - target;
            resid = f.cwiseAbs().maxCoeff();
            if (resid <= conv_tol) {
                converged = true;
                break;
            }
            Matrix jac(n, n);
            for (Eigen::Index k = 0; k < n; ++k) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    jac(k, i) = -w(i, k) * w(i, k);
                }
            }
            Vector step = jac.colPivHouseholderQr().solve(f);
            if (!step.allFinite()) break;
            double alpha = 1.0;
            bool improved = false;
            for (int bt = 0; bt < 30; ++bt) {
                Vector trial = upsilon - alpha * step;
                Matrix yt = mu * ones - Matrix(trial.asDiagonal());
                auto [tv, tw] = symmetric_eigs_desc(yt);
                if ((tv - target).cwiseAbs().maxCoeff() < resid) {
                    upsilon = trial;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!improved) break;  // stalled; try a jittered restart
        }
    }
    if (!converged) {
        throw SpectrumMatchFailure(
            "lemma3_transform: no diagonal upsilon found whose mu*ones - diag(upsilon) "
            "matches the spectrum of da (the inverse eigenvalue problem may be infeasible "
            "for this mu)");
    }

    // With matching spectra, S = U W^T maps da onto Y = mu*ones - diag(upsilon):
    // S^T da S = W U^T da U W^T = W diag(lambda) W^T = Y, Metzler by construction.
    // Any D in [da-delta, da+delta] perturbs off-diagonals by at most
    // n*max|delta| < mu, so S^T D S stays Metzler.
    Matrix y = mu * ones - Matrix(upsilon.asDiagonal());
    std::tie(yvals, w) = symmetric_eigs_desc(y);
    SimilarityTransform t;
    t.s = u * w.transpose();
    t.s_inv = t.s.transpose();
    t.transformed_center = t.s_inv * da * t.s;
    return t;
}

}  // namespace ivp
