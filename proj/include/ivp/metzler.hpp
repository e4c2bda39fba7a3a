#pragma once

// Similarity transforms onto cooperative (Metzler) coordinates.
//
// A Metzler matrix has nonnegative off-diagonal entries; linear systems with
// such a state matrix preserve componentwise ordering of solutions, which is
// what makes the interval predictors in this library tight. Two routes are
// provided:
//
//   eigendecomposition_transform  diagonalise a single known matrix
//   lemma3_transform              one orthogonal S for a whole symmetric
//                                 interval family [Da - Delta, Da + Delta]

#include "ivp/interval.hpp"

namespace ivp {

struct SimilarityTransform {
    Matrix s;                   // change of basis, new coords z = s_inv * x
    Matrix s_inv;
    Matrix transformed_center;  // s_inv * A * s for the centre matrix
};

// True iff a[i][j] >= -tol for all i != j. Throws on non-square input.
bool is_metzler(const Matrix& a, double tol = 0.0);

// Diagonalising transform for a real-diagonalisable matrix. Eigenvalues are
// sorted descending; eigenvectors have unit norm and the sign convention that
// the largest-magnitude component is positive. Throws NotRealDiagonalisable
// when eigenvalues have imaginary parts above 1e-9 * ||a0||_2, and
// IllConditioned when cond of the eigenvector matrix exceeds 1e12.
SimilarityTransform eigendecomposition_transform(const Matrix& a0);

// Orthogonal S with S^T D S Metzler for EVERY D in [da - delta, da + delta],
// da symmetric, delta nonnegative. Requires mu > n * max|delta| (else
// MuTooSmall). Internally finds a diagonal upsilon such that
// Y = mu * ones - diag(upsilon) has the same spectrum as da; if that inverse
// eigenvalue problem has no solution, throws SpectrumMatchFailure.
SimilarityTransform lemma3_transform(const Matrix& da, const Matrix& delta, double mu);

}  // namespace ivp
