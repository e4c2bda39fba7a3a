#pragma once

// Stability certificates for the tight predictor.
//
// Stacking the lower and upper bound trajectories into X = (lower; upper)
// turns the tight predictor into a piecewise-linear comparison system
//
//     dX/dt = A X + R+ X^+ - R- X^- + delta,
//
// with the stacked matrices produced by extended_system_matrices().  A
// certificate is a set of ten diagonal weight vectors defining the candidate
// Lyapunov function
//
//     V(X) = X' P X + X' Z+ X^+ - X' Z- X^-
//
// together with dissipation weights.  Feasibility of one linear matrix
// inequality plus three elementwise positivity conditions proves V is
// positive definite and decays along trajectories up to an input-dependent
// offset, i.e. the predictor is input-to-state stable.  check_certificate
// evaluates those conditions exactly for a given candidate; search_certificate
// looks for a candidate by minimising a convex max-penalty with a projected
// subgradient method (the feasible set is convex, so any local descent that
// reaches a negative penalty is a proof).

#include <optional>

#include "ivp/predictor.hpp"

namespace ivp {

// Ten diagonal weight vectors, each of length 2n for an n-state model.  The
// first block of each vector weighs the lower bound, the second the upper.
struct LmiCertificate {
    Vector p;
    Vector q;
    Vector q_plus;
    Vector q_minus;
    Vector z_plus;
    Vector z_minus;
    Vector psi_plus;
    Vector psi_minus;
    Vector psi;
    Vector gamma;

    static LmiCertificate zero(Eigen::Index two_n);

    // Common length of the ten vectors; throws DimensionError if they differ.
    Eigen::Index size() const;
};

// Outcome of evaluating a candidate certificate.  The three margins are the
// smallest slack of each elementwise positivity condition (must be > 0) and
// upsilon_max_eig is the largest eigenvalue of the certificate matrix (must
// be <= tol).
struct CertificateReport {
    double positivity1_margin = 0.0;
    double positivity2_margin = 0.0;
    double gamma_margin = 0.0;
    double upsilon_max_eig = 0.0;
    bool feasible = false;
};

// Assembles the symmetric 8n x 8n certificate matrix for the stacked
// comparison system of `model` under certificate `c`.  Linear in `c`.
Matrix build_upsilon(const PolytopicModel& model, const LmiCertificate& c);

// Evaluates the positivity margins and the top eigenvalue of the certificate
// matrix.  `tol` is the acceptance threshold for the eigenvalue: a candidate
// counts as feasible when every margin is strictly positive and the top
// eigenvalue does not exceed `tol`.
CertificateReport check_certificate(const PolytopicModel& model, const LmiCertificate& c,
                                    double tol = 1e-8);

// Lyapunov function value V(X) for the stacked state X = (lower; upper).
double lyapunov_value(const LmiCertificate& c, const IntervalVector& box);

struct SearchOptions {
    int starts = 8;        // independent random restarts
    int iterations = 2000;  // subgradient steps per start
    std::uint64_t seed = 0;
    double tol = 1e-8;  // eigenvalue acceptance threshold, as in check_certificate
};

// Searches for a feasible certificate by subgradient descent on
//   F(c) = max(lambda_max(Upsilon(c)), 1 - margin1, 1 - margin2, 1 - margin3).
// F is convex (max of a top-eigenvalue and affine terms), so F(c) < 0 at any
// iterate is a certificate of feasibility with unit margin.  Returns the
// first candidate that passes check_certificate, or nullopt if every start
// is exhausted; nullopt means no certificate was found, not a proof that
// none exists.
std::optional<LmiCertificate> search_certificate(const PolytopicModel& model,
                                                 const SearchOptions& options = {});

}  // namespace ivp
