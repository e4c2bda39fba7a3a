#pragma once

// Traffic prediction on a straight multi-lane road.
//
// Every vehicle follows a kinematic bicycle model driven by two behavioural
// controllers: a longitudinal acceleration built from three IDM-style
// features (desired speed, relative speed to the front vehicle, safe
// distance) and a cascade lateral controller tracking a lane centerline.
// The controller gains theta_1..theta_5 of each vehicle are unknown but
// bounded, so the coupled fleet dynamics form an LPV system.
//
// This module builds the two LPV embeddings used for prediction:
//   - a joint longitudinal system over [positions; velocities] of all
//     vehicles, linear once the feature gates are frozen at prediction time,
//   - a per-vehicle lateral system in (y - y_L, psi - psi_L), where the
//     velocity appears as an extra uncertain parameter bounded by an overset
//     of the longitudinal prediction.
// Both are shifted by an equilibrium offset Zc, mapped into cooperative
// coordinates with an eigendecomposition, integrated with the interval
// predictors, and mapped back per sample.  A Monte-Carlo simulator of the
// true nonlinear closed loop provides ground truth for validation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ivp/metzler.hpp"
#include "ivp/predictor.hpp"

namespace ivp {

struct VehicleState {
    double x = 0.0;    // longitudinal position (m)
    double y = 0.0;    // lateral position (m)
    double v = 0.0;    // forward velocity (m/s)
    double psi = 0.0;  // heading (rad)
};

// Controller gains: desired-velocity tracking, front-speed braking,
// safe-distance braking, lateral position gain, heading gain.
struct BehaviorParams {
    double theta1 = 0.0;
    double theta2 = 0.0;
    double theta3 = 0.0;
    double theta4 = 0.0;
    double theta5 = 0.0;
};

struct RoadRules {
    double v0 = 25.0;  // speed limit (m/s)
    double d0 = 10.0;  // jam distance (m)
    double T = 1.5;    // time gap (s)
};

struct Lane {
    double y = 0.0;    // centerline lateral position (m)
    double psi = 0.0;  // centerline heading (rad)
};

struct Road {
    std::vector<Lane> lanes;
    double width = 4.0;  // lane width (m)
};

struct Vehicle {
    std::string id;
    VehicleState state;
    BehaviorParams theta_lower;
    BehaviorParams theta_upper;
    std::vector<int> lanes;    // admissible followed-lane hypotheses
    double l = 2.5;            // half-length (m)
    std::optional<int> front;  // index of the vehicle ahead, if any
};

struct Scenario {
    RoadRules rules;
    Road road;
    bool right_hand_traffic = false;  // drivers keep to the rightmost lane
    std::vector<Vehicle> vehicles;
};

// Minimum speed for the lateral embedding; the 1/v term in its system matrix
// blows up below it, and prediction degrades to a constant-heading tube.
inline constexpr double kMinLateralSpeed = 1.0;

// Checks structural invariants (finite states, v >= 0, ordered nonnegative
// parameter boxes, valid lane and front indices).  Throws ValidationError.
void validate_scenario(const Scenario& scenario);

// Kinematic bicycle right-hand side for state (x, y, v, psi) under
// acceleration a and slip angle beta.
Vector bicycle_rhs(const VehicleState& z, double a, double beta, double l);

// IDM-feature acceleration. The braking features only act when negative
// ("active"); without a front vehicle they are absent entirely.
double longitudinal_acceleration(const BehaviorParams& theta, double v,
                                 std::optional<double> v_front, std::optional<double> gap,
                                 const RoadRules& rules);

struct LateralCommand {
    double psi_dot = 0.0;  // commanded heading rate
    double beta = 0.0;     // slip angle realizing it
    bool clamped = false;  // the asin argument was saturated to [-1, 1]
};

// Cascade lane-tracking controller: heading setpoint from the lateral error,
// heading rate from the heading error.  Throws SpeedTooLow below
// kMinLateralSpeed.
LateralCommand lateral_closed_loop(const BehaviorParams& theta, double y, double psi,
                                   const Lane& lane, double v, double l);

// Lateral error-dynamics matrix in (y - y_L, psi - psi_L) for given gains and
// speed.
Matrix lateral_matrix(double theta4, double theta5, double v);

// An uncertain linear system dZ/dt = A(theta)(Z - Zc) + d rewritten in
// cooperative coordinates Z' = S^-1 (Z - Zc): `model` holds the transformed
// polytope, `d_bounds` the transformed input bounds.
struct LpvEmbedding {
    Vector z_center;
    SignalBounds d_bounds;
    PolytopicModel model;
    SimilarityTransform transform;
    std::vector<std::string> coordinate_labels;
};

// Joint longitudinal embedding over [positions; velocities] of all vehicles.
// Feature gates are frozen from the scenario's initial state, the shift Zc
// chains down the front-vehicle graph, and the polytope vertices are the
// corners of the box of active (gated-in, nonzero-width) parameters.
// Throws CyclicFollowing on a front-index cycle and ValidationError if the
// corner count exceeds 2^12.
LpvEmbedding build_longitudinal_embedding(const Scenario& scenario);

// Per-vehicle lateral embedding around a lane, with the speed treated as an
// extra parameter in v_bounds and the coupling theta4*theta5/v bounded by
// corner evaluation and then treated as independent.  Throws SpeedTooLow if
// v_bounds dips below kMinLateralSpeed.
LpvEmbedding build_lateral_embedding(const Vehicle& vehicle, const Lane& lane,
                                     const IntervalVector& v_bounds);

struct VehiclePrediction {
    std::string id;
    std::vector<int> lanes;                      // lane hypotheses actually used
    std::vector<IntervalTrajectory> lane_tubes;  // (x, y, v, psi) tube per lane
    IntervalTrajectory tube;                     // union hull over hypotheses
    bool lateral_fallback = false;               // constant-heading tube was used
};

struct HighwayPrediction {
    Method method = Method::Stable;
    std::vector<VehiclePrediction> vehicles;
};

// Full pipeline: longitudinal embedding -> interval integration in
// transformed coordinates -> back-transform, then per-vehicle lateral
// embeddings for every admissible lane hypothesis using the predicted
// velocity overset.  Naive tubes that overflow are truncated and flagged.
HighwayPrediction predict_highway(const Scenario& scenario, double horizon, double dt,
                                  Method method);

struct TruthTrajectory {
    std::vector<double> times;
    std::vector<std::vector<Vector>> states;  // [sample][vehicle] -> (x, y, v, psi)
    std::vector<int> lanes;                   // lane followed by each vehicle
};

// Simulates the true nonlinear closed loop (bicycle + IDM features + cascade
// steering) with gains drawn uniformly from each vehicle's box, resampled
// every resample_period (<= 0 keeps them constant), and one admissible lane
// per vehicle held for the horizon.  RK4 with the same dt as the predictors;
// deterministic under seed.  Honors IVP_THREADS for sample parallelism
// without affecting results.
std::vector<TruthTrajectory> monte_carlo_truth(const Scenario& scenario, double horizon,
                                               double dt, int samples, double resample_period,
                                               std::uint64_t seed);

// Lane hypotheses after the right-hand-traffic restriction: drivers on lane k
// only consider lanes with index <= k (never a lane to their left).  Exposed
// for tests and the truth simulator; returns `vehicle.lanes` untouched when
// the restriction is off.
std::vector<int> admissible_lanes(const Scenario& scenario, const Vehicle& vehicle);

}  // namespace ivp
