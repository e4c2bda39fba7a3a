#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "doctest.h"
#include "ivp/errors.hpp"
#include "ivp/highway.hpp"

using namespace ivp;

namespace {

// Independent reconstruction of the gated car-following matrix for a follower
// "a" (index 0) behind a leader "b" (index 1), state order (x_a, x_b, v_a,
// v_b).  Both braking features of the follower are taken as active.
Matrix hand_following_matrix(double t1a, double t2a, double t3a, double t1b, double headway) {
    Matrix a = Matrix::Zero(4, 4);
    a(0, 2) = 1.0;
    a(1, 3) = 1.0;
    a(2, 0) = -t3a;
    a(2, 1) = t3a;
    a(2, 2) = -t1a - t2a - t3a * headway;
    a(2, 3) = t2a;
    a(3, 3) = -t1b;
    return a;
}

Vehicle make_vehicle(std::string id, double x, double v, std::optional<int> front,
                     const double lower[5], const double upper[5]) {
    Vehicle veh;
    veh.id = std::move(id);
    veh.state = VehicleState{x, 0.0, v, 0.0};
    veh.front = front;
    veh.lanes = {0};
    veh.theta_lower = BehaviorParams{lower[0], lower[1], lower[2], lower[3], lower[4]};
    veh.theta_upper = BehaviorParams{upper[0], upper[1], upper[2], upper[3], upper[4]};
    return veh;
}

// The scenario shipped with the command-line tool: a fast follower closing in
// on a leader that already drives at the set speed.
Scenario bundled_scenario() {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}, Lane{4.0, 0.0}};
    const double lo[5] = {0.48, 2.95, 0.4925, 0.74, 4.95};
    const double hi[5] = {0.52, 3.05, 0.5075, 0.76, 5.05};
    s.vehicles.push_back(make_vehicle("a", 0.0, 29.0, 1, lo, hi));
    s.vehicles.push_back(make_vehicle("b", 48.5, 25.0, std::nullopt, lo, hi));
    return s;
}

// Classic RK4 on a generic vector field, fixed step.
template <typename F>
Vector rk4_step(const F& f, const Vector& z, double t, double dt) {
    const Vector k1 = f(t, z);
    const Vector k2 = f(t + 0.5 * dt, z + 0.5 * dt * k1);
    const Vector k3 = f(t + 0.5 * dt, z + 0.5 * dt * k2);
    const Vector k4 = f(t + dt, z + dt * k3);
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

bool same_vector(const Vector& a, const Vector& b) {
    return a.size() == b.size() && (a.array() == b.array()).all();
}

int count_tube_exits(const IntervalTrajectory& tube, Eigen::Index coord,
                     const std::vector<double>& truth, double abs_slack, double rel_slack) {
    int exits = 0;
    const size_t n = std::min(tube.states.size(), truth.size());
    for (size_t k = 0; k < n; ++k) {
        const double slack = abs_slack + rel_slack * std::abs(truth[k]);
        if (truth[k] < tube.states[k].lower(coord) - slack ||
            truth[k] > tube.states[k].upper(coord) + slack) {
            ++exits;
        }
    }
    return exits;
}

}  // namespace

TEST_CASE("vehicle kinematics and acceleration match hand-computed closed forms") {
    const Vector dz = bicycle_rhs(VehicleState{5.0, -1.0, 10.0, 0.3}, 1.2, 0.1, 2.5);
    CHECK(dz(0) == doctest::Approx(9.55336489125606).epsilon(1e-15));
    CHECK(dz(1) == doctest::Approx(2.9552020666133956).epsilon(1e-15));
    CHECK(dz(2) == 1.2);
    CHECK(dz(3) == doctest::Approx(0.4013386883418022).epsilon(1e-15));
    CHECK_THROWS_AS(bicycle_rhs(VehicleState{}, 0.0, 0.0, 0.0), ValidationError);

    const RoadRules rules{25.0, 10.0, 1.5};
    const BehaviorParams theta{0.5, 1.0, 0.1, 0.0, 0.0};
    // Free road: only the set-speed term acts.
    CHECK(longitudinal_acceleration(theta, 20.0, std::nullopt, std::nullopt, rules) == 2.5);
    // Slower lead vehicle inside the safe distance: both braking terms fire.
    // 0.5*5 + 1.0*(18-20) + 0.1*(35 - 10 - 1.5*20) = 2.5 - 2 - 0.5.
    CHECK(longitudinal_acceleration(theta, 20.0, 18.0, 35.0, rules) == doctest::Approx(0.0).epsilon(1e-15));
    // Faster lead vehicle far ahead: both features saturate at zero.
    CHECK(longitudinal_acceleration(theta, 20.0, 25.0, 500.0, rules) == 2.5);
    CHECK_THROWS_AS(longitudinal_acceleration(theta, 20.0, 18.0, std::nullopt, rules),
                    ValidationError);
}

TEST_CASE("lateral control clamps the arcsine argument and respects the speed floor") {
    const BehaviorParams theta{0.0, 0.0, 0.0, 1.0, 2.0};
    const LateralCommand cmd = lateral_closed_loop(theta, 0.0, 0.0, Lane{2.0, 0.0}, 10.0, 2.5);
    CHECK(cmd.psi_dot == doctest::Approx(0.4027158415806616).epsilon(1e-15));
    CHECK(cmd.beta == doctest::Approx(0.10034084521757816).epsilon(1e-15));
    CHECK_FALSE(cmd.clamped);

    // Far off the lane centre the arcsine argument saturates at 1.
    const LateralCommand hard = lateral_closed_loop(theta, -18.0, 0.0, Lane{2.0, 0.0}, 10.0, 2.5);
    CHECK(hard.clamped);
    CHECK(hard.psi_dot == doctest::Approx(3.141592653589793).epsilon(1e-15));
    CHECK(hard.beta == doctest::Approx(0.6657737500283538).epsilon(1e-15));

    CHECK_THROWS_AS(lateral_closed_loop(theta, 0.0, 0.0, Lane{2.0, 0.0}, 0.5, 2.5), SpeedTooLow);

    Matrix a = lateral_matrix(1.0, 2.0, 20.0);
    CHECK(a(0, 0) == 0.0);
    CHECK(a(0, 1) == 20.0);
    CHECK(a(1, 0) == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(a(1, 1) == -2.0);
    CHECK_THROWS_AS(lateral_matrix(1.0, 2.0, 0.2), SpeedTooLow);
}

TEST_CASE("scenario validation rejects ill-formed inputs") {
    const double lo[5] = {0.4, 0.9, 0.1, 0.7, 4.0};
    const double hi[5] = {0.6, 1.1, 0.2, 0.8, 5.0};
    Scenario good;
    good.rules = RoadRules{25.0, 10.0, 1.5};
    good.road.lanes = {Lane{0.0, 0.0}};
    good.vehicles.push_back(make_vehicle("a", 0.0, 20.0, std::nullopt, lo, hi));
    CHECK_NOTHROW(validate_scenario(good));

    Scenario s = good;
    s.road.lanes.clear();
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.road.width = 0.0;
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles.clear();
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].lanes = {1};  // only lane 0 exists
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].lanes.clear();
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].theta_lower.theta2 = 1.5;  // above the upper bound
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].theta_lower.theta1 = -0.1;
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].state.v = -1.0;
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].front = 0;  // itself
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles[0].front = 3;
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);

    s = good;
    s.vehicles.push_back(s.vehicles[0]);  // duplicate id
    CHECK_THROWS_AS(validate_scenario(s), ValidationError);
}

TEST_CASE("longitudinal embedding reproduces the frozen car-following structure") {
    // Pinned parameters (zero-width boxes) and unit headway constant, so the
    // embedding must reproduce the hand-built matrix exactly up to the
    // similarity round trip.
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.0};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double tha[5] = {0.5, 1.0, 0.2, 0.75, 5.0};
    const double thb[5] = {0.4, 0.7, 0.1, 0.75, 5.0};
    // Leader slower and gap below the safe distance: both gates active.
    s.vehicles.push_back(make_vehicle("a", 0.0, 23.0, 1, tha, tha));
    s.vehicles.push_back(make_vehicle("b", 20.0, 22.0, std::nullopt, thb, thb));

    const LpvEmbedding emb = build_longitudinal_embedding(s);
    const Matrix reconstructed = emb.transform.s * emb.model.a0 * emb.transform.s_inv;
    const Matrix expected = hand_following_matrix(0.5, 1.0, 0.2, 0.4, 1.0);
    CHECK((reconstructed - expected).cwiseAbs().maxCoeff() < 1e-9);

    // A pinned box yields the single zero vertex.
    REQUIRE(emb.model.deltas.size() == 1);
    CHECK(emb.model.deltas[0].cwiseAbs().maxCoeff() < 1e-9);

    // Equilibrium: leader at the origin, follower one safe distance behind,
    // both at the set speed.
    REQUIRE(emb.z_center.size() == 4);
    CHECK(emb.z_center(0) == doctest::Approx(-35.0).epsilon(1e-15));
    CHECK(emb.z_center(1) == 0.0);
    CHECK(emb.z_center(2) == 25.0);
    CHECK(emb.z_center(3) == 25.0);

    // The constant input, mapped back to original coordinates, feeds the set
    // speed into both position rows.
    const IntervalVector d0 = emb.d_bounds.at(0.0);
    CHECK((d0.upper - d0.lower).cwiseAbs().maxCoeff() < 1e-12);
    const Vector d_orig = emb.transform.s * d0.lower;
    CHECK(d_orig(0) == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(d_orig(1) == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(std::abs(d_orig(2)) < 1e-9);
    CHECK(std::abs(d_orig(3)) < 1e-9);

    REQUIRE(emb.coordinate_labels.size() == 4);
    CHECK(emb.coordinate_labels[0] == "a:x");
    CHECK(emb.coordinate_labels[1] == "b:x");
    CHECK(emb.coordinate_labels[2] == "a:v");
    CHECK(emb.coordinate_labels[3] == "b:v");
}

TEST_CASE("braking features are gated by the initial state") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.0};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double lo[5] = {0.45, 0.9, 0.15, 0.75, 5.0};
    const double hi[5] = {0.55, 1.1, 0.25, 0.75, 5.0};
    // Leader faster and far ahead: both braking features are inactive, so
    // only the two set-speed gains stay uncertain.
    s.vehicles.push_back(make_vehicle("a", 0.0, 23.0, 1, lo, hi));
    s.vehicles.push_back(make_vehicle("b", 100.0, 24.0, std::nullopt, lo, hi));

    const LpvEmbedding emb = build_longitudinal_embedding(s);
    REQUIRE(emb.model.deltas.size() == 4);

    std::vector<double> own_gain;
    for (const Matrix& delta : emb.model.deltas) {
        const Matrix vertex =
            emb.transform.s * (emb.model.a0 + delta) * emb.transform.s_inv;
        // Gated-out features leave no coupling to the leader.
        CHECK(std::abs(vertex(2, 3)) < 1e-9);
        CHECK(std::abs(vertex(2, 1)) < 1e-9);
        CHECK(std::abs(vertex(2, 0)) < 1e-9);
        own_gain.push_back(vertex(2, 2));
    }
    std::sort(own_gain.begin(), own_gain.end());
    // Corner values of -theta1 appear twice each (leader corner varies too).
    CHECK(own_gain[0] == doctest::Approx(-0.55).epsilon(1e-9));
    CHECK(own_gain[1] == doctest::Approx(-0.55).epsilon(1e-9));
    CHECK(own_gain[2] == doctest::Approx(-0.45).epsilon(1e-9));
    CHECK(own_gain[3] == doctest::Approx(-0.45).epsilon(1e-9));
}

TEST_CASE("isolated vehicle embedding is already cooperative") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double th[5] = {0.5, 1.0, 0.2, 0.75, 5.0};
    s.vehicles.push_back(make_vehicle("a", 7.0, 21.0, std::nullopt, th, th));

    const LpvEmbedding emb = build_longitudinal_embedding(s);
    // Eigenvalues 0 (position) and -theta1, ordered descending.
    CHECK((emb.model.a0 - (Matrix(2, 2) << 0.0, 0.0, 0.0, -0.5).finished())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK(is_metzler(emb.model.a0, 1e-12));
}

TEST_CASE("cyclic front-vehicle references are rejected") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double th[5] = {0.5, 1.0, 0.2, 0.75, 5.0};
    s.vehicles.push_back(make_vehicle("a", 0.0, 23.0, 1, th, th));
    s.vehicles.push_back(make_vehicle("b", 20.0, 22.0, 0, th, th));
    CHECK_THROWS_AS(build_longitudinal_embedding(s), CyclicFollowing);
}

TEST_CASE("too many uncertain parameters are rejected") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double lo[5] = {0.45, 0.9, 0.15, 0.75, 5.0};
    const double hi[5] = {0.55, 1.1, 0.25, 0.75, 5.0};
    for (int i = 0; i < 13; ++i) {
        s.vehicles.push_back(make_vehicle("v" + std::to_string(i), 30.0 * i, 20.0,
                                          std::nullopt, lo, hi));
    }
    CHECK_THROWS_AS(build_longitudinal_embedding(s), ValidationError);
}

TEST_CASE("longitudinal tubes contain piecewise-constant parameter realisations") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double loa[5] = {0.45, 0.9, 0.15, 0.75, 5.0};
    const double hia[5] = {0.55, 1.1, 0.25, 0.75, 5.0};
    const double lob[5] = {0.38, 0.5, 0.05, 0.75, 5.0};
    const double hib[5] = {0.42, 1.5, 0.20, 0.75, 5.0};
    s.vehicles.push_back(make_vehicle("a", 0.0, 23.0, 1, loa, hia));
    s.vehicles.push_back(make_vehicle("b", 30.0, 22.0, std::nullopt, lob, hib));

    const double horizon = 2.0, dt = 0.01, slot = 0.1;
    const Vector zc = (Vector(4) << -47.5, 0.0, 25.0, 25.0).finished();
    const Vector input = (Vector(4) << 25.0, 25.0, 0.0, 0.0).finished();
    const Vector z_start = (Vector(4) << 0.0, 30.0, 23.0, 22.0).finished();

    for (Method method : {Method::Stable, Method::Naive}) {
        const HighwayPrediction pred = predict_highway(s, horizon, dt, method);
        REQUIRE(pred.vehicles.size() == 2);

        std::mt19937_64 rng(method == Method::Stable ? 91u : 92u);
        int exits = 0;
        for (int draw = 0; draw < 40; ++draw) {
            auto theta = [&rng](double lo, double hi) {
                return std::uniform_real_distribution<double>(lo, hi)(rng);
            };
            Matrix a;
            Vector z = z_start;
            std::vector<std::array<double, 4>> path{{z(0), z(1), z(2), z(3)}};
            const long steps = std::lround(horizon / dt);
            for (long k = 0; k < steps; ++k) {
                const double t = static_cast<double>(k) * dt;
                if (k % std::lround(slot / dt) == 0) {
                    a = hand_following_matrix(theta(loa[0], hia[0]), theta(loa[1], hia[1]),
                                              theta(loa[2], hia[2]), theta(lob[0], hib[0]),
                                              s.rules.T);
                }
                z = rk4_step([&](double, const Vector& zz) { return (a * (zz - zc) + input).eval(); },
                             z, t, dt);
                path.push_back({z(0), z(1), z(2), z(3)});
            }
            // Vehicle tubes expose (x, y, v, psi); compare x and v of both.
            const struct { int vehicle; Eigen::Index tube_coord; int joint; } map[4] = {
                {0, 0, 0}, {1, 0, 1}, {0, 2, 2}, {1, 2, 3}};
            for (const auto& m : map) {
                std::vector<double> truth(path.size());
                for (size_t k = 0; k < path.size(); ++k)
                    truth[k] = path[k][static_cast<size_t>(m.joint)];
                exits += count_tube_exits(pred.vehicles[static_cast<size_t>(m.vehicle)].tube,
                                          m.tube_coord, truth, 1e-6, 0.0);
            }
        }
        CHECK(exits == 0);
    }
}

TEST_CASE("lateral tubes contain varying-speed realisations") {
    const double lo[5] = {0.5, 1.0, 0.2, 0.74, 4.95};
    const double hi[5] = {0.5, 1.0, 0.2, 0.76, 5.05};
    const Vehicle veh = make_vehicle("c", 0.0, 24.0, std::nullopt, lo, hi);
    const Lane lane{0.0, 0.02};
    const double vlo = 23.5, vhi = 24.5;
    const IntervalVector v_bounds((Vector(1) << vlo).finished(), (Vector(1) << vhi).finished());
    const LpvEmbedding emb = build_lateral_embedding(veh, lane, v_bounds);

    const double horizon = 2.0, dt = 0.01, slot = 0.1;
    const Vector z_start = (Vector(2) << 1.2, 0.01).finished();

    for (Method method : {Method::Stable, Method::Naive}) {
        const Vector z0t = emb.transform.s_inv * (z_start - emb.z_center);
        const IntervalTrajectory tube = integrate(emb.model, method, IntervalVector::point(z0t),
                                                  emb.d_bounds, horizon, dt);
        std::vector<IntervalVector> back;
        for (const IntervalVector& st : tube.states) {
            IntervalVector z = mul_const_interval(emb.transform.s, st);
            z.lower += emb.z_center;
            z.upper += emb.z_center;
            back.push_back(std::move(z));
        }

        std::mt19937_64 rng(method == Method::Stable ? 17u : 18u);
        int exits = 0;
        for (int draw = 0; draw < 30; ++draw) {
            double v = 24.0, t4 = 0.75, t5 = 5.0;
            Vector z = z_start;
            std::vector<Vector> path{z};
            const long steps = std::lround(horizon / dt);
            for (long k = 0; k < steps; ++k) {
                if (k % std::lround(slot / dt) == 0) {
                    v = std::uniform_real_distribution<double>(vlo, vhi)(rng);
                    t4 = std::uniform_real_distribution<double>(lo[3], hi[3])(rng);
                    t5 = std::uniform_real_distribution<double>(lo[4], hi[4])(rng);
                }
                const Matrix a = lateral_matrix(t4, t5, v);
                const Vector inp = (Vector(2) << v * lane.psi, 0.0).finished();
                const Vector zc = (Vector(2) << lane.y, lane.psi).finished();
                z = rk4_step([&](double, const Vector& zz) { return (a * (zz - zc) + inp).eval(); },
                             z, 0.0, dt);
                path.push_back(z);
            }
            for (Eigen::Index c = 0; c < 2; ++c) {
                std::vector<double> truth(path.size());
                for (size_t k = 0; k < path.size(); ++k) truth[k] = path[k](c);
                IntervalTrajectory wrapped;
                wrapped.states = back;
                exits += count_tube_exits(wrapped, c, truth, 1e-6, 0.0);
            }
        }
        CHECK(exits == 0);
    }
}

TEST_CASE("speed oversets below the floor fall back to a constant-heading tube") {
    Scenario s;
    s.rules = RoadRules{0.5, 10.0, 1.5};  // crawling set speed
    s.road.lanes = {Lane{0.0, 0.0}};
    const double lo[5] = {0.45, 1.0, 0.2, 0.75, 5.0};
    const double hi[5] = {0.55, 1.0, 0.2, 0.75, 5.0};
    Vehicle veh = make_vehicle("slow", 0.0, 0.6, std::nullopt, lo, hi);
    veh.state.y = 1.0;
    veh.state.psi = 0.3;
    s.vehicles.push_back(veh);

    const HighwayPrediction pred = predict_highway(s, 1.0, 0.01, Method::Stable);
    REQUIRE(pred.vehicles.size() == 1);
    const VehiclePrediction& vp = pred.vehicles[0];
    CHECK(vp.lateral_fallback);
    CHECK(vp.lanes.empty());
    CHECK(vp.lane_tubes.empty());
    REQUIRE_FALSE(vp.tube.states.empty());

    // Recover the velocity overset from the tube itself and check the
    // straight-line bound on y; the heading stays pinned.
    double vmin = vp.tube.states[0].lower(2), vmax = vp.tube.states[0].upper(2);
    for (const IntervalVector& st : vp.tube.states) {
        vmin = std::min(vmin, st.lower(2));
        vmax = std::max(vmax, st.upper(2));
    }
    CHECK(vmin < kMinLateralSpeed);
    const double sine = std::sin(0.3);
    for (size_t k = 0; k < vp.tube.states.size(); ++k) {
        const double t = vp.tube.times[k];
        CHECK(vp.tube.states[k].lower(1) ==
              doctest::Approx(1.0 + t * std::min(sine * vmin, sine * vmax)).epsilon(1e-12));
        CHECK(vp.tube.states[k].upper(1) ==
              doctest::Approx(1.0 + t * std::max(sine * vmin, sine * vmax)).epsilon(1e-12));
        CHECK(vp.tube.states[k].lower(3) == 0.3);
        CHECK(vp.tube.states[k].upper(3) == 0.3);
    }
}

TEST_CASE("highway prediction contains the nonlinear closed loop") {
    const Scenario s = bundled_scenario();
    const double horizon = 2.0, dt = 0.01;
    const HighwayPrediction pred = predict_highway(s, horizon, dt, Method::Stable);
    REQUIRE(pred.vehicles.size() == 2);

    const auto truths = monte_carlo_truth(s, horizon, dt, 40, 0.2, 7u);
    REQUIRE(truths.size() == 40);
    int exits = 0;
    for (const TruthTrajectory& run : truths) {
        REQUIRE(run.times.size() == pred.vehicles[0].tube.times.size());
        for (size_t veh = 0; veh < 2; ++veh) {
            for (Eigen::Index c = 0; c < 4; ++c) {
                std::vector<double> truth(run.states.size());
                for (size_t k = 0; k < run.states.size(); ++k) truth[k] = run.states[k][veh](c);
                exits += count_tube_exits(pred.vehicles[veh].tube, c, truth, 1e-3, 1e-3);
            }
        }
    }
    CHECK(exits == 0);
}

TEST_CASE("monte carlo sampling is deterministic in the seed") {
    const Scenario s = bundled_scenario();
    const auto a = monte_carlo_truth(s, 0.5, 0.01, 6, 0.2, 42u);
    const auto b = monte_carlo_truth(s, 0.5, 0.01, 6, 0.2, 42u);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].states.size() == b[i].states.size());
        CHECK(a[i].lanes == b[i].lanes);
        for (size_t k = 0; k < a[i].states.size(); ++k) {
            for (size_t veh = 0; veh < a[i].states[k].size(); ++veh) {
                CHECK(same_vector(a[i].states[k][veh], b[i].states[k][veh]));
            }
        }
    }

    // Thread count must not change the draws: slot i always uses seed(i).
    setenv("IVP_THREADS", "3", 1);
    const auto c = monte_carlo_truth(s, 0.5, 0.01, 6, 0.2, 42u);
    unsetenv("IVP_THREADS");
    bool identical = true;
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t k = 0; k < a[i].states.size(); ++k) {
            for (size_t veh = 0; veh < a[i].states[k].size(); ++veh) {
                identical = identical && same_vector(a[i].states[k][veh], c[i].states[k][veh]);
            }
        }
    }
    CHECK(identical);

    const auto d = monte_carlo_truth(s, 0.5, 0.01, 6, 0.2, 43u);
    bool any_difference = false;
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t k = 0; k < a[i].states.size(); ++k) {
            for (size_t veh = 0; veh < a[i].states[k].size(); ++veh) {
                any_difference = any_difference || !same_vector(a[i].states[k][veh], d[i].states[k][veh]);
            }
        }
    }
    CHECK(any_difference);
}

TEST_CASE("admissible lanes follow right-hand traffic") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}, Lane{4.0, 0.0}, Lane{8.0, 0.0}};
    const double th[5] = {0.5, 1.0, 0.2, 0.75, 5.0};
    Vehicle veh = make_vehicle("a", 0.0, 20.0, std::nullopt, th, th);
    veh.lanes = {0, 1, 2};

    s.right_hand_traffic = false;
    veh.state.y = 4.2;
    s.vehicles = {veh};
    CHECK(admissible_lanes(s, veh) == std::vector<int>{0, 1, 2});

    s.right_hand_traffic = true;
    CHECK(admissible_lanes(s, veh) == std::vector<int>{0, 1});

    veh.state.y = 8.1;
    CHECK(admissible_lanes(s, veh) == std::vector<int>{0, 1, 2});

    veh.state.y = -0.5;
    CHECK(admissible_lanes(s, veh) == std::vector<int>{0});

    // No hypothesis at or below the current lane: keep the lowest hypothesis.
    veh.lanes = {2};
    veh.state.y = 0.0;
    CHECK(admissible_lanes(s, veh) == std::vector<int>{2});

    // The sampler only ever picks admissible lanes, and reaches all of them.
    veh.lanes = {0, 1, 2};
    veh.state.y = 4.2;
    veh.theta_lower.theta4 = veh.theta_upper.theta4 = 0.75;
    s.vehicles = {veh};
    const auto runs = monte_carlo_truth(s, 0.1, 0.01, 60, 0.0, 5u);
    std::vector<int> seen;
    for (const auto& run : runs) {
        REQUIRE(run.lanes.size() == 1);
        CHECK(run.lanes[0] >= 0);
        CHECK(run.lanes[0] <= 1);
        seen.push_back(run.lanes[0]);
    }
    CHECK(std::count(seen.begin(), seen.end(), 0) > 0);
    CHECK(std::count(seen.begin(), seen.end(), 1) > 0);
}

TEST_CASE("pinned parameters collapse the tube onto the closed-loop trajectory") {
    Scenario s;
    s.rules = RoadRules{25.0, 10.0, 1.5};
    s.road.lanes = {Lane{0.0, 0.0}};
    const double th[5] = {0.5, 3.0, 0.5, 0.75, 5.0};
    s.vehicles.push_back(make_vehicle("a", 0.0, 29.0, 1, th, th));
    s.vehicles.push_back(make_vehicle("b", 48.5, 25.0, std::nullopt, th, th));

    const double horizon = 1.5, dt = 0.01;
    const HighwayPrediction pred = predict_highway(s, horizon, dt, Method::Stable);
    const auto truth = monte_carlo_truth(s, horizon, dt, 1, 0.0, 1u);

    for (size_t veh = 0; veh < 2; ++veh) {
        const IntervalTrajectory& tube = pred.vehicles[veh].tube;
        int wide = 0, far = 0;
        for (size_t k = 0; k < tube.states.size(); ++k) {
            for (Eigen::Index c = 0; c < 4; ++c) {
                if (tube.states[k].upper(c) - tube.states[k].lower(c) >= 1e-6) ++wide;
                // The truth follows the live braking features, the tube the
                // frozen ones, so they agree only up to the linearisation gap.
                const double gap = std::abs(truth[0].states[k][veh](c) - tube.states[k].lower(c));
                if (gap >= 1e-3 * (1.0 + std::abs(truth[0].states[k][veh](c)))) ++far;
            }
        }
        CHECK(wide == 0);
        CHECK(far == 0);
    }
}
