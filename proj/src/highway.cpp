#include "ivp/highway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <random>
#include <thread>

#include "ivp/errors.hpp"

namespace ivp {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Gate booleans for the two braking features, frozen from the current state:
// a feature participates in the linear dynamics only if it is active now.
struct Gates {
    bool brake_speed = false;
    bool brake_distance = false;
};

std::vector<Gates> freeze_gates(const Scenario& s) {
    std::vector<Gates> gates(s.vehicles.size());
    for (size_t i = 0; i < s.vehicles.size(); ++i) {
        const Vehicle& veh = s.vehicles[i];
        if (!veh.front) continue;
        const VehicleState& own = veh.state;
        const VehicleState& ahead = s.vehicles[static_cast<size_t>(*veh.front)].state;
        gates[i].brake_speed = ahead.v - own.v < 0.0;
        gates[i].brake_distance = ahead.x - own.x - (s.rules.d0 + own.v * s.rules.T) < 0.0;
    }
    return gates;
}

// Equilibrium positions: roots of the front-vehicle forest sit at 0 and each
// follower sits one safe distance behind its front vehicle.
std::vector<double> center_positions(const Scenario& s) {
    const size_t n = s.vehicles.size();
    std::vector<double> centers(n, 0.0);
    std::vector<int> mark(n, 0);  // 0 new, 1 on the current chain, 2 resolved
    std::function<double(size_t)> resolve = [&](size_t i) -> double {
        if (mark[i] == 2) return centers[i];
        if (mark[i] == 1) {
            throw CyclicFollowing("front-vehicle references form a cycle through vehicle '" +
                                  s.vehicles[i].id + "'");
        }
        mark[i] = 1;
        double c = 0.0;
        if (s.vehicles[i].front) {
            c = resolve(static_cast<size_t>(*s.vehicles[i].front)) - (s.rules.d0 + s.rules.v0 * s.rules.T);
        }
        centers[i] = c;
        mark[i] = 2;
        return c;
    };
    for (size_t i = 0; i < n; ++i) resolve(i);
    return centers;
}

// One uncertain scalar range feeding the corner enumeration.
struct ParamRange {
    double lo = 0.0;
    double hi = 0.0;
    double mid() const { return 0.5 * (lo + hi); }
    bool uncertain() const { return hi > lo; }
};

constexpr int kMaxCornerParams = 12;

// Enumerates the corners of the uncertain ranges (midpoints are substituted
// for pinned ones) and hands each assignment to `emit`.  With no uncertain
// range this emits the single midpoint assignment, so a singleton parameter
// box yields exactly one (zero) vertex.
void for_each_corner(const std::vector<ParamRange>& ranges,
                     const std::function<void(const std::vector<double>&)>& emit) {
    std::vector<int> slots;
    for (size_t k = 0; k < ranges.size(); ++k)
        if (ranges[k].uncertain()) slots.push_back(static_cast<int>(k));
    if (slots.size() > kMaxCornerParams) {
        throw ValidationError("polytope would need 2^" + std::to_string(slots.size()) +
                              " vertices; at most 2^" + std::to_string(kMaxCornerParams) +
                              " uncertain parameters are supported");
    }
    std::vector<double> values(ranges.size());
    for (size_t k = 0; k < ranges.size(); ++k) values[k] = ranges[k].mid();
    const size_t corners = size_t{1} << slots.size();
    for (size_t bits = 0; bits < corners; ++bits) {
        for (size_t b = 0; b < slots.size(); ++b) {
            const ParamRange& r = ranges[static_cast<size_t>(slots[b])];
            values[static_cast<size_t>(slots[b])] = (bits >> b) & 1 ? r.hi : r.lo;
        }
        emit(values);
    }
}

LpvEmbedding finish_embedding(const Matrix& a0, const std::vector<Matrix>& corner_matrices,
                              Vector z_center, const IntervalVector& input,
                              std::vector<std::string> labels) {
    SimilarityTransform tr = eigendecomposition_transform(a0);
    std::vector<Matrix> deltas;
    deltas.reserve(corner_matrices.size());
    for (const Matrix& c : corner_matrices) {
        deltas.push_back(tr.s_inv * c * tr.s - tr.transformed_center);
    }
    IntervalVector d_transformed = mul_const_interval(tr.s_inv, input);
    PolytopicModel model(tr.transformed_center, std::move(deltas),
                         Matrix::Identity(a0.rows(), a0.cols()));
    return LpvEmbedding{std::move(z_center), SignalBounds::constant(std::move(d_transformed)),
                        std::move(model), std::move(tr), std::move(labels)};
}

int env_thread_count() {
    if (const char* env = std::getenv("IVP_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1 && n <= 64) return static_cast<int>(n);
    }
    return 1;
}

}  // namespace

void validate_scenario(const Scenario& s) {
    if (s.road.lanes.empty()) throw ValidationError("road has no lanes");
    if (!(s.road.width > 0.0) || !std::isfinite(s.road.width))
        throw ValidationError("lane width must be positive");
    for (const Lane& lane : s.road.lanes) {
        if (!std::isfinite(lane.y) || !std::isfinite(lane.psi))
            throw ValidationError("lane geometry must be finite");
    }
    if (!(s.rules.v0 >= 0.0) || !(s.rules.d0 >= 0.0) || !(s.rules.T >= 0.0) ||
        !std::isfinite(s.rules.v0 + s.rules.d0 + s.rules.T)) {
        throw ValidationError("traffic rules must be finite and nonnegative");
    }
    if (s.vehicles.empty()) throw ValidationError("scenario has no vehicles");

    const int n = static_cast<int>(s.vehicles.size());
    for (int i = 0; i < n; ++i) {
        const Vehicle& veh = s.vehicles[static_cast<size_t>(i)];
        const std::string where = "vehicle '" + veh.id + "': ";
        if (veh.id.empty()) throw ValidationError("vehicle ids must be nonempty");
        for (int j = 0; j < i; ++j) {
            if (s.vehicles[static_cast<size_t>(j)].id == veh.id)
                throw ValidationError("duplicate vehicle id '" + veh.id + "'");
        }
        if (!std::isfinite(veh.state.x + veh.state.y + veh.state.v + veh.state.psi))
            throw ValidationError(where + "state must be finite");
        if (veh.state.v < 0.0) throw ValidationError(where + "velocity must be nonnegative");
        if (!(veh.l > 0.0)) throw ValidationError(where + "half-length must be positive");
        const double lows[5] = {veh.theta_lower.theta1, veh.theta_lower.theta2,
                                veh.theta_lower.theta3, veh.theta_lower.theta4,
                                veh.theta_lower.theta5};
        const double highs[5] = {veh.theta_upper.theta1, veh.theta_upper.theta2,
                                 veh.theta_upper.theta3, veh.theta_upper.theta4,
                                 veh.theta_upper.theta5};
        for (int k = 0; k < 5; ++k) {
            if (!std::isfinite(lows[k]) || !std::isfinite(highs[k]) || lows[k] < 0.0 ||
                highs[k] < lows[k]) {
                throw ValidationError(where + "theta" + std::to_string(k + 1) +
                                      " bounds must satisfy 0 <= lower <= upper");
            }
        }
        if (veh.lanes.empty()) throw ValidationError(where + "needs at least one lane hypothesis");
        for (int lane : veh.lanes) {
            if (lane < 0 || lane >= static_cast<int>(s.road.lanes.size()))
                throw ValidationError(where + "lane index " + std::to_string(lane) +
                                      " out of range");
        }
        if (veh.front) {
            if (*veh.front < 0 || *veh.front >= n)
                throw ValidationError(where + "front index out of range");
            if (*veh.front == i) throw ValidationError(where + "cannot follow itself");
        }
    }
}

Vector bicycle_rhs(const VehicleState& z, double a, double beta, double l) {
    if (!(l > 0.0)) throw ValidationError("bicycle_rhs: half-length must be positive");
    Vector dz(4);
    dz << z.v * std::cos(z.psi), z.v * std::sin(z.psi), a, (z.v / l) * std::tan(beta);
    return dz;
}

double longitudinal_acceleration(const BehaviorParams& theta, double v,
                                 std::optional<double> v_front, std::optional<double> gap,
                                 const RoadRules& rules) {
    if (v_front.has_value() != gap.has_value())
        throw ValidationError("front velocity and gap must be given together");
    double a = theta.theta1 * (rules.v0 - v);
    if (v_front) {
        a += theta.theta2 * std::min(0.0, *v_front - v);
        a += theta.theta3 * std::min(0.0, *gap - (rules.d0 + v * rules.T));
    }
    return a;
}

LateralCommand lateral_closed_loop(const BehaviorParams& theta, double y, double psi,
                                   const Lane& lane, double v, double l) {
    if (!(l > 0.0)) throw ValidationError("lateral_closed_loop: half-length must be positive");
    if (v < kMinLateralSpeed) {
        throw SpeedTooLow("lateral control undefined at " + std::to_string(v) +
                          " m/s (minimum " + std::to_string(kMinLateralSpeed) + ")");
    }
    LateralCommand cmd;
    double ratio = theta.theta4 * (lane.y - y) / v;
    if (ratio > 1.0 || ratio < -1.0) {
        cmd.clamped = true;
        ratio = std::clamp(ratio, -1.0, 1.0);
    }
    cmd.psi_dot = theta.theta5 * (lane.psi + std::asin(ratio) - psi);
    cmd.beta = std::atan(l / v * cmd.psi_dot);
    return cmd;
}

Matrix lateral_matrix(double theta4, double theta5, double v) {
    if (v < kMinLateralSpeed) {
        throw SpeedTooLow("lateral dynamics undefined at " + std::to_string(v) + " m/s");
    }
    Matrix a(2, 2);
    a << 0.0, v, -theta4 * theta5 / v, -theta5;
    return a;
}

std::vector<int> admissible_lanes(const Scenario& scenario, const Vehicle& vehicle) {
    if (!scenario.right_hand_traffic) return vehicle.lanes;
    int current = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < scenario.road.lanes.size(); ++k) {
        const double dist = std::abs(vehicle.state.y - scenario.road.lanes[k].y);
        if (dist < best) {
            best = dist;
            current = static_cast<int>(k);
        }
    }
    std::vector<int> kept;
    for (int lane : vehicle.lanes)
        if (lane <= current) kept.push_back(lane);
    if (kept.empty()) kept.push_back(*std::min_element(vehicle.lanes.begin(), vehicle.lanes.end()));
    return kept;
}

LpvEmbedding build_longitudinal_embedding(const Scenario& s) {
    validate_scenario(s);
    const int k = static_cast<int>(s.vehicles.size());
    const auto gates = freeze_gates(s);
    std::vector<double> centers = center_positions(s);

    // Three ranges per vehicle; a gated-out or absent feature is pinned at 0.
    std::vector<ParamRange> ranges(static_cast<size_t>(3 * k));
    for (int i = 0; i < k; ++i) {
        const Vehicle& veh = s.vehicles[static_cast<size_t>(i)];
        const bool g2 = veh.front && gates[static_cast<size_t>(i)].brake_speed;
        const bool g3 = veh.front && gates[static_cast<size_t>(i)].brake_distance;
        ranges[static_cast<size_t>(3 * i + 0)] = {veh.theta_lower.theta1, veh.theta_upper.theta1};
        if (g2) ranges[static_cast<size_t>(3 * i + 1)] = {veh.theta_lower.theta2, veh.theta_upper.theta2};
        if (g3) ranges[static_cast<size_t>(3 * i + 2)] = {veh.theta_lower.theta3, veh.theta_upper.theta3};
    }

    auto assemble = [&](const std::vector<double>& th) {
        Matrix a = Matrix::Zero(2 * k, 2 * k);
        for (int i = 0; i < k; ++i) {
            const double t1 = th[static_cast<size_t>(3 * i + 0)];
            const double t2 = th[static_cast<size_t>(3 * i + 1)];
            const double t3 = th[static_cast<size_t>(3 * i + 2)];
            a(i, k + i) = 1.0;
            a(k + i, k + i) = -t1 - t2 - t3 * s.rules.T;
            if (const auto front = s.vehicles[static_cast<size_t>(i)].front) {
                a(k + i, k + *front) += t2;
                a(k + i, *front) += t3;
                a(k + i, i) -= t3;
            }
        }
        return a;
    };

    std::vector<double> mids(ranges.size());
    for (size_t j = 0; j < ranges.size(); ++j) mids[j] = ranges[j].mid();
    const Matrix a0 = assemble(mids);
    std::vector<Matrix> corners;
    for_each_corner(ranges, [&](const std::vector<double>& th) { corners.push_back(assemble(th)); });

    Vector z_center(2 * k);
    Vector input = Vector::Zero(2 * k);
    std::vector<std::string> labels(static_cast<size_t>(2 * k));
    for (int i = 0; i < k; ++i) {
        z_center(i) = centers[static_cast<size_t>(i)];
        z_center(k + i) = s.rules.v0;
        input(i) = s.rules.v0;
        labels[static_cast<size_t>(i)] = s.vehicles[static_cast<size_t>(i)].id + ":x";
        labels[static_cast<size_t>(k + i)] = s.vehicles[static_cast<size_t>(i)].id + ":v";
    }
    return finish_embedding(a0, corners, std::move(z_center), IntervalVector::point(input),
                            std::move(labels));
}

LpvEmbedding build_lateral_embedding(const Vehicle& vehicle, const Lane& lane,
                                     const IntervalVector& v_bounds) {
    if (v_bounds.size() != 1) throw DimensionError("lateral velocity bounds must be scalar");
    const double vlo = v_bounds.lower(0), vhi = v_bounds.upper(0);
    if (vlo < kMinLateralSpeed) {
        throw SpeedTooLow("lateral embedding needs v >= " + std::to_string(kMinLateralSpeed) +
                          " m/s, got lower bound " + std::to_string(vlo));
    }
    const double t4l = vehicle.theta_lower.theta4, t4h = vehicle.theta_upper.theta4;
    const double t5l = vehicle.theta_lower.theta5, t5h = vehicle.theta_upper.theta5;

    // Corner bounding of the coupling theta4*theta5/v over its box; the
    // result is then treated as an independent parameter range.
    double klo = std::numeric_limits<double>::infinity(), khi = -klo;
    for (double t4 : {t4l, t4h}) {
        for (double t5 : {t5l, t5h}) {
            for (double v : {vlo, vhi}) {
                klo = std::min(klo, t4 * t5 / v);
                khi = std::max(khi, t4 * t5 / v);
            }
        }
    }

    std::vector<ParamRange> ranges{{vlo, vhi}, {-khi, -klo}, {-t5h, -t5l}};
    auto assemble = [](const std::vector<double>& e) {
        Matrix a(2, 2);
        a << 0.0, e[0], e[1], e[2];
        return a;
    };
    std::vector<double> mids{0.5 * (vlo + vhi), 0.5 * (-khi - klo), 0.5 * (-t5h - t5l)};
    const Matrix a0 = assemble(mids);
    std::vector<Matrix> corners;
    for_each_corner(ranges, [&](const std::vector<double>& e) { corners.push_back(assemble(e)); });

    // Input in original coordinates: (v * psi_L, 0) over the velocity range.
    Vector ilo(2), ihi(2);
    ilo << std::min(vlo * lane.psi, vhi * lane.psi), 0.0;
    ihi << std::max(vlo * lane.psi, vhi * lane.psi), 0.0;
    Vector z_center(2);
    z_center << lane.y, lane.psi;
    return finish_embedding(a0, corners, std::move(z_center), IntervalVector(ilo, ihi),
                            {vehicle.id + ":y", vehicle.id + ":psi"});
}

namespace {

// Back-transforms a tube sample-by-sample into original coordinates.
std::vector<IntervalVector> to_original(const LpvEmbedding& emb, const IntervalTrajectory& tube) {
    std::vector<IntervalVector> out;
    out.reserve(tube.states.size());
    for (const IntervalVector& st : tube.states) {
        IntervalVector z = mul_const_interval(emb.transform.s, st);
        z.lower += emb.z_center;
        z.upper += emb.z_center;
        out.push_back(std::move(z));
    }
    return out;
}

IntervalTrajectory assemble_vehicle_tube(const std::vector<double>& times,
                                         const std::vector<IntervalVector>& longitudinal,
                                         int x_index, int v_index,
                                         const std::vector<IntervalVector>& lateral,
                                         size_t count, Method method, double dt,
                                         bool truncated) {
    IntervalTrajectory tube;
    tube.method = method;
    tube.dt = dt;
    tube.truncated = truncated;
    for (size_t s = 0; s < count; ++s) {
        Vector lo(4), hi(4);
        lo << longitudinal[s].lower(x_index), lateral[s].lower(0),
            longitudinal[s].lower(v_index), lateral[s].lower(1);
        hi << longitudinal[s].upper(x_index), lateral[s].upper(0),
            longitudinal[s].upper(v_index), lateral[s].upper(1);
        tube.times.push_back(times[s]);
        tube.states.emplace_back(std::move(lo), std::move(hi));
    }
    return tube;
}

}  // namespace

HighwayPrediction predict_highway(const Scenario& scenario, double horizon, double dt,
                                  Method method) {
    LpvEmbedding longitudinal = build_longitudinal_embedding(scenario);
    const int k = static_cast<int>(scenario.vehicles.size());

    Vector z0(2 * k);
    for (int i = 0; i < k; ++i) {
        z0(i) = scenario.vehicles[static_cast<size_t>(i)].state.x;
        z0(k + i) = scenario.vehicles[static_cast<size_t>(i)].state.v;
    }
    const Vector z0_transformed = longitudinal.transform.s_inv * (z0 - longitudinal.z_center);
    IntervalTrajectory ztube = integrate(longitudinal.model, method,
                                         IntervalVector::point(z0_transformed),
                                         longitudinal.d_bounds, horizon, dt);
    const std::vector<IntervalVector> zorig = to_original(longitudinal, ztube);

    HighwayPrediction result;
    result.method = method;
    for (int i = 0; i < k; ++i) {
        const Vehicle& veh = scenario.vehicles[static_cast<size_t>(i)];
        VehiclePrediction pred;
        pred.id = veh.id;

        double vlo = std::numeric_limits<double>::infinity(), vhi = -vlo;
        for (const IntervalVector& z : zorig) {
            vlo = std::min(vlo, z.lower(k + i));
            vhi = std::max(vhi, z.upper(k + i));
        }

        if (vlo < kMinLateralSpeed) {
            // Degraded mode: hold the heading, bound y by the velocity overset.
            pred.lateral_fallback = true;
            std::vector<IntervalVector> lateral;
            lateral.reserve(zorig.size());
            const double sine = std::sin(veh.state.psi);
            for (size_t sidx = 0; sidx < zorig.size(); ++sidx) {
                const double t = ztube.times[sidx];
                Vector lo(2), hi(2);
                lo << veh.state.y + t * std::min(sine * vlo, sine * vhi), veh.state.psi;
                hi << veh.state.y + t * std::max(sine * vlo, sine * vhi), veh.state.psi;
                lateral.emplace_back(std::move(lo), std::move(hi));
            }
            pred.tube = assemble_vehicle_tube(ztube.times, zorig, i, k + i, lateral,
                                              zorig.size(), method, dt, ztube.truncated);
            result.vehicles.push_back(std::move(pred));
            continue;
        }

        Vector vl(1), vh(1);
        vl << vlo;
        vh << vhi;
        const IntervalVector overset(vl, vh);

        pred.lanes = admissible_lanes(scenario, veh);
        size_t count = zorig.size();
        bool truncated = ztube.truncated;
        for (int lane_index : pred.lanes) {
            const Lane& lane = scenario.road.lanes[static_cast<size_t>(lane_index)];
            LpvEmbedding lat = build_lateral_embedding(veh, lane, overset);
            Vector y0(2);
            y0 << veh.state.y, veh.state.psi;
            const Vector y0_transformed = lat.transform.s_inv * (y0 - lat.z_center);
            IntervalTrajectory ytube = integrate(lat.model, method,
                                                 IntervalVector::point(y0_transformed),
                                                 lat.d_bounds, horizon, dt);
            const std::vector<IntervalVector> yorig = to_original(lat, ytube);
            const size_t lane_count = std::min(zorig.size(), yorig.size());
            pred.lane_tubes.push_back(assemble_vehicle_tube(ztube.times, zorig, i, k + i, yorig,
                                                            lane_count, method, dt,
                                                            ztube.truncated || ytube.truncated));
            count = std::min(count, lane_count);
            truncated = truncated || ytube.truncated;
        }

        // Union hull across lane hypotheses.
        IntervalTrajectory hull;
        hull.method = method;
        hull.dt = dt;
        hull.truncated = truncated;
        for (size_t sidx = 0; sidx < count; ++sidx) {
            Vector lo = pred.lane_tubes.front().states[sidx].lower;
            Vector hi = pred.lane_tubes.front().states[sidx].upper;
            for (size_t t = 1; t < pred.lane_tubes.size(); ++t) {
                lo = lo.cwiseMin(pred.lane_tubes[t].states[sidx].lower);
                hi = hi.cwiseMax(pred.lane_tubes[t].states[sidx].upper);
            }
            hull.times.push_back(ztube.times[sidx]);
            hull.states.emplace_back(std::move(lo), std::move(hi));
        }
        pred.tube = std::move(hull);
        result.vehicles.push_back(std::move(pred));
    }
    return result;
}

namespace {

BehaviorParams sample_params(const Vehicle& veh, std::mt19937_64& rng) {
    auto draw = [&rng](double lo, double hi) {
        if (hi <= lo) return lo;
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    BehaviorParams p;
    p.theta1 = draw(veh.theta_lower.theta1, veh.theta_upper.theta1);
    p.theta2 = draw(veh.theta_lower.theta2, veh.theta_upper.theta2);
    p.theta3 = draw(veh.theta_lower.theta3, veh.theta_upper.theta3);
    p.theta4 = draw(veh.theta_lower.theta4, veh.theta_upper.theta4);
    p.theta5 = draw(veh.theta_lower.theta5, veh.theta_upper.theta5);
    return p;
}

TruthTrajectory simulate_sample(const Scenario& s, double horizon, double dt,
                                double resample_period, std::uint64_t sample_seed) {
    std::mt19937_64 rng(sample_seed);
    const size_t k = s.vehicles.size();

    TruthTrajectory out;
    out.lanes.reserve(k);
    std::vector<BehaviorParams> thetas(k);
    for (size_t i = 0; i < k; ++i) {
        const auto lanes = admissible_lanes(s, s.vehicles[i]);
        std::uniform_int_distribution<size_t> pick(0, lanes.size() - 1);
        out.lanes.push_back(lanes[pick(rng)]);
        thetas[i] = sample_params(s.vehicles[i], rng);
    }

    std::vector<VehicleState> state(k);
    for (size_t i = 0; i < k; ++i) state[i] = s.vehicles[i].state;

    auto record = [&](double t) {
        std::vector<Vector> snap(k);
        for (size_t i = 0; i < k; ++i) {
            Vector z(4);
            z << state[i].x, state[i].y, state[i].v, state[i].psi;
            snap[i] = std::move(z);
        }
        out.times.push_back(t);
        out.states.push_back(std::move(snap));
    };

    auto derivative = [&](const std::vector<VehicleState>& zs) {
        std::vector<Vector> dz(k);
        for (size_t i = 0; i < k; ++i) {
            const Vehicle& veh = s.vehicles[i];
            std::optional<double> v_front, gap;
            if (veh.front) {
                const VehicleState& ahead = zs[static_cast<size_t>(*veh.front)];
                v_front = ahead.v;
                gap = ahead.x - zs[i].x;
            }
            const double a = longitudinal_acceleration(thetas[i], zs[i].v, v_front, gap, s.rules);
            double beta = 0.0;  // below the lateral speed floor: coast straight
            if (zs[i].v >= kMinLateralSpeed) {
                const Lane& lane = s.road.lanes[static_cast<size_t>(out.lanes[i])];
                beta = lateral_closed_loop(thetas[i], zs[i].y, zs[i].psi, lane, zs[i].v, veh.l).beta;
            }
            dz[i] = bicycle_rhs(zs[i], a, beta, veh.l);
        }
        return dz;
    };

    auto shifted = [&](const std::vector<VehicleState>& zs, const std::vector<Vector>& dz,
                       double h) {
        std::vector<VehicleState> next(k);
        for (size_t i = 0; i < k; ++i) {
            next[i].x = zs[i].x + h * dz[i](0);
            next[i].y = zs[i].y + h * dz[i](1);
            next[i].v = zs[i].v + h * dz[i](2);
            next[i].psi = zs[i].psi + h * dz[i](3);
        }
        return next;
    };

    record(0.0);
    const long steps = std::lround(horizon / dt);
    long resample_block = 0;
    for (long step = 0; step < steps; ++step) {
        const double t = static_cast<double>(step) * dt;
        if (resample_period > 0.0) {
            const long block = static_cast<long>(std::floor(t / resample_period + 1e-9));
            if (block > resample_block) {
                resample_block = block;
                for (size_t i = 0; i < k; ++i) thetas[i] = sample_params(s.vehicles[i], rng);
            }
        }
        const auto k1 = derivative(state);
        const auto k2 = derivative(shifted(state, k1, 0.5 * dt));
        const auto k3 = derivative(shifted(state, k2, 0.5 * dt));
        const auto k4 = derivative(shifted(state, k3, dt));
        for (size_t i = 0; i < k; ++i) {
            state[i].x += dt / 6.0 * (k1[i](0) + 2.0 * k2[i](0) + 2.0 * k3[i](0) + k4[i](0));
            state[i].y += dt / 6.0 * (k1[i](1) + 2.0 * k2[i](1) + 2.0 * k3[i](1) + k4[i](1));
            state[i].v += dt / 6.0 * (k1[i](2) + 2.0 * k2[i](2) + 2.0 * k3[i](2) + k4[i](2));
            state[i].psi += dt / 6.0 * (k1[i](3) + 2.0 * k2[i](3) + 2.0 * k3[i](3) + k4[i](3));
        }
        record(t + dt);
    }
    return out;
}

}  // namespace

std::vector<TruthTrajectory> monte_carlo_truth(const Scenario& scenario, double horizon,
                                               double dt, int samples, double resample_period,
                                               std::uint64_t seed) {
    validate_scenario(scenario);
    if (samples < 1) throw ValidationError("need at least one sample");
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    if (!(horizon >= 0.0)) throw ValidationError("horizon must be nonnegative");

    std::vector<TruthTrajectory> out(static_cast<size_t>(samples));
    auto run_slot = [&](size_t index) {
        out[index] = simulate_sample(scenario, horizon, dt, resample_period,
                                     splitmix64(seed + 0x9e3779b97f4a7c15ULL * (index + 1)));
    };

    const int threads = std::min(env_thread_count(), samples);
    if (threads <= 1) {
        for (size_t i = 0; i < out.size(); ++i) run_slot(i);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (size_t i = static_cast<size_t>(w); i < out.size(); i += static_cast<size_t>(threads))
                run_slot(i);
        });
    }
    for (auto& th : pool) th.join();
    return out;
}

}  // namespace ivp
