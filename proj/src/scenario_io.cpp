#include "ivp/scenario_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ivp/errors.hpp"
#include "json.hpp"

namespace ivp {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json parse_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// Strict schema: every key must be known.
void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    for (const auto& item : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
                return item.key() == k;
            }) == allowed.end()) {
            throw ParseError(where + ": unknown field '" + item.key() + "'");
        }
    }
}

const json& field(const json& obj, const std::string& where, const char* key) {
    const auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing field '" + key + "'");
    return *it;
}

double number(const json& obj, const std::string& where, const char* key) {
    const json& v = field(obj, where, key);
    if (!v.is_number()) throw ParseError(where + "." + key + ": expected a number");
    return v.get<double>();
}

void check_schema_version(const json& root, const std::string& path) {
    if (number(root, path, "schema") != 1.0)
        throw ParseError(path + ": unsupported schema version");
}

std::pair<double, double> bounds_pair(const json& obj, const std::string& where,
                                      const char* key, const char* what) {
    const json& v = field(obj, where, key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ParseError(where + "." + key + ": expected [lower, upper]");
    const double lo = v[0].get<double>(), hi = v[1].get<double>();
    if (!(lo <= hi))
        throw ValidationError(where + "." + key + ": " + what + " box order (lower > upper)");
    return {lo, hi};
}

std::vector<double> number_list(const json& v, const std::string& where) {
    if (!v.is_array()) throw ParseError(where + ": expected an array of numbers");
    std::vector<double> out;
    for (const json& x : v) {
        if (!x.is_number()) throw ParseError(where + ": expected an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

Matrix matrix_of(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw ParseError(where + ": expected a nonempty 2-d array");
    std::vector<std::vector<double>> rows;
    for (size_t i = 0; i < v.size(); ++i)
        rows.push_back(number_list(v[i], where + "[" + std::to_string(i) + "]"));
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw ParseError(where + ": ragged rows");
        for (size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

ScalarSpec parse_scalar(const json& obj, const std::string& where) {
    expect_keys(obj, where, {"theta", "d", "x0"});
    ScalarSpec spec;
    std::tie(spec.theta_lower, spec.theta_upper) = bounds_pair(obj, where, "theta", "parameter");
    std::tie(spec.d_lower, spec.d_upper) = bounds_pair(obj, where, "d", "disturbance");
    std::tie(spec.x0_lower, spec.x0_upper) = bounds_pair(obj, where, "x0", "initial");
    return spec;
}

Scenario parse_highway(const json& root, const std::string& path) {
    expect_keys(root, path, {"schema", "rules", "road", "right_hand_traffic", "vehicles"});
    Scenario s;

    const json& rules = field(root, path, "rules");
    expect_keys(rules, path + ".rules", {"v0", "d0", "T"});
    s.rules.v0 = number(rules, path + ".rules", "v0");
    s.rules.d0 = number(rules, path + ".rules", "d0");
    s.rules.T = number(rules, path + ".rules", "T");

    const json& road = field(root, path, "road");
    expect_keys(road, path + ".road", {"lanes", "width"});
    const json& lanes = field(road, path + ".road", "lanes");
    if (!lanes.is_array()) throw ParseError(path + ".road.lanes: expected an array");
    for (size_t i = 0; i < lanes.size(); ++i) {
        const std::string where = path + ".road.lanes[" + std::to_string(i) + "]";
        expect_keys(lanes[i], where, {"y", "psi"});
        s.road.lanes.push_back(Lane{number(lanes[i], where, "y"), number(lanes[i], where, "psi")});
    }
    s.road.width = number(road, path + ".road", "width");

    if (const auto it = root.find("right_hand_traffic"); it != root.end()) {
        if (!it->is_boolean()) throw ParseError(path + ".right_hand_traffic: expected a boolean");
        s.right_hand_traffic = it->get<bool>();
    }

    const json& vehicles = field(root, path, "vehicles");
    if (!vehicles.is_array()) throw ParseError(path + ".vehicles: expected an array");
    std::vector<std::string> front_ids(vehicles.size());
    for (size_t i = 0; i < vehicles.size(); ++i) {
        const std::string where = path + ".vehicles[" + std::to_string(i) + "]";
        const json& v = vehicles[i];
        expect_keys(v, where, {"id", "state", "l", "front", "lane", "theta_lower", "theta_upper"});
        Vehicle veh;
        const json& id = field(v, where, "id");
        if (!id.is_string()) throw ParseError(where + ".id: expected a string");
        veh.id = id.get<std::string>();

        const json& st = field(v, where, "state");
        expect_keys(st, where + ".state", {"x", "y", "v", "psi"});
        veh.state.x = number(st, where + ".state", "x");
        veh.state.y = number(st, where + ".state", "y");
        veh.state.v = number(st, where + ".state", "v");
        veh.state.psi = number(st, where + ".state", "psi");

        if (const auto it = v.find("l"); it != v.end()) veh.l = number(v, where, "l");

        const json& front = field(v, where, "front");
        if (front.is_string()) {
            front_ids[i] = front.get<std::string>();
        } else if (!front.is_null()) {
            throw ParseError(where + ".front: expected a vehicle id or null");
        }

        const json& lane = field(v, where, "lane");
        if (lane.is_number_integer()) {
            veh.lanes = {lane.get<int>()};
        } else if (lane.is_array()) {
            for (const json& x : lane) {
                if (!x.is_number_integer())
                    throw ParseError(where + ".lane: expected lane indices");
                veh.lanes.push_back(x.get<int>());
            }
        } else {
            throw ParseError(where + ".lane: expected an index or a list of indices");
        }

        auto gains = [&](const char* key) {
            const std::vector<double> g = number_list(field(v, where, key), where + "." + key);
            if (g.size() != 5) throw ParseError(where + "." + key + ": expected 5 gains");
            return BehaviorParams{g[0], g[1], g[2], g[3], g[4]};
        };
        veh.theta_lower = gains("theta_lower");
        veh.theta_upper = gains("theta_upper");
        const double* lo = &veh.theta_lower.theta1;
        const double* hi = &veh.theta_upper.theta1;
        for (int k = 0; k < 5; ++k) {
            if (!(lo[k] <= hi[k]))
                throw ValidationError(where + ".theta" + std::to_string(k + 1) +
                                      ": parameter box order (lower > upper)");
        }
        s.vehicles.push_back(std::move(veh));
    }

    // Resolve front references by id once all vehicles are known.
    for (size_t i = 0; i < s.vehicles.size(); ++i) {
        if (front_ids[i].empty()) continue;
        const auto it = std::find_if(s.vehicles.begin(), s.vehicles.end(), [&](const Vehicle& v) {
            return v.id == front_ids[i];
        });
        if (it == s.vehicles.end())
            throw ValidationError(path + ": vehicle '" + s.vehicles[i].id +
                                  "' follows unknown id '" + front_ids[i] + "'");
        s.vehicles[i].front = static_cast<int>(it - s.vehicles.begin());
    }

    validate_scenario(s);
    return s;
}

// 17 significant digits round-trip IEEE doubles exactly.
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void require_plain_text(const std::string& s, const char* what) {
    if (s.find_first_of(",\n\r\"") != std::string::npos)
        throw ValidationError(std::string(what) + " must not contain commas, quotes or newlines");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    return out;
}

}  // namespace

PolytopicModel ScalarSpec::model() const {
    // Centre at the fastest decay; vertices at the two parameter endpoints.
    Matrix a0(1, 1), b(1, 1);
    a0 << -theta_upper;
    b << 1.0;
    Matrix spread(1, 1), zero(1, 1);
    spread << theta_upper - theta_lower;
    zero << 0.0;
    return PolytopicModel(a0, {spread, zero}, b);
}

IntervalVector ScalarSpec::initial_box() const {
    Vector lo(1), hi(1);
    lo << x0_lower;
    hi << x0_upper;
    return IntervalVector(lo, hi);
}

SignalBounds ScalarSpec::disturbance() const {
    Vector lo(1), hi(1);
    lo << d_lower;
    hi << d_upper;
    return SignalBounds::constant(IntervalVector(lo, hi));
}

std::variant<Scenario, ScalarSpec> load_scenario(const std::string& path) {
    const json root = parse_json(path);
    if (!root.is_object()) throw ParseError(path + ": expected a JSON object");
    check_schema_version(root, path);
    if (root.contains("scalar")) {
        expect_keys(root, path, {"schema", "scalar"});
        return parse_scalar(root["scalar"], path + ".scalar");
    }
    return parse_highway(root, path);
}

PolytopicModel load_model(const std::string& path) {
    const json root = parse_json(path);
    expect_keys(root, path, {"schema", "a0", "deltas", "b"});
    check_schema_version(root, path);
    const Matrix a0 = matrix_of(field(root, path, "a0"), path + ".a0");
    const json& deltas_json = field(root, path, "deltas");
    if (!deltas_json.is_array()) throw ParseError(path + ".deltas: expected an array");
    std::vector<Matrix> deltas;
    for (size_t i = 0; i < deltas_json.size(); ++i)
        deltas.push_back(matrix_of(deltas_json[i], path + ".deltas[" + std::to_string(i) + "]"));
    const Matrix b = matrix_of(field(root, path, "b"), path + ".b");
    return PolytopicModel(a0, std::move(deltas), b);
}

namespace {

constexpr const char* kCertFields[10] = {"p",        "q",         "q_plus", "q_minus",
                                         "z_plus",   "z_minus",   "psi_plus",
                                         "psi_minus", "psi",      "gamma"};

Vector* cert_slot(LmiCertificate& c, int k) {
    Vector* slots[10] = {&c.p,      &c.q,       &c.q_plus,   &c.q_minus,  &c.z_plus,
                         &c.z_minus, &c.psi_plus, &c.psi_minus, &c.psi,      &c.gamma};
    return slots[k];
}

}  // namespace

LmiCertificate load_certificate(const std::string& path) {
    const json root = parse_json(path);
    expect_keys(root, path,
                {"schema", "p", "q", "q_plus", "q_minus", "z_plus", "z_minus", "psi_plus",
                 "psi_minus", "psi", "gamma"});
    check_schema_version(root, path);
    LmiCertificate cert;
    for (int k = 0; k < 10; ++k) {
        const std::vector<double> v =
            number_list(field(root, path, kCertFields[k]), path + "." + kCertFields[k]);
        Vector& slot = *cert_slot(cert, k);
        slot.resize(static_cast<Eigen::Index>(v.size()));
        for (size_t i = 0; i < v.size(); ++i) slot(static_cast<Eigen::Index>(i)) = v[i];
    }
    const Eigen::Index n = cert.p.size();
    if (n == 0) throw ValidationError(path + ": certificate vectors must be nonempty");
    for (int k = 0; k < 10; ++k) {
        if (cert_slot(cert, k)->size() != n)
            throw ValidationError(path + ": certificate vectors must have equal length");
    }
    return cert;
}

void save_certificate(const LmiCertificate& cert, const std::string& path) {
    LmiCertificate copy = cert;
    std::ofstream out = open_out(path);
    out << "{\n  \"schema\": 1";
    for (int k = 0; k < 10; ++k) {
        const Vector& v = *cert_slot(copy, k);
        out << ",\n  \"" << kCertFields[k] << "\": [";
        for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? ", " : "") << fmt(v(i));
        out << "]";
    }
    out << "\n}\n";
}

void write_traces(const std::vector<TraceRecord>& records, TraceFormat format,
                  const std::string& path) {
    for (const TraceRecord& r : records) {
        if (!(r.lower <= r.upper) && std::isfinite(r.lower) && std::isfinite(r.upper))
            throw ValidationError("trace record with lower > upper at t=" + fmt(r.time));
        require_plain_text(r.vehicle, "vehicle id");
        require_plain_text(r.coord, "coordinate label");
    }
    std::ofstream out = open_out(path);
    if (format == TraceFormat::Csv) {
        out << "t,vehicle,coord,lower,upper\n";
        for (const TraceRecord& r : records) {
            out << fmt(r.time) << ',' << r.vehicle << ',' << r.coord << ',' << fmt(r.lower)
                << ',' << fmt(r.upper) << '\n';
        }
        return;
    }
    out << "[\n";
    for (size_t i = 0; i < records.size(); ++i) {
        const TraceRecord& r = records[i];
        out << "  {\"t\": " << fmt(r.time) << ", \"vehicle\": \"" << r.vehicle
            << "\", \"coord\": \"" << r.coord << "\", \"lower\": " << fmt(r.lower)
            << ", \"upper\": " << fmt(r.upper);
        if (!r.truth.empty()) {
            out << ", \"truth\": [";
            for (size_t k = 0; k < r.truth.size(); ++k)
                out << (k ? ", " : "") << fmt(r.truth[k]);
            out << "]";
        }
        out << "}" << (i + 1 < records.size() ? "," : "") << "\n";
    }
    out << "]\n";
}

std::vector<TraceRecord> read_traces(TraceFormat format, const std::string& path) {
    std::vector<TraceRecord> records;
    if (format == TraceFormat::Csv) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open '" + path + "'");
        std::string line;
        if (!std::getline(in, line) || line != "t,vehicle,coord,lower,upper")
            throw ParseError(path + ": bad CSV header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::istringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ',')) cells.push_back(cell);
            if (cells.size() != 5) throw ParseError(path + ": bad CSV row '" + line + "'");
            TraceRecord r;
            r.time = std::strtod(cells[0].c_str(), nullptr);
            r.vehicle = cells[1];
            r.coord = cells[2];
            r.lower = std::strtod(cells[3].c_str(), nullptr);
            r.upper = std::strtod(cells[4].c_str(), nullptr);
            records.push_back(std::move(r));
        }
        return records;
    }
    const json root = parse_json(path);
    if (!root.is_array()) throw ParseError(path + ": expected a JSON array");
    for (size_t i = 0; i < root.size(); ++i) {
        const std::string where = path + "[" + std::to_string(i) + "]";
        expect_keys(root[i], where, {"t", "vehicle", "coord", "lower", "upper", "truth"});
        TraceRecord r;
        r.time = number(root[i], where, "t");
        r.vehicle = field(root[i], where, "vehicle").get<std::string>();
        r.coord = field(root[i], where, "coord").get<std::string>();
        r.lower = number(root[i], where, "lower");
        r.upper = number(root[i], where, "upper");
        if (root[i].contains("truth")) r.truth = number_list(root[i]["truth"], where + ".truth");
        records.push_back(std::move(r));
    }
    return records;
}

namespace {

struct Panel {
    std::string vehicle, coord;
    std::vector<size_t> rows;  // indices into the record list
};

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

void render_svg(const std::vector<TraceRecord>& records, const std::string& path) {
    if (records.empty()) throw ValidationError("render_svg: nothing to plot");

    std::vector<Panel> panels;
    for (size_t i = 0; i < records.size(); ++i) {
        auto it = std::find_if(panels.begin(), panels.end(), [&](const Panel& p) {
            return p.vehicle == records[i].vehicle && p.coord == records[i].coord;
        });
        if (it == panels.end()) {
            panels.push_back(Panel{records[i].vehicle, records[i].coord, {}});
            it = panels.end() - 1;
        }
        it->rows.push_back(i);
    }

    const double kWidth = 800, kLeft = 60, kPlotW = 720, kPlotH = 140, kGap = 40;
    const double total_h = 40 + static_cast<double>(panels.size()) * (kPlotH + kGap);

    std::ofstream out = open_out(path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kWidth << " "
        << px(total_h) << "\" width=\"" << kWidth << "\" height=\"" << px(total_h)
        << "\" font-family=\"monospace\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (size_t pi = 0; pi < panels.size(); ++pi) {
        const Panel& panel = panels[pi];
        const double top = 20 + static_cast<double>(pi) * (kPlotH + kGap);

        // Deterministic clamp: values beyond 100x the initial magnitude are
        // pulled back to the cap so one diverging band cannot flatten the
        // whole plot.
        double initial_mag = 0.0;
        {
            const TraceRecord& first = records[panel.rows.front()];
            initial_mag = std::max(std::abs(first.lower), std::abs(first.upper));
        }
        for (size_t row : panel.rows)
            for (double tv : records[row].truth)
                if (std::isfinite(tv)) initial_mag = std::max(initial_mag, std::abs(tv));
        const double cap = 100.0 * (1.0 + initial_mag);
        bool clipped = false;
        auto clamp_value = [&](double v) {
            if (!std::isfinite(v)) {
                clipped = true;
                return v > 0 ? cap : -cap;
            }
            if (v > cap || v < -cap) {
                clipped = true;
                return std::clamp(v, -cap, cap);
            }
            return v;
        };

        std::vector<double> times, lows, highs;
        size_t truth_count = 0;
        for (size_t row : panel.rows) {
            times.push_back(records[row].time);
            lows.push_back(clamp_value(records[row].lower));
            highs.push_back(clamp_value(records[row].upper));
            truth_count = std::max(truth_count, records[row].truth.size());
        }

        double ylo = lows[0], yhi = highs[0];
        for (double v : lows) ylo = std::min(ylo, v);
        for (double v : highs) yhi = std::max(yhi, v);
        for (size_t row : panel.rows)
            for (double tv : records[row].truth)
                if (std::isfinite(tv)) {
                    ylo = std::min(ylo, tv);
                    yhi = std::max(yhi, tv);
                }
        double pad = 0.05 * (yhi - ylo);
        if (pad <= 0.0) pad = 1.0;
        ylo -= pad;
        yhi += pad;

        const double t0 = times.front();
        const double tspan = std::max(times.back() - t0, 1e-9);
        auto X = [&](double t) { return kLeft + (t - t0) / tspan * kPlotW; };
        auto Y = [&](double v) { return top + kPlotH - (v - ylo) / (yhi - ylo) * kPlotH; };

        out << "<g>\n<text x=\"" << px(kLeft) << "\" y=\"" << px(top - 6) << "\">"
            << panel.vehicle << ":" << panel.coord << "</text>\n"
            << "<rect x=\"" << px(kLeft) << "\" y=\"" << px(top) << "\" width=\"" << px(kPlotW)
            << "\" height=\"" << px(kPlotH)
            << "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n";

        out << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.65\" stroke=\"#3182bd\" "
               "stroke-width=\"1\" points=\"";
        for (size_t k = 0; k < times.size(); ++k)
            out << (k ? " " : "") << px(X(times[k])) << "," << px(Y(highs[k]));
        for (size_t k = times.size(); k-- > 0;)
            out << " " << px(X(times[k])) << "," << px(Y(lows[k]));
        out << "\"/>\n";

        for (size_t ti = 0; ti < truth_count; ++ti) {
            out << "<polyline fill=\"none\" stroke=\"#de2d26\" stroke-width=\"0.6\" points=\"";
            bool first_pt = true;
            for (size_t row : panel.rows) {
                const TraceRecord& r = records[row];
                if (ti >= r.truth.size() || !std::isfinite(r.truth[ti])) continue;
                out << (first_pt ? "" : " ") << px(X(r.time)) << "," << px(Y(r.truth[ti]));
                first_pt = false;
            }
            out << "\"/>\n";
        }

        out << "<text x=\"" << px(kLeft - 52) << "\" y=\"" << px(top + 10) << "\">"
            << fmt(yhi) << "</text>\n"
            << "<text x=\"" << px(kLeft - 52) << "\" y=\"" << px(top + kPlotH) << "\">"
            << fmt(ylo) << "</text>\n";
        if (clipped) {
            out << "<text x=\"" << px(kLeft + kPlotW - 110) << "\" y=\"" << px(top - 6)
                << "\" fill=\"#de2d26\">band clipped</text>\n";
        }
        out << "</g>\n";
    }
    out << "</svg>\n";
}

std::vector<TraceRecord> traces_of_tube(const IntervalTrajectory& tube,
                                        const std::string& vehicle,
                                        const std::vector<std::string>& coords) {
    std::vector<TraceRecord> records;
    for (size_t k = 0; k < tube.states.size(); ++k) {
        for (size_t c = 0; c < coords.size(); ++c) {
            TraceRecord r;
            r.time = tube.times[k];
            r.vehicle = vehicle;
            r.coord = coords[c];
            r.lower = tube.states[k].lower(static_cast<Eigen::Index>(c));
            r.upper = tube.states[k].upper(static_cast<Eigen::Index>(c));
            records.push_back(std::move(r));
        }
    }
    return records;
}

std::vector<TraceRecord> traces_of_highway(const HighwayPrediction& prediction,
                                           const std::vector<TruthTrajectory>& truth,
                                           const std::string& coord_suffix) {
    const std::vector<std::string> coords = {"x", "y", "v", "psi"};
    std::vector<TraceRecord> records;
    for (size_t veh = 0; veh < prediction.vehicles.size(); ++veh) {
        const VehiclePrediction& vp = prediction.vehicles[veh];
        for (size_t k = 0; k < vp.tube.states.size(); ++k) {
            for (size_t c = 0; c < coords.size(); ++c) {
                TraceRecord r;
                r.time = vp.tube.times[k];
                r.vehicle = vp.id;
                r.coord = coords[c] + coord_suffix;
                r.lower = vp.tube.states[k].lower(static_cast<Eigen::Index>(c));
                r.upper = vp.tube.states[k].upper(static_cast<Eigen::Index>(c));
                for (const TruthTrajectory& run : truth) {
                    if (k < run.states.size() && veh < run.states[k].size())
                        r.truth.push_back(run.states[k][veh](static_cast<Eigen::Index>(c)));
                }
                records.push_back(std::move(r));
            }
        }
    }
    return records;
}

}  // namespace ivp
