#pragma once

// File formats for scenarios, models, certificates, and result traces.
//
// All inputs are JSON with a required `"schema": 1` field and strict key
// checking: unknown keys raise ParseError so typos never pass silently.
// Numbers are written with 17 significant digits, which round-trips IEEE
// doubles exactly.  The SVG renderer is a pure function of its input (fixed
// styling, no timestamps), so identical data yields identical bytes.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ivp/highway.hpp"
#include "ivp/predictor.hpp"
#include "ivp/stability.hpp"

namespace ivp {

// The reduced one-dimensional demo problem: dx/dt = -theta x + d with boxed
// parameter, disturbance, and initial state.
struct ScalarSpec {
    double theta_lower = 0.5, theta_upper = 1.5;
    double d_lower = -0.1, d_upper = 0.1;
    double x0_lower = 1.0, x0_upper = 1.1;

    // The equivalent polytopic form: centre at the fastest decay, one vertex
    // per parameter endpoint.
    PolytopicModel model() const;
    IntervalVector initial_box() const;
    SignalBounds disturbance() const;
};

// Loads either a highway scenario or the reduced scalar form, depending on
// which top-level key the file uses.
std::variant<Scenario, ScalarSpec> load_scenario(const std::string& path);

// Polytopic model files: {"schema":1, "a0": [[..]], "deltas": [[[..]], ...],
// "b": [[..]]}.
PolytopicModel load_model(const std::string& path);

// Certificate files: {"schema":1, "p": [..], ..., "gamma": [..]} with all ten
// diagonal vectors of equal length.
LmiCertificate load_certificate(const std::string& path);
void save_certificate(const LmiCertificate& cert, const std::string& path);

// One bound sample of one coordinate of one vehicle, with optional truth
// sample values at the same time.
struct TraceRecord {
    double time = 0.0;
    std::string vehicle;
    std::string coord;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<double> truth;
};

enum class TraceFormat { Csv, Json };

// CSV columns are exactly `t,vehicle,coord,lower,upper` (truth values are a
// JSON-only field); JSON is a list of record objects.
void write_traces(const std::vector<TraceRecord>& records, TraceFormat format,
                  const std::string& path);
std::vector<TraceRecord> read_traces(TraceFormat format, const std::string& path);

// Renders one panel per (vehicle, coordinate) pair: the bound band as a
// filled polygon, truth samples as overlaid curves.  Values beyond 100x the
// initial magnitude are clamped to keep diverging bands readable; clamped
// panels carry a "band clipped" marker.  Throws ValidationError on empty
// input.
void render_svg(const std::vector<TraceRecord>& records, const std::string& path);

// Convenience: flattens a prediction into trace records, attaching truth
// trajectories when given.
std::vector<TraceRecord> traces_of_highway(const HighwayPrediction& prediction,
                                           const std::vector<TruthTrajectory>& truth,
                                           const std::string& coord_suffix = "");
std::vector<TraceRecord> traces_of_tube(const IntervalTrajectory& tube,
                                        const std::string& vehicle,
                                        const std::vector<std::string>& coords);

}  // namespace ivp
