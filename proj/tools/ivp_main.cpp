// Command-line front end for the interval prediction library.
//
// Subcommands:
//   scalar-demo   one-dimensional uncertain system, naive vs stable tubes
//   highway       multi-vehicle traffic prediction from a scenario file
//   cert find     stability certificate search for a polytopic model
//   cert check    audit a certificate against a model
//
// Every command that writes files also writes a run_manifest.json next to
// them, recording the resolved flags, the seed, content hashes of the input
// files, and the output paths.  All outputs are deterministic: identical
// flags and seed give byte-identical files (no timestamps anywhere).
//
// Exit codes:
//   0  success
//   1  certificate infeasible / search failed
//   2  flag errors
//   3  the stable scalar tube hit a non-finite state (unexpected)
//   4  unreadable or invalid input file
//   5  embedding construction failed (e.g. centre matrix not diagonalisable)

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivp/errors.hpp"
#include "ivp/highway.hpp"
#include "ivp/manifest.hpp"
#include "ivp/predictor.hpp"
#include "ivp/scenario_io.hpp"
#include "ivp/stability.hpp"

namespace {

using namespace ivp;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Formats {
    bool csv = false;
    bool json = false;
    bool svg = false;
};

Formats parse_formats(const std::string& f) {
    Formats out;
    out.csv = f == "csv" || f == "all";
    out.json = f == "json" || f == "all";
    out.svg = f == "svg" || f == "all";
    return out;
}

std::vector<Method> parse_methods(const std::string& m) {
    if (m == "naive") return {Method::Naive};
    if (m == "stable") return {Method::Stable};
    return {Method::Naive, Method::Stable};
}

// Writes the requested trace formats plus the manifest into `out_dir`.
void write_outputs(const std::vector<TraceRecord>& records, const Formats& formats,
                   const std::filesystem::path& out_dir, const std::string& stem,
                   RunManifest& manifest) {
    std::filesystem::create_directories(out_dir);
    if (formats.csv) {
        const auto path = (out_dir / (stem + ".csv")).generic_string();
        write_traces(records, TraceFormat::Csv, path);
        manifest.outputs.push_back(path);
    }
    if (formats.json) {
        const auto path = (out_dir / (stem + ".json")).generic_string();
        write_traces(records, TraceFormat::Json, path);
        manifest.outputs.push_back(path);
    }
    if (formats.svg) {
        const auto path = (out_dir / (stem + ".svg")).generic_string();
        render_svg(records, path);
        manifest.outputs.push_back(path);
    }
    write_manifest(manifest, (out_dir / "run_manifest.json").generic_string());
}

double coordinate_width(const IntervalVector& box, Eigen::Index i) {
    return box.upper(i) - box.lower(i);
}

int cmd_scalar_demo(const std::string& method, double horizon, double dt,
                    const std::string& out_dir, const std::string& format) {
    const ScalarSpec spec;
    const PolytopicModel model = spec.model();
    const IntervalVector x0 = spec.initial_box();
    const SignalBounds d = spec.disturbance();
    const std::vector<Method> methods = parse_methods(method);

    std::printf("scalar demo: dx/dt = -theta x + d, theta in [%g, %g], d in [%g, %g], x0 in [%g, %g]\n",
                spec.theta_lower, spec.theta_upper, spec.d_lower, spec.d_upper, spec.x0_lower,
                spec.x0_upper);

    std::vector<TraceRecord> records;
    bool stable_overflow = false;
    for (const Method m : methods) {
        const IntervalTrajectory tube = integrate(model, m, x0, d, horizon, dt);
        const double w0 = coordinate_width(tube.states.front(), 0);
        const double wT = coordinate_width(tube.states.back(), 0);
        const double growth = w0 > 0.0 ? wT / w0 : 0.0;
        std::printf("[%s] terminal t=%g: [%.6g, %.6g], width %.6g -> %.6g (%.6gx)\n",
                    method_name(m), tube.times.back(), tube.states.back().lower(0),
                    tube.states.back().upper(0), w0, wT, growth);
        if (tube.truncated) {
            if (m == Method::Stable) {
                std::printf("error: stable tube hit a non-finite state at t=%g\n",
                            tube.times.back());
                stable_overflow = true;
            } else {
                std::printf("warning: naive tube diverged past floating-point range at t=%g\n",
                            tube.times.back());
            }
        } else if (m == Method::Naive && growth > 100.0) {
            std::printf("warning: naive tube diverges (width grew %.3gx over %g s)\n", growth,
                        tube.times.back());
        }
        const std::string coord =
            methods.size() > 1 ? std::string("x:") + method_name(m) : std::string("x");
        for (auto& r : traces_of_tube(tube, "scalar", {coord})) records.push_back(std::move(r));
    }

    RunManifest manifest;
    manifest.command = "scalar-demo";
    manifest.flags = {{"method", method},
                      {"horizon", fmt17(horizon)},
                      {"dt", fmt17(dt)},
                      {"out", out_dir},
                      {"format", format}};
    write_outputs(records, parse_formats(format), out_dir, "scalar_demo", manifest);
    return stable_overflow ? 3 : 0;
}

// Samples are counted as violations when any coordinate leaves the tube by
// more than 1e-3 * (1 + |state|): the gap between the true nonlinear closed
// loop and the linearisation the tube bounds, not a soundness tolerance.
int count_violations(const HighwayPrediction& prediction,
                     const std::vector<TruthTrajectory>& truth) {
    int bad = 0;
    for (const auto& sample : truth) {
        bool outside = false;
        for (std::size_t vi = 0; vi < prediction.vehicles.size() && !outside; ++vi) {
            const IntervalTrajectory& tube = prediction.vehicles[vi].tube;
            const std::size_t n = std::min(tube.times.size(), sample.times.size());
            for (std::size_t k = 0; k < n && !outside; ++k) {
                const Vector& z = sample.states[k][vi];
                for (Eigen::Index c = 0; c < 4 && !outside; ++c) {
                    const double slack = 1e-3 * (1.0 + std::abs(z(c)));
                    outside = z(c) < tube.states[k].lower(c) - slack ||
                              z(c) > tube.states[k].upper(c) + slack;
                }
            }
        }
        if (outside) ++bad;
    }
    return bad;
}

int cmd_highway(const std::string& scenario_path, const std::string& method, double horizon,
                double dt, int mc, std::uint64_t seed, const std::string& out_dir,
                const std::string& format) {
    Scenario scenario;
    try {
        auto loaded = load_scenario(scenario_path);
        if (!std::holds_alternative<Scenario>(loaded))
            throw ValidationError("'" + scenario_path + "' holds the scalar demo form, not a road scene");
        scenario = std::get<Scenario>(std::move(loaded));
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }

    const std::vector<Method> methods = parse_methods(method);
    std::vector<TruthTrajectory> truth;
    std::vector<TraceRecord> records;
    std::printf("highway: %zu vehicles, horizon %g s, dt %g s\n", scenario.vehicles.size(),
                horizon, dt);
    try {
        if (mc > 0) truth = monte_carlo_truth(scenario, horizon, dt, mc, 0.2, seed);
        for (const Method m : methods) {
            const HighwayPrediction prediction = predict_highway(scenario, horizon, dt, m);
            for (const auto& vp : prediction.vehicles) {
                const IntervalVector& z0 = vp.tube.states.front();
                const IntervalVector& zT = vp.tube.states.back();
                const double growth = coordinate_width(z0, 0) > 0.0
                                          ? coordinate_width(zT, 0) / coordinate_width(z0, 0)
                                          : 0.0;
                std::printf("[%s] %s t=%g: x=[%.6g, %.6g] y=[%.6g, %.6g] v=[%.6g, %.6g]%s\n",
                            method_name(m), vp.id.c_str(), vp.tube.times.back(), zT.lower(0),
                            zT.upper(0), zT.lower(1), zT.upper(1), zT.lower(2), zT.upper(2),
                            vp.lateral_fallback ? " (constant-heading fallback)" : "");
                if (vp.tube.truncated) {
                    std::printf("warning: %s tube for %s diverged past floating-point range at t=%g\n",
                                method_name(m), vp.id.c_str(), vp.tube.times.back());
                } else if (m == Method::Naive && growth > 100.0) {
                    std::printf("warning: naive tube for %s diverges (x-width grew %.3gx)\n",
                                vp.id.c_str(), growth);
                }
            }
            if (mc > 0) {
                const int bad = count_violations(prediction, truth);
                std::printf("[%s] samples outside tube beyond 1e-3*(1+|state|): %d/%d\n",
                            method_name(m), bad, mc);
            }
            const std::string suffix =
                methods.size() > 1 ? std::string(":") + method_name(m) : std::string();
            for (auto& r : traces_of_highway(prediction, truth, suffix))
                records.push_back(std::move(r));
        }
    } catch (const NotRealDiagonalisable& e) {
        std::fprintf(stderr, "error: embedding construction failed: %s\n", e.what());
        return 5;
    } catch (const IllConditioned& e) {
        std::fprintf(stderr, "error: embedding construction failed: %s\n", e.what());
        return 5;
    } catch (const CyclicFollowing& e) {
        std::fprintf(stderr, "error: embedding construction failed: %s\n", e.what());
        return 5;
    } catch (const SpeedTooLow& e) {
        std::fprintf(stderr, "error: embedding construction failed: %s\n", e.what());
        return 5;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: embedding construction failed: %s\n", e.what());
        return 5;
    }

    RunManifest manifest;
    manifest.command = "highway";
    manifest.flags = {{"scenario", scenario_path}, {"method", method},
                      {"horizon", fmt17(horizon)}, {"dt", fmt17(dt)},
                      {"mc", std::to_string(mc)},  {"out", out_dir},
                      {"format", format}};
    manifest.seed = seed;
    manifest.inputs = {{scenario_path, blob_hash_file(scenario_path)}};
    write_outputs(records, parse_formats(format), out_dir, "highway", manifest);
    return 0;
}

void print_report(const CertificateReport& report) {
    std::printf("positivity margins: %.6g, %.6g\n", report.positivity1_margin,
                report.positivity2_margin);
    std::printf("gamma margin: %.6g\n", report.gamma_margin);
    std::printf("top eigenvalue: %.6g\n", report.upsilon_max_eig);
    std::printf("verdict: %s\n", report.feasible ? "feasible" : "infeasible");
}

int cmd_cert_check(const std::string& model_path, const std::string& cert_path) {
    try {
        const PolytopicModel model = load_model(model_path);
        const LmiCertificate cert = load_certificate(cert_path);
        const CertificateReport report = check_certificate(model, cert);
        print_report(report);
        return report.feasible ? 0 : 1;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}

int cmd_cert_find(const std::string& model_path, std::uint64_t seed, int max_iters,
                  const std::string& out_file) {
    std::optional<PolytopicModel> model;
    try {
        model = load_model(model_path);
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }

    SearchOptions options;
    options.seed = seed;
    options.iterations = max_iters;
    const std::optional<LmiCertificate> cert = search_certificate(*model, options);
    if (!cert) {
        std::printf("no feasible certificate found (%d starts x %d iterations)\n", options.starts,
                    options.iterations);
        return 1;
    }
    const CertificateReport report = check_certificate(*model, *cert);
    print_report(report);
    const auto out_parent = std::filesystem::path(out_file).parent_path();
    if (!out_parent.empty()) std::filesystem::create_directories(out_parent);
    save_certificate(*cert, out_file);
    std::printf("certificate written to %s\n", out_file.c_str());

    RunManifest manifest;
    manifest.command = "cert find";
    manifest.flags = {{"model", model_path},
                      {"max-iters", std::to_string(max_iters)},
                      {"out", out_file}};
    manifest.seed = seed;
    manifest.inputs = {{model_path, blob_hash_file(model_path)}};
    manifest.outputs = {out_file};
    const auto manifest_path =
        std::filesystem::path(out_file).parent_path() / "run_manifest.json";
    write_manifest(manifest, manifest_path.generic_string());
    return report.feasible ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interval prediction for uncertain linear systems and highway traffic"};
    app.require_subcommand(1);
    app.footer("IVP_THREADS caps Monte-Carlo sample parallelism (default 1); results are\n"
               "identical for any thread count.");

    std::string method = "stable";
    std::string format = "csv";
    std::string out_dir = ".";
    std::string scenario_path;
    std::string model_path;
    std::string cert_path;
    std::string cert_out = "certificate.json";
    double scalar_horizon = 10.0, scalar_dt = 0.01;
    double highway_horizon = 2.0, highway_dt = 0.02;
    int mc = 0;
    int max_iters = 2000;
    std::uint64_t seed = 0;

    const auto method_check = CLI::IsMember({"naive", "stable", "both"});
    const auto format_check = CLI::IsMember({"csv", "json", "svg", "all"});

    CLI::App* scalar = app.add_subcommand(
        "scalar-demo", "Integrate the one-dimensional demo system and report tube growth");
    scalar->add_option("--method", method, "Predictor: naive, stable, or both")
        ->check(method_check)
        ->capture_default_str();
    scalar->add_option("--horizon", scalar_horizon, "Prediction horizon in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    scalar->add_option("--dt", scalar_dt, "Integration step in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    scalar->add_option("--out", out_dir, "Output directory")->capture_default_str();
    scalar->add_option("--format", format, "Trace output: csv, json, svg, or all")
        ->check(format_check)
        ->capture_default_str();

    CLI::App* highway = app.add_subcommand(
        "highway", "Predict occupancy tubes for every vehicle of a road scenario");
    highway->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    highway->add_option("--method", method, "Predictor: naive, stable, or both")
        ->check(method_check)
        ->capture_default_str();
    highway->add_option("--horizon", highway_horizon, "Prediction horizon in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    highway->add_option("--dt", highway_dt, "Integration step in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    highway->add_option("--mc", mc, "Closed-loop truth samples (0 disables; gains resampled every 0.2 s)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    highway->add_option("--seed", seed, "Truth sampler seed")->capture_default_str();
    highway->add_option("--out", out_dir, "Output directory")->capture_default_str();
    highway->add_option("--format", format, "Trace output: csv, json, svg, or all")
        ->check(format_check)
        ->capture_default_str();

    CLI::App* cert = app.add_subcommand("cert", "Stability certificates for polytopic models");
    cert->require_subcommand(1);
    CLI::App* check = cert->add_subcommand("check", "Audit a certificate against a model");
    check->add_option("--model", model_path, "Polytopic model JSON file")->required();
    check->add_option("--cert", cert_path, "Certificate JSON file")->required();
    CLI::App* find = cert->add_subcommand("find", "Search for a feasible certificate");
    find->add_option("--model", model_path, "Polytopic model JSON file")->required();
    find->add_option("--seed", seed, "Search seed")->capture_default_str();
    find->add_option("--max-iters", max_iters, "Subgradient steps per restart")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    find->add_option("--out", cert_out, "Certificate output file")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*scalar) return cmd_scalar_demo(method, scalar_horizon, scalar_dt, out_dir, format);
    if (*highway)
        return cmd_highway(scenario_path, method, highway_horizon, highway_dt, mc, seed, out_dir,
                           format);
    if (*check) return cmd_cert_check(model_path, cert_path);
    if (*find) return cmd_cert_find(model_path, seed, max_iters, cert_out);
    return 2;
}
