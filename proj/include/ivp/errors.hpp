#pragma once

#include <stdexcept>
#include <string>

namespace ivp {

// Base class for everything thrown by this library, so callers can catch
// library errors separately from std ones.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or invalid dimensions (non-square where square is required, etc).
struct DimensionError : Error {
    using Error::Error;
};

// An interval with lower > upper, or a predictor state whose ordering broke.
struct OrderViolation : Error {
    double time;
    OrderViolation(const std::string& msg, double t) : Error(msg), time(t) {}
};

// --- similarity-transform construction failures ---------------------------

struct NotRealDiagonalisable : Error {
    using Error::Error;
};

struct IllConditioned : Error {
    using Error::Error;
};

struct MuTooSmall : Error {
    using Error::Error;
};

struct SpectrumMatchFailure : Error {
    using Error::Error;
};

// --- traffic-model construction failures -----------------------------------

struct SpeedTooLow : Error {
    using Error::Error;
};

struct CyclicFollowing : Error {
    using Error::Error;
};

// --- scenario file handling -------------------------------------------------

struct ParseError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

}  // namespace ivp
