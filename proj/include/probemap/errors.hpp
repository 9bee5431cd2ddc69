#pragma once

// Exception hierarchy shared by every probemap module.
//
// Two families exist: ValidationError (bad input, bad configuration, schema
// problems) and NumericalError (the numerics could not deliver the contract).
// The CLI maps them to exit codes 1 and 2 respectively.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace probemap {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Validation family
// ---------------------------------------------------------------------------

class InvalidNetwork : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InvalidParams : public ValidationError {
public:
    InvalidParams(std::string field, const std::string& what)
        : ValidationError("invalid parameter '" + field + "': " + what), field_(std::move(field)) {}
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

class UnknownMaterial : public ValidationError {
public:
    explicit UnknownMaterial(const std::string& name)
        : ValidationError("unknown material '" + name + "'") {}
};

class PreconditionViolation : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class GridError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class MissingSensor : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConventionMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class RangeViolation : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// ---------------------------------------------------------------------------
// Numerical family
// ---------------------------------------------------------------------------

class NonConvergence : public NumericalError {
public:
    NonConvergence(int iterations, double residual)
        : NumericalError("solver did not converge after " + std::to_string(iterations) +
                         " iterations (max residual " + std::to_string(residual) + " W)"),
          iterations_(iterations),
          residual_(residual) {}
    [[nodiscard]] int iterations() const { return iterations_; }
    [[nodiscard]] double residual() const { return residual_; }

private:
    int iterations_;
    double residual_;
};

class SingularSystem : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SweepFailed : public NumericalError {
public:
    struct Point {
        std::size_t index;
        double T_medium;
        double T_ambient;
        std::string reason;
    };

    explicit SweepFailed(std::vector<Point> points)
        : NumericalError(describe(points)), points_(std::move(points)) {}
    [[nodiscard]] const std::vector<Point>& points() const { return points_; }

private:
    static std::string describe(const std::vector<Point>& points) {
        std::string msg = "sweep failed at " + std::to_string(points.size()) + " grid point(s):";
        for (const auto& p : points) {
            msg += " [" + std::to_string(p.index) + "] Tm=" + std::to_string(p.T_medium) +
                   " K Ta=" + std::to_string(p.T_ambient) + " K (" + p.reason + ")";
        }
        return msg;
    }
    std::vector<Point> points_;
};

class RankDeficient : public NumericalError {
public:
    explicit RankDeficient(double condition)
        : NumericalError("design matrix is rank deficient (condition number " +
                         std::to_string(condition) + ")"),
          condition_(condition) {}
    [[nodiscard]] double condition_number() const { return condition_; }

private:
    double condition_;
};

class NoFeasibleCandidate : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class OverflowRisk : public NumericalError {
public:
    OverflowRisk(std::size_t step, std::string detail, long double lo, long double hi)
        : NumericalError("overflow risk at step " + std::to_string(step) + " (" + detail +
                         "): interval [" + std::to_string(static_cast<double>(lo)) + ", " +
                         std::to_string(static_cast<double>(hi)) +
                         "] exceeds the word width; increase integer_bits or shrink the range"),
          step_(step),
          lo_(lo),
          hi_(hi) {}
    [[nodiscard]] std::size_t step() const { return step_; }
    [[nodiscard]] long double lo() const { return lo_; }
    [[nodiscard]] long double hi() const { return hi_; }

private:
    std::size_t step_;
    long double lo_;
    long double hi_;
};

}  // namespace probemap
