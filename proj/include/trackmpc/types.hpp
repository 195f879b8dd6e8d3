#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trackmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Steady-state membership tolerance for ||f(x_r,u_r) - x_r||_2.
inline constexpr double kEqTol = 1e-8;

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced while rolling out the dynamics.
class DivergedError : public Error {
public:
    DivergedError(std::size_t index, const std::string& what)
        : Error(what), index_(index) {}
    [[nodiscard]] std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

class SingularityError : public Error {
public:
    using Error::Error;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(double residual, const std::string& what)
        : Error(what), residual_(residual) {}
    [[nodiscard]] double residual() const { return residual_; }

private:
    double residual_;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Raised for malformed configuration; the CLI maps it to exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Axis-aligned box [lower, upper].
struct Box {
    Vector lower;
    Vector upper;

    Box() = default;
    Box(Vector lo, Vector hi);

    [[nodiscard]] Index dim() const { return lower.size(); }
    [[nodiscard]] bool contains(const Eigen::Ref<const Vector>& v, double tol = 0.0) const;
    [[nodiscard]] bool strictly_inside(const Box& outer) const;
    [[nodiscard]] bool is_bounded() const;
    [[nodiscard]] Vector clamp(const Eigen::Ref<const Vector>& v) const;
    [[nodiscard]] Vector center() const { return 0.5 * (lower + upper); }
    [[nodiscard]] double diameter() const { return (upper - lower).norm(); }
};

}  // namespace trackmpc
