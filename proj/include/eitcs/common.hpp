#pragma once

#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace eitcs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Point = Eigen::Vector2d;

// Malformed arguments or inconsistent inputs supplied by the caller.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation broke down (singular system, non-finite values).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file could not be parsed or failed an integrity check.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Closed conductivity interval [lower, upper] with 0 < lower < upper.
struct Box {
    double lower = 0.1;
    double upper = 3.0;

    bool contains(double v) const { return v >= lower && v <= upper; }
    bool contains(const Vector& v) const
    {
        return v.size() == 0 || (v.minCoeff() >= lower && v.maxCoeff() <= upper);
    }
    void validate() const
    {
        if (!(lower > 0.0) || !(lower < upper))
            throw InputError("box bounds must satisfy 0 < lower < upper");
    }
};

// Nodal (piecewise-affine) conductivity, one value per mesh vertex, in S/m.
struct ConductivityField {
    Vector values;
    Box bounds;
    // Digest of the mesh the values live on; empty when unbound.
    std::string mesh_digest;

    Eigen::Index size() const { return values.size(); }
    bool admissible() const { return values.allFinite() && bounds.contains(values); }

    static ConductivityField constant(Eigen::Index n, double value, Box bounds = {})
    {
        return {Vector::Constant(n, value), bounds, {}};
    }
};

} // namespace eitcs
