#pragma once

#include "mframe/linalg.hpp"
#include "mframe/semigroup.hpp"

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mframe {

/// f(y): state_dim x noise_dim matrix, column b is the field driven by channel b.
using FieldValueFn = std::function<Matrix(const Vector&)>;
/// f^j(y)[w_1, ..., w_j]: j-th space derivative applied to j directions.
using FieldDerivativeFn = std::function<Matrix(const Vector&, std::span<const Vector>)>;

using TimeFieldValueFn = std::function<Matrix(double, const Vector&)>;
using TimeFieldDerivativeFn = std::function<Matrix(double, const Vector&, std::span<const Vector>)>;

/// Lip(gamma) vector-field family f = (f^0, ..., f^k), k = ceil(gamma) - 1.
///
/// With `drift_channel` set, column 0 is a dt-coefficient and is driven by
/// the time coordinate of a time-extended signal; the remaining columns are
/// driven by the noise channels.
struct FieldFamily {
    int state_dim = 0;
    int noise_dim = 0;
    double gamma = 1.0;
    double bound = std::numeric_limits<double>::infinity();
    bool drift_channel = false;
    FieldValueFn value;
    std::vector<FieldDerivativeFn> derivatives;

    int levels() const { return static_cast<int>(derivatives.size()); }
    Matrix operator()(const Vector& y) const { return value(y); }
    Matrix derivative(int j, const Vector& y, std::span<const Vector> dirs) const;
    /// Throws InputContract unless ceil(gamma) - 1 derivative levels are present.
    void validate() const;
};

/// Time-dependent field g(t, u) with space derivatives and a time derivative,
/// e.g. the moving-frame image of a FieldFamily.
struct TransformedField {
    int state_dim = 0;
    int noise_dim = 0;
    bool drift_channel = false;
    TimeFieldValueFn value;
    std::vector<TimeFieldDerivativeFn> derivatives;
    TimeFieldValueFn time_derivative;

    int levels() const { return static_cast<int>(derivatives.size()); }
    Matrix operator()(double t, const Vector& u) const { return value(t, u); }

    /// Wrap an autonomous family (time derivative zero).
    static TransformedField autonomous(const FieldFamily& f);
    /// Freeze the time argument.
    FieldFamily at(double t) const;
};

/// Step used for finite-difference derivative levels.
inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Build derivative levels 1..levels by central differences of the level below.
FieldFamily with_finite_differences(int state_dim, int noise_dim, FieldValueFn value, int levels,
                                    double gamma);

// Catalog constructors. All supply analytic derivative levels.

FieldFamily constant_field(const Matrix& value);
/// f(y)v = sum_b v_b B_b y.
FieldFamily linear_field(const std::vector<Matrix>& generators);
/// f_{ij}(y) = scale * sin(<freq_{ij}, y> + phase_{ij}); freq/phase indexed i * noise_dim + j.
FieldFamily sine_field(int state_dim, int noise_dim, double scale, std::vector<Vector> freq,
                       std::vector<double> phase);
/// Scalar f(y) = scale * y (1 - y).
FieldFamily logistic_field(double scale);
/// Curve-valued volatility sigma(r)(x) = c on the maturity grid (one factor).
FieldFamily hjm_constant_vol(const std::vector<double>& maturities, double c);
/// sigma(r)(x) = c exp(-beta x).
FieldFamily hjm_exponential_vol(const std::vector<double>& maturities, double c, double beta);

/// Prepend a dt-column `drift` to `noise`, producing a family with drift_channel set.
FieldFamily with_drift(const FieldFamily& drift, const FieldFamily& noise);

struct LipEstimate {
    double bound = 0.0;                  // max_j sup |f^j|
    double worst_remainder_ratio = 0.0;  // max_j sup |R_j| / |x - y|^(gamma - j)
    std::vector<double> level_bounds;
    std::vector<double> remainder_ratios;

    bool passes(double m) const { return bound <= m && worst_remainder_ratio <= m; }
};

/// Sampled Lip(gamma) diagnostic over all pairs of sample points within `radius`.
/// Norms are Euclidean (Frobenius) norms of the full coefficient tensors.
LipEstimate lip_gamma_estimate(const FieldFamily& f, const std::vector<Vector>& samples, double radius);

/// g(t,u)v = P_{-t} f(P_t u) v, with space derivatives by the chain rule and
/// d/dt g = -A g + P_{-t} Df(P_t u)[A P_t u].
TransformedField moving_frame_transform(GroupPtr group, const FieldFamily& f);

/// g(t,u)v = DFl_{-t}(Fl(t,u)) f(Fl(t,u)) v, computed as DFl_t(u)^{-1} f(Fl(t,u)) v.
/// Only the first space-derivative level is provided; it needs the second
/// variation of the flow, which is taken by central differences of DFl.
TransformedField flow_frame_transform(FlowPtr flow, const FieldFamily& f);

/// HJM drift alpha(r)(x) = sum_i sigma_i(r)(x) * int_0^x sigma_i(r), with the
/// integral by the trapezoidal rule on the uniform maturity grid. `sigma` must
/// not carry a drift channel; the result has a single column.
FieldFamily hjm_drift(const FieldFamily& sigma, const std::vector<double>& maturities);

} // namespace mframe
