#pragma once

#include "mframe/linalg.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace mframe {

/// A strongly continuous group P_t on a finite-dimensional state space,
/// together with its generator A.
class GroupAction {
public:
    virtual ~GroupAction() = default;

    virtual int dim() const = 0;
    virtual Vector apply(double t, const Vector& y) const = 0;
    virtual Vector generator(const Vector& y) const = 0;
    /// "matrix-exponential", "grid-shift" or "dilation".
    virtual std::string kind() const = 0;
};

using GroupPtr = std::shared_ptr<const GroupAction>;

/// A (possibly nonlinear) flow Fl(t, y) with generator field f0 and first variation DFl.
class FlowAction {
public:
    virtual ~FlowAction() = default;

    virtual int dim() const = 0;
    /// Largest |t| for which the flow is defined.
    virtual double horizon() const = 0;
    virtual Vector apply(double t, const Vector& y) const = 0;
    virtual bool provides_variation() const { return true; }
    /// DFl(t, y) as an endomorphism.
    virtual Matrix variation(double t, const Vector& y) const = 0;
    /// Flow map and variation from one integration.
    virtual std::pair<Vector, Matrix> apply_with_variation(double t, const Vector& y) const {
        return {apply(t, y), variation(t, y)};
    }
    virtual Vector drift(const Vector& y) const = 0;
    virtual Matrix drift_jacobian(const Vector& y) const = 0;
};

using FlowPtr = std::shared_ptr<const FlowAction>;

/// P_t = exp(tA). Exponentials at `cache_times` (and their negatives) are
/// built at construction; other times are computed on demand.
GroupPtr matrix_exp_group(const Matrix& generator, const std::vector<double>& cache_times = {});

/// Identity group on R^dim (A = 0).
GroupPtr identity_group(int dim);

/// Shift group (P_t r)(x) = r(x + t) on a uniform maturity grid with
/// constant extrapolation at both ends. Only multiples of the spacing are allowed.
GroupPtr shift_group_grid(const std::vector<double>& maturities);

struct FlowOptions {
    double tolerance = 1e-12;
    double horizon = 10.0;
};

using DriftFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

/// Flow of dy/dt = f0(y) by adaptive Dormand-Prince integration; the variation
/// is integrated jointly from the identity. A null Jacobian is replaced by
/// central differences.
FlowPtr flow_from_field(int dim, DriftFn f0, JacobianFn jacobian, FlowOptions options = {});

/// Exact linear flow exp(tA) y.
FlowPtr linear_flow(const Matrix& generator, double horizon = 1e6);

/// Flow given only by its map: no variation data, so it cannot be used as a moving frame.
FlowPtr map_only_flow(int dim, std::function<Vector(double, const Vector&)> map, DriftFn f0);

/// Discrete-time unitary dilation of the contraction T0 = exp(-omega*step) exp(step*A).
///
/// The ambient space is W = (past channel, L blocks) + H + (future channel, L blocks),
/// ordered so that H occupies rows [L*n, (L+1)*n). The two-sided shift is
/// closed into a ring, so pi U^k iota = T0^k and pi U^{-k} iota = (T0^T)^k
/// hold exactly for |k| <= 2L.
struct DilatedGroup {
    Matrix contraction;  // T0 on H
    Matrix unitary;      // U on W
    double step = 0.0;
    int channel_length = 0;
    double growth = 0.0;  // omega
    int state_dim = 0;

    int ambient_dim() const { return static_cast<int>(unitary.rows()); }
    Vector embed(const Vector& h) const;
    Vector project(const Vector& w) const;
    /// U^k w for any integer k (negative powers use U^T).
    Vector power(int k, const Vector& w) const;
};

DilatedGroup nagy_dilate(const Matrix& generator, double growth, double step, int channel_length);

/// Group action on W with apply(k*step) = exp(omega*k*step) U^k. The generator
/// is the central difference (P_step - P_{-step}) / (2 step) of the discrete group.
GroupPtr dilated_group_action(const DilatedGroup& dilation);

/// Largest singular value of a square matrix.
double spectral_norm(const Matrix& m);

} // namespace mframe
