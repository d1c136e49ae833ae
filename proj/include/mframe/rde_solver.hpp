#pragma once

#include "mframe/linalg.hpp"
#include "mframe/rough_path.hpp"
#include "mframe/vector_fields.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace mframe {

enum class Scheme { Euler, Picard };

struct SolverConfig {
    Scheme scheme = Scheme::Euler;
    /// Euler order N; must satisfy floor(p) <= N <= driver level.
    int order = 2;
    int max_iterations = 60;
    /// Picard stops once successive iterates differ by less than this (sup norm).
    double tolerance = 1e-10;
    /// Solver grid, a subset of the driver grid; empty means the driver grid.
    std::vector<double> grid;
    /// Split the interval in half instead of failing when Picard does not contract.
    bool halve_on_noncontraction = false;
    /// Also assemble the joined path Z = (X, U).
    bool build_joined = false;
};

struct SolutionPath {
    std::vector<double> times;
    Matrix states;  // one row per solver grid time
    /// Picard: sup-norm differences of successive iterates and their ratios.
    std::vector<double> picard_residuals;
    std::vector<double> picard_ratios;
    int iterations = 0;
    int segments = 1;
    bool converged = true;
    std::optional<MultiplicativePath> joined;

    Vector state(std::size_t l) const { return states.row(static_cast<Eigen::Index>(l)).transpose(); }
    Vector terminal() const { return state(times.size() - 1); }
};

/// Step-N Euler scheme: U <- U + sum_{|w| <= N} (V_w I)(U) X^w over each solver cell;
/// N = 2 is the Davie scheme U + g(U) X^1 + (Dg g)(U) X^2.
SolutionPath euler_solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                         const SolverConfig& cfg);

/// Picard iteration Y(n+1) = int g(Y(n) + xi) dX from Y(0) = 0, each integral
/// taken as a level-2 controlled sum with Gubinelli derivative g(Y(n-1) + xi).
SolutionPath picard_solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                          const SolverConfig& cfg);

/// Solve du = g(t,u) dX through the time-extended system
/// (s, u) -> (r, v) = (r, g(s,u) v) driven by time_extend(X). With a drift
/// channel, column 0 of g is driven by the time coordinate. The scheme is
/// taken from cfg.scheme.
SolutionPath solve_time_dependent(const TransformedField& g, const MultiplicativePath& x,
                                  const Vector& xi, const SolverConfig& cfg);

/// Dispatch on cfg.scheme for an autonomous family.
SolutionPath solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                   const SolverConfig& cfg);

struct WongZakaiRow {
    int level = 0;            // dyadic level: 2^level interpolation cells
    double dp_estimate = 0.0; // mean d_p to the finest path over seeds
    double mean_error = 0.0;  // mean terminal error over seeds
    std::vector<double> errors;
};

struct WongZakaiOptions {
    std::vector<int> levels;  // coarse dyadic levels, each below log2(fine_steps)
    int seeds = 32;
    double p = 2.5;
    bool compute_dp = true;
};

/// Solves along piecewise-linear interpolations of one fine Brownian path per
/// seed and compares terminal states with the solution driven by the fine path.
/// The last row is the fine level itself (error zero).
std::vector<WongZakaiRow> wong_zakai_study(const FieldFamily& g, const BrownianSpec& brownian,
                                           const Vector& xi, const WongZakaiOptions& options);

/// CSV rows `step,time,state_norm,ratio` (ratio empty where not defined).
void write_solver_diagnostics(std::ostream& os, const SolutionPath& sol);

} // namespace mframe
