#pragma once

#include "mframe/rde_solver.hpp"
#include "mframe/semigroup.hpp"

#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mframe {

/// Mild solution Y_t = P_t U_t (or Fl(t, U_t)) of dY = A Y dt + f(Y) dX.
struct MildSolution {
    GroupPtr group;  // exactly one of group / flow is set
    FlowPtr flow;
    SolutionPath transformed;  // U on the solver grid
    Matrix mild;               // Y, one row per grid time
    std::optional<BrownianSpec> origin;
    std::size_t mesh = 0;
    double p = 1.0;

    const std::vector<double>& times() const { return transformed.times; }
    Vector y(std::size_t l) const { return mild.row(static_cast<Eigen::Index>(l)).transpose(); }
    Vector u(std::size_t l) const { return transformed.state(l); }
    /// max_t |Y_t - frame(t, U_t)|; zero by construction.
    double frame_defect() const;
};

MildSolution solve_rpde_group(GroupPtr group, const FieldFamily& f, const MultiplicativePath& x,
                              const Vector& xi, const SolverConfig& cfg);

/// Flow-domain failures are rethrown with the time at which the trajectory left the domain.
MildSolution solve_rpde_flow(FlowPtr flow, const FieldFamily& f, const MultiplicativePath& x,
                             const Vector& xi, const SolverConfig& cfg);

struct MildIdentityReport {
    std::vector<double> times;
    std::vector<double> lhs;  // l(Y_t)
    std::vector<double> rhs;  // l(P_t xi) + sum_i int l(P_{t-s} f_i(Y_s)) o dX^i_s
    double max_deviation = 0.0;
};

/// Pathwise check of l(Y_t) = l(P_t Y_0) + sum_i int_0^t l(P_{t-s} f_i(Y_s)) o dB^i_s.
/// Stratonovich integrals are trapezoidal sums along `sample` on a mesh of
/// `reference_steps` cells, which must divide the solution's step count.
/// A drift column of f is integrated against dt.
MildIdentityReport mild_identity_check(const MildSolution& sol, const FieldFamily& f, const Vector& l,
                                       const BrownianSample& sample, std::size_t reference_steps);

enum class HjmVolatility { Constant, Exponential };

struct HjmSpec {
    HjmVolatility vol = HjmVolatility::Constant;
    double c = 0.0;
    double beta = 0.0;
    std::vector<double> maturities;  // uniform
    Vector curve0;
    BrownianSpec brownian;           // one factor
    std::size_t solver_steps = 0;    // cell length must be a multiple of the maturity spacing
    std::vector<double> snapshot_times;
};

struct HjmResult {
    MildSolution solution;
    std::vector<double> snapshot_times;
    Matrix snapshots;  // one curve per row
};

/// Volatility family, drift alpha(r) = sigma(r) * int_0^x sigma(r), and the
/// combined family with the drift column.
FieldFamily hjm_volatility(const HjmSpec& spec);
FieldFamily hjm_field(const HjmSpec& spec);

HjmResult hjm_simulate(const HjmSpec& spec, const SolverConfig& cfg);

/// Curve snapshots as CSV: header `time,x_0,...,x_M`, one row per snapshot.
void write_snapshots_csv(std::ostream& os, const std::vector<double>& maturities, const HjmResult& result);

struct MomentRecord {
    std::string name;
    double estimate = 0.0;
    double target = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// |estimate - target| <= rel * |target|.
MomentRecord relative_check(std::string name, double estimate, double target, double rel);
/// |estimate - target| <= k * stderr.
MomentRecord stderr_check(std::string name, double estimate, double target, double standard_error, double k);

nlohmann::json to_json(const MomentRecord& r);

} // namespace mframe
