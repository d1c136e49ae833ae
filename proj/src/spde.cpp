#include "mframe/spde.hpp"

#include "mframe/error.hpp"
#include "mframe/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mframe {

namespace {

MildSolution assemble(const SolutionPath& u, const MultiplicativePath& x, GroupPtr group, FlowPtr flow) {
    MildSolution sol;
    sol.group = std::move(group);
    sol.flow = std::move(flow);
    sol.transformed = u;
    sol.origin = x.origin();
    sol.mesh = u.times.size() - 1;
    sol.p = x.p();
    sol.mild.resize(u.states.rows(), u.states.cols());
    for (std::size_t l = 0; l < u.times.size(); ++l) {
        const double t = u.times[l];
        Vector y = sol.group ? sol.group->apply(t, u.state(l)) : sol.flow->apply(t, u.state(l));
        sol.mild.row(static_cast<Eigen::Index>(l)) = y.transpose();
    }
    return sol;
}

template <class Fn>
auto with_exit_time(Fn fn) {
    return [fn](double t, auto&&... rest) {
        try {
            return fn(t, std::forward<decltype(rest)>(rest)...);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::FlowDomain) throw;
            std::ostringstream msg;
            msg << "trajectory left the flow domain at t = " << t << ": " << e.what();
            fail(ErrorKind::FlowDomain, msg.str());
        }
    };
}

} // namespace

double MildSolution::frame_defect() const {
    double worst = 0.0;
    for (std::size_t l = 0; l < times().size(); ++l) {
        Vector image = group ? group->apply(times()[l], u(l)) : flow->apply(times()[l], u(l));
        worst = std::max(worst, (y(l) - image).cwiseAbs().maxCoeff());
    }
    return worst;
}

MildSolution solve_rpde_group(GroupPtr group, const FieldFamily& f, const MultiplicativePath& x,
                              const Vector& xi, const SolverConfig& cfg) {
    require(group != nullptr, "moving frame needs a group");
    auto g = moving_frame_transform(group, f);
    auto u = solve_time_dependent(g, x, xi, cfg);
    return assemble(u, x, std::move(group), nullptr);
}

MildSolution solve_rpde_flow(FlowPtr flow, const FieldFamily& f, const MultiplicativePath& x,
                             const Vector& xi, const SolverConfig& cfg) {
    require(flow != nullptr, "moving frame needs a flow");
    auto g = flow_frame_transform(flow, f);
    g.value = with_exit_time(g.value);
    for (auto& d : g.derivatives) d = with_exit_time(d);
    g.time_derivative = with_exit_time(g.time_derivative);
    auto u = solve_time_dependent(g, x, xi, cfg);
    try {
        return assemble(u, x, nullptr, std::move(flow));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::FlowDomain) throw;
        fail(ErrorKind::FlowDomain, std::string("trajectory left the flow domain when mapping back: ") + e.what());
    }
}

MildIdentityReport mild_identity_check(const MildSolution& sol, const FieldFamily& f, const Vector& l,
                                       const BrownianSample& sample, std::size_t reference_steps) {
    if (!sol.group) fail(ErrorKind::InputContract, "mild identity check needs a group frame");
    if (!sol.origin || !(*sol.origin == sample.spec)) {
        fail(ErrorKind::InputContract, "solution was not driven by the supplied Brownian sample");
    }
    const std::size_t steps = sol.times().size() - 1;
    const std::size_t fine = sample.spec.fine_steps;
    require(reference_steps >= 1 && steps % reference_steps == 0 && fine % reference_steps == 0,
            "reference mesh must divide both the solver mesh and the Brownian mesh");
    require(l.size() == f.state_dim, "functional has the wrong dimension");
    const int noise = f.drift_channel ? f.noise_dim - 1 : f.noise_dim;
    require(noise == sample.spec.dim, "field and Brownian sample have different noise dimensions");

    const std::size_t stride = steps / reference_steps;
    const std::size_t bstride = fine / reference_steps;
    const int offset = f.drift_channel ? 1 : 0;

    std::vector<double> s(reference_steps + 1);
    std::vector<Matrix> fy(reference_steps + 1);
    Matrix b(reference_steps + 1, noise);
    for (std::size_t k = 0; k <= reference_steps; ++k) {
        s[k] = sol.times()[k * stride];
        require(std::abs(s[k] - sample.times[k * bstride]) <= 1e-12 * (1.0 + std::abs(s[k])),
                "solver grid is not aligned with the Brownian mesh");
        fy[k] = f.value(sol.y(k * stride));
        b.row(static_cast<Eigen::Index>(k)) = sample.points.row(static_cast<Eigen::Index>(k * bstride));
    }

    MildIdentityReport report;
    const Vector y0 = sol.y(0);
    for (std::size_t k = 0; k <= reference_steps; ++k) {
        const double t = s[k];
        // l(P_{t - s_j} f_i(Y_{s_j})) for every channel
        Matrix h(k + 1, f.noise_dim);
        for (std::size_t j = 0; j <= k; ++j) {
            for (int c = 0; c < f.noise_dim; ++c) {
                h(static_cast<Eigen::Index>(j), c) = l.dot(sol.group->apply(t - s[j], fy[j].col(c)));
            }
        }
        double rhs = l.dot(sol.group->apply(t, y0));
        for (std::size_t j = 0; j < k; ++j) {
            const auto a = static_cast<Eigen::Index>(j);
            if (f.drift_channel) rhs += 0.5 * (h(a, 0) + h(a + 1, 0)) * (s[j + 1] - s[j]);
            for (int i = 0; i < noise; ++i) {
                rhs += 0.5 * (h(a, i + offset) + h(a + 1, i + offset)) * (b(a + 1, i) - b(a, i));
            }
        }
        const double lhs = l.dot(sol.y(k * stride));
        report.times.push_back(t);
        report.lhs.push_back(lhs);
        report.rhs.push_back(rhs);
        report.max_deviation = std::max(report.max_deviation, std::abs(lhs - rhs));
    }
    return report;
}

FieldFamily hjm_volatility(const HjmSpec& spec) {
    switch (spec.vol) {
    case HjmVolatility::Constant:
        return hjm_constant_vol(spec.maturities, spec.c);
    case HjmVolatility::Exponential:
        return hjm_exponential_vol(spec.maturities, spec.c, spec.beta);
    }
    fail(ErrorKind::InputContract, "unknown volatility kind");
}

FieldFamily hjm_field(const HjmSpec& spec) {
    auto sigma = hjm_volatility(spec);
    return with_drift(hjm_drift(sigma, spec.maturities), sigma);
}

HjmResult hjm_simulate(const HjmSpec& spec, const SolverConfig& cfg) {
    require(spec.maturities.size() >= 2, "HJM needs at least two maturities");
    require(spec.curve0.size() == static_cast<Eigen::Index>(spec.maturities.size()),
            "initial curve does not match the maturity grid");
    require(spec.brownian.dim == 1, "HJM volatility families are one-factor");
    require(spec.solver_steps >= 1 && spec.brownian.fine_steps % spec.solver_steps == 0,
            "solver steps must divide the Brownian mesh");
    const double h = spec.maturities[1] - spec.maturities[0];
    const double cell = spec.brownian.horizon / static_cast<double>(spec.solver_steps);
    const double slots = cell / h;
    if (std::abs(slots - std::round(slots)) > 1e-9 * std::max(1.0, slots) || std::round(slots) < 1.0) {
        std::ostringstream msg;
        msg << "solver cell " << cell << " is not a multiple of the maturity spacing " << h;
        fail(ErrorKind::InputContract, msg.str());
    }

    auto group = shift_group_grid(spec.maturities);
    auto f = hjm_field(spec);
    auto x = brownian_lift(spec.brownian, 2, spec.brownian.fine_steps, 2.5);
    SolverConfig solver = cfg;
    if (solver.grid.empty()) {
        const std::size_t stride = spec.brownian.fine_steps / spec.solver_steps;
        for (std::size_t k = 0; k <= spec.solver_steps; ++k) solver.grid.push_back(x.grid()[k * stride]);
    }

    HjmResult out;
    out.solution = solve_rpde_group(group, f, x, spec.curve0, solver);
    out.snapshot_times = spec.snapshot_times;
    out.snapshots.resize(static_cast<Eigen::Index>(spec.snapshot_times.size()), spec.curve0.size());
    const auto& times = out.solution.times();
    for (std::size_t k = 0; k < spec.snapshot_times.size(); ++k) {
        const double t = spec.snapshot_times[k];
        auto it = std::min_element(times.begin(), times.end(),
                                   [t](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
        if (std::abs(*it - t) > 1e-9 * (1.0 + std::abs(t))) {
            fail(ErrorKind::InputContract, "snapshot time " + format_double(t) + " is not a solver grid time");
        }
        out.snapshots.row(static_cast<Eigen::Index>(k)) =
            out.solution.mild.row(static_cast<Eigen::Index>(it - times.begin()));
    }
    return out;
}

void write_snapshots_csv(std::ostream& os, const std::vector<double>& maturities, const HjmResult& result) {
    os << "time";
    for (std::size_t i = 0; i < maturities.size(); ++i) os << ",x_" << i;
    os << '\n';
    for (std::size_t k = 0; k < result.snapshot_times.size(); ++k) {
        std::vector<double> row{result.snapshot_times[k]};
        for (Eigen::Index i = 0; i < result.snapshots.cols(); ++i) {
            row.push_back(result.snapshots(static_cast<Eigen::Index>(k), i));
        }
        write_csv_row(os, row);
    }
}

MomentRecord relative_check(std::string name, double estimate, double target, double rel) {
    MomentRecord r{std::move(name), estimate, target, rel * std::abs(target), false};
    r.pass = std::abs(estimate - target) <= r.tolerance;
    return r;
}

MomentRecord stderr_check(std::string name, double estimate, double target, double standard_error, double k) {
    MomentRecord r{std::move(name), estimate, target, k * standard_error, false};
    r.pass = std::abs(estimate - target) <= r.tolerance;
    return r;
}

nlohmann::json to_json(const MomentRecord& r) {
    return {{"name", r.name}, {"estimate", r.estimate}, {"target", r.target}, {"tolerance", r.tolerance},
            {"pass", r.pass}};
}

} // namespace mframe
