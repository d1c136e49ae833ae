#include "mframe/rde_solver.hpp"

#include "mframe/error.hpp"
#include "mframe/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mframe {

namespace {

MultiplicativePath solver_path(const MultiplicativePath& x, const SolverConfig& cfg) {
    if (cfg.grid.empty()) return x;
    std::vector<std::size_t> idx;
    idx.reserve(cfg.grid.size());
    for (double t : cfg.grid) idx.push_back(x.index_of(t));
    return x.restrict_to(idx);
}

void check_order(const MultiplicativePath& x, int order) {
    require(order >= 1 && order <= 3, "Euler order must be 1, 2 or 3");
    if (order < static_cast<int>(std::floor(x.p()))) {
        fail(ErrorKind::InputContract, "Euler order " + std::to_string(order) + " is below floor(p) = " +
                                           std::to_string(static_cast<int>(std::floor(x.p()))));
    }
    if (order > x.level()) {
        fail(ErrorKind::Capability, "Euler order " + std::to_string(order) + " needs driver level " +
                                        std::to_string(order) + ", driver has " + std::to_string(x.level()));
    }
}

void check_finite(const Vector& u, std::size_t step) {
    if (!u.allFinite()) {
        fail(ErrorKind::Divergence, "non-finite state at step " + std::to_string(step));
    }
}

// Joined path Z = (X, U) over each solver cell, geometric at level 2, with
// cross terms from the local expansion dU ~ g(U_l) dX.
MultiplicativePath assemble_joined(const MultiplicativePath& x, const Matrix& states,
                                   const std::vector<Matrix>& fields) {
    const int d = x.dim();
    const int n = static_cast<int>(states.cols());
    const int dz = d + n;
    const int m = std::min(x.level(), 2);
    std::vector<GroupElement> steps;
    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        auto t = TruncatedTensor::identity(dz, m);
        auto x1 = x.step(l).block(1);
        Vector du = (states.row(static_cast<Eigen::Index>(l + 1)) - states.row(static_cast<Eigen::Index>(l))).transpose();
        Vector dx(d);
        for (int a = 0; a < d; ++a) dx(a) = x1[static_cast<std::size_t>(a)];
        Vector dz1(dz);
        dz1 << dx, du;
        std::copy(dz1.data(), dz1.data() + dz, t.block(1).begin());
        if (m == 2) {
            const Matrix& g = fields[l];
            auto x2s = x.step(l).block(2);
            Matrix x2(d, d);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) x2(a, b) = x2s[static_cast<std::size_t>(a * d + b)];
            Matrix anti = 0.5 * (x2 - x2.transpose());
            Matrix z2(dz, dz);
            z2.topLeftCorner(d, d) = x2;
            Matrix xu = x2 * g.transpose();  // int dX^a dU^b
            z2.topRightCorner(d, n) = xu;
            z2.bottomLeftCorner(n, d) = du * dx.transpose() - xu.transpose();
            z2.bottomRightCorner(n, n) = 0.5 * du * du.transpose() + g * anti * g.transpose();
            auto b2 = t.block(2);
            for (int i = 0; i < dz; ++i)
                for (int k = 0; k < dz; ++k) b2[static_cast<std::size_t>(i * dz + k)] = z2(i, k);
        }
        steps.emplace_back(std::move(t));
    }
    return MultiplicativePath(x.grid(), std::move(steps), x.p());
}

SolutionPath euler_core(const FieldFamily& h, const MultiplicativePath& x, const Vector& xi, int order,
                        bool pinned_time, bool build_joined) {
    const int n = h.state_dim;
    const int m = h.noise_dim;
    require(x.dim() == m, "driver dimension " + std::to_string(x.dim()) + " does not match field noise dimension " +
                              std::to_string(m));
    require(xi.size() == n, "initial state has the wrong dimension");
    if (order >= 2 && h.levels() < order - 1) {
        fail(ErrorKind::Capability, "Euler order " + std::to_string(order) + " needs " +
                                        std::to_string(order - 1) + " derivative levels of the field");
    }
    const auto& times = x.grid();
    SolutionPath sol;
    sol.times = times;
    sol.states.resize(static_cast<Eigen::Index>(times.size()), n);
    Vector u = xi;
    if (pinned_time) u(0) = times[0];
    sol.states.row(0) = u.transpose();
    std::vector<Matrix> fields;
    std::vector<Matrix> first(static_cast<std::size_t>(m));
    Vector delta(n);

    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        const auto& inc = x.step(l);
        const Matrix g = h.value(u);
        if (build_joined) fields.push_back(g);
        delta.setZero();
        auto x1 = inc.block(1);
        for (int b = 0; b < m; ++b) {
            for (int k = 0; k < n; ++k) delta(k) += g(k, b) * x1[static_cast<std::size_t>(b)];
        }
        if (order >= 2) {
            auto x2 = inc.block(2);
            for (int a = 0; a < m; ++a) {
                Vector dir = g.col(a);
                first[static_cast<std::size_t>(a)] = h.derivative(1, u, std::span<const Vector>(&dir, 1));
            }
            for (int a = 0; a < m; ++a) {
                const Matrix& da = first[static_cast<std::size_t>(a)];
                for (int b = 0; b < m; ++b) {
                    double c = x2[static_cast<std::size_t>(a * m + b)];
                    for (int k = 0; k < n; ++k) delta(k) += da(k, b) * c;
                }
            }
        }
        if (order >= 3) {
            auto x3 = inc.block(3);
            for (int a = 0; a < m; ++a) {
                for (int b = 0; b < m; ++b) {
                    std::array<Vector, 2> dirs{Vector(g.col(b)), Vector(g.col(a))};
                    Matrix second = h.derivative(2, u, std::span<const Vector>(dirs.data(), 2));
                    Vector inner = first[static_cast<std::size_t>(a)].col(b);
                    Matrix chained = h.derivative(1, u, std::span<const Vector>(&inner, 1));
                    for (int c = 0; c < m; ++c) {
                        double coeff = x3[static_cast<std::size_t>((a * m + b) * m + c)];
                        for (int k = 0; k < n; ++k) delta(k) += (second(k, c) + chained(k, c)) * coeff;
                    }
                }
            }
        }
        u += delta;
        if (pinned_time) u(0) = times[l + 1];
        check_finite(u, l + 1);
        sol.states.row(static_cast<Eigen::Index>(l + 1)) = u.transpose();
    }
    if (build_joined) sol.joined = assemble_joined(x, sol.states, fields);
    return sol;
}

SolutionPath picard_core(const FieldFamily& h, const MultiplicativePath& x, const Vector& xi,
                         const SolverConfig& cfg, bool pinned_time) {
    const int n = h.state_dim;
    const int m = h.noise_dim;
    require(x.dim() == m, "driver dimension does not match field noise dimension");
    require(xi.size() == n, "initial state has the wrong dimension");
    const bool second_level = x.level() >= 2 && cfg.order >= 2;
    if (second_level && h.levels() < 1) fail(ErrorKind::Capability, "Picard iteration needs f^1");

    const auto& times = x.grid();
    const std::size_t steps = x.num_steps();
    const auto rows = static_cast<Eigen::Index>(steps + 1);

    Matrix y = Matrix::Zero(rows, n);                   // Y(0) = 0
    std::vector<Matrix> deriv(steps + 1, Matrix::Zero(n, m));  // Gubinelli derivative of Y(n)
    SolutionPath sol;
    sol.times = times;
    sol.converged = false;
    int over_one = 0;

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        Matrix next(rows, n);
        next.row(0).setZero();
        std::vector<Matrix> next_deriv(steps + 1);
        for (std::size_t l = 0; l <= steps; ++l) {
            Vector z = xi + y.row(static_cast<Eigen::Index>(l)).transpose();
            if (pinned_time) z(0) = times[l];
            Matrix g = h.value(z);
            next_deriv[l] = g;
            if (l == steps) break;
            const auto& inc = x.step(l);
            Vector delta = Vector::Zero(n);
            auto x1 = inc.block(1);
            for (int b = 0; b < m; ++b) {
                for (int k = 0; k < n; ++k) delta(k) += g(k, b) * x1[static_cast<std::size_t>(b)];
            }
            if (second_level) {
                auto x2 = inc.block(2);
                for (int a = 0; a < m; ++a) {
                    Vector dir = deriv[l].col(a);
                    if (dir.isZero(0.0)) continue;
                    Matrix da = h.derivative(1, z, std::span<const Vector>(&dir, 1));
                    for (int b = 0; b < m; ++b) {
                        double c = x2[static_cast<std::size_t>(a * m + b)];
                        for (int k = 0; k < n; ++k) delta(k) += da(k, b) * c;
                    }
                }
            }
            Vector row = next.row(static_cast<Eigen::Index>(l)).transpose() + delta;
            check_finite(row, l + 1);
            next.row(static_cast<Eigen::Index>(l + 1)) = row.transpose();
        }
        double residual = (next - y).cwiseAbs().maxCoeff();
        y = std::move(next);
        deriv = std::move(next_deriv);
        sol.iterations = it;
        if (!sol.picard_residuals.empty()) {
            double prev = sol.picard_residuals.back();
            double ratio = prev > 0.0 ? residual / prev : 0.0;
            sol.picard_ratios.push_back(ratio);
            over_one = ratio >= 1.0 ? over_one + 1 : 0;
        }
        sol.picard_residuals.push_back(residual);
        if (residual <= cfg.tolerance) {
            sol.converged = true;
            break;
        }
        if (over_one >= 3) {
            fail(ErrorKind::NonContraction,
                 "Picard iteration did not contract for 3 consecutive iterations on [" +
                     std::to_string(times.front()) + ", " + std::to_string(times.back()) +
                     "]; shorten the interval");
        }
    }

    sol.states = y.rowwise() + xi.transpose();
    if (pinned_time) {
        for (std::size_t l = 0; l <= steps; ++l) sol.states(static_cast<Eigen::Index>(l), 0) = times[l];
    }
    if (cfg.build_joined) {
        std::vector<Matrix> fields(deriv.begin(), deriv.end() - 1);
        sol.joined = assemble_joined(x, sol.states, fields);
    }
    return sol;
}

SolutionPath picard_with_halving(const FieldFamily& h, const MultiplicativePath& x, const Vector& xi,
                                 const SolverConfig& cfg, bool pinned_time) {
    try {
        return picard_core(h, x, xi, cfg, pinned_time);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonContraction || !cfg.halve_on_noncontraction || x.num_steps() < 2) throw;
    }
    const std::size_t mid = x.num_steps() / 2;
    std::vector<std::size_t> left(mid + 1), right(x.num_steps() - mid + 1);
    std::iota(left.begin(), left.end(), std::size_t{0});
    std::iota(right.begin(), right.end(), mid);
    auto first = picard_with_halving(h, x.restrict_to(left), xi, cfg, pinned_time);
    auto second = picard_with_halving(h, x.restrict_to(right), first.terminal(), cfg, pinned_time);

    SolutionPath sol;
    sol.times = x.grid();
    sol.states.resize(static_cast<Eigen::Index>(sol.times.size()), h.state_dim);
    sol.states.topRows(first.states.rows()) = first.states;
    sol.states.bottomRows(second.states.rows()) = second.states;
    sol.picard_residuals = first.picard_residuals;
    sol.picard_residuals.insert(sol.picard_residuals.end(), second.picard_residuals.begin(), second.picard_residuals.end());
    sol.picard_ratios = first.picard_ratios;
    sol.picard_ratios.insert(sol.picard_ratios.end(), second.picard_ratios.begin(), second.picard_ratios.end());
    sol.iterations = first.iterations + second.iterations;
    sol.segments = first.segments + second.segments;
    sol.converged = first.converged && second.converged;
    return sol;
}

// (s, y) -> (r, v) = (r, g(s, y) v); with a drift channel, column 0 of g
// is attached to the time increment r.
FieldFamily extend_with_time(const TransformedField& g) {
    const int n = g.state_dim;
    const int d = g.drift_channel ? g.noise_dim - 1 : g.noise_dim;
    const bool drift = g.drift_channel;
    FieldFamily f;
    f.state_dim = n + 1;
    f.noise_dim = d + 1;
    f.gamma = 2.0;
    auto place = [n, d, drift](const Matrix& inner) {
        Matrix out = Matrix::Zero(n + 1, d + 1);
        if (drift) {
            out.bottomRows(n) = inner;
        } else {
            out.block(1, 1, n, d) = inner;
        }
        return out;
    };
    auto value = g.value;
    f.value = [value, place, n](const Vector& z) {
        Matrix out = place(value(z(0), z.tail(n)));
        out(0, 0) = 1.0;
        return out;
    };
    if (g.levels() >= 1) {
        auto d1 = g.derivatives.front();
        auto dt = g.time_derivative;
        f.derivatives.push_back([d1, dt, place, n](const Vector& z, std::span<const Vector> w) {
            const double s = z(0);
            Vector y = z.tail(n);
            Vector dy = w[0].tail(n);
            Matrix inner = d1(s, y, std::span<const Vector>(&dy, 1));
            const double ds = w[0](0);
            if (ds != 0.0) inner += ds * dt(s, y);
            return place(inner);
        });
    }
    return f;
}

} // namespace

SolutionPath euler_solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                         const SolverConfig& cfg) {
    auto path = solver_path(x, cfg);
    check_order(path, cfg.order);
    return euler_core(g, path, xi, cfg.order, false, cfg.build_joined);
}

SolutionPath picard_solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                          const SolverConfig& cfg) {
    auto path = solver_path(x, cfg);
    check_order(path, std::min(cfg.order, path.level()));
    require(cfg.max_iterations >= 1, "Picard needs at least one iteration");
    return picard_with_halving(g, path, xi, cfg, false);
}

SolutionPath solve(const FieldFamily& g, const MultiplicativePath& x, const Vector& xi,
                   const SolverConfig& cfg) {
    return cfg.scheme == Scheme::Euler ? euler_solve(g, x, xi, cfg) : picard_solve(g, x, xi, cfg);
}

SolutionPath solve_time_dependent(const TransformedField& g, const MultiplicativePath& x,
                                  const Vector& xi, const SolverConfig& cfg) {
    const int d = g.drift_channel ? g.noise_dim - 1 : g.noise_dim;
    require(x.dim() == d, "driver dimension does not match the field's noise channels");
    require(xi.size() == g.state_dim, "initial state has the wrong dimension");
    // Extend on the driver grid so cross integrals see the fine path, then restrict.
    auto extended = solver_path(time_extend(x), cfg);
    const auto h = extend_with_time(g);
    Vector z(g.state_dim + 1);
    z << extended.grid().front(), xi;

    SolutionPath ext;
    if (cfg.scheme == Scheme::Euler) {
        check_order(extended, cfg.order);
        ext = euler_core(h, extended, z, cfg.order, true, false);
    } else {
        check_order(extended, std::min(cfg.order, extended.level()));
        ext = picard_with_halving(h, extended, z, cfg, true);
    }
    SolutionPath sol = std::move(ext);
    Matrix states = sol.states.rightCols(g.state_dim);
    sol.states = std::move(states);
    return sol;
}

std::vector<WongZakaiRow> wong_zakai_study(const FieldFamily& g, const BrownianSpec& brownian,
                                           const Vector& xi, const WongZakaiOptions& options) {
    require(options.levels.size() >= 2, "Wong-Zakai study needs at least two dyadic levels");
    require(options.seeds >= 1, "Wong-Zakai study needs at least one seed");
    const std::size_t fine = brownian.fine_steps;
    require(fine >= 2 && (fine & (fine - 1)) == 0, "fine mesh must have a power-of-two number of steps");
    const int fine_level = static_cast<int>(std::lround(std::log2(static_cast<double>(fine))));
    for (int lv : options.levels) {
        require(lv >= 0 && lv < fine_level, "interpolation levels must be coarser than the fine mesh");
    }

    std::vector<WongZakaiRow> rows(options.levels.size() + 1);
    for (std::size_t r = 0; r < options.levels.size(); ++r) rows[r].level = options.levels[r];
    rows.back().level = fine_level;

    SolverConfig cfg;
    cfg.order = 2;
    for (int s = 0; s < options.seeds; ++s) {
        BrownianSpec spec = brownian;
        spec.seed = derive_seed(brownian.seed, static_cast<std::uint64_t>(s));
        auto sample = sample_brownian(spec);
        auto fine_path = lift_piecewise_linear(sample.times, sample.points, 2, options.p);
        Vector reference = euler_core(g, fine_path, xi, 2, false, false).terminal();
        for (std::size_t r = 0; r < options.levels.size(); ++r) {
            const std::size_t stride = fine >> options.levels[r];
            std::vector<double> coarse_t;
            std::vector<Eigen::Index> coarse_rows;
            for (std::size_t k = 0; k <= fine; k += stride) {
                coarse_t.push_back(sample.times[k]);
                coarse_rows.push_back(static_cast<Eigen::Index>(k));
            }
            Matrix coarse_pts = sample.points(coarse_rows, Eigen::all);
            Matrix pts = interpolate_linear(coarse_t, coarse_pts, sample.times);
            auto interp = lift_piecewise_linear(sample.times, pts, 2, options.p);
            Vector u = euler_core(g, interp, xi, 2, false, false).terminal();
            rows[r].errors.push_back((u - reference).norm());
            if (options.compute_dp) rows[r].dp_estimate += p_variation_distance(interp, fine_path, options.p);
        }
        rows.back().errors.push_back(0.0);
    }
    for (auto& row : rows) {
        row.mean_error = std::accumulate(row.errors.begin(), row.errors.end(), 0.0) / options.seeds;
        row.dp_estimate /= options.seeds;
    }
    return rows;
}

void write_solver_diagnostics(std::ostream& os, const SolutionPath& sol) {
    os << "step,time,state_norm,ratio\n";
    for (std::size_t l = 0; l < sol.times.size(); ++l) {
        os << l << ',' << format_double(sol.times[l]) << ',' << format_double(sol.state(l).norm()) << ',';
        if (l < sol.picard_ratios.size()) os << format_double(sol.picard_ratios[l]);
        os << '\n';
    }
}

} // namespace mframe
