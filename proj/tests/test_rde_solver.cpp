#include "mframe/error.hpp"
#include "mframe/rde_solver.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace mframe;

namespace {

MultiplicativePath line_path(double horizon, std::size_t steps, int level, double slope = 1.0) {
    std::vector<double> t(steps + 1);
    Matrix pts(steps + 1, 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        t[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
        pts(static_cast<Eigen::Index>(k), 0) = slope * t[k];
    }
    return lift_piecewise_linear(t, pts, level);
}

SolverConfig order_config(int order) {
    SolverConfig cfg;
    cfg.order = order;
    return cfg;
}

FieldFamily scalar_linear(double a) { return linear_field({Matrix::Constant(1, 1, a)}); }

FieldFamily small_sine() {
    return sine_field(2, 2, 0.5, {Vector::Constant(2, 1.0), Vector::Constant(2, 0.5), Vector::Constant(2, 0.75),
                                  Vector::Constant(2, 1.25)},
                      {0.0, 0.3, 0.6, 0.9});
}

} // namespace

TEST_CASE("zero field keeps the initial state") {
    auto x = brownian_lift(BrownianSpec{2, 1.0, 128, 7}, 2, 32);
    auto g = constant_field(Matrix::Zero(3, 2));
    Vector xi(3);
    xi << 1.0, -2.0, 0.5;
    auto sol = euler_solve(g, x, xi, {});
    for (std::size_t l = 0; l < sol.times.size(); ++l) CHECK((sol.state(l) - xi).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Davie scheme is second order on a smooth driver") {
    const double a = 0.8;
    double prev = 0.0;
    for (std::size_t steps : {16u, 32u, 64u, 128u}) {
        auto sol = euler_solve(scalar_linear(a), line_path(1.0, steps, 2), Vector::Ones(1), {});
        const double err = std::abs(sol.terminal()(0) - std::exp(a));
        if (prev > 0.0) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.05));
        prev = err;
    }
    auto order3 = euler_solve(scalar_linear(a), line_path(1.0, 16, 3), Vector::Ones(1), order_config(3));
    CHECK(std::abs(order3.terminal()(0) - std::exp(a)) < prev);
}

TEST_CASE("Picard iterates are partial exponential sums") {
    auto x = line_path(1.0, 2000, 2);
    for (int n = 1; n <= 4; ++n) {
        SolverConfig cfg;
        cfg.scheme = Scheme::Picard;
        cfg.max_iterations = n;
        auto sol = picard_solve(scalar_linear(1.0), x, Vector::Ones(1), cfg);
        CHECK(sol.iterations == n);
        CHECK_FALSE(sol.converged);
        double partial = 0.0, term = 1.0;
        for (int j = 0; j <= n; ++j) {
            partial += term;
            term /= (j + 1);
        }
        CHECK(sol.terminal()(0) == doctest::Approx(partial).epsilon(1e-6));
    }
}

TEST_CASE("order checks") {
    auto bm = brownian_lift(BrownianSpec{1, 1.0, 64, 1}, 2, 64);
    try {
        euler_solve(scalar_linear(1.0), bm, Vector::Ones(1), order_config(1));
        FAIL("expected an input-contract error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InputContract);
    }
    try {
        euler_solve(scalar_linear(1.0), bm, Vector::Ones(1), order_config(3));
        FAIL("expected a capability error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Capability);
    }
    auto smooth = line_path(1.0, 8, 1);
    CHECK_NOTHROW(euler_solve(scalar_linear(1.0), smooth, Vector::Ones(1), order_config(1)));
}

TEST_CASE("blow-up is reported with the step index") {
    FieldFamily sq;
    sq.state_dim = 1;
    sq.noise_dim = 1;
    sq.gamma = 2.0;
    sq.value = [](const Vector& y) { return Matrix::Constant(1, 1, y(0) * y(0)); };
    sq.derivatives.push_back(
        [](const Vector& y, std::span<const Vector> w) { return Matrix::Constant(1, 1, 2.0 * y(0) * w[0](0)); });
    try {
        euler_solve(sq, line_path(5.0, 50, 2), Vector::Ones(1), {});
        FAIL("expected a divergence error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Divergence);
        CHECK(std::string(e.what()).find("step ") != std::string::npos);
    }
}

TEST_CASE("rotation norm drift shrinks under refinement") {
    Matrix skew(2, 2);
    skew << 0.0, -1.0, 1.0, 0.0;
    auto g = linear_field({skew});
    Vector xi(2);
    xi << 1.0, 0.0;
    double prev = 1e9;
    for (std::size_t steps : {16u, 64u, 256u}) {
        auto x = brownian_lift(BrownianSpec{1, 1.0, 1024, 3}, 2, steps);
        auto sol = euler_solve(g, x, xi, {});
        double drift = 0.0;
        for (std::size_t l = 0; l < sol.times.size(); ++l) drift = std::max(drift, std::abs(sol.state(l).norm() - 1.0));
        CHECK(drift < prev);
        prev = drift;
    }
}

TEST_CASE("time-dependent solver on an autonomous field") {
    auto x = brownian_lift(BrownianSpec{2, 1.0, 256, 5}, 2, 64);
    auto f = small_sine();
    Vector xi(2);
    xi << 0.2, -0.1;
    SolverConfig cfg;
    for (std::size_t k = 0; k <= 64; k += 4) cfg.grid.push_back(x.grid()[k]);
    auto direct = euler_solve(f, x, xi, cfg);
    auto extended = solve_time_dependent(TransformedField::autonomous(f), x, xi, cfg);
    CHECK(extended.times == cfg.grid);
    CHECK(extended.states.cols() == 2);
    CHECK((direct.states - extended.states).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pure time integration through the drift channel") {
    TransformedField g;
    g.state_dim = 1;
    g.noise_dim = 2;
    g.drift_channel = true;
    g.value = [](double t, const Vector&) {
        Matrix m = Matrix::Zero(1, 2);
        m(0, 0) = std::cos(t);
        return m;
    };
    g.derivatives.push_back([](double, const Vector&, std::span<const Vector>) { return Matrix(Matrix::Zero(1, 2)); });
    g.time_derivative = [](double t, const Vector&) {
        Matrix m = Matrix::Zero(1, 2);
        m(0, 0) = -std::sin(t);
        return m;
    };
    auto x = brownian_lift(BrownianSpec{1, 2.0, 200, 9}, 2, 200);
    auto sol = solve_time_dependent(g, x, Vector::Zero(1), {});
    for (std::size_t l = 0; l < sol.times.size(); ++l) {
        CHECK(sol.state(l)(0) == doctest::Approx(std::sin(sol.times[l])).epsilon(1e-4));
    }
}

TEST_CASE("Picard fixed point matches the Davie scheme") {
    auto x = brownian_lift(BrownianSpec{2, 0.25, 256, 11}, 2, 64);
    Vector xi(2);
    xi << 0.1, 0.4;
    SolverConfig cfg;
    auto euler = euler_solve(small_sine(), x, xi, cfg);
    cfg.scheme = Scheme::Picard;
    cfg.halve_on_noncontraction = true;
    auto picard = picard_solve(small_sine(), x, xi, cfg);
    CHECK(picard.converged);
    CHECK(picard.picard_residuals.back() <= cfg.tolerance);
    CHECK((euler.states - picard.states).cwiseAbs().maxCoeff() <= 10.0 * cfg.tolerance);
}

TEST_CASE("Picard non-contraction and halving") {
    auto x = line_path(1.0, 64, 2, 5.0);
    SolverConfig cfg;
    cfg.scheme = Scheme::Picard;
    try {
        picard_solve(scalar_linear(1.0), x, Vector::Ones(1), cfg);
        FAIL("expected a non-contraction error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonContraction);
    }
    cfg.halve_on_noncontraction = true;
    auto sol = picard_solve(scalar_linear(1.0), x, Vector::Ones(1), cfg);
    CHECK(sol.segments >= 2);
    CHECK(sol.converged);
    auto euler = euler_solve(scalar_linear(1.0), x, Vector::Ones(1), {});
    CHECK(std::abs(sol.terminal()(0) - euler.terminal()(0)) <= 10.0 * cfg.tolerance * std::abs(euler.terminal()(0)));
}

TEST_CASE("Wong-Zakai study with a zero field") {
    auto rows = wong_zakai_study(constant_field(Matrix::Zero(2, 2)), BrownianSpec{2, 1.0, 64, 0}, Vector::Ones(2),
                                 WongZakaiOptions{{2, 3}, 4, 2.5, false});
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        CHECK(r.mean_error == 0.0);
        for (double e : r.errors) CHECK(e == 0.0);
    }
}

TEST_CASE("Wong-Zakai errors decrease for a linear field") {
    Matrix b1(2, 2), b2(2, 2);
    b1 << 0.2, 1.0, 0.0, -0.3;
    b2 << 0.0, 0.0, 0.7, 0.1;
    auto rows = wong_zakai_study(linear_field({b1, b2}), BrownianSpec{2, 1.0, 256, 0}, Vector::Constant(2, 0.5),
                                 WongZakaiOptions{{2, 4, 6}, 8, 2.5, true});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].mean_error > rows[1].mean_error);
    CHECK(rows[1].mean_error > rows[2].mean_error);
    CHECK(rows[0].dp_estimate > rows[2].dp_estimate);
    CHECK(rows[3].mean_error == 0.0);
}

TEST_CASE("joined path projects onto the driver") {
    auto x = brownian_lift(BrownianSpec{2, 1.0, 64, 2}, 2, 16);
    SolverConfig cfg;
    cfg.build_joined = true;
    auto sol = euler_solve(small_sine(), x, Vector::Zero(2), cfg);
    REQUIRE(sol.joined);
    CHECK(sol.joined->dim() == 4);
    auto proj = project_coordinates(*sol.joined, 0, 2);
    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        auto a = proj.step(l).tensor().coefficients();
        auto b = x.step(l).tensor().coefficients();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-14);
    }
    auto u = project_coordinates(*sol.joined, 2, 2).level1_trace();
    for (std::size_t l = 0; l < sol.times.size(); ++l) {
        CHECK((u.row(static_cast<Eigen::Index>(l)).transpose() - (sol.state(l) - sol.state(0))).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("diagnostics csv") {
    auto x = line_path(0.5, 8, 2, 0.5);
    SolverConfig cfg;
    cfg.scheme = Scheme::Picard;
    auto sol = picard_solve(scalar_linear(1.0), x, Vector::Ones(1), cfg);
    std::ostringstream os;
    write_solver_diagnostics(os, sol);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "step,time,state_norm,ratio");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows > 0);
}
