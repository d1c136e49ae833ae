#include "mframe/experiments.hpp"

#include "mframe/error.hpp"
#include "mframe/io.hpp"
#include "mframe/parallel.hpp"
#include "mframe/semigroup.hpp"
#include "mframe/spde.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace mframe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

Matrix to_matrix(const json& j) {
    require(j.is_array() && !j.empty() && j[0].is_array() && !j[0].empty(), "expected a non-empty matrix");
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        require(j[i].size() == j[0].size(), "matrix rows have different lengths");
        for (std::size_t k = 0; k < j[i].size(); ++k) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
        }
    }
    return m;
}

Vector to_vector(const json& j) {
    if (j.is_number()) return Vector::Constant(1, j.get<double>());
    require(j.is_array() && !j.empty(), "expected a non-empty vector");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

std::vector<double> uniform_grid(double horizon, std::size_t steps) {
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) t[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    return t;
}

std::vector<double> maturity_grid(double max, double spacing) {
    const double cells = max / spacing;
    require(spacing > 0.0 && std::abs(cells - std::round(cells)) <= 1e-9 * cells && cells >= 1.0,
            "maturity range must be a positive multiple of the spacing");
    const auto n = static_cast<std::size_t>(std::lround(cells));
    std::vector<double> x(n + 1);
    for (std::size_t i = 0; i <= n; ++i) x[i] = spacing * static_cast<double>(i);
    return x;
}

const std::map<std::string, std::string>& field_catalog() {
    static const std::map<std::string, std::string> c = {
        {"constant", "constant matrix field (param: value)"},
        {"hjm_constant", "curve volatility sigma(x) = c (params: c, maturity_max, spacing)"},
        {"hjm_exponential", "curve volatility sigma(x) = c exp(-beta x) (params: c, beta, maturity_max, spacing)"},
        {"linear", "f(y)v = sum_b v_b B_b y (param: generators; default two non-commuting 2x2 matrices)"},
        {"logistic", "scalar f(y) = scale y (1 - y) (param: scale)"},
        {"rotation", "skew-symmetric linear field on R^2, one channel"},
        {"sine", "f_ij(y) = scale sin(<c_ij, y> + phi_ij), 2 states, 2 channels (param: scale)"},
        {"zero", "zero field (params: state_dim, noise_dim)"},
    };
    return c;
}

const std::map<std::string, std::string>& frame_catalog() {
    static const std::map<std::string, std::string> c = {
        {"dilation", "unitary dilation of exp(-omega h) exp(h A) on the block space"},
        {"identity", "trivial group, A = 0"},
        {"matrix_exp", "P_t = exp(tA) for a matrix generator"},
        {"shift_group", "shift of curves on a uniform maturity grid, constant extrapolation"},
    };
    return c;
}

const std::map<std::string, std::string>& driver_catalog() {
    static const std::map<std::string, std::string> c = {
        {"brownian", "level-2 piecewise-linear lift of a sampled Brownian path"},
        {"smooth", "lift of x(t) = t"},
    };
    return c;
}

const std::map<std::string, std::string>& experiment_catalog() {
    static const std::map<std::string, std::string> c = {
        {"convergence", "Euler-N order against exp(TB) xi for a smooth driver"},
        {"dilation_check", "unitarity and projection property of the dilation"},
        {"hjm", "HJM forward curves under the shift frame; transport and moment checks"},
        {"mild_identity", "pathwise mild representation of l(Y_t) under mesh refinement"},
        {"ou_moments", "Ornstein-Uhlenbeck moments through the moving frame"},
        {"picard_rate", "contraction ratios of Picard iterates"},
        {"wong_zakai", "solutions along piecewise-linear interpolations of Brownian paths"},
    };
    return c;
}

json field_spec(const json& entry) {
    if (entry.is_string()) return json{{"name", entry}};
    require(entry.is_object() && entry.contains("name"), "field entries need a name");
    return entry;
}

// ---------------------------------------------------------------------------

struct Sink {
    fs::path dir;
    std::vector<std::string> files;

    std::ofstream open(const std::string& name) {
        files.push_back(name);
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) fail(ErrorKind::InputContract, "cannot write " + (dir / name).string());
        return os;
    }
};

struct Checks {
    std::vector<MomentRecord> records;

    void add(MomentRecord r) { records.push_back(std::move(r)); }
    void at_least(std::string name, double value, double threshold) {
        records.push_back({std::move(name), value, threshold, 0.0, value >= threshold});
    }
    void at_most(std::string name, double value, double threshold) {
        records.push_back({std::move(name), value, threshold, 0.0, value <= threshold});
    }
    bool passed() const {
        return std::all_of(records.begin(), records.end(), [](const MomentRecord& r) { return r.pass; });
    }
};

SolverConfig solver_from(const json& s) {
    SolverConfig cfg;
    cfg.scheme = s.value("scheme", std::string("euler")) == "picard" ? Scheme::Picard : Scheme::Euler;
    cfg.order = s.value("order", 2);
    cfg.max_iterations = s.value("max_iterations", 60);
    cfg.tolerance = s.value("tolerance", 1e-10);
    cfg.halve_on_noncontraction = s.value("halve_on_noncontraction", false);
    return cfg;
}

BrownianSpec brownian_from(const json& d, std::uint64_t seed, int dim) {
    BrownianSpec spec;
    spec.dim = dim;
    spec.horizon = d.value("horizon", 1.0);
    spec.fine_steps = d.value("fine_steps", std::size_t{256});
    spec.seed = seed;
    require(spec.horizon > 0.0 && spec.fine_steps >= 1, "driver needs a positive horizon and mesh");
    return spec;
}

std::vector<double> sub_grid(const MultiplicativePath& x, std::size_t steps) {
    require(steps >= 1 && x.num_steps() % steps == 0, "solver steps must divide the driver mesh");
    std::vector<double> g;
    const std::size_t stride = x.num_steps() / steps;
    for (std::size_t k = 0; k <= steps; ++k) g.push_back(x.grid()[k * stride]);
    return g;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_variance(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------

void run_convergence(const json& s, std::uint64_t, Sink& out, Checks& checks) {
    const auto spec = field_spec(s.at("field"));
    require(spec.at("name") == "linear", "convergence needs the linear field (closed-form oracle)");
    auto f = catalog_field("linear", spec);
    require(f.noise_dim == 1, "convergence uses the one-channel driver x(t) = t; give one generator");
    const Matrix b = to_matrix(spec.at("generators")[0]);
    const double horizon = s.at("driver").value("horizon", 1.0);
    Vector xi = s.contains("xi") ? to_vector(s.at("xi")) : Vector::Ones(f.state_dim);
    require(xi.size() == f.state_dim, "xi has the wrong dimension");
    auto cfg = solver_from(s.at("solver"));
    cfg.scheme = Scheme::Euler;
    const Vector exact = matrix_exp_group(b)->apply(horizon, xi);

    auto levels = s.at("levels").get<std::vector<int>>();
    require(levels.size() >= 2, "convergence needs at least two levels");
    std::vector<double> errors;
    auto os = out.open("results.csv");
    os << "level,steps,error,observed_order\n";
    for (std::size_t r = 0; r < levels.size(); ++r) {
        const std::size_t steps = std::size_t{1} << levels[r];
        auto t = uniform_grid(horizon, steps);
        Matrix pts(static_cast<Eigen::Index>(steps + 1), 1);
        for (std::size_t k = 0; k <= steps; ++k) pts(static_cast<Eigen::Index>(k), 0) = t[k];
        auto x = lift_piecewise_linear(t, pts, std::max(cfg.order, 1), 1.0);
        auto sol = euler_solve(f, x, xi, cfg);
        errors.push_back((sol.terminal() - exact).norm());
        os << levels[r] << ',' << steps << ',' << format_double(errors.back()) << ',';
        if (r > 0) os << format_double(std::log2(errors[r - 1] / errors[r]) / (levels[r] - levels[r - 1]));
        os << '\n';
    }
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r < errors.size(); ++r) {
        worst = std::min(worst, std::log2(errors[r - 1] / errors[r]) / (levels[r] - levels[r - 1]));
    }
    checks.at_least("min_observed_order", worst, s.value("min_order", 1.8));
}

void run_wong_zakai(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    auto os = out.open("results.csv");
    auto per_seed = out.open("per_seed.csv");
    os << "field,level,dp_estimate,mean_error\n";
    per_seed << "field,level,seed_index,error\n";
    WongZakaiOptions opts;
    opts.levels = s.at("levels").get<std::vector<int>>();
    opts.seeds = s.value("replicates", 32);
    opts.p = s.at("driver").value("p", 2.5);
    opts.compute_dp = s.value("compute_dp", true);
    for (const auto& entry : s.at("fields")) {
        const auto spec = field_spec(entry);
        const auto name = spec.at("name").get<std::string>();
        auto f = catalog_field(name, spec);
        Vector xi = spec.contains("xi") ? to_vector(spec.at("xi")) : Vector::Constant(f.state_dim, 0.5);
        auto brownian = brownian_from(s.at("driver"), seed, f.noise_dim);
        auto rows = wong_zakai_study(f, brownian, xi, opts);
        bool decreasing = true;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            os << name << ',' << rows[r].level << ',' << format_double(rows[r].dp_estimate) << ','
               << format_double(rows[r].mean_error) << '\n';
            for (std::size_t k = 0; k < rows[r].errors.size(); ++k) {
                per_seed << name << ',' << rows[r].level << ',' << k << ',' << format_double(rows[r].errors[k]) << '\n';
            }
            if (r > 0 && !(rows[r].mean_error < rows[r - 1].mean_error)) decreasing = false;
        }
        checks.records.push_back({name + "_aggregate_error_strictly_decreasing", decreasing ? 1.0 : 0.0, 1.0, 0.0, decreasing});
    }
}

void run_picard_rate(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    const auto spec = field_spec(s.at("field"));
    auto f = catalog_field(spec.at("name"), spec);
    Vector xi = spec.contains("xi") ? to_vector(spec.at("xi")) : Vector::Constant(f.state_dim, 0.5);
    auto brownian = brownian_from(s.at("driver"), seed, f.noise_dim);
    auto x = brownian_lift(brownian, 2, brownian.fine_steps, s.at("driver").value("p", 2.5));
    auto cfg = solver_from(s.at("solver"));
    cfg.scheme = Scheme::Picard;
    cfg.grid = sub_grid(x, s.at("driver").value("steps", brownian.fine_steps));
    auto sol = picard_solve(f, x, xi, cfg);

    auto os = out.open("results.csv");
    os << "iteration,residual,ratio\n";
    for (std::size_t k = 0; k < sol.picard_residuals.size(); ++k) {
        os << k + 1 << ',' << format_double(sol.picard_residuals[k]) << ',';
        if (k >= 1) os << format_double(sol.picard_ratios[k - 1]);
        os << '\n';
    }
    auto diag = out.open("diagnostics.csv");
    write_solver_diagnostics(diag, sol);

    int best = 0, run = 0;
    for (std::size_t k = 0; k < sol.picard_ratios.size(); ++k) {
        const double r = sol.picard_ratios[k];
        const bool ok = r < 1.0 && (run == 0 || r <= sol.picard_ratios[k - 1]);
        run = ok ? run + 1 : (r < 1.0 ? 1 : 0);
        best = std::max(best, run);
    }
    checks.at_least("longest_contracting_nonincreasing_run", best, s.value("min_run", 5));
    checks.at_least("converged", sol.converged ? 1.0 : 0.0, 1.0);

    SolverConfig euler = cfg;
    euler.scheme = Scheme::Euler;
    auto reference = euler_solve(f, x, xi, euler);
    const double gap = (sol.states - reference.states).cwiseAbs().maxCoeff();
    checks.at_most("euler_picard_max_gap", gap, 10.0 * cfg.tolerance);
}

void run_ou_moments(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    const double a = s.value("a", -0.5);
    const double sigma = s.value("sigma", 1.0);
    const double xi0 = s.value("xi", 1.0);
    const std::size_t reps = s.value("replicates", std::size_t{10000});
    require(reps >= 2 && a != 0.0, "ou_moments needs at least two replicates and a != 0");
    const auto& drv = s.at("driver");
    auto cfg = solver_from(s.at("solver"));
    const std::size_t steps = drv.value("steps", std::size_t{64});
    auto base = brownian_from(drv, seed, 1);
    const double t = base.horizon;
    auto group = matrix_exp_group(Matrix::Constant(1, 1, a), uniform_grid(t, steps));
    const Vector xi = Vector::Constant(1, xi0);
    const auto f = constant_field(Matrix::Constant(1, 1, sigma));

    std::vector<double> terminal(reps);
    parallel_for(reps, [&](std::size_t i) {
        BrownianSpec spec = base;
        spec.seed = derive_seed(seed, i);
        auto x = brownian_lift(spec, 2, spec.fine_steps, drv.value("p", 2.5));
        SolverConfig c = cfg;
        c.grid = sub_grid(x, steps);
        terminal[i] = solve_rpde_group(group, f, x, xi, c).y(steps)(0);
    });

    auto os = out.open("results.csv");
    os << "replicate,terminal\n";
    for (std::size_t i = 0; i < reps; ++i) os << i << ',' << format_double(terminal[i]) << '\n';

    const double m = mean(terminal);
    const double v = sample_variance(terminal);
    const double mean_target = std::exp(a * t) * xi0;
    const double var_target = sigma * sigma * (std::exp(2.0 * a * t) - 1.0) / (2.0 * a);
    checks.add(stderr_check("mean", m, mean_target, std::sqrt(v / static_cast<double>(reps)), 3.0));
    checks.add(relative_check("variance", v, var_target, 0.05));
}

HjmSpec hjm_spec_from(const json& s, std::uint64_t seed) {
    HjmSpec spec;
    const auto vol = s.value("volatility", std::string("constant"));
    require(vol == "constant" || vol == "exponential", "volatility must be constant or exponential");
    spec.vol = vol == "constant" ? HjmVolatility::Constant : HjmVolatility::Exponential;
    spec.c = s.value("c", 0.05);
    spec.beta = s.value("beta", 1.0);
    spec.maturities = maturity_grid(s.value("maturity_max", 2.0), s.value("spacing", 1.0 / 32.0));
    const double r0 = s.value("r0", 0.04), slope = s.value("slope", 0.01);
    spec.curve0.resize(static_cast<Eigen::Index>(spec.maturities.size()));
    for (std::size_t i = 0; i < spec.maturities.size(); ++i) {
        spec.curve0(static_cast<Eigen::Index>(i)) = r0 + slope * spec.maturities[i];
    }
    spec.brownian = brownian_from(s.at("driver"), seed, 1);
    spec.solver_steps = s.at("driver").value("steps", std::size_t{32});
    spec.snapshot_times = s.value("snapshot_times", std::vector<double>{spec.brownian.horizon});
    return spec;
}

void run_hjm(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    auto base = hjm_spec_from(s, seed);
    auto cfg = solver_from(s.at("solver"));
    const std::size_t reps = s.value("replicates", std::size_t{10000});
    require(reps >= 2, "hjm needs at least two replicates");
    const double t = base.brownian.horizon;
    const double h = base.maturities[1] - base.maturities[0];
    const auto shift = static_cast<Eigen::Index>(std::lround(t / h));
    const auto m = static_cast<Eigen::Index>(base.maturities.size());

    // sigma = 0: pure transport of the initial curve
    HjmSpec still = base;
    still.c = 0.0;
    auto transported = hjm_simulate(still, cfg).solution.y(base.solver_steps);
    double transport_error = 0.0;
    for (Eigen::Index i = 0; i + shift < m; ++i) {
        transport_error = std::max(transport_error, std::abs(transported(i) - base.curve0(i + shift)));
    }
    checks.at_most("transport_max_error", transport_error, 1e-12);

    std::vector<double> short_rate(reps);
    Matrix terminal(static_cast<Eigen::Index>(reps), m);
    std::optional<HjmResult> first;
    parallel_for(reps, [&](std::size_t i) {
        HjmSpec spec = base;
        spec.brownian.seed = derive_seed(seed, i);
        auto r = hjm_simulate(spec, cfg);
        terminal.row(static_cast<Eigen::Index>(i)) = r.solution.y(spec.solver_steps).transpose();
        short_rate[i] = terminal(static_cast<Eigen::Index>(i), 0);
        if (i == 0) first = std::move(r);
    });

    auto os = out.open("results.csv");
    os << "replicate,short_rate\n";
    for (std::size_t i = 0; i < reps; ++i) os << i << ',' << format_double(short_rate[i]) << '\n';
    auto snaps = out.open("snapshots.csv");
    write_snapshots_csv(snaps, base.maturities, *first);
    auto curve = out.open("mean_curve.csv");
    curve << "maturity,mean,standard_error\n";
    for (Eigen::Index i = 0; i < m; ++i) {
        std::vector<double> col(terminal.col(i).data(), terminal.col(i).data() + reps);
        write_csv_row(curve, {base.maturities[static_cast<std::size_t>(i)], mean(col),
                              std::sqrt(sample_variance(col) / static_cast<double>(reps))});
    }

    const double mr = mean(short_rate);
    const double vr = sample_variance(short_rate);
    const double r0t = base.curve0(shift);
    const double c = base.c;
    if (base.vol == HjmVolatility::Constant) {
        checks.add(relative_check("short_rate_mean", mr, r0t + 0.5 * c * c * t * t, 0.05));
        checks.add(relative_check("short_rate_variance", vr, c * c * t, 0.05));
    } else {
        const double b = base.beta;
        const double drift = c * c / b * ((1.0 - std::exp(-b * t)) / b - (1.0 - std::exp(-2.0 * b * t)) / (2.0 * b));
        checks.add(stderr_check("short_rate_mean", mr, r0t + drift, std::sqrt(vr / static_cast<double>(reps)), 3.0));
        checks.add(relative_check("short_rate_variance", vr, c * c * (1.0 - std::exp(-2.0 * b * t)) / (2.0 * b), 0.05));
    }
}

void run_dilation_check(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    const int instances = s.value("instances", 20);
    const int n = s.value("dim", 3);
    const int l = s.value("channel_length", 64);
    const double step = s.value("step", 0.05);
    const double omega = s.value("growth", 0.0);
    require(instances >= 1 && n >= 1 && l >= 1 && step > 0.0, "invalid dilation parameters");
    std::mt19937_64 rng(derive_seed(seed, 0));
    std::normal_distribution<double> normal;

    auto os = out.open("results.csv");
    auto proj = out.open("projection.csv");
    os << "instance,unitarity_defect,max_projection_error\n";
    proj << "instance,k,projection_error\n";
    double worst_unitary = 0.0, worst_projection = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        Matrix b(n, n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k) b(i, k) = normal(rng);
        Eigen::SelfAdjointEigenSolver<Matrix> sym(0.5 * (b + b.transpose()));
        Matrix a = b - (sym.eigenvalues().maxCoeff() + 0.1) * Matrix::Identity(n, n) + omega * Matrix::Identity(n, n);
        auto d = nagy_dilate(a, omega, step, l);
        const int w = d.ambient_dim();
        const double unitary = (d.unitary.transpose() * d.unitary - Matrix::Identity(w, w)).cwiseAbs().maxCoeff();

        Matrix iota = Matrix::Zero(w, n);
        iota.block(static_cast<Eigen::Index>(l) * n, 0, n, n).setIdentity();
        Matrix fwd = iota, bwd = iota;
        Matrix tk = Matrix::Identity(n, n), tkt = Matrix::Identity(n, n);
        double local = 0.0;
        for (int k = 0; k <= l; ++k) {
            const double ef = (fwd.block(static_cast<Eigen::Index>(l) * n, 0, n, n) - tk).cwiseAbs().maxCoeff();
            const double eb = (bwd.block(static_cast<Eigen::Index>(l) * n, 0, n, n) - tkt).cwiseAbs().maxCoeff();
            proj << inst << ',' << k << ',' << format_double(ef) << '\n';
            if (k > 0) proj << inst << ',' << -k << ',' << format_double(eb) << '\n';
            local = std::max({local, ef, eb});
            fwd = d.unitary * fwd;
            bwd = d.unitary.transpose() * bwd;
            tk = d.contraction * tk;
            tkt = d.contraction.transpose() * tkt;
        }
        os << inst << ',' << format_double(unitary) << ',' << format_double(local) << '\n';
        worst_unitary = std::max(worst_unitary, unitary);
        worst_projection = std::max(worst_projection, local);
    }
    const double tol = s.value("tolerance", 1e-10);
    checks.at_most("unitarity_defect", worst_unitary, tol);
    checks.at_most("projection_error", worst_projection, tol);
}

void run_mild_identity(const json& s, std::uint64_t seed, Sink& out, Checks& checks) {
    const double a = s.value("a", -0.5);
    const double sigma = s.value("sigma", 1.0);
    const Vector xi = Vector::Constant(1, s.value("xi", 1.0));
    const Vector l = Vector::Constant(1, s.value("functional", 1.0));
    const std::size_t reps = s.value("replicates", std::size_t{32});
    auto levels = s.at("levels").get<std::vector<int>>();
    require(levels.size() >= 2 && reps >= 1, "mild_identity needs two levels and one replicate");
    const auto& drv = s.at("driver");
    auto base = brownian_from(drv, seed, 1);
    auto cfg = solver_from(s.at("solver"));
    auto group = matrix_exp_group(Matrix::Constant(1, 1, a));
    auto f = constant_field(Matrix::Constant(1, 1, sigma));

    Matrix dev(static_cast<Eigen::Index>(levels.size()), static_cast<Eigen::Index>(reps));
    parallel_for(reps, [&](std::size_t i) {
        BrownianSpec spec = base;
        spec.seed = derive_seed(seed, i);
        auto sample = sample_brownian(spec);
        auto x = brownian_lift(sample, 2, spec.fine_steps, drv.value("p", 2.5));
        for (std::size_t r = 0; r < levels.size(); ++r) {
            const std::size_t steps = std::size_t{1} << levels[r];
            SolverConfig c = cfg;
            c.grid = sub_grid(x, steps);
            auto sol = solve_rpde_group(group, f, x, xi, c);
            dev(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) =
                mild_identity_check(sol, f, l, sample, steps).max_deviation;
        }
    });

    auto os = out.open("results.csv");
    os << "level,steps,replicate,max_deviation\n";
    std::vector<double> agg;
    for (std::size_t r = 0; r < levels.size(); ++r) {
        for (std::size_t i = 0; i < reps; ++i) {
            os << levels[r] << ',' << (std::size_t{1} << levels[r]) << ',' << i << ','
               << format_double(dev(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i))) << '\n';
        }
        agg.push_back(dev.row(static_cast<Eigen::Index>(r)).mean());
    }
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t r = 1; r < agg.size(); ++r) worst = std::min(worst, agg[r - 1] / agg[r]);
    checks.at_least("min_refinement_factor", worst, s.value("min_factor", 1.5));
}

using Runner = std::function<void(const json&, std::uint64_t, Sink&, Checks&)>;

const std::map<std::string, Runner>& runners() {
    static const std::map<std::string, Runner> r = {
        {"convergence", run_convergence}, {"dilation_check", run_dilation_check},
        {"hjm", run_hjm},                 {"mild_identity", run_mild_identity},
        {"ou_moments", run_ou_moments},   {"picard_rate", run_picard_rate},
        {"wong_zakai", run_wong_zakai},
    };
    return r;
}

void write_json(const fs::path& file, const json& j) {
    std::ofstream os(file, std::ios::binary);
    if (!os) fail(ErrorKind::InputContract, "cannot write " + file.string());
    os << j.dump(2) << '\n';
}

template <class Fn>
auto json_guard(Fn fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        fail(ErrorKind::InputContract, std::string("malformed configuration: ") + e.what());
    }
}

} // namespace

std::vector<std::string> catalog_field_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : field_catalog()) out.push_back(k);
    return out;
}

FieldFamily catalog_field(const std::string& name, const json& spec) {
    return json_guard([&] {
        if (name == "zero") {
            return constant_field(Matrix::Zero(spec.value("state_dim", 1), spec.value("noise_dim", 1)));
        }
        if (name == "constant") {
            return constant_field(spec.contains("value") ? to_matrix(spec.at("value")) : Matrix::Ones(1, 1));
        }
        if (name == "linear") {
            std::vector<Matrix> gens;
            if (spec.contains("generators")) {
                for (const auto& g : spec.at("generators")) gens.push_back(to_matrix(g));
            } else {
                Matrix b1(2, 2), b2(2, 2);
                b1 << 0.2, 1.0, 0.0, -0.3;
                b2 << 0.0, 0.0, 0.7, 0.1;
                gens = {b1, b2};
            }
            return linear_field(gens);
        }
        if (name == "rotation") {
            Matrix b(2, 2);
            b << 0.0, -1.0, 1.0, 0.0;
            return linear_field({b});
        }
        if (name == "sine") {
            const int n = spec.value("state_dim", 2);
            const int d = spec.value("noise_dim", 2);
            require(n >= 1 && d >= 1, "sine field needs positive dimensions");
            std::vector<Vector> freq;
            std::vector<double> phase;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) {
                    Vector c(n);
                    for (int k = 0; k < n; ++k) c(k) = (k == i ? 1.0 + 0.5 * i : 0.5) + 0.25 * j;
                    freq.push_back(c);
                    phase.push_back(0.3 * (d * i + j));
                }
            }
            return sine_field(n, d, spec.value("scale", 0.5), freq, phase);
        }
        if (name == "logistic") return logistic_field(spec.value("scale", 1.0));
        if (name == "hjm_constant" || name == "hjm_exponential") {
            auto m = maturity_grid(spec.value("maturity_max", 2.0), spec.value("spacing", 1.0 / 32.0));
            const double c = spec.value("c", 0.05);
            return name == "hjm_constant" ? hjm_constant_vol(m, c) : hjm_exponential_vol(m, c, spec.value("beta", 1.0));
        }
        fail(ErrorKind::InputContract, "unknown field '" + name + "'");
    });
}

json experiment_defaults(const std::string& experiment) {
    const json solver = {{"scheme", "euler"}, {"order", 2}, {"max_iterations", 60}, {"tolerance", 1e-10},
                         {"halve_on_noncontraction", false}};
    if (experiment == "convergence") {
        return {{"driver", {{"kind", "smooth"}, {"horizon", 1.0}}},
                {"field", {{"name", "linear"}, {"generators", json::array({json::array({json::array({1.0})})})}}},
                {"xi", json::array({1.0})}, {"levels", {3, 4, 5, 6}}, {"min_order", 1.8},
                {"solver", solver}};
    }
    if (experiment == "wong_zakai") {
        return {{"driver", {{"kind", "brownian"}, {"horizon", 1.0}, {"fine_steps", 512}, {"p", 2.5}}},
                {"fields", {"linear", "sine"}}, {"levels", {3, 4, 5, 6}}, {"replicates", 32},
                {"compute_dp", true}, {"solver", solver}};
    }
    if (experiment == "picard_rate") {
        json s = solver;
        s["scheme"] = "picard";
        return {{"driver", {{"kind", "brownian"}, {"horizon", 0.25}, {"fine_steps", 256}, {"steps", 64}, {"p", 2.5}}},
                {"field", {{"name", "sine"}}}, {"min_run", 5}, {"solver", s}};
    }
    if (experiment == "ou_moments") {
        return {{"driver", {{"kind", "brownian"}, {"horizon", 1.0}, {"fine_steps", 64}, {"steps", 64}, {"p", 2.5}}},
                {"frame", {{"name", "matrix_exp"}}}, {"a", -0.5}, {"sigma", 1.0}, {"xi", 1.0},
                {"replicates", 10000}, {"solver", solver}};
    }
    if (experiment == "hjm") {
        return {{"driver", {{"kind", "brownian"}, {"horizon", 1.0}, {"fine_steps", 256}, {"steps", 32}}},
                {"frame", {{"name", "shift_group"}}}, {"volatility", "constant"}, {"c", 0.05}, {"beta", 1.0},
                {"maturity_max", 2.0}, {"spacing", 1.0 / 32.0}, {"r0", 0.04}, {"slope", 0.01},
                {"snapshot_times", {0.0, 0.25, 0.5, 0.75, 1.0}}, {"replicates", 10000}, {"solver", solver}};
    }
    if (experiment == "dilation_check") {
        return {{"frame", {{"name", "dilation"}}}, {"instances", 20}, {"dim", 3}, {"channel_length", 64},
                {"step", 0.05}, {"growth", 0.0}, {"tolerance", 1e-10}};
    }
    if (experiment == "mild_identity") {
        return {{"driver", {{"kind", "brownian"}, {"horizon", 1.0}, {"fine_steps", 1024}, {"p", 2.5}}},
                {"frame", {{"name", "matrix_exp"}}}, {"a", -0.5}, {"sigma", 1.0}, {"xi", 1.0},
                {"functional", 1.0}, {"levels", {5, 6, 7}}, {"replicates", 32}, {"min_factor", 1.5},
                {"solver", solver}};
    }
    fail(ErrorKind::InputContract, "unknown experiment '" + experiment + "'");
}

ExperimentConfig parse_config(const json& j) {
    return json_guard([&] {
        require(j.is_object(), "configuration must be a JSON object");
        require(j.contains("experiment") && j.at("experiment").is_string(), "configuration needs an experiment name");
        ExperimentConfig cfg;
        cfg.experiment = j.at("experiment").get<std::string>();
        cfg.settings = experiment_defaults(cfg.experiment);
        json user = j;
        user.erase("experiment");
        if (user.contains("seed")) {
            cfg.seed = user.at("seed").get<std::uint64_t>();
            user.erase("seed");
        }
        if (user.contains("output_dir")) {
            cfg.output_dir = user.at("output_dir").get<std::string>();
            user.erase("output_dir");
        }
        cfg.settings.merge_patch(user);

        const auto& s = cfg.settings;
        if (s.contains("driver")) {
            const auto kind = s.at("driver").value("kind", std::string("brownian"));
            require(driver_catalog().count(kind) == 1, "unknown driver '" + kind + "'");
        }
        if (s.contains("frame")) {
            const auto name = s.at("frame").value("name", std::string());
            require(frame_catalog().count(name) == 1, "unknown frame '" + name + "'");
        }
        if (s.contains("solver")) {
            const auto scheme = s.at("solver").value("scheme", std::string("euler"));
            require(scheme == "euler" || scheme == "picard", "unknown scheme '" + scheme + "'");
        }
        std::vector<json> fields;
        if (s.contains("field")) fields.push_back(field_spec(s.at("field")));
        if (s.contains("fields")) {
            for (const auto& e : s.at("fields")) fields.push_back(field_spec(e));
        }
        for (const auto& f : fields) {
            const auto name = f.at("name").get<std::string>();
            require(field_catalog().count(name) == 1, "unknown field '" + name + "'");
            catalog_field(name, f).validate();
        }
        return cfg;
    });
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorKind::InputContract, "cannot read configuration " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        fail(ErrorKind::InputContract, std::string("configuration is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

RunOutcome run(const ExperimentConfig& config, const fs::path& out) {
    auto it = runners().find(config.experiment);
    if (it == runners().end()) fail(ErrorKind::InputContract, "unknown experiment '" + config.experiment + "'");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) fail(ErrorKind::InputContract, "cannot create output directory " + out.string());

    json manifest = {{"experiment", config.experiment}, {"seed", config.seed},      {"config", config.settings},
                     {"version", kVersion},             {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                                  std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                                  std::to_string(EIGEN_MINOR_VERSION)},
                     {"status", "running"}};
    write_json(out / "manifest.json", manifest);

    Sink sink{out, {}};
    Checks checks;
    const auto start = std::chrono::steady_clock::now();
    json_guard([&] {
        it->second(config.settings, config.seed, sink, checks);
        return 0;
    });
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    RunOutcome outcome;
    outcome.has_targets = !checks.records.empty();
    outcome.passed = checks.passed();
    json list = json::array();
    for (const auto& r : checks.records) list.push_back(to_json(r));
    outcome.acceptance = {{"experiment", config.experiment}, {"seed", config.seed}, {"passed", outcome.passed},
                          {"checks", list}};
    write_json(out / "acceptance.json", outcome.acceptance);

    sink.files.push_back("acceptance.json");
    manifest["status"] = "complete";
    manifest["files"] = sink.files;
    manifest["timings"] = {{"elapsed_seconds", elapsed}};
    write_json(out / "manifest.json", manifest);
    return outcome;
}

std::string list_catalog() {
    std::ostringstream os;
    auto section = [&os](const char* title, const std::map<std::string, std::string>& entries) {
        os << title << ":\n";
        for (const auto& [name, text] : entries) os << "  " << name << "  " << text << '\n';
    };
    section("drivers", driver_catalog());
    section("experiments", experiment_catalog());
    section("fields", field_catalog());
    section("frames", frame_catalog());
    return os.str();
}

json error_json(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        return {{"error", {{"kind", to_string(err->kind())}, {"message", err->what()}}}};
    }
    return {{"error", {{"kind", "internal"}, {"message", e.what()}}}};
}

} // namespace mframe
