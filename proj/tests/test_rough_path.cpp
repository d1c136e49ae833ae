#include "mframe/error.hpp"
#include "mframe/io.hpp"
#include "mframe/rough_path.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace mframe;
using testutil::max_diff;

namespace {

std::vector<double> uniform(std::size_t n, double horizon = 1.0) {
    std::vector<double> t(n + 1);
    for (std::size_t k = 0; k <= n; ++k) t[k] = horizon * static_cast<double>(k) / static_cast<double>(n);
    return t;
}

Eigen::MatrixXd smooth_points(const std::vector<double>& t) {
    Eigen::MatrixXd p(static_cast<Eigen::Index>(t.size()), 2);
    for (std::size_t k = 0; k < t.size(); ++k) {
        p(static_cast<Eigen::Index>(k), 0) = std::sin(3.0 * t[k]);
        p(static_cast<Eigen::Index>(k), 1) = std::cos(2.0 * t[k]) - 1.0;
    }
    return p;
}

} // namespace

TEST_CASE("constant path lifts to identities") {
    auto t = uniform(4);
    Eigen::MatrixXd pts = Eigen::MatrixXd::Constant(5, 2, 0.7);
    auto x = lift_piecewise_linear(t, pts, 3);
    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        CHECK(max_diff(x.step(l).tensor(), TruncatedTensor::identity(2, 3)) == 0.0);
    }
}

TEST_CASE("single segment has level two equal to half the square") {
    std::vector<double> t{0.0, 1.0};
    Eigen::MatrixXd pts(2, 2);
    pts << 0.0, 0.0, 2.0, -1.0;
    auto x = lift_piecewise_linear(t, pts, 2);
    auto b = x.step(0).block(2);
    CHECK(b[0] == doctest::Approx(2.0));
    CHECK(b[1] == doctest::Approx(-1.0));
    CHECK(b[2] == doctest::Approx(-1.0));
    CHECK(b[3] == doctest::Approx(0.5));
}

TEST_CASE("two segments carry the area term") {
    std::vector<double> t{0.0, 0.5, 1.0};
    Eigen::MatrixXd pts(3, 2);
    pts << 0.0, 0.0, 1.0, 0.0, 1.0, 1.0;
    auto x = lift_piecewise_linear(t, pts, 2);
    auto g = x.increment(0, 2);
    // antisymmetric part 1/2 (D1 (x) D2 - D2 (x) D1) with D1 = e1, D2 = e2
    CHECK(0.5 * (g.tensor().at2(0, 1) - g.tensor().at2(1, 0)) == doctest::Approx(0.5));
    CHECK(g.tensor().at2(0, 1) == doctest::Approx(1.0));
    CHECK(g.tensor().at2(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("Chen identity on all grid triples") {
    auto t = uniform(12);
    auto x = lift_piecewise_linear(t, smooth_points(t), 3);
    for (std::size_t i = 0; i <= 12; ++i)
        for (std::size_t j = i; j <= 12; ++j)
            for (std::size_t k = j; k <= 12; ++k) {
                CHECK(max_diff(x.increment(i, k).tensor(), (x.increment(i, j) * x.increment(j, k)).tensor()) < 1e-12);
            }
}

TEST_CASE("lift rejects bad grids and levels") {
    std::vector<double> t{0.0, 0.5, 0.4};
    Eigen::MatrixXd pts = Eigen::MatrixXd::Zero(3, 1);
    CHECK_THROWS_AS(lift_piecewise_linear(t, pts, 2), Error);
    auto g = uniform(2);
    try {
        lift_piecewise_linear(g, pts, 4);
        FAIL("expected an unsupported-level error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnsupportedLevel);
    }
}

TEST_CASE("brownian samples are reproducible") {
    BrownianSpec spec{2, 1.0, 64, 17};
    auto a = brownian_lift(spec, 2, 16);
    auto b = brownian_lift(spec, 2, 16);
    for (std::size_t l = 0; l < a.num_steps(); ++l) CHECK(max_diff(a.step(l).tensor(), b.step(l).tensor()) == 0.0);
    spec.seed = 18;
    auto c = brownian_lift(spec, 2, 16);
    CHECK(max_diff(a.step(0).tensor(), c.step(0).tensor()) > 0.0);
    CHECK(a.origin().has_value());
    CHECK_THROWS_AS(sample_brownian(BrownianSpec{0, 1.0, 8, 0}), Error);
    CHECK_THROWS_AS(sample_brownian(BrownianSpec{1, -1.0, 8, 0}), Error);
}

TEST_CASE("coarsened brownian lift matches the sample at coarse times") {
    BrownianSpec spec{2, 1.0, 64, 3};
    auto sample = sample_brownian(spec);
    auto x = brownian_lift(sample, 2, 8);
    auto trace = x.level1_trace();
    for (Eigen::Index k = 0; k <= 8; ++k) {
        CHECK((trace.row(k) - sample.points.row(8 * k)).cwiseAbs().maxCoeff() < 1e-12);
    }
    for (std::size_t l = 0; l < x.num_steps(); ++l) CHECK(level2_geometricity_defect(x.step(l)) < 1e-12);
}

TEST_CASE("brownian level one variance and area mean") {
    const int n = 4000;
    double s0 = 0, s1 = 0, area = 0, area2 = 0;
    for (int k = 0; k < n; ++k) {
        auto x = brownian_lift(BrownianSpec{2, 1.0, 16, derive_seed(5, static_cast<std::uint64_t>(k))}, 2, 1);
        const auto& g = x.step(0).tensor();
        s0 += g.block(1)[0] * g.block(1)[0];
        s1 += g.block(1)[1] * g.block(1)[1];
        const double a = 0.5 * (g.at2(0, 1) - g.at2(1, 0));
        area += a;
        area2 += a * a;
    }
    CHECK(s0 / n == doctest::Approx(1.0).epsilon(0.08));
    CHECK(s1 / n == doctest::Approx(1.0).epsilon(0.08));
    const double m = area / n;
    const double se = std::sqrt((area2 / n - m * m) / n);
    CHECK(std::abs(m) <= 3.0 * se);
}

TEST_CASE("p-variation distance") {
    auto t = uniform(16);
    auto x = lift_piecewise_linear(t, smooth_points(t), 2, 2.5);
    CHECK(p_variation_distance(x, x, 2.5) == 0.0);

    Eigen::MatrixXd pts2 = smooth_points(t) * 1.3;
    auto y = lift_piecewise_linear(t, pts2, 2, 2.5);
    const double dxy = p_variation_distance(x, y, 2.5);
    CHECK(dxy > 0.0);
    CHECK(dxy == doctest::Approx(p_variation_distance(y, x, 2.5)).epsilon(1e-12));
    const double dyadic = p_variation_distance(x, y, 2.5, PartitionSearch::Dyadic);
    const double greedy = p_variation_distance(x, y, 2.5, PartitionSearch::DyadicGreedy);
    const double full = p_variation_distance(x, y, 2.5, PartitionSearch::Exhaustive);
    CHECK(dyadic <= greedy + 1e-15);
    CHECK(greedy <= full + 1e-15);

    std::vector<double> seg{0.0, 1.0};
    Eigen::MatrixXd a(2, 2), zero = Eigen::MatrixXd::Zero(2, 2);
    a << 0.0, 0.0, 3.0, 4.0;
    auto line = lift_piecewise_linear(seg, a, 1, 1.0);
    auto flat = lift_piecewise_linear(seg, zero, 1, 1.0);
    CHECK(p_variation_distance(line, flat, 1.0) == doctest::Approx(5.0));

    auto other = lift_piecewise_linear(uniform(8), smooth_points(uniform(8)), 2, 2.5);
    CHECK_THROWS_AS(p_variation_distance(x, other, 2.5), Error);
}

TEST_CASE("control from a path") {
    auto t = uniform(10);
    auto flat = lift_piecewise_linear(t, Eigen::MatrixXd::Zero(11, 2), 2, 2.0);
    CHECK(control_from_path(flat, 2.0).table().cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd line(11, 1);
    for (int k = 0; k <= 10; ++k) line(k, 0) = 2.0 * t[static_cast<std::size_t>(k)];
    auto w = control_from_path(lift_piecewise_linear(t, line, 1, 1.0), 1.0);
    for (std::size_t i = 0; i <= 10; ++i)
        for (std::size_t j = i; j <= 10; ++j) CHECK(w(i, j) == doctest::Approx(2.0 * (t[j] - t[i])));

    auto x = lift_piecewise_linear(t, smooth_points(t), 2, 2.5);
    auto omega = control_from_path(x, 2.5);
    CHECK(omega.superadditivity_defect() <= 1e-12);
    for (std::size_t i = 0; i <= 10; ++i) {
        for (std::size_t j = i + 1; j <= 10; ++j) {
            auto g = x.increment(i, j);
            CHECK(std::pow(block_norm(g.block(1)), 2.5) <= omega(i, j) + 1e-12);
            CHECK(std::pow(block_norm(g.block(2)), 1.25) <= omega(i, j) + 1e-12);
        }
    }
}

TEST_CASE("controlled convergence of dyadic interpolations") {
    auto fine = uniform(64);
    auto pts = smooth_points(fine);
    auto limit = lift_piecewise_linear(fine, pts, 2, 2.5);
    std::vector<MultiplicativePath> seq;
    for (std::size_t cells : {4u, 8u, 16u, 32u}) {
        auto coarse = uniform(cells);
        auto interp = interpolate_linear(coarse, smooth_points(coarse), fine);
        seq.push_back(lift_piecewise_linear(fine, interp, 2, 2.5));
    }
    auto cert = controlled_convergence_check(seq, limit, control_from_path(limit, 2.5), 2.5);
    CHECK(cert.passed);
    CHECK(cert.nonincreasing);
    REQUIRE(cert.rates.size() == 4);
    for (std::size_t n = 1; n < 4; ++n) CHECK(cert.rates[n] < cert.rates[n - 1]);

    auto same = controlled_convergence_check({limit, limit}, limit, control_from_path(limit, 2.5), 2.5);
    CHECK(same.rates[0] == 0.0);
    CHECK(same.rates[1] == 0.0);
}

TEST_CASE("controlled convergence flags a zero control") {
    auto t = uniform(4);
    auto x = lift_piecewise_linear(t, smooth_points(t), 2, 2.5);
    auto flat = lift_piecewise_linear(t, Eigen::MatrixXd::Zero(5, 2), 2, 2.5);
    auto cert = controlled_convergence_check({x}, flat, control_from_path(flat, 2.5), 2.5);
    CHECK_FALSE(cert.passed);
    CHECK_FALSE(cert.failure.empty());
}

TEST_CASE("time extension") {
    std::vector<double> seg{0.0, 1.0};
    Eigen::MatrixXd a(2, 2);
    a << 0.0, 0.0, 0.5, -2.0;
    auto x = lift_piecewise_linear(seg, a, 2);
    auto z = time_extend(x);
    CHECK(z.dim() == 3);
    const auto& g = z.step(0).tensor();
    CHECK(g.block(1)[0] == doctest::Approx(1.0));
    CHECK(g.at2(0, 0) == doctest::Approx(0.5));
    CHECK(g.at2(0, 1) == doctest::Approx(0.25));
    CHECK(g.at2(0, 2) == doctest::Approx(-1.0));
    CHECK(g.at2(1, 0) == doctest::Approx(0.25));

    BrownianSpec spec{2, 1.0, 32, 9};
    auto b = brownian_lift(spec, 2, 32);
    auto e = time_extend(b);
    auto back = project_coordinates(e, 1, 2);
    for (std::size_t l = 0; l < b.num_steps(); ++l) CHECK(max_diff(back.step(l).tensor(), b.step(l).tensor()) == 0.0);
    for (std::size_t i = 0; i <= 32; i += 4)
        for (std::size_t j = i; j <= 32; j += 4)
            for (std::size_t k = j; k <= 32; k += 4)
                CHECK(max_diff(e.increment(i, k).tensor(), (e.increment(i, j) * e.increment(j, k)).tensor()) < 1e-12);

    auto t = uniform(2);
    auto level3 = lift_piecewise_linear(t, smooth_points(t), 3);
    CHECK_THROWS_AS(time_extend(level3), Error);
}

TEST_CASE("grid helpers") {
    auto t = uniform(8);
    auto x = lift_piecewise_linear(t, smooth_points(t), 2);
    CHECK(x.index_of(0.25) == 2);
    CHECK_THROWS_AS(x.index_of(0.3), Error);
    auto c = x.coarsen(4);
    CHECK(c.num_steps() == 2);
    CHECK(max_diff(c.step(1).tensor(), x.increment(4, 8).tensor()) < 1e-14);
    auto r = x.restrict_to({0, 3, 8});
    CHECK(max_diff(r.step(0).tensor(), x.increment(0, 3).tensor()) < 1e-14);
}

TEST_CASE("serialization round trips") {
    BrownianSpec spec{2, 1.0, 16, 4};
    auto x = brownian_lift(spec, 2, 8);
    auto y = path_from_json(nlohmann::json::parse(path_to_json(x).dump()));
    CHECK(y.grid() == x.grid());
    for (std::size_t l = 0; l < x.num_steps(); ++l) CHECK(max_diff(x.step(l).tensor(), y.step(l).tensor()) == 0.0);
    CHECK_THROWS_AS(path_from_json(nlohmann::json{{"dim", 2}}), Error);

    std::ostringstream os;
    write_trace_csv(os, x);
    CHECK(os.str().rfind("t,x_1,x_2\n", 0) == 0);
    CHECK(format_double(0.1) == "0.1");
}
