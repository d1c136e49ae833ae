#include "mframe/error.hpp"
#include "mframe/semigroup.hpp"
#include "mframe/vector_fields.hpp"

#include <doctest.h>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

using namespace mframe;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) m(i, k) = nd(rng);
    return m;
}

Vector random_vector(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = nd(rng);
    return v;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

} // namespace

TEST_CASE("matrix exponential group laws") {
    std::mt19937_64 rng(1);
    Matrix a = random_matrix(rng, 4);
    auto p = matrix_exp_group(a, {0.1, 0.2});
    for (int n = 0; n < 20; ++n) {
        Vector y = random_vector(rng, 4);
        const double s = 0.3 * (n % 5) - 0.5, t = 0.1 * n - 0.7;
        CHECK(max_abs(p->apply(s, p->apply(t, y)) - p->apply(s + t, y)) < 1e-10);
        CHECK(max_abs(p->apply(-t, p->apply(t, y)) - y) < 1e-10);
        CHECK(max_abs(p->apply(0.0, y) - y) == 0.0);
        CHECK(max_abs(p->generator(y) - a * y) < 1e-14);
    }
    auto scalar = matrix_exp_group(Matrix::Constant(1, 1, -0.7));
    CHECK(scalar->apply(2.0, Vector::Constant(1, 3.0))(0) == doctest::Approx(3.0 * std::exp(-1.4)).epsilon(1e-15));
    auto zero = identity_group(3);
    Vector y = random_vector(rng, 3);
    CHECK(max_abs(zero->apply(5.0, y) - y) == 0.0);
}

TEST_CASE("grid shift") {
    std::vector<double> x{0.0, 0.25, 0.5, 0.75, 1.0};
    auto p = shift_group_grid(x);
    Vector ramp(5);
    ramp << 0.0, 1.0, 2.0, 3.0, 4.0;
    CHECK(max_abs(p->apply(0.0, ramp) - ramp) == 0.0);
    Vector left = p->apply(0.25, ramp);
    Vector expect_left(5);
    expect_left << 1.0, 2.0, 3.0, 4.0, 4.0;
    CHECK(max_abs(left - expect_left) == 0.0);
    Vector back = p->apply(-0.25, left);
    Vector expect_back(5);
    expect_back << 1.0, 1.0, 2.0, 3.0, 4.0;
    CHECK(max_abs(back - expect_back) == 0.0);
    Vector flat = Vector::Constant(5, 2.5);
    CHECK(max_abs(p->apply(0.75, flat) - flat) == 0.0);
    CHECK(max_abs(p->apply(-0.5, flat) - flat) == 0.0);
    CHECK_THROWS_AS(p->apply(0.1, ramp), Error);
    Vector d = p->generator(ramp);
    CHECK(d(0) == doctest::Approx(4.0));
    CHECK(d(4) == 0.0);
    CHECK_THROWS_AS(shift_group_grid({0.0, 0.1, 0.3}), Error);
}

TEST_CASE("integrated flows") {
    auto zero = flow_from_field(2, [](const Vector& y) { return Vector(Vector::Zero(y.size())); }, nullptr);
    Vector y(2);
    y << 0.3, -1.0;
    CHECK(max_abs(zero->apply(1.0, y) - y) == 0.0);
    CHECK(max_abs(zero->variation(1.0, y) - Matrix::Identity(2, 2)) == 0.0);

    std::mt19937_64 rng(2);
    Matrix a = random_matrix(rng, 3) * 0.5;
    auto lin = flow_from_field(3, [a](const Vector& v) { return Vector(a * v); }, [a](const Vector&) { return a; });
    auto exact = matrix_exp_group(a);
    Vector v = random_vector(rng, 3);
    for (double t : {0.0, 0.5, 1.0, -0.8}) {
        CHECK(max_abs(lin->apply(t, v) - exact->apply(t, v)) < 1e-9);
        CHECK(max_abs(lin->variation(t, v) - (t * a).exp()) < 1e-9);
    }

    auto f0 = [](const Vector& u) { return Vector(u.array() * (1.0 - u.array())); };
    auto logistic = flow_from_field(1, f0, nullptr);
    for (double t : {0.3, 1.0, 2.0}) {
        const double u = 0.2;
        const double closed = u * std::exp(t) / (1.0 - u + u * std::exp(t));
        CHECK(logistic->apply(t, Vector::Constant(1, u))(0) == doctest::Approx(closed).epsilon(1e-10));
        const double h = 1e-6;
        const double fd = (logistic->apply(t, Vector::Constant(1, u + h))(0) - logistic->apply(t, Vector::Constant(1, u - h))(0)) / (2 * h);
        CHECK(logistic->variation(t, Vector::Constant(1, u))(0, 0) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("flows report leaving their domain") {
    auto blowup = flow_from_field(1, [](const Vector& y) { return Vector(y.array().square()); }, nullptr, FlowOptions{1e-10, 5.0});
    try {
        blowup->apply(2.0, Vector::Constant(1, 1.0));
        FAIL("expected a flow-domain error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::FlowDomain);
    }
    auto short_lived = flow_from_field(1, [](const Vector& y) { return y; }, nullptr, FlowOptions{1e-10, 0.5});
    CHECK_THROWS_AS(short_lived->apply(1.0, Vector::Ones(1)), Error);
    auto map_only = map_only_flow(1, [](double, const Vector& y) { return y; }, [](const Vector& y) { return y; });
    CHECK_FALSE(map_only->provides_variation());
    CHECK_THROWS_AS(map_only->variation(0.0, Vector::Ones(1)), Error);
}

TEST_CASE("dilation of a scalar contraction") {
    const double step = 0.1;
    auto d = nagy_dilate(Matrix::Constant(1, 1, -1.0), 0.0, step, 16);
    CHECK(d.ambient_dim() == 33);
    CHECK(max_abs(d.unitary.transpose() * d.unitary - Matrix::Identity(33, 33)) < 1e-12);
    Vector h = Vector::Ones(1);
    Vector w = d.embed(h);
    for (int k = 0; k <= 16; ++k) {
        CHECK(d.project(w)(0) == doctest::Approx(std::exp(-step * k)).epsilon(1e-12));
        w = d.unitary * w;
    }
}

TEST_CASE("dilation of a skew generator decouples") {
    Matrix a(2, 2);
    a << 0.0, 1.0, -1.0, 0.0;
    auto d = nagy_dilate(a, 0.0, 0.2, 4);
    const int l = 4, n = 2;
    Matrix t0 = (0.2 * a).exp();
    CHECK(max_abs(d.unitary.block(l * n, l * n, n, n) - t0) < 1e-12);
    Matrix coupling = d.unitary.block(l * n, 0, n, d.ambient_dim());
    coupling.block(0, l * n, n, n).setZero();
    CHECK(max_abs(coupling) < 1e-12);
}

TEST_CASE("dilation of random dissipative generators") {
    std::mt19937_64 rng(3);
    for (int inst = 0; inst < 5; ++inst) {
        Matrix b = random_matrix(rng, 3);
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (b + b.transpose()));
        Matrix a = b - es.eigenvalues().maxCoeff() * Matrix::Identity(3, 3);
        const int l = 8;
        auto d = nagy_dilate(a, 0.0, 0.1, l);
        Vector w = random_vector(rng, d.ambient_dim());
        CHECK((d.unitary * w).norm() == doctest::Approx(w.norm()).epsilon(1e-12));
        Matrix tk = Matrix::Identity(3, 3), tkt = Matrix::Identity(3, 3);
        for (int k = 0; k <= 2 * l; ++k) {
            for (int c = 0; c < 3; ++c) {
                Vector e = Vector::Unit(3, c);
                CHECK(max_abs(d.project(d.power(k, d.embed(e))) - tk.col(c)) < 1e-10);
                CHECK(max_abs(d.project(d.power(-k, d.embed(e))) - tkt.col(c)) < 1e-10);
            }
            tk = d.contraction * tk;
            tkt = d.contraction.transpose() * tkt;
        }
    }
}

TEST_CASE("dilation rejects non-contractions") {
    try {
        nagy_dilate(Matrix::Constant(1, 1, 1.0), 0.0, 0.1, 4);
        FAIL("expected an input-contract error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InputContract);
        CHECK(std::string(e.what()).find("singular value") != std::string::npos);
    }
    CHECK_NOTHROW(nagy_dilate(Matrix::Constant(1, 1, 1.0), 1.0, 0.1, 4));
}

TEST_CASE("dilated group action") {
    Matrix a(2, 2);
    a << -0.5, 0.3, -0.3, 0.1;
    const double omega = 0.2, step = 0.05;
    auto d = nagy_dilate(a, omega, step, 10);
    auto p = dilated_group_action(d);
    Vector h(2);
    h << 1.0, -2.0;
    Vector w = d.embed(h);
    CHECK(max_abs(p->apply(0.0, w) - w) == 0.0);
    for (int k = 1; k <= 10; ++k) {
        CHECK(max_abs(d.project(p->apply(k * step, w)) - (k * step * a).exp() * h) < 1e-10);
    }
    CHECK(max_abs(p->apply(3 * step, p->apply(4 * step, w)) - p->apply(7 * step, w)) < 1e-12);
    CHECK(max_abs(p->apply(-2 * step, p->apply(2 * step, w)) - w) < 1e-12);
    CHECK_THROWS_AS(p->apply(0.5 * step, w), Error);
}

TEST_CASE("dilated frame reproduces the frame on the original block") {
    Matrix a(2, 2);
    a << 0.0, 0.7, -0.7, 0.0;
    const double step = 0.1;
    const int l = 6;
    auto d = nagy_dilate(a, 0.0, step, l);
    auto small = sine_field(2, 1, 0.5, {Vector::Ones(2), Vector::Constant(2, 0.5)}, {0.1, 0.2});
    FieldFamily lifted;
    lifted.state_dim = d.ambient_dim();
    lifted.noise_dim = 1;
    lifted.gamma = 2.0;
    lifted.value = [d, small](const Vector& w) {
        Matrix out = Matrix::Zero(d.ambient_dim(), 1);
        out.col(0) = d.embed(small(d.project(w)).col(0));
        return out;
    };
    lifted.derivatives.push_back([d, small](const Vector& w, std::span<const Vector> dirs) {
        const Vector dir = d.project(dirs[0]);
        Matrix inner = small.derivative(1, d.project(w), std::span<const Vector>(&dir, 1));
        Matrix out = Matrix::Zero(d.ambient_dim(), 1);
        out.col(0) = d.embed(inner.col(0));
        return out;
    });
    auto big = moving_frame_transform(dilated_group_action(d), lifted);
    auto ref = moving_frame_transform(matrix_exp_group(a), small);
    Vector u(2);
    u << 0.4, -0.3;
    for (int k = 0; k <= 4; ++k) {
        Matrix gw = big(k * step, d.embed(u));
        CHECK(max_abs(d.project(gw.col(0)) - ref(k * step, u).col(0)) < 1e-12);
    }
}
