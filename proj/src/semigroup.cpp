#include "mframe/semigroup.hpp"

#include "mframe/error.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace mframe {

namespace {

class MatrixExpGroup final : public GroupAction {
public:
    MatrixExpGroup(Matrix a, const std::vector<double>& times) : a_(std::move(a)) {
        require(a_.rows() == a_.cols() && a_.rows() >= 1, "generator must be a non-empty square matrix");
        require(a_.allFinite(), "generator must be finite");
        std::vector<double> all;
        for (double t : times) {
            all.push_back(t);
            all.push_back(-t);
        }
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        for (double t : all) cache_.emplace_back(t, exp_of(t));
    }

    int dim() const override { return static_cast<int>(a_.rows()); }

    Vector apply(double t, const Vector& y) const override {
        if (t == 0.0) return y;
        if (a_.rows() == 1) return std::exp(t * a_(0, 0)) * y;
        auto it = std::lower_bound(cache_.begin(), cache_.end(), t,
                                   [](const auto& e, double v) { return e.first < v; });
        if (it != cache_.end() && it->first == t) return it->second * y;
        return exp_of(t) * y;
    }

    Vector generator(const Vector& y) const override { return a_ * y; }
    std::string kind() const override { return "matrix-exponential"; }

private:
    Matrix exp_of(double t) const { return Matrix(t * a_).exp(); }

    Matrix a_;
    std::vector<std::pair<double, Matrix>> cache_;
};

class ShiftGroup final : public GroupAction {
public:
    explicit ShiftGroup(std::vector<double> grid) : grid_(std::move(grid)) {
        require(grid_.size() >= 2, "shift group needs at least two maturities");
        h_ = grid_[1] - grid_[0];
        require(h_ > 0.0, "maturity grid must be increasing");
        for (std::size_t i = 1; i < grid_.size(); ++i) {
            require(std::abs((grid_[i] - grid_[i - 1]) - h_) <= 1e-9 * h_, "maturity grid must be uniform");
        }
    }

    int dim() const override { return static_cast<int>(grid_.size()); }

    Vector apply(double t, const Vector& r) const override {
        require(r.size() == dim(), "shift group: curve has the wrong number of samples");
        double slots = t / h_;
        double k = std::round(slots);
        if (std::abs(slots - k) > 1e-9 * std::max(1.0, std::abs(slots))) {
            std::ostringstream msg;
            msg << "shift by " << t << " is not a multiple of the grid spacing " << h_;
            fail(ErrorKind::InputContract, msg.str());
        }
        const auto n = r.size();
        const auto shift = static_cast<Eigen::Index>(k);
        Vector out(n);
        for (Eigen::Index i = 0; i < n; ++i) out(i) = r(std::clamp<Eigen::Index>(i + shift, 0, n - 1));
        return out;
    }

    Vector generator(const Vector& r) const override {
        const auto n = r.size();
        Vector out = Vector::Zero(n);
        for (Eigen::Index i = 0; i + 1 < n; ++i) out(i) = (r(i + 1) - r(i)) / h_;
        return out;
    }

    std::string kind() const override { return "grid-shift"; }

private:
    std::vector<double> grid_;
    double h_ = 0.0;
};

Matrix fd_jacobian(const DriftFn& f, const Vector& y) {
    const auto n = y.size();
    Matrix j(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        double h = 1e-6 * std::max(1.0, std::abs(y(k)));
        Vector up = y, dn = y;
        up(k) += h;
        dn(k) -= h;
        j.col(k) = (f(up) - f(dn)) / (2.0 * h);
    }
    return j;
}

class IntegratedFlow final : public FlowAction {
public:
    IntegratedFlow(int dim, DriftFn f0, JacobianFn jac, FlowOptions opt)
        : dim_(dim), f0_(std::move(f0)), jac_(std::move(jac)), opt_(opt) {
        require(dim >= 1, "flow dimension must be positive");
        require(static_cast<bool>(f0_), "flow needs a drift field");
        require(opt_.tolerance > 0.0, "flow tolerance must be positive");
    }

    int dim() const override { return dim_; }
    double horizon() const override { return opt_.horizon; }

    Vector apply(double t, const Vector& y) const override { return integrate(t, y).first; }
    Matrix variation(double t, const Vector& y) const override { return integrate(t, y).second; }
    std::pair<Vector, Matrix> apply_with_variation(double t, const Vector& y) const override {
        return integrate(t, y);
    }

    Vector drift(const Vector& y) const override { return f0_(y); }
    Matrix drift_jacobian(const Vector& y) const override {
        return jac_ ? jac_(y) : fd_jacobian(f0_, y);
    }

private:
    // Dormand-Prince 5(4) on the augmented state (y, vec DFl).
    std::pair<Vector, Matrix> integrate(double t_end, const Vector& y0) const {
        const auto n = y0.size();
        if (std::abs(t_end) > opt_.horizon) {
            std::ostringstream msg;
            msg << "flow evaluated at t = " << t_end << " outside its horizon " << opt_.horizon;
            fail(ErrorKind::FlowDomain, msg.str());
        }
        Vector z(n + n * n);
        z.head(n) = y0;
        Eigen::Map<Matrix>(z.data() + n, n, n).setIdentity();
        if (t_end == 0.0) return unpack(z, n);

        auto rhs = [&](const Vector& s) {
            Vector out(s.size());
            Vector y = s.head(n);
            out.head(n) = f0_(y);
            Eigen::Map<const Matrix> jm(s.data() + n, n, n);
            Eigen::Map<Matrix>(out.data() + n, n, n) = drift_jacobian(y) * jm;
            return out;
        };

        static constexpr double a21 = 1.0 / 5;
        static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                                a54 = -212.0 / 729;
        static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                                a64 = 49.0 / 176, a65 = -5103.0 / 18656;
        static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                                b5 = -2187.0 / 6784, b6 = 11.0 / 84;
        static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                                e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

        const double dir = t_end > 0 ? 1.0 : -1.0;
        double t = 0.0;
        double h = dir * std::min(std::abs(t_end), 1e-2);
        Vector k1 = rhs(z);
        while (dir * (t_end - t) > 0.0) {
            if (dir * (t + h - t_end) > 0.0) h = t_end - t;
            Vector k2 = rhs(z + h * (a21 * k1));
            Vector k3 = rhs(z + h * (a31 * k1 + a32 * k2));
            Vector k4 = rhs(z + h * (a41 * k1 + a42 * k2 + a43 * k3));
            Vector k5 = rhs(z + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
            Vector k6 = rhs(z + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
            Vector zn = z + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            Vector k7 = rhs(zn);
            Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double en = 0.0;
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                double sc = opt_.tolerance * (1.0 + std::max(std::abs(z(i)), std::abs(zn(i))));
                en = std::max(en, std::abs(err(i)) / sc);
            }
            if (!zn.allFinite() || !std::isfinite(en)) {
                std::ostringstream msg;
                msg << "flow integration produced non-finite values at t = " << t;
                fail(ErrorKind::FlowDomain, msg.str());
            }
            if (en <= 1.0) {
                t += h;
                z = std::move(zn);
                k1 = std::move(k7);
            }
            double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
            h *= factor;
            if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(t))) {
                std::ostringstream msg;
                msg << "flow integrator step underflow at t = " << t;
                fail(ErrorKind::FlowDomain, msg.str());
            }
        }
        return unpack(z, n);
    }

    static std::pair<Vector, Matrix> unpack(const Vector& z, Eigen::Index n) {
        return {z.head(n), Eigen::Map<const Matrix>(z.data() + n, n, n)};
    }

    int dim_;
    DriftFn f0_;
    JacobianFn jac_;
    FlowOptions opt_;
};

class LinearFlow final : public FlowAction {
public:
    LinearFlow(const Matrix& a, double horizon) : group_(matrix_exp_group(a)), a_(a), horizon_(horizon) {}

    int dim() const override { return static_cast<int>(a_.rows()); }
    double horizon() const override { return horizon_; }
    Vector apply(double t, const Vector& y) const override { return group_->apply(t, y); }
    Matrix variation(double t, const Vector&) const override { return Matrix(t * a_).exp(); }
    Vector drift(const Vector& y) const override { return a_ * y; }
    Matrix drift_jacobian(const Vector&) const override { return a_; }

private:
    GroupPtr group_;
    Matrix a_;
    double horizon_;
};

class MapOnlyFlow final : public FlowAction {
public:
    MapOnlyFlow(int dim, std::function<Vector(double, const Vector&)> map, DriftFn f0)
        : dim_(dim), map_(std::move(map)), f0_(std::move(f0)) {}

    int dim() const override { return dim_; }
    double horizon() const override { return 1e6; }
    Vector apply(double t, const Vector& y) const override { return map_(t, y); }
    bool provides_variation() const override { return false; }
    Matrix variation(double, const Vector&) const override {
        fail(ErrorKind::Capability, "flow does not provide its first variation");
    }
    Vector drift(const Vector& y) const override { return f0_(y); }
    Matrix drift_jacobian(const Vector& y) const override { return fd_jacobian(f0_, y); }

private:
    int dim_;
    std::function<Vector(double, const Vector&)> map_;
    DriftFn f0_;
};

class DilatedGroupAction final : public GroupAction {
public:
    explicit DilatedGroupAction(DilatedGroup d) : d_(std::move(d)) {
        const double up = std::exp(d_.growth * d_.step);
        generator_ = (up * d_.unitary - d_.unitary.transpose() / up) / (2.0 * d_.step);
    }

    int dim() const override { return d_.ambient_dim(); }

    Vector apply(double t, const Vector& w) const override {
        double steps = t / d_.step;
        double k = std::round(steps);
        if (std::abs(steps - k) > 1e-9 * std::max(1.0, std::abs(steps))) {
            std::ostringstream msg;
            msg << "dilated group evaluated at t = " << t << ", not a multiple of the step " << d_.step;
            fail(ErrorKind::InputContract, msg.str());
        }
        int ki = static_cast<int>(k);
        return std::exp(d_.growth * ki * d_.step) * d_.power(ki, w);
    }

    Vector generator(const Vector& w) const override { return generator_ * w; }
    std::string kind() const override { return "dilation"; }

private:
    DilatedGroup d_;
    Matrix generator_;
};

Matrix psd_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

GroupPtr matrix_exp_group(const Matrix& generator, const std::vector<double>& cache_times) {
    return std::make_shared<MatrixExpGroup>(generator, cache_times);
}

GroupPtr identity_group(int dim) { return matrix_exp_group(Matrix::Zero(dim, dim)); }

GroupPtr shift_group_grid(const std::vector<double>& maturities) {
    return std::make_shared<ShiftGroup>(maturities);
}

FlowPtr flow_from_field(int dim, DriftFn f0, JacobianFn jacobian, FlowOptions options) {
    return std::make_shared<IntegratedFlow>(dim, std::move(f0), std::move(jacobian), options);
}

FlowPtr linear_flow(const Matrix& generator, double horizon) {
    return std::make_shared<LinearFlow>(generator, horizon);
}

FlowPtr map_only_flow(int dim, std::function<Vector(double, const Vector&)> map, DriftFn f0) {
    return std::make_shared<MapOnlyFlow>(dim, std::move(map), std::move(f0));
}

double spectral_norm(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

Vector DilatedGroup::embed(const Vector& h) const {
    require(h.size() == state_dim, "embed: vector is not in H");
    Vector w = Vector::Zero(ambient_dim());
    w.segment(static_cast<Eigen::Index>(channel_length) * state_dim, state_dim) = h;
    return w;
}

Vector DilatedGroup::project(const Vector& w) const {
    require(w.size() == ambient_dim(), "project: vector is not in W");
    return w.segment(static_cast<Eigen::Index>(channel_length) * state_dim, state_dim);
}

Vector DilatedGroup::power(int k, const Vector& w) const {
    Vector out = w;
    if (k >= 0) {
        for (int i = 0; i < k; ++i) out = unitary * out;
    } else {
        for (int i = 0; i < -k; ++i) out = unitary.transpose() * out;
    }
    return out;
}

DilatedGroup nagy_dilate(const Matrix& generator, double growth, double step, int channel_length) {
    require(generator.rows() == generator.cols() && generator.rows() >= 1, "generator must be square");
    require(step > 0.0, "dilation step must be positive");
    require(channel_length >= 1, "channel length must be >= 1");
    const auto n = generator.rows();
    Matrix t0 = std::exp(-growth * step) * Matrix(step * generator).exp();
    double sigma = spectral_norm(t0);
    if (sigma > 1.0 + 1e-12) {
        std::ostringstream msg;
        msg.precision(17);
        msg << "exp(-omega*step) exp(step*A) is not a contraction: largest singular value " << sigma;
        fail(ErrorKind::InputContract, msg.str());
    }
    const Matrix id = Matrix::Identity(n, n);
    const Matrix defect = psd_sqrt(id - t0.transpose() * t0);
    const Matrix defect_adj = psd_sqrt(id - t0 * t0.transpose());

    const int L = channel_length;
    const auto blocks = 2 * L + 1;
    Matrix u = Matrix::Zero(blocks * n, blocks * n);
    // slot s in [-L, L] lives in block s + L
    auto blk = [&](int out_slot, int in_slot) {
        return u.block((out_slot + L) * n, (in_slot + L) * n, n, n);
    };
    blk(0, 0) = t0;
    blk(0, -1) = defect_adj;
    blk(1, 0) = defect;
    blk(1, -1) = -t0.transpose();
    for (int s = 1; s < L; ++s) blk(s + 1, s) = id;
    for (int s = -L; s <= -2; ++s) blk(s + 1, s) = id;
    blk(-L, L) = id;

    DilatedGroup out;
    out.contraction = t0;
    out.unitary = std::move(u);
    out.step = step;
    out.channel_length = L;
    out.growth = growth;
    out.state_dim = static_cast<int>(n);
    return out;
}

GroupPtr dilated_group_action(const DilatedGroup& dilation) {
    return std::make_shared<DilatedGroupAction>(dilation);
}

} // namespace mframe
