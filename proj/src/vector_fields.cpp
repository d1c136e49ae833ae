#include "mframe/vector_fields.hpp"

#include "mframe/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mframe {

namespace {

Matrix apply_columns(const GroupAction& group, double t, const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = group.apply(t, m.col(c));
    return out;
}

Matrix generator_columns(const GroupAction& group, const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = group.generator(m.col(c));
    return out;
}

// Frobenius norm of the full tensor f^j(y), enumerating basis directions.
template <class Eval>
double full_tensor_norm(int n, int j, Eval&& eval) {
    std::vector<Vector> dirs(static_cast<std::size_t>(j), Vector::Zero(n));
    std::vector<int> idx(static_cast<std::size_t>(j), 0);
    double sum = 0.0;
    while (true) {
        for (int s = 0; s < j; ++s) {
            dirs[static_cast<std::size_t>(s)].setZero();
            dirs[static_cast<std::size_t>(s)](idx[static_cast<std::size_t>(s)]) = 1.0;
        }
        sum += eval(std::span<const Vector>(dirs)).squaredNorm();
        int s = j - 1;
        while (s >= 0 && ++idx[static_cast<std::size_t>(s)] == n) {
            idx[static_cast<std::size_t>(s)] = 0;
            --s;
        }
        if (s < 0) break;
    }
    return std::sqrt(sum);
}

// Cumulative trapezoidal integral from x_0 of each column.
Matrix cumulative_trapezoid(const Matrix& values, double h) {
    Matrix out = Matrix::Zero(values.rows(), values.cols());
    for (Eigen::Index r = 1; r < values.rows(); ++r) {
        out.row(r) = out.row(r - 1) + 0.5 * h * (values.row(r - 1) + values.row(r));
    }
    return out;
}

double uniform_spacing(const std::vector<double>& maturities) {
    require(maturities.size() >= 2, "maturity grid needs at least two points");
    double h = maturities[1] - maturities[0];
    require(h > 0.0, "maturity grid must be increasing");
    for (std::size_t i = 1; i < maturities.size(); ++i) {
        require(std::abs(maturities[i] - maturities[i - 1] - h) <= 1e-9 * h, "maturity grid must be uniform");
    }
    return h;
}

FieldFamily state_independent_curve(Vector curve, double gamma_levels_two) {
    FieldFamily f;
    f.state_dim = static_cast<int>(curve.size());
    f.noise_dim = 1;
    f.gamma = gamma_levels_two;
    f.bound = curve.norm();
    const auto n = curve.size();
    f.value = [curve](const Vector&) { return Matrix(curve); };
    for (int j = 0; j < 2; ++j) {
        f.derivatives.push_back([n](const Vector&, std::span<const Vector>) { return Matrix::Zero(n, 1).eval(); });
    }
    return f;
}

} // namespace

Matrix FieldFamily::derivative(int j, const Vector& y, std::span<const Vector> dirs) const {
    if (j < 1 || j > levels()) {
        fail(ErrorKind::Capability, "field does not provide derivative level " + std::to_string(j));
    }
    require(static_cast<int>(dirs.size()) == j, "derivative level and number of directions differ");
    return derivatives[static_cast<std::size_t>(j - 1)](y, dirs);
}

void FieldFamily::validate() const {
    require(state_dim >= 1 && noise_dim >= 1, "field dimensions must be positive");
    require(static_cast<bool>(value), "field needs a value evaluator");
    int k = static_cast<int>(std::ceil(gamma)) - 1;
    require(levels() == k, "Lip(gamma) family needs ceil(gamma) - 1 = " + std::to_string(k) +
                               " derivative levels, has " + std::to_string(levels()));
}

TransformedField TransformedField::autonomous(const FieldFamily& f) {
    TransformedField g;
    g.state_dim = f.state_dim;
    g.noise_dim = f.noise_dim;
    g.drift_channel = f.drift_channel;
    auto value = f.value;
    g.value = [value](double, const Vector& u) { return value(u); };
    for (const auto& d : f.derivatives) {
        g.derivatives.push_back([d](double, const Vector& u, std::span<const Vector> w) { return d(u, w); });
    }
    const int n = f.state_dim, m = f.noise_dim;
    g.time_derivative = [n, m](double, const Vector&) { return Matrix::Zero(n, m).eval(); };
    return g;
}

FieldFamily TransformedField::at(double t) const {
    FieldFamily f;
    f.state_dim = state_dim;
    f.noise_dim = noise_dim;
    f.drift_channel = drift_channel;
    f.gamma = levels() + 1;
    auto v = value;
    f.value = [v, t](const Vector& u) { return v(t, u); };
    for (const auto& d : derivatives) {
        f.derivatives.push_back([d, t](const Vector& u, std::span<const Vector> w) { return d(t, u, w); });
    }
    return f;
}

FieldFamily with_finite_differences(int state_dim, int noise_dim, FieldValueFn value, int levels,
                                    double gamma) {
    require(levels >= 0, "levels must be non-negative");
    FieldFamily f;
    f.state_dim = state_dim;
    f.noise_dim = noise_dim;
    f.gamma = gamma;
    f.value = value;
    // level j from level j-1 along the last direction
    std::function<Matrix(const Vector&, std::span<const Vector>)> below =
        [value](const Vector& y, std::span<const Vector>) { return value(y); };
    for (int j = 1; j <= levels; ++j) {
        auto prev = below;
        FieldDerivativeFn next = [prev](const Vector& y, std::span<const Vector> dirs) -> Matrix {
            const Vector& w = dirs.back();
            double len = w.norm();
            auto rest = dirs.first(dirs.size() - 1);
            if (len == 0.0) return Matrix::Zero(prev(y, rest).rows(), prev(y, rest).cols());
            const double h = kFiniteDifferenceStep;
            Vector unit = w / len;
            return len * (prev(y + h * unit, rest) - prev(y - h * unit, rest)) / (2.0 * h);
        };
        f.derivatives.push_back(next);
        below = next;
    }
    return f;
}

FieldFamily constant_field(const Matrix& value) {
    FieldFamily f;
    f.state_dim = static_cast<int>(value.rows());
    f.noise_dim = static_cast<int>(value.cols());
    f.gamma = 3.0;
    f.bound = value.norm();
    f.value = [value](const Vector&) { return value; };
    const auto n = value.rows(), m = value.cols();
    for (int j = 0; j < 2; ++j) {
        f.derivatives.push_back([n, m](const Vector&, std::span<const Vector>) { return Matrix::Zero(n, m).eval(); });
    }
    return f;
}

FieldFamily linear_field(const std::vector<Matrix>& generators) {
    require(!generators.empty(), "linear field needs at least one generator");
    const auto n = generators.front().rows();
    for (const auto& b : generators) require(b.rows() == n && b.cols() == n, "linear field generators must be square");
    const auto m = static_cast<Eigen::Index>(generators.size());
    FieldFamily f;
    f.state_dim = static_cast<int>(n);
    f.noise_dim = static_cast<int>(m);
    f.gamma = 3.0;
    f.value = [generators, n, m](const Vector& y) {
        Matrix out(n, m);
        for (Eigen::Index b = 0; b < m; ++b) out.col(b) = generators[static_cast<std::size_t>(b)] * y;
        return out;
    };
    f.derivatives.push_back([generators, n, m](const Vector&, std::span<const Vector> w) {
        Matrix out(n, m);
        for (Eigen::Index b = 0; b < m; ++b) out.col(b) = generators[static_cast<std::size_t>(b)] * w[0];
        return out;
    });
    f.derivatives.push_back([n, m](const Vector&, std::span<const Vector>) { return Matrix::Zero(n, m).eval(); });
    return f;
}

FieldFamily sine_field(int state_dim, int noise_dim, double scale, std::vector<Vector> freq,
                       std::vector<double> phase) {
    const auto count = static_cast<std::size_t>(state_dim * noise_dim);
    require(freq.size() == count && phase.size() == count, "sine field needs one frequency/phase per entry");
    for (const auto& c : freq) require(c.size() == state_dim, "sine field frequency has the wrong length");
    FieldFamily f;
    f.state_dim = state_dim;
    f.noise_dim = noise_dim;
    f.gamma = 3.0;
    double max_freq = 0.0;
    for (const auto& c : freq) max_freq = std::max(max_freq, c.norm());
    f.bound = std::abs(scale) * std::sqrt(static_cast<double>(count)) * std::max(1.0, max_freq * max_freq);
    auto eval = [=](int order, const Vector& y, std::span<const Vector> dirs) {
        Matrix out(state_dim, noise_dim);
        for (int i = 0; i < state_dim; ++i) {
            for (int b = 0; b < noise_dim; ++b) {
                auto e = static_cast<std::size_t>(i * noise_dim + b);
                double theta = freq[e].dot(y) + phase[e] + order * std::numbers::pi / 2.0;
                double v = scale * std::sin(theta);
                for (const auto& w : dirs) v *= freq[e].dot(w);
                out(i, b) = v;
            }
        }
        return out;
    };
    f.value = [eval](const Vector& y) { return eval(0, y, {}); };
    f.derivatives.push_back([eval](const Vector& y, std::span<const Vector> w) { return eval(1, y, w); });
    f.derivatives.push_back([eval](const Vector& y, std::span<const Vector> w) { return eval(2, y, w); });
    return f;
}

FieldFamily logistic_field(double scale) {
    FieldFamily f;
    f.state_dim = 1;
    f.noise_dim = 1;
    f.gamma = 3.0;
    f.value = [scale](const Vector& y) { return Matrix::Constant(1, 1, scale * y(0) * (1.0 - y(0))); };
    f.derivatives.push_back([scale](const Vector& y, std::span<const Vector> w) {
        return Matrix::Constant(1, 1, scale * (1.0 - 2.0 * y(0)) * w[0](0));
    });
    f.derivatives.push_back([scale](const Vector&, std::span<const Vector> w) {
        return Matrix::Constant(1, 1, -2.0 * scale * w[0](0) * w[1](0));
    });
    return f;
}

FieldFamily hjm_constant_vol(const std::vector<double>& maturities, double c) {
    uniform_spacing(maturities);
    return state_independent_curve(Vector::Constant(static_cast<Eigen::Index>(maturities.size()), c), 3.0);
}

FieldFamily hjm_exponential_vol(const std::vector<double>& maturities, double c, double beta) {
    uniform_spacing(maturities);
    Vector curve(static_cast<Eigen::Index>(maturities.size()));
    for (std::size_t i = 0; i < maturities.size(); ++i) curve(static_cast<Eigen::Index>(i)) = c * std::exp(-beta * maturities[i]);
    return state_independent_curve(std::move(curve), 3.0);
}

FieldFamily with_drift(const FieldFamily& drift, const FieldFamily& noise) {
    require(drift.state_dim == noise.state_dim, "drift and noise act on different state spaces");
    require(drift.noise_dim == 1 && !drift.drift_channel && !noise.drift_channel,
            "with_drift expects a single drift column and a pure noise family");
    FieldFamily f;
    f.state_dim = noise.state_dim;
    f.noise_dim = noise.noise_dim + 1;
    f.drift_channel = true;
    f.gamma = std::min(drift.gamma, noise.gamma);
    f.bound = std::max(drift.bound, noise.bound);
    const int n = f.state_dim, m = f.noise_dim;
    auto dv = drift.value;
    auto nv = noise.value;
    f.value = [dv, nv, n, m](const Vector& y) {
        Matrix out(n, m);
        out.col(0) = dv(y);
        out.rightCols(m - 1) = nv(y);
        return out;
    };
    const int levels = std::min(drift.levels(), noise.levels());
    for (int j = 0; j < levels; ++j) {
        auto dd = drift.derivatives[static_cast<std::size_t>(j)];
        auto nd = noise.derivatives[static_cast<std::size_t>(j)];
        f.derivatives.push_back([dd, nd, n, m](const Vector& y, std::span<const Vector> w) {
            Matrix out(n, m);
            out.col(0) = dd(y, w);
            out.rightCols(m - 1) = nd(y, w);
            return out;
        });
    }
    return f;
}

LipEstimate lip_gamma_estimate(const FieldFamily& f, const std::vector<Vector>& samples, double radius) {
    require(!samples.empty(), "lip_gamma_estimate needs at least one sample point");
    require(radius > 0.0, "lip_gamma_estimate radius must be positive");
    const int k = f.levels();
    const int n = f.state_dim;
    LipEstimate est;
    est.level_bounds.assign(static_cast<std::size_t>(k + 1), 0.0);
    est.remainder_ratios.assign(static_cast<std::size_t>(k + 1), 0.0);

    auto eval = [&f](int j, const Vector& y, std::span<const Vector> dirs) -> Matrix {
        return j == 0 ? f.value(y) : f.derivative(j, y, dirs);
    };

    for (const auto& x : samples) {
        for (int j = 0; j <= k; ++j) {
            double norm = full_tensor_norm(n, j, [&](std::span<const Vector> dirs) { return eval(j, x, dirs); });
            auto& b = est.level_bounds[static_cast<std::size_t>(j)];
            b = std::max(b, norm);
        }
    }

    for (const auto& x : samples) {
        for (const auto& y : samples) {
            Vector delta = y - x;
            double dist = delta.norm();
            if (dist == 0.0 || dist > radius) continue;
            for (int j = 0; j <= k; ++j) {
                double rem = full_tensor_norm(n, j, [&](std::span<const Vector> dirs) {
                    Matrix r = eval(j, y, dirs);
                    std::vector<Vector> ext(dirs.begin(), dirs.end());
                    double fact = 1.0;
                    for (int l = 0; l <= k - j; ++l) {
                        if (l > 0) {
                            fact *= l;
                            ext.push_back(delta);
                        }
                        r -= eval(j + l, x, ext) / fact;
                    }
                    return r;
                });
                double ratio = rem / std::pow(dist, f.gamma - j);
                auto& worst = est.remainder_ratios[static_cast<std::size_t>(j)];
                worst = std::max(worst, ratio);
            }
        }
    }
    est.bound = *std::max_element(est.level_bounds.begin(), est.level_bounds.end());
    est.worst_remainder_ratio = *std::max_element(est.remainder_ratios.begin(), est.remainder_ratios.end());
    return est;
}

TransformedField moving_frame_transform(GroupPtr group, const FieldFamily& f) {
    require(group != nullptr, "moving frame needs a group");
    require(group->dim() == f.state_dim, "group and field act on different state dimensions");
    TransformedField g;
    g.state_dim = f.state_dim;
    g.noise_dim = f.noise_dim;
    g.drift_channel = f.drift_channel;
    auto value = f.value;
    g.value = [group, value](double t, const Vector& u) {
        return apply_columns(*group, -t, value(group->apply(t, u)));
    };
    for (const auto& d : f.derivatives) {
        g.derivatives.push_back([group, d](double t, const Vector& u, std::span<const Vector> w) {
            std::vector<Vector> pushed;
            pushed.reserve(w.size());
            for (const auto& v : w) pushed.push_back(group->apply(t, v));
            return apply_columns(*group, -t, d(group->apply(t, u), pushed));
        });
    }
    if (f.levels() >= 1) {
        auto d1 = f.derivatives.front();
        g.time_derivative = [group, value, d1](double t, const Vector& u) {
            Vector y = group->apply(t, u);
            Matrix gv = apply_columns(*group, -t, value(y));
            Vector ay = group->generator(y);
            Matrix inner = apply_columns(*group, -t, d1(y, std::span<const Vector>(&ay, 1)));
            return Matrix(inner - generator_columns(*group, gv));
        };
    } else {
        g.time_derivative = [](double, const Vector&) -> Matrix {
            fail(ErrorKind::Capability, "time derivative of the transformed field needs f^1");
        };
    }
    return g;
}

TransformedField flow_frame_transform(FlowPtr flow, const FieldFamily& f) {
    require(flow != nullptr, "flow frame needs a flow");
    if (!flow->provides_variation()) {
        fail(ErrorKind::Capability, "flow frame transform needs the first variation of the flow");
    }
    require(flow->dim() == f.state_dim, "flow and field act on different state dimensions");
    TransformedField g;
    g.state_dim = f.state_dim;
    g.noise_dim = f.noise_dim;
    g.drift_channel = f.drift_channel;
    auto value = f.value;
    g.value = [flow, value](double t, const Vector& u) {
        auto [y, jac] = flow->apply_with_variation(t, u);
        return Matrix(jac.partialPivLu().solve(value(y)));
    };
    if (f.levels() >= 1) {
        auto d1 = f.derivatives.front();
        g.derivatives.push_back([flow, value, d1](double t, const Vector& u, std::span<const Vector> w) {
            auto [y, jac] = flow->apply_with_variation(t, u);
            auto lu = jac.partialPivLu();
            const Vector& dir = w[0];
            double len = dir.norm();
            if (len == 0.0) return Matrix::Zero(y.size(), value(y).cols()).eval();
            Vector unit = dir / len;
            const double h = kFiniteDifferenceStep;
            Matrix djac = (flow->variation(t, u + h * unit) - flow->variation(t, u - h * unit)) / (2.0 * h) * len;
            Vector pushed = jac * dir;
            Matrix fy = value(y);
            Matrix g0 = lu.solve(fy);
            return Matrix(lu.solve(d1(y, std::span<const Vector>(&pushed, 1)) - djac * g0));
        });
        g.time_derivative = [flow, value, d1](double t, const Vector& u) {
            auto [y, jac] = flow->apply_with_variation(t, u);
            Vector f0 = flow->drift(y);
            Matrix bracket = d1(y, std::span<const Vector>(&f0, 1)) - flow->drift_jacobian(y) * value(y);
            return Matrix(jac.partialPivLu().solve(bracket));
        };
    } else {
        g.time_derivative = [](double, const Vector&) -> Matrix {
            fail(ErrorKind::Capability, "time derivative of the flow-transformed field needs f^1");
        };
    }
    return g;
}

FieldFamily hjm_drift(const FieldFamily& sigma, const std::vector<double>& maturities) {
    require(!sigma.drift_channel, "hjm_drift expects a pure volatility family");
    require(static_cast<std::size_t>(sigma.state_dim) == maturities.size(),
            "volatility is not sampled on the maturity grid");
    const double h = uniform_spacing(maturities);
    FieldFamily a;
    a.state_dim = sigma.state_dim;
    a.noise_dim = 1;
    a.gamma = sigma.gamma;
    auto sv = sigma.value;
    a.value = [sv, h](const Vector& r) {
        Matrix s = sv(r);
        Matrix integral = cumulative_trapezoid(s, h);
        return Matrix(s.cwiseProduct(integral).rowwise().sum());
    };
    if (sigma.levels() >= 1) {
        auto d1 = sigma.derivatives[0];
        a.derivatives.push_back([sv, d1, h](const Vector& r, std::span<const Vector> w) {
            Matrix s = sv(r);
            Matrix ds = d1(r, w);
            Matrix out = ds.cwiseProduct(cumulative_trapezoid(s, h)) + s.cwiseProduct(cumulative_trapezoid(ds, h));
            return Matrix(out.rowwise().sum());
        });
    }
    if (sigma.levels() >= 2) {
        auto d1 = sigma.derivatives[0];
        auto d2 = sigma.derivatives[1];
        a.derivatives.push_back([sv, d1, d2, h](const Vector& r, std::span<const Vector> w) {
            Matrix s = sv(r);
            Matrix da = d1(r, w.first(1));
            Matrix db = d1(r, w.subspan(1, 1));
            Matrix dd = d2(r, w);
            Matrix out = dd.cwiseProduct(cumulative_trapezoid(s, h)) + da.cwiseProduct(cumulative_trapezoid(db, h)) +
                         db.cwiseProduct(cumulative_trapezoid(da, h)) + s.cwiseProduct(cumulative_trapezoid(dd, h));
            return Matrix(out.rowwise().sum());
        });
    }
    a.gamma = a.levels() + 1;
    return a;
}

} // namespace mframe
