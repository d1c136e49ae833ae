#include "mframe/rough_path.hpp"

#include "mframe/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

namespace mframe {

namespace {

bool strictly_increasing(const std::vector<double>& grid) {
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) return false;
    }
    return true;
}

int pvar_levels(double p) { return static_cast<int>(std::floor(p)); }

// |X^i - Y^i|^(p/i) for i = 1..levels (index i-1).
void level_terms(const GroupElement& gx, const GroupElement* gy, int levels, double p,
                 std::vector<double>& out) {
    out.assign(static_cast<std::size_t>(levels), 0.0);
    for (int i = 1; i <= levels; ++i) {
        auto bx = gx.block(i);
        double s = 0.0;
        if (gy != nullptr) {
            auto by = gy->block(i);
            for (std::size_t k = 0; k < bx.size(); ++k) {
                double d = bx[k] - by[k];
                s += d * d;
            }
        } else {
            for (double v : bx) s += v * v;
        }
        out[static_cast<std::size_t>(i - 1)] = std::pow(std::sqrt(s), p / i);
    }
}

// Level-i objective phi(a, b) for a pair of paths with memoisation.
class PairObjective {
public:
    PairObjective(const MultiplicativePath& x, const MultiplicativePath& y, int level, double p)
        : x_(x), y_(y), level_(level), p_(p) {}

    double value(std::size_t a, std::size_t b) {
        auto key = std::make_pair(a, b);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        double v = term(x_.increment(a, b), y_.increment(a, b));
        cache_.emplace(key, v);
        return v;
    }

    // Best interior split of (a, b) maximising phi(a,k) + phi(k,b).
    std::pair<std::size_t, double> best_split(std::size_t a, std::size_t b) {
        std::size_t n = b - a;
        std::vector<double> fwd(n + 1, 0.0);
        auto gx = x_.step(a);
        auto gy = y_.step(a);
        for (std::size_t k = a + 1; k < b; ++k) {
            fwd[k - a] = term(gx, gy);
            cache_.emplace(std::make_pair(a, k), fwd[k - a]);
            gx = gx * x_.step(k);
            gy = gy * y_.step(k);
        }
        std::size_t best_k = a + 1;
        double best = -1.0;
        auto hx = x_.step(b - 1);
        auto hy = y_.step(b - 1);
        for (std::size_t k = b - 1; k > a; --k) {
            double back = term(hx, hy);
            cache_.emplace(std::make_pair(k, b), back);
            double total = fwd[k - a] + back;
            if (total > best) {
                best = total;
                best_k = k;
            }
            if (k - 1 > a) {
                hx = x_.step(k - 1) * hx;
                hy = y_.step(k - 1) * hy;
            }
        }
        return {best_k, best};
    }

private:
    double term(const GroupElement& gx, const GroupElement& gy) const {
        auto bx = gx.block(level_);
        auto by = gy.block(level_);
        double s = 0.0;
        for (std::size_t k = 0; k < bx.size(); ++k) {
            double d = bx[k] - by[k];
            s += d * d;
        }
        return std::pow(std::sqrt(s), p_ / level_);
    }

    const MultiplicativePath& x_;
    const MultiplicativePath& y_;
    int level_;
    double p_;
    std::map<std::pair<std::size_t, std::size_t>, double> cache_;
};

double partition_sum(PairObjective& obj, const std::vector<std::size_t>& pts) {
    double s = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) s += obj.value(pts[k - 1], pts[k]);
    return s;
}

std::vector<std::size_t> dyadic_partition(std::size_t n, std::size_t stride) {
    std::vector<std::size_t> pts;
    for (std::size_t k = 0; k < n; k += stride) pts.push_back(k);
    pts.push_back(n);
    return pts;
}

// Greedy local search over insertions and removals; every accepted move
// strictly increases the partition sum.
double greedy_improve(PairObjective& obj, std::vector<std::size_t> pts, double current) {
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, double>> splits;
    const std::size_t cap = 4 * (pts.back() + 1);
    for (std::size_t iter = 0; iter < cap; ++iter) {
        double best_gain = 0.0;
        enum { None, Insert, Remove } move = None;
        std::size_t where = 0, what = 0;
        for (std::size_t g = 1; g < pts.size(); ++g) {
            std::size_t a = pts[g - 1], b = pts[g];
            if (b - a < 2) continue;
            auto key = std::make_pair(a, b);
            auto it = splits.find(key);
            if (it == splits.end()) it = splits.emplace(key, obj.best_split(a, b)).first;
            double gain = it->second.second - obj.value(a, b);
            if (gain > best_gain) {
                best_gain = gain;
                move = Insert;
                where = g;
                what = it->second.first;
            }
        }
        for (std::size_t g = 1; g + 1 < pts.size(); ++g) {
            double gain = obj.value(pts[g - 1], pts[g + 1]) - obj.value(pts[g - 1], pts[g]) -
                          obj.value(pts[g], pts[g + 1]);
            if (gain > best_gain) {
                best_gain = gain;
                move = Remove;
                where = g;
            }
        }
        if (move == None || best_gain <= 1e-15 * (1.0 + current)) break;
        if (move == Insert) {
            pts.insert(pts.begin() + static_cast<std::ptrdiff_t>(where), what);
        } else {
            pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(where));
        }
        current += best_gain;
    }
    return std::max(current, partition_sum(obj, pts));
}

void check_same_grid(const MultiplicativePath& x, const MultiplicativePath& y) {
    require(x.dim() == y.dim(), "paths have different dimensions");
    require(x.grid() == y.grid(), "paths are sampled on different grids (no resampling is done)");
}

} // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(base ^ mix(index + 0x632be59bd9b4e019ULL));
}

MultiplicativePath::MultiplicativePath(std::vector<double> grid, std::vector<GroupElement> steps,
                                       double p)
    : p_(p), grid_(std::move(grid)), steps_(std::move(steps)) {
    require(grid_.size() >= 2, "a path needs at least two grid points");
    require(strictly_increasing(grid_), "path grid must be strictly increasing");
    require(steps_.size() + 1 == grid_.size(), "one increment per grid cell is required");
    require(p >= 1.0, "p must be >= 1");
    dim_ = steps_.front().dim();
    level_ = steps_.front().level();
    for (const auto& s : steps_) {
        require(s.dim() == dim_ && s.level() == level_, "increments must share dim and level");
    }
}

GroupElement MultiplicativePath::increment(std::size_t i, std::size_t j) const {
    require(i <= j && j < grid_.size(), "increment indices out of range");
    if (i == j) return GroupElement::identity(dim_, level_);
    GroupElement g = steps_[i];
    for (std::size_t k = i + 1; k < j; ++k) g = g * steps_[k];
    return g;
}

Eigen::MatrixXd MultiplicativePath::level1_trace() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid_.size()), dim_);
    for (std::size_t l = 0; l < steps_.size(); ++l) {
        auto b = steps_[l].block(1);
        for (int k = 0; k < dim_; ++k) {
            out(static_cast<Eigen::Index>(l + 1), k) = out(static_cast<Eigen::Index>(l), k) + b[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

MultiplicativePath MultiplicativePath::restrict_to(const std::vector<std::size_t>& indices) const {
    require(indices.size() >= 2, "restriction needs at least two indices");
    std::vector<double> g;
    std::vector<GroupElement> s;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        require(indices[k] < grid_.size(), "restriction index out of range");
        if (k > 0) {
            require(indices[k] > indices[k - 1], "restriction indices must increase");
            s.push_back(increment(indices[k - 1], indices[k]));
        }
        g.push_back(grid_[indices[k]]);
    }
    MultiplicativePath out(std::move(g), std::move(s), p_);
    out.origin_ = origin_;
    return out;
}

MultiplicativePath MultiplicativePath::coarsen(std::size_t factor) const {
    require(factor >= 1, "coarsening factor must be positive");
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < grid_.size() - 1; k += factor) idx.push_back(k);
    idx.push_back(grid_.size() - 1);
    return restrict_to(idx);
}

std::size_t MultiplicativePath::index_of(double t) const {
    auto it = std::lower_bound(grid_.begin(), grid_.end(), t - 1e-12 * (1.0 + std::abs(t)));
    if (it == grid_.end() || std::abs(*it - t) > 1e-12 * (1.0 + std::abs(t))) {
        fail(ErrorKind::InputContract, "time " + std::to_string(t) + " is not a driver grid point");
    }
    return static_cast<std::size_t>(it - grid_.begin());
}

double Control::superadditivity_defect() const {
    const auto n = table_.rows();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        worst = std::max(worst, std::abs(table_(i, i)));
        for (Eigen::Index j = i; j < n; ++j) {
            for (Eigen::Index k = j; k < n; ++k) {
                worst = std::max(worst, table_(i, j) + table_(j, k) - table_(i, k));
            }
        }
    }
    return worst;
}

Eigen::MatrixXd interpolate_linear(const std::vector<double>& times, const Eigen::MatrixXd& points,
                                   const std::vector<double>& query) {
    require(times.size() == static_cast<std::size_t>(points.rows()) && times.size() >= 2,
            "interpolation needs matching times and samples");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(query.size()), points.cols());
    for (std::size_t q = 0; q < query.size(); ++q) {
        double t = query[q];
        auto it = std::upper_bound(times.begin(), times.end(), t);
        std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - times.begin()), 1, times.size() - 1);
        std::size_t lo = hi - 1;
        double w = std::clamp((t - times[lo]) / (times[hi] - times[lo]), 0.0, 1.0);
        auto r = static_cast<Eigen::Index>(q);
        if (w == 0.0) {
            out.row(r) = points.row(static_cast<Eigen::Index>(lo));
        } else if (w == 1.0) {
            out.row(r) = points.row(static_cast<Eigen::Index>(hi));
        } else {
            out.row(r) = (1.0 - w) * points.row(static_cast<Eigen::Index>(lo)) +
                         w * points.row(static_cast<Eigen::Index>(hi));
        }
    }
    return out;
}

MultiplicativePath lift_piecewise_linear(const std::vector<double>& times,
                                         const Eigen::MatrixXd& points, int level, double p) {
    require(strictly_increasing(times), "lift: grid must be strictly increasing");
    require(times.size() == static_cast<std::size_t>(points.rows()), "lift: one sample per grid time");
    require(level >= 1, "lift: level must be >= 1");
    if (level > 3) fail(ErrorKind::UnsupportedLevel, "lift: levels above 3 are not supported");
    const int d = static_cast<int>(points.cols());
    std::vector<GroupElement> steps;
    steps.reserve(times.size() - 1);
    std::vector<double> delta(static_cast<std::size_t>(d));
    for (std::size_t l = 0; l + 1 < times.size(); ++l) {
        for (int k = 0; k < d; ++k) {
            delta[static_cast<std::size_t>(k)] =
                points(static_cast<Eigen::Index>(l + 1), k) - points(static_cast<Eigen::Index>(l), k);
        }
        steps.push_back(group_exp(TruncatedTensor::from_level1(level, delta)));
    }
    return MultiplicativePath(times, std::move(steps), p);
}

BrownianSample sample_brownian(const BrownianSpec& spec) {
    require(spec.dim >= 1, "brownian: dimension must be >= 1");
    require(spec.horizon > 0.0, "brownian: horizon must be positive");
    require(spec.fine_steps >= 1, "brownian: need at least one fine step");
    BrownianSample s;
    s.spec = spec;
    const std::size_t n = spec.fine_steps;
    s.times.resize(n + 1);
    for (std::size_t l = 0; l <= n; ++l) s.times[l] = spec.horizon * static_cast<double>(l) / static_cast<double>(n);
    s.points = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + 1), spec.dim);
    std::mt19937_64 rng(derive_seed(spec.seed, 0));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < n; ++l) {
        double sd = std::sqrt(s.times[l + 1] - s.times[l]);
        for (int k = 0; k < spec.dim; ++k) {
            s.points(static_cast<Eigen::Index>(l + 1), k) = s.points(static_cast<Eigen::Index>(l), k) + sd * normal(rng);
        }
    }
    return s;
}

MultiplicativePath brownian_lift(const BrownianSample& sample, int level, std::size_t output_steps,
                                 double p) {
    const std::size_t n = sample.spec.fine_steps;
    require(output_steps >= 1 && output_steps <= n && n % output_steps == 0,
            "brownian: output steps must divide the fine mesh (mesh <= solver spacing)");
    auto fine = lift_piecewise_linear(sample.times, sample.points, level, p);
    auto out = fine.coarsen(n / output_steps);
    out.set_origin(sample.spec);
    return out;
}

MultiplicativePath brownian_lift(const BrownianSpec& spec, int level, std::size_t output_steps,
                                 double p) {
    return brownian_lift(sample_brownian(spec), level, output_steps, p);
}

double p_variation_distance(const MultiplicativePath& x, const MultiplicativePath& y, double p,
                            PartitionSearch search) {
    check_same_grid(x, y);
    require(p >= 1.0, "p must be >= 1");
    const int levels = pvar_levels(p);
    require(x.level() >= levels && y.level() >= levels, "paths must carry levels up to floor(p)");
    const std::size_t n = x.num_steps();

    double result = 0.0;
    if (search == PartitionSearch::Exhaustive) {
        std::vector<std::vector<double>> best(static_cast<std::size_t>(levels), std::vector<double>(n + 1, 0.0));
        std::vector<double> terms;
        for (std::size_t a = 0; a < n; ++a) {
            auto gx = x.step(a);
            auto gy = y.step(a);
            for (std::size_t b = a + 1; b <= n; ++b) {
                if (b > a + 1) {
                    gx = gx * x.step(b - 1);
                    gy = gy * y.step(b - 1);
                }
                level_terms(gx, &gy, levels, p, terms);
                for (int i = 0; i < levels; ++i) {
                    auto& row = best[static_cast<std::size_t>(i)];
                    row[b] = std::max(row[b], row[a] + terms[static_cast<std::size_t>(i)]);
                }
            }
        }
        for (int i = 1; i <= levels; ++i) {
            result = std::max(result, std::pow(best[static_cast<std::size_t>(i - 1)][n], i / p));
        }
        return result;
    }

    for (int i = 1; i <= levels; ++i) {
        PairObjective obj(x, y, i, p);
        double best = 0.0;
        std::vector<std::size_t> best_pts;
        for (std::size_t stride = 1;; stride *= 2) {
            auto pts = dyadic_partition(n, stride);
            double s = partition_sum(obj, pts);
            if (s > best || best_pts.empty()) {
                best = s;
                best_pts = pts;
            }
            if (stride >= n) break;
        }
        if (search == PartitionSearch::DyadicGreedy) best = greedy_improve(obj, best_pts, best);
        result = std::max(result, std::pow(best, i / p));
    }
    return result;
}

Control control_from_path(const MultiplicativePath& x, double p) {
    require(p >= 1.0, "p must be >= 1");
    const int levels = pvar_levels(p);
    require(x.level() >= levels, "path must carry levels up to floor(p)");
    const std::size_t n = x.num_steps() + 1;
    const auto N = static_cast<Eigen::Index>(n);

    std::vector<Eigen::MatrixXd> phi(static_cast<std::size_t>(levels), Eigen::MatrixXd::Zero(N, N));
    std::vector<double> terms;
    for (std::size_t a = 0; a + 1 < n; ++a) {
        auto g = x.step(a);
        for (std::size_t b = a + 1; b < n; ++b) {
            if (b > a + 1) g = g * x.step(b - 1);
            level_terms(g, nullptr, levels, p, terms);
            for (int i = 0; i < levels; ++i) {
                phi[static_cast<std::size_t>(i)](static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = terms[static_cast<std::size_t>(i)];
            }
        }
    }

    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(N, N);
    Eigen::MatrixXd v(N, N);
    for (const auto& f : phi) {
        v.setZero();
        for (Eigen::Index a = 0; a < N; ++a) {
            for (Eigen::Index b = a + 1; b < N; ++b) {
                double best = 0.0;
                for (Eigen::Index k = a; k < b; ++k) best = std::max(best, v(a, k) + f(k, b));
                v(a, b) = best;
            }
        }
        omega += v;
    }
    return Control(x.grid(), std::move(omega));
}

ConvergenceCertificate controlled_convergence_check(const std::vector<MultiplicativePath>& sequence,
                                                    const MultiplicativePath& limit,
                                                    const Control& omega, double p) {
    const int levels = pvar_levels(p);
    require(limit.level() >= levels, "limit must carry levels up to floor(p)");
    require(omega.grid() == limit.grid(), "control and limit use different grids");
    for (const auto& xn : sequence) check_same_grid(xn, limit);

    constexpr double zero_tol = 1e-13;
    ConvergenceCertificate cert;
    const std::size_t n = limit.num_steps() + 1;

    auto for_all_pairs = [&](const MultiplicativePath& path, auto&& visit) {
        for (std::size_t a = 0; a + 1 < n; ++a) {
            auto g = path.step(a);
            auto h = limit.step(a);
            for (std::size_t b = a + 1; b < n; ++b) {
                if (b > a + 1) {
                    g = g * path.step(b - 1);
                    h = h * limit.step(b - 1);
                }
                visit(a, b, g, h);
            }
        }
    };

    // Absolute bounds |X^i| <= omega^(i/p) after rescaling omega by K.
    double k_needed = 0.0;
    auto absolute = [&](std::size_t a, std::size_t b, const GroupElement& g, const GroupElement& h) {
        double w = omega(a, b);
        for (int i = 1; i <= levels; ++i) {
            for (const GroupElement* e : {&g, &h}) {
                double num = std::pow(block_norm(e->block(i)), p / i);
                if (w <= 0.0) {
                    if (num > zero_tol && cert.passed) {
                        cert.passed = false;
                        cert.failure = "control vanishes on a pair with a non-zero increment";
                    }
                } else {
                    k_needed = std::max(k_needed, num / w);
                }
            }
        }
    };
    for (const auto& xn : sequence) for_all_pairs(xn, absolute);
    cert.omega_scale = std::max(1.0, k_needed);
    const Control scaled = omega.scaled(cert.omega_scale);

    for (const auto& xn : sequence) {
        double rate = 0.0;
        for_all_pairs(xn, [&](std::size_t a, std::size_t b, const GroupElement& g, const GroupElement& h) {
            double w = scaled(a, b);
            for (int i = 1; i <= levels; ++i) {
                auto bg = g.block(i);
                auto bh = h.block(i);
                double s = 0.0;
                for (std::size_t k = 0; k < bg.size(); ++k) s += (bg[k] - bh[k]) * (bg[k] - bh[k]);
                double diff = std::sqrt(s);
                if (w <= 0.0) {
                    if (diff > zero_tol && cert.passed) {
                        cert.passed = false;
                        cert.failure = "control vanishes on a pair where the paths differ";
                    }
                    continue;
                }
                rate = std::max(rate, diff / std::pow(w, static_cast<double>(i) / p));
            }
        });
        if (!cert.rates.empty() && rate > cert.rates.back() * (1.0 + 1e-12) + 1e-15) cert.nonincreasing = false;
        cert.rates.push_back(rate);
        cert.dp_estimates.push_back(p_variation_distance(xn, limit, p));
    }
    return cert;
}

MultiplicativePath time_extend(const MultiplicativePath& x) {
    if (x.level() > 2) fail(ErrorKind::UnsupportedLevel, "time_extend supports levels <= 2");
    const int d = x.dim();
    const int de = d + 1;
    const int m = x.level();
    const auto& grid = x.grid();
    std::vector<GroupElement> steps;
    steps.reserve(x.num_steps());
    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        const double dt = grid[l + 1] - grid[l];
        const auto& g = x.step(l);
        auto t = TruncatedTensor::identity(de, m);
        auto b1 = t.block(1);
        auto x1 = g.block(1);
        b1[0] = dt;
        for (int k = 0; k < d; ++k) b1[static_cast<std::size_t>(k + 1)] = x1[static_cast<std::size_t>(k)];
        if (m == 2) {
            auto b2 = t.block(2);
            auto x2 = g.block(2);
            auto at = [de](int i, int k) { return static_cast<std::size_t>(i * de + k); };
            b2[at(0, 0)] = 0.5 * dt * dt;
            for (int k = 0; k < d; ++k) {
                // trapezoidal Young integral of (r - s) against the linear trace on the cell
                double cross = 0.5 * dt * x1[static_cast<std::size_t>(k)];
                b2[at(0, k + 1)] = cross;
                b2[at(k + 1, 0)] = cross;
                for (int j = 0; j < d; ++j) {
                    b2[at(k + 1, j + 1)] = x2[static_cast<std::size_t>(k * d + j)];
                }
            }
        }
        steps.emplace_back(std::move(t));
    }
    MultiplicativePath out(grid, std::move(steps), x.p());
    if (x.origin()) out.set_origin(*x.origin());
    return out;
}

MultiplicativePath project_coordinates(const MultiplicativePath& x, int first, int count) {
    require(first >= 0 && count >= 1 && first + count <= x.dim(), "projection range out of bounds");
    const int d = x.dim();
    std::vector<GroupElement> steps;
    steps.reserve(x.num_steps());
    for (std::size_t l = 0; l < x.num_steps(); ++l) {
        const auto& g = x.step(l);
        auto t = TruncatedTensor::identity(count, x.level());
        for (int j = 1; j <= x.level(); ++j) {
            auto dst = t.block(j);
            auto src = g.block(j);
            for (std::size_t e = 0; e < dst.size(); ++e) {
                std::size_t rest = e, src_index = 0, place = 1;
                for (int f = 0; f < j; ++f) {
                    auto digit = rest % static_cast<std::size_t>(count);
                    rest /= static_cast<std::size_t>(count);
                    src_index += (digit + static_cast<std::size_t>(first)) * place;
                    place *= static_cast<std::size_t>(d);
                }
                dst[e] = src[src_index];
            }
        }
        steps.emplace_back(std::move(t));
    }
    return MultiplicativePath(x.grid(), std::move(steps), x.p());
}

} // namespace mframe
