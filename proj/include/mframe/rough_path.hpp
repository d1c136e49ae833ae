#pragma once

#include "mframe/tensor_algebra.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mframe {

/// Parameters of a sampled Brownian driver. The same spec always
/// reproduces the same path.
struct BrownianSpec {
    int dim = 1;
    double horizon = 1.0;
    std::size_t fine_steps = 256;
    std::uint64_t seed = 0;

    bool operator==(const BrownianSpec&) const = default;
};

/// A d-dimensional Brownian path sampled on a uniform fine mesh;
/// `points` has fine_steps + 1 rows, starting at the origin.
struct BrownianSample {
    BrownianSpec spec;
    std::vector<double> times;
    Eigen::MatrixXd points;
};

/// Grid-sampled multiplicative functional on the simplex.
///
/// Only the increments over consecutive grid cells are stored; the
/// increment over any pair of grid points is defined as the Chen product
/// of the cells in between, so Chen's identity holds by construction.
class MultiplicativePath {
public:
    MultiplicativePath() = default;
    MultiplicativePath(std::vector<double> grid, std::vector<GroupElement> steps, double p);

    int dim() const noexcept { return dim_; }
    int level() const noexcept { return level_; }
    double p() const noexcept { return p_; }
    const std::vector<double>& grid() const noexcept { return grid_; }
    std::size_t num_steps() const noexcept { return steps_.size(); }
    double horizon() const { return grid_.back() - grid_.front(); }

    const GroupElement& step(std::size_t l) const { return steps_.at(l); }
    /// Increment over (grid[i], grid[j]), i <= j.
    GroupElement increment(std::size_t i, std::size_t j) const;

    /// Level-1 trace x(t_l) - x(t_0), one row per grid point.
    Eigen::MatrixXd level1_trace() const;

    /// Keep every `factor`-th grid point (the last point is always kept).
    MultiplicativePath coarsen(std::size_t factor) const;
    /// Restrict to the given strictly increasing grid indices.
    MultiplicativePath restrict_to(const std::vector<std::size_t>& indices) const;
    /// Grid index of `t`; throws InputContract if `t` is not a grid point.
    std::size_t index_of(double t) const;

    const std::optional<BrownianSpec>& origin() const noexcept { return origin_; }
    void set_origin(const BrownianSpec& spec) { origin_ = spec; }

private:
    int dim_ = 0;
    int level_ = 0;
    double p_ = 1.0;
    std::vector<double> grid_;
    std::vector<GroupElement> steps_;
    std::optional<BrownianSpec> origin_;
};

/// Nonnegative table omega(t_i, t_j) on grid pairs.
class Control {
public:
    Control() = default;
    Control(std::vector<double> grid, Eigen::MatrixXd table)
        : grid_(std::move(grid)), table_(std::move(table)) {}

    double operator()(std::size_t i, std::size_t j) const { return table_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }
    const std::vector<double>& grid() const noexcept { return grid_; }
    const Eigen::MatrixXd& table() const noexcept { return table_; }
    Control scaled(double factor) const { return {grid_, table_ * factor}; }

    /// Largest violation of omega(s,t) + omega(t,u) <= omega(s,u) and omega(t,t) = 0.
    double superadditivity_defect() const;

private:
    std::vector<double> grid_;
    Eigen::MatrixXd table_;
};

struct ConvergenceCertificate {
    std::vector<double> rates;         // a(n)
    std::vector<double> dp_estimates;  // d_p(X(n), X), reported separately
    double omega_scale = 1.0;          // factor applied to the supplied control
    bool passed = true;
    bool nonincreasing = true;
    std::string failure;
};

enum class PartitionSearch {
    Dyadic,        ///< dyadic coarsenings of the grid only
    DyadicGreedy,  ///< dyadic, then greedy insert/remove local search
    Exhaustive,    ///< dynamic programme over all grid-point partitions
};

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Linear interpolation of a sampled path at the query times.
Eigen::MatrixXd interpolate_linear(const std::vector<double>& times, const Eigen::MatrixXd& points,
                                   const std::vector<double>& query);

/// Canonical lift: each segment carries the tensor exponential of its increment.
MultiplicativePath lift_piecewise_linear(const std::vector<double>& times,
                                         const Eigen::MatrixXd& points, int level, double p = 1.0);

BrownianSample sample_brownian(const BrownianSpec& spec);
/// Piecewise-linear lift of the fine sample, coarsened to `output_steps` cells.
MultiplicativePath brownian_lift(const BrownianSample& sample, int level, std::size_t output_steps,
                                 double p = 2.5);
MultiplicativePath brownian_lift(const BrownianSpec& spec, int level, std::size_t output_steps,
                                 double p = 2.5);

/// Lower-bound estimate of the p-variation distance; the supremum over
/// subdivisions is replaced by a maximum over the partitions `search` visits.
double p_variation_distance(const MultiplicativePath& x, const MultiplicativePath& y, double p,
                            PartitionSearch search = PartitionSearch::DyadicGreedy);

/// omega(s,t) = sum_i sup_D sum |X^i|^(p/i) over grid-point partitions of [s,t].
/// Super-additive by construction; cost is cubic in the number of grid points.
Control control_from_path(const MultiplicativePath& x, double p);

ConvergenceCertificate controlled_convergence_check(const std::vector<MultiplicativePath>& sequence,
                                                    const MultiplicativePath& limit,
                                                    const Control& omega, double p);

/// Time extension over R x R^d; coordinate 0 is time. Level must be <= 2.
MultiplicativePath time_extend(const MultiplicativePath& x);

/// Restriction to coordinates [first, first + count): an algebra homomorphism.
MultiplicativePath project_coordinates(const MultiplicativePath& x, int first, int count);

} // namespace mframe
