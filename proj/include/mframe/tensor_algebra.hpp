#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mframe {

/// Element of the truncated tensor algebra over R^dim, truncated at `level`.
///
/// Coefficients are stored densely level by level: level j occupies dim^j
/// consecutive doubles, indexed in row-major order (first tensor factor
/// varies slowest). Level-2 entry (i, k) therefore pairs an earlier
/// increment in coordinate i with a later one in coordinate k.
class TruncatedTensor {
public:
    TruncatedTensor() = default;
    TruncatedTensor(int dim, int level);

    static TruncatedTensor zero(int dim, int level) { return {dim, level}; }
    static TruncatedTensor identity(int dim, int level);
    /// Element whose only non-zero block is level 1.
    static TruncatedTensor from_level1(int level, std::span<const double> increment);

    int dim() const noexcept { return dim_; }
    int level() const noexcept { return level_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> block(int j);
    std::span<const double> block(int j) const;
    double& scalar() { return data_[0]; }
    double scalar() const { return data_[0]; }

    std::span<const double> coefficients() const noexcept { return data_; }
    std::span<double> coefficients() noexcept { return data_; }

    /// Level-2 coefficient (i, k); requires level >= 2.
    double at2(int i, int k) const { return block(2)[static_cast<std::size_t>(i * dim_ + k)]; }

    TruncatedTensor& operator+=(const TruncatedTensor& other);
    TruncatedTensor& operator-=(const TruncatedTensor& other);
    TruncatedTensor& operator*=(double s);

    friend TruncatedTensor operator+(TruncatedTensor a, const TruncatedTensor& b) { return a += b; }
    friend TruncatedTensor operator-(TruncatedTensor a, const TruncatedTensor& b) { return a -= b; }
    friend TruncatedTensor operator*(TruncatedTensor a, double s) { return a *= s; }
    friend TruncatedTensor operator*(double s, TruncatedTensor a) { return a *= s; }

    bool same_shape(const TruncatedTensor& other) const noexcept {
        return dim_ == other.dim_ && level_ == other.level_;
    }

private:
    int dim_ = 0;
    int level_ = 0;
    std::vector<std::size_t> offsets_;  // level_ + 2 entries
    std::vector<double> data_;
};

/// Element of the step-m nilpotent group: a truncated tensor with unit scalar part.
class GroupElement {
public:
    GroupElement() = default;
    /// Throws InputContract unless the scalar coefficient is 1 (to 1e-12).
    explicit GroupElement(TruncatedTensor t);

    static GroupElement identity(int dim, int level);

    const TruncatedTensor& tensor() const noexcept { return t_; }
    int dim() const noexcept { return t_.dim(); }
    int level() const noexcept { return t_.level(); }
    std::span<const double> block(int j) const { return t_.block(j); }

    friend GroupElement operator*(const GroupElement& a, const GroupElement& b);

private:
    struct Unchecked {};
    GroupElement(TruncatedTensor t, Unchecked) : t_(std::move(t)) {}
    friend GroupElement group_exp(const TruncatedTensor&);
    friend GroupElement group_inverse(const GroupElement&);

    TruncatedTensor t_;
};

TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b);

/// Truncated exponential; `x` must have zero scalar part.
GroupElement group_exp(const TruncatedTensor& x);
TruncatedTensor group_log(const GroupElement& g);
GroupElement group_inverse(const GroupElement& g);

/// max_j |level-j block|^(1/j) with Euclidean block norms.
double homogeneous_norm(const GroupElement& g);

/// Euclidean norm of a coefficient block.
double block_norm(std::span<const double> block);

/// Largest deviation of the symmetric part of level 2 from (a (x) a)/2.
/// Zero (up to rounding) for geometric elements.
double level2_geometricity_defect(const GroupElement& g);

/// Dilation by lambda: level j scaled by lambda^j.
GroupElement dilate(const GroupElement& g, double lambda);

} // namespace mframe
