#include "mframe/tensor_algebra.hpp"

#include "mframe/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mframe {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InputContract: return "input_contract";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::UnsupportedLevel: return "unsupported_level";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::NonContraction: return "non_contraction";
    case ErrorKind::FlowDomain: return "flow_domain";
    }
    return "unknown";
}

TruncatedTensor::TruncatedTensor(int dim, int level) : dim_(dim), level_(level) {
    require(dim >= 1, "tensor dimension must be positive");
    require(level >= 0, "tensor level must be non-negative");
    offsets_.resize(static_cast<std::size_t>(level) + 2);
    std::size_t width = 1;
    offsets_[0] = 0;
    for (int j = 0; j <= level; ++j) {
        offsets_[static_cast<std::size_t>(j) + 1] = offsets_[static_cast<std::size_t>(j)] + width;
        width *= static_cast<std::size_t>(dim);
    }
    data_.assign(offsets_.back(), 0.0);
}

TruncatedTensor TruncatedTensor::identity(int dim, int level) {
    TruncatedTensor t(dim, level);
    t.data_[0] = 1.0;
    return t;
}

TruncatedTensor TruncatedTensor::from_level1(int level, std::span<const double> increment) {
    TruncatedTensor t(static_cast<int>(increment.size()), level);
    require(level >= 1, "from_level1 needs level >= 1");
    std::copy(increment.begin(), increment.end(), t.block(1).begin());
    return t;
}

std::span<double> TruncatedTensor::block(int j) {
    require(j >= 0 && j <= level_, "tensor block index out of range");
    auto b = offsets_[static_cast<std::size_t>(j)];
    auto e = offsets_[static_cast<std::size_t>(j) + 1];
    return {data_.data() + b, e - b};
}

std::span<const double> TruncatedTensor::block(int j) const {
    require(j >= 0 && j <= level_, "tensor block index out of range");
    auto b = offsets_[static_cast<std::size_t>(j)];
    auto e = offsets_[static_cast<std::size_t>(j) + 1];
    return {data_.data() + b, e - b};
}

TruncatedTensor& TruncatedTensor::operator+=(const TruncatedTensor& other) {
    require(same_shape(other), "tensor shape mismatch in addition");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

TruncatedTensor& TruncatedTensor::operator-=(const TruncatedTensor& other) {
    require(same_shape(other), "tensor shape mismatch in subtraction");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

TruncatedTensor& TruncatedTensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::InputContract,
             "tensor_mul: shape mismatch (dim " + std::to_string(a.dim()) + "/" +
                 std::to_string(b.dim()) + ", level " + std::to_string(a.level()) + "/" +
                 std::to_string(b.level()) + ")");
    }
    TruncatedTensor out(a.dim(), a.level());
    for (int j = 0; j <= a.level(); ++j) {
        auto dst = out.block(j);
        for (int i = 0; i <= j; ++i) {
            auto left = a.block(i);
            auto right = b.block(j - i);
            std::size_t w = right.size();
            for (std::size_t p = 0; p < left.size(); ++p) {
                double lp = left[p];
                if (lp == 0.0) continue;
                double* row = dst.data() + p * w;
                for (std::size_t q = 0; q < w; ++q) row[q] += lp * right[q];
            }
        }
    }
    return out;
}

GroupElement::GroupElement(TruncatedTensor t) : t_(std::move(t)) {
    require(t_.size() > 0 && std::abs(t_.scalar() - 1.0) <= 1e-12,
            "group element must have unit scalar coefficient");
}

GroupElement GroupElement::identity(int dim, int level) {
    return GroupElement(TruncatedTensor::identity(dim, level), Unchecked{});
}

GroupElement operator*(const GroupElement& a, const GroupElement& b) {
    auto t = tensor_mul(a.t_, b.t_);
    t.scalar() = 1.0;
    return GroupElement(std::move(t), GroupElement::Unchecked{});
}

GroupElement group_exp(const TruncatedTensor& x) {
    require(x.scalar() == 0.0, "group_exp: scalar coefficient must be zero");
    // Horner form: 1 + x(1 + x/2(1 + x/3(...)))
    const int m = x.level();
    auto acc = TruncatedTensor::identity(x.dim(), m);
    for (int j = m; j >= 1; --j) {
        acc = tensor_mul(x, acc);
        acc *= 1.0 / j;
        acc.scalar() += 1.0;
    }
    acc.scalar() = 1.0;
    return GroupElement(std::move(acc), GroupElement::Unchecked{});
}

TruncatedTensor group_log(const GroupElement& g) {
    auto y = g.tensor();
    require(std::abs(y.scalar() - 1.0) <= 1e-12, "group_log: scalar coefficient must be one");
    y.scalar() = 0.0;
    // sum_{j=1..m} (-1)^{j+1} y^j / j, Horner: y(1 - y(1/2 - y(1/3 - ...)))
    const int m = y.level();
    auto acc = TruncatedTensor::zero(y.dim(), m);
    for (int j = m; j >= 1; --j) {
        acc = tensor_mul(y, acc);
        acc *= -1.0;
        acc.scalar() += 1.0 / j;
    }
    auto out = tensor_mul(y, acc);
    out.scalar() = 0.0;
    return out;
}

GroupElement group_inverse(const GroupElement& g) {
    // (1 + y)^{-1} = sum_j (-y)^j, finite because y is nilpotent.
    auto y = g.tensor();
    y.scalar() = 0.0;
    y *= -1.0;
    const int m = y.level();
    auto acc = TruncatedTensor::identity(y.dim(), m);
    for (int j = 0; j < m; ++j) {
        acc = tensor_mul(y, acc);
        acc.scalar() = 1.0;
    }
    return GroupElement(std::move(acc), GroupElement::Unchecked{});
}

double block_norm(std::span<const double> block) {
    double s = 0.0;
    for (double v : block) s += v * v;
    return std::sqrt(s);
}

double homogeneous_norm(const GroupElement& g) {
    double out = 0.0;
    for (int j = 1; j <= g.level(); ++j) {
        out = std::max(out, std::pow(block_norm(g.block(j)), 1.0 / j));
    }
    return out;
}

double level2_geometricity_defect(const GroupElement& g) {
    if (g.level() < 2) return 0.0;
    const int d = g.dim();
    auto a = g.block(1);
    auto b = g.block(2);
    double worst = 0.0;
    for (int i = 0; i < d; ++i) {
        for (int k = 0; k < d; ++k) {
            double sym = 0.5 * (b[static_cast<std::size_t>(i * d + k)] + b[static_cast<std::size_t>(k * d + i)]);
            worst = std::max(worst, std::abs(sym - 0.5 * a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(k)]));
        }
    }
    return worst;
}

GroupElement dilate(const GroupElement& g, double lambda) {
    auto t = g.tensor();
    double scale = 1.0;
    for (int j = 1; j <= t.level(); ++j) {
        scale *= lambda;
        for (double& v : t.block(j)) v *= scale;
    }
    return GroupElement(std::move(t));
}

} // namespace mframe
