#pragma once

#include <Eigen/Core>

namespace mframe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

} // namespace mframe
