#pragma once

#include "mframe/rough_path.hpp"

#include <json.hpp>

#include <ostream>
#include <string>
#include <vector>

namespace mframe {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Writes one CSV line from a row of doubles.
void write_csv_row(std::ostream& os, const std::vector<double>& row);

/// Level-1 trace as CSV with header `t,x_1,...,x_d`.
void write_trace_csv(std::ostream& os, const MultiplicativePath& path);

/// JSON layout of a multiplicative path:
///
///     {"dim": d, "level": m, "p": p,
///      "grid": [t_0, ..., t_N],
///      "increments": [[c_0, c_1, ...], ...]}
///
/// where increments[l] holds all coefficients of the group element over
/// (t_l, t_{l+1}) in level order, each level row-major.
nlohmann::json path_to_json(const MultiplicativePath& path);
MultiplicativePath path_from_json(const nlohmann::json& j);

} // namespace mframe
