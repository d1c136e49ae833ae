#include "mframe/io.hpp"

#include "mframe/error.hpp"

#include <array>
#include <charconv>

namespace mframe {

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

void write_csv_row(std::ostream& os, const std::vector<double>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) os << ',';
        os << format_double(row[i]);
    }
    os << '\n';
}

void write_trace_csv(std::ostream& os, const MultiplicativePath& path) {
    os << "t";
    for (int k = 1; k <= path.dim(); ++k) os << ",x_" << k;
    os << '\n';
    auto trace = path.level1_trace();
    std::vector<double> row(static_cast<std::size_t>(path.dim()) + 1);
    for (std::size_t l = 0; l < path.grid().size(); ++l) {
        row[0] = path.grid()[l];
        for (int k = 0; k < path.dim(); ++k) row[static_cast<std::size_t>(k) + 1] = trace(static_cast<Eigen::Index>(l), k);
        write_csv_row(os, row);
    }
}

nlohmann::json path_to_json(const MultiplicativePath& path) {
    nlohmann::json j;
    j["dim"] = path.dim();
    j["level"] = path.level();
    j["p"] = path.p();
    j["grid"] = path.grid();
    auto inc = nlohmann::json::array();
    for (std::size_t l = 0; l < path.num_steps(); ++l) {
        auto c = path.step(l).tensor().coefficients();
        inc.push_back(std::vector<double>(c.begin(), c.end()));
    }
    j["increments"] = std::move(inc);
    return j;
}

MultiplicativePath path_from_json(const nlohmann::json& j) {
    try {
        const int dim = j.at("dim").get<int>();
        const int level = j.at("level").get<int>();
        const double p = j.at("p").get<double>();
        auto grid = j.at("grid").get<std::vector<double>>();
        std::vector<GroupElement> steps;
        for (const auto& row : j.at("increments")) {
            auto coeffs = row.get<std::vector<double>>();
            TruncatedTensor t(dim, level);
            require(coeffs.size() == t.size(), "increment has the wrong number of coefficients");
            std::copy(coeffs.begin(), coeffs.end(), t.coefficients().begin());
            steps.emplace_back(std::move(t));
        }
        return MultiplicativePath(std::move(grid), std::move(steps), p);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InputContract, std::string("malformed path JSON: ") + e.what());
    }
}

} // namespace mframe
