#include "mframe/error.hpp"
#include "mframe/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;

namespace {

fs::path default_output_dir(const mframe::ExperimentConfig& cfg) {
    if (cfg.output_dir) return *cfg.output_dir;
    if (const char* env = std::getenv("MFRAME_OUT_DIR"); env && *env) return fs::path(env) / cfg.experiment;
    return fs::path("out") / cfg.experiment;
}

int report_error(const std::exception& e, const std::optional<fs::path>& dir) {
    const auto j = mframe::error_json(e);
    std::cerr << j.dump() << '\n';
    if (dir) {
        std::error_code ec;
        fs::create_directories(*dir, ec);
        std::ofstream os(*dir / "error.json", std::ios::binary);
        if (os) os << j.dump(2) << '\n';
    }
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moving-frame solvers for rough and stochastic PDEs"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON configuration");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    run->add_option("config", config_path, "Configuration file")->required();
    run->add_option("--seed", seed, "Override the configured seed");
    run->add_option("--out", out, "Output directory (default: $MFRAME_OUT_DIR/<experiment> or out/<experiment>)");

    auto* list = app.add_subcommand("list", "List frames, fields, drivers and experiments");

    CLI11_PARSE(app, argc, argv);

    if (*list) {
        std::cout << mframe::list_catalog();
        return 0;
    }

    std::optional<fs::path> dir;
    if (out) dir = *out;
    try {
        auto cfg = mframe::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!dir) dir = default_output_dir(cfg);
        auto outcome = mframe::run(cfg, *dir);
        std::cout << outcome.acceptance.dump(2) << '\n';
        return outcome.passed ? 0 : 1;
    } catch (const std::exception& e) {
        return report_error(e, dir);
    }
}
