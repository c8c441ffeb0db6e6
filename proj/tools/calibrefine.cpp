#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

#include "calibrefine/commands.hpp"

namespace cli = calibrefine::cli;

namespace {

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("calibrefine");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("CALIBREFINE_LOG")) {
        spdlog::set_level(spdlog::level::from_str(level));
    }
}

struct CommonFlags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<double> gate;
    std::optional<int> interval;
    std::optional<std::string> blocks;
    std::optional<std::string> parity;
    std::optional<double> threshold;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "Base random seed");
        app->add_option("--gate", gate, "Association gate in pixels");
        app->add_option("--interval", interval, "Frames between recalibration checkpoints");
        app->add_option("--blocks", blocks, "Block grid as N or NxM");
        app->add_option("--parity", parity, "Retained block parity: even or odd");
        app->add_option("--threshold", threshold, "RANSAC inlier threshold in pixels");
    }

    [[nodiscard]] auto load() const -> calibrefine::io::RunConfig {
        cli::Overrides o;
        o.seed = seed;
        o.gate = gate;
        o.interval = interval;
        o.parity = parity;
        o.threshold = threshold;
        if (blocks) o.blocks = cli::parse_blocks(*blocks);
        return cli::load_config(config ? std::optional<std::filesystem::path>(*config) : std::nullopt, o);
    }
};

auto as_path(const std::optional<std::string>& s) -> std::optional<std::filesystem::path> {
    return s ? std::optional<std::filesystem::path>(*s) : std::nullopt;
}

}  // namespace

auto main(int argc, char** argv) -> int {
    setup_logging();
    CLI::App app{"Homography calibration between a LiDAR ground plane and a camera image"};
    app.require_subcommand(1);

    CommonFlags common;
    std::string out;
    std::optional<std::string> frames;
    std::string oracle;
    std::optional<std::string> inliers;
    std::string matrix;
    std::string mode = "both";
    std::optional<std::string> seed_pairs;
    std::string pairs;
    int seeds = 1;
    int jobs = 1;

    auto* simulate = app.add_subcommand("simulate", "Generate a simulated scene");
    common.attach(simulate);
    simulate->add_option("--out", out, "Output directory")->required();

    auto* calibrate = app.add_subcommand("calibrate", "Coarse homography from oracle pairs");
    common.attach(calibrate);
    calibrate->add_option("--oracle", oracle, "Oracle pair file")->required();
    calibrate->add_option("--frames", frames, "Frame stream (JSON Lines)");
    calibrate->add_option("--out", out, "Output matrix JSON")->required();
    calibrate->add_option("--inliers", inliers, "Write the inlier pairs here");

    auto* refine = app.add_subcommand("refine", "Iterative and/or correction refinement");
    common.attach(refine);
    refine->add_option("--frames", frames, "Frame stream (JSON Lines)")->required();
    refine->add_option("--matrix", matrix, "Starting matrix JSON")->required();
    refine->add_option("--mode", mode, "iterative, correction or both");
    refine->add_option("--seed-pairs", seed_pairs, "Pairs that seed the accumulated set");
    refine->add_option("--out", out, "Output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Residual report for a matrix on a pair file");
    evaluate->add_option("--matrix", matrix, "Matrix JSON")->required();
    evaluate->add_option("--pairs", pairs, "Pair file")->required();
    evaluate->add_option("--out", out, "Output directory")->required();

    auto* pipeline = app.add_subcommand("pipeline", "Simulate and run all stages for a seed sweep");
    common.attach(pipeline);
    pipeline->add_option("--seeds", seeds, "Number of consecutive seeds");
    pipeline->add_option("--jobs", jobs, "Parallel workers for the sweep");
    pipeline->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::k_exit_invalid;
    }

    if (evaluate->parsed()) {
        return cli::cmd_evaluate(matrix, pairs, out, std::cout);
    }
    calibrefine::io::RunConfig rc;
    const int loaded = cli::guarded("config", [&] {
        rc = common.load();
        return cli::k_exit_ok;
    });
    if (loaded != cli::k_exit_ok) {
        return loaded;
    }
    if (simulate->parsed()) {
        return cli::cmd_simulate(rc, out, std::cout);
    }
    if (calibrate->parsed()) {
        return cli::cmd_calibrate(rc, as_path(frames), oracle, out, as_path(inliers), std::cout);
    }
    if (refine->parsed()) {
        return cli::guarded("refine", [&] {
            return cli::cmd_refine(rc, *frames, matrix, cli::parse_mode(mode), as_path(seed_pairs), out, std::cout);
        });
    }
    return cli::cmd_pipeline(rc, seeds, jobs, out, std::cout);
}
