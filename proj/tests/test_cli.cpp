#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "calibrefine/commands.hpp"
#include "support.hpp"

using namespace calibrefine;
namespace fs = std::filesystem;

namespace {

auto run(const std::string& args, const fs::path& log = "/dev/null") -> int {
    const std::string cmd = std::string(CALIBREFINE_EXE) + " " + args + " > /dev/null 2> " + log.string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

auto scratch(const std::string& name) -> fs::path {
    const fs::path dir = fs::path(testing::TempDir()) / ("calibrefine_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

auto write_config(const fs::path& dir, int n_frames, std::uint64_t seed = 3) -> fs::path {
    const auto path = dir / "config.json";
    io::write_text(path, "{\"seed\": " + std::to_string(seed) + ", \"scene\": {\"n_frames\": " +
                             std::to_string(n_frames) + "}}");
    return path;
}

auto read(const fs::path& p) -> std::string { return io::read_text(p); }

}  // namespace

TEST(Cli, SimulateWritesFrames) {
    const auto dir = scratch("simulate");
    const auto cfg = write_config(dir, 40);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
    for (const char* f : {"frames.jsonl", "stream.jsonl", "oracle_pairs.json", "eval_pairs.json", "ground_truth.json"}) {
        EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    }
    EXPECT_EQ(io::read_frames(dir / "a" / "frames.jsonl").size(), 40u);
    EXPECT_EQ(io::read_frames(dir / "a" / "stream.jsonl").size(), 36u);

    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
    for (const char* f : {"frames.jsonl", "oracle_pairs.json", "eval_pairs.json", "ground_truth.json"}) {
        EXPECT_EQ(read(dir / "a" / f), read(dir / "b" / f)) << f;
    }
}

TEST(Cli, SimulateRejectsZeroFrames) {
    const auto dir = scratch("zero");
    const auto cfg = write_config(dir, 0);
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir / "o").string(), dir / "err.txt"), 2);
    EXPECT_NE(read(dir / "err.txt").find("scene.n_frames"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
    const auto dir = scratch("badcfg");
    io::write_text(dir / "c.json", R"({"scene": {"bogus": 1}})");
    EXPECT_EQ(run("simulate --config " + (dir / "c.json").string() + " --out " + dir.string()), 2);
    EXPECT_EQ(run("simulate --parity diagonal --out " + dir.string()), 2);
    EXPECT_EQ(run("frobnicate"), 2);
}

TEST(Cli, UnwritableOutputExitsThree) {
    const auto dir = scratch("io");
    io::write_text(dir / "file", "x");
    const auto cfg = write_config(dir, 10);
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + (dir / "file" / "sub").string()), 3);
}

TEST(Cli, CalibrateRefineEvaluateMatchLibrary) {
    const auto dir = scratch("chain");
    const auto cfg_path = write_config(dir, 300, 5);
    const auto sim_dir = dir / "sim";
    ASSERT_EQ(run("simulate --config " + cfg_path.string() + " --out " + sim_dir.string()), 0);
    ASSERT_EQ(run("calibrate --config " + cfg_path.string() + " --frames " + (sim_dir / "stream.jsonl").string() +
                  " --oracle " + (sim_dir / "oracle_pairs.json").string() + " --out " + (dir / "coarse.json").string() +
                  " --inliers " + (dir / "inliers.json").string()),
              0);
    ASSERT_EQ(run("refine --config " + cfg_path.string() + " --frames " + (sim_dir / "stream.jsonl").string() +
                  " --matrix " + (dir / "coarse.json").string() + " --seed-pairs " + (dir / "inliers.json").string() +
                  " --mode both --out " + (dir / "refined").string()),
              0);
    ASSERT_EQ(run("evaluate --matrix " + (dir / "refined" / "matrix.json").string() + " --pairs " +
                  (sim_dir / "eval_pairs.json").string() + " --out " + (dir / "eval").string()),
              0);

    // The same flow through the library.
    const auto rc = cli::load_config(cfg_path, {});
    const auto report = run_full(rc.pipeline);
    EXPECT_EQ(read(dir / "coarse.json"), io::to_json(report.h_coarse).dump(2) + "\n");
    EXPECT_EQ(read(dir / "refined" / "checkpoints.csv"), io::checkpoints_to_csv(report.checkpoints));
    EXPECT_EQ(read(dir / "refined" / "matrix.json"), io::to_json(report.h_star).dump(2) + "\n");
    EXPECT_EQ(read(dir / "eval" / "report.json"), io::to_json(report.stage_metrics[2].evaluation.report).dump(2) + "\n");
    EXPECT_EQ(read(dir / "eval" / "histogram.csv"), io::histogram_to_csv(report.stage_metrics[2].evaluation.histogram));

    // mode=both is correction applied to the iterative result.
    ASSERT_EQ(run("refine --config " + cfg_path.string() + " --frames " + (sim_dir / "stream.jsonl").string() +
                  " --matrix " + (dir / "coarse.json").string() + " --seed-pairs " + (dir / "inliers.json").string() +
                  " --mode iterative --out " + (dir / "it").string()),
              0);
    ASSERT_EQ(run("refine --config " + cfg_path.string() + " --frames " + (sim_dir / "stream.jsonl").string() +
                  " --matrix " + (dir / "it" / "matrix.json").string() + " --mode correction --out " +
                  (dir / "corr").string()),
              0);
    EXPECT_EQ(read(dir / "corr" / "matrix.json"), read(dir / "refined" / "matrix.json"));
}

TEST(Cli, RefineKeepsTruthOnNoiseFreeStream) {
    const auto dir = scratch("keep");
    io::write_text(dir / "c.json", R"({"seed": 2, "scene": {"n_frames": 200, "pixel_noise_sigma": 0.0,
        "lidar_noise_sigma": 0.0, "clutter_per_frame": 0.0}})");
    ASSERT_EQ(run("simulate --config " + (dir / "c.json").string() + " --out " + dir.string()), 0);
    const auto truth = io::read_ground_truth_homography(dir / "ground_truth.json");
    io::write_homography(dir / "truth.json", truth);
    ASSERT_EQ(run("refine --config " + (dir / "c.json").string() + " --frames " + (dir / "frames.jsonl").string() +
                  " --matrix " + (dir / "truth.json").string() + " --mode iterative --out " + (dir / "r").string()),
              0);
    EXPECT_LT(max_abs_difference(io::read_homography(dir / "r" / "matrix.json"), truth), 1e-9);
}

TEST(Cli, CalibrateFailures) {
    const auto dir = scratch("calfail");
    io::write_text(dir / "empty.json", R"({"lidar": [], "pixel": []})");
    EXPECT_EQ(run("calibrate --oracle " + (dir / "empty.json").string() + " --out " + (dir / "h.json").string()), 2);
    std::vector<Correspondence> clustered;
    for (int i = 0; i < 30; ++i) clustered.push_back({{i * 0.01, 0.0}, {100.0 + i * 0.1, 100.0}, 0, PairSource::Oracle});
    io::write_pairs(dir / "clustered.json", clustered);
    EXPECT_EQ(run("calibrate --oracle " + (dir / "clustered.json").string() + " --out " + (dir / "h.json").string()), 4);
    EXPECT_EQ(run("calibrate --oracle " + (dir / "missing.json").string() + " --out " + (dir / "h.json").string()), 3);
}

TEST(Cli, CalibrateConsensusFailureExitsFour) {
    const auto dir = scratch("consensus");
    std::mt19937_64 rng(1);
    const auto clutter = support::random_pixel_pairs(rng, 400);
    std::vector<Correspondence> pairs;
    std::uniform_real_distribution<double> d(-30, 30);
    for (auto c : clutter) {
        c.lidar = {d(rng), d(rng)};
        pairs.push_back(c);
    }
    io::write_pairs(dir / "p.json", pairs);
    EXPECT_EQ(run("calibrate --oracle " + (dir / "p.json").string() + " --out " + (dir / "h.json").string(),
                  dir / "err.txt"),
              4);
    EXPECT_NE(read(dir / "err.txt").find("after_block_sampling"), std::string::npos);
}

TEST(Cli, EvaluateCases) {
    const auto dir = scratch("evaluate");
    io::write_homography(dir / "id.json", Homography::identity());
    io::write_text(dir / "zero.json", R"({"lidar": [[1, 2], [3, 4]], "pixel": [[1, 2], [3, 4]]})");
    ASSERT_EQ(run("evaluate --matrix " + (dir / "id.json").string() + " --pairs " + (dir / "zero.json").string() +
                  " --out " + (dir / "z").string()),
              0);
    const auto report = nlohmann::json::parse(read(dir / "z" / "report.json"));
    EXPECT_EQ(report["aed"].get<double>(), 0.0);
    io::write_text(dir / "bad.json", R"({"lidar": [[1, 2], [3, 4]], "pixel": [[1, 2]]})");
    EXPECT_EQ(run("evaluate --matrix " + (dir / "id.json").string() + " --pairs " + (dir / "bad.json").string() +
                  " --out " + (dir / "b").string()),
              2);
    io::write_text(dir / "empty.json", R"({"lidar": [], "pixel": []})");
    EXPECT_EQ(run("evaluate --matrix " + (dir / "id.json").string() + " --pairs " + (dir / "empty.json").string() +
                  " --out " + (dir / "e").string()),
              2);
}

TEST(Cli, PipelineSweepIndependentOfJobs) {
    const auto dir = scratch("sweep");
    const auto cfg = write_config(dir, 200, 11);
    ASSERT_EQ(run("pipeline --config " + cfg.string() + " --seeds 3 --jobs 1 --out " + (dir / "j1").string()), 0);
    ASSERT_EQ(run("pipeline --config " + cfg.string() + " --seeds 3 --jobs 3 --out " + (dir / "j3").string()), 0);
    EXPECT_EQ(read(dir / "j1" / "sweep.csv"), read(dir / "j3" / "sweep.csv"));
    for (int s = 11; s < 14; ++s) {
        const auto sub = "seed_" + std::to_string(s);
        EXPECT_EQ(read(dir / "j1" / sub / "report.json"), read(dir / "j3" / sub / "report.json"));
    }
}
