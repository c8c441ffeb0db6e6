#pragma once

// Command implementations behind the calibrefine executable. Each returns a process exit code:
// 0 ok, 2 invalid config or input, 3 I/O failure, 4 algorithmic failure.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "calibrefine/io.hpp"
#include "calibrefine/pipeline.hpp"

namespace calibrefine::cli {

namespace fs = std::filesystem;

inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_invalid = 2;
inline constexpr int k_exit_io = 3;
inline constexpr int k_exit_algorithm = 4;

inline auto exit_code_for(ErrorCode code) -> int {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidInput:
        case ErrorCode::EmptySet:
        case ErrorCode::OutOfOrderFrame:
            return k_exit_invalid;
        case ErrorCode::Io:
            return k_exit_io;
        default:
            return k_exit_algorithm;
    }
}

/// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> gate;
    std::optional<int> interval;
    std::optional<std::pair<int, int>> blocks;
    std::optional<std::string> parity;
    std::optional<double> threshold;
};

inline auto parse_blocks(const std::string& text) -> std::pair<int, int> {
    const auto x = text.find_first_of("xX");
    try {
        if (x == std::string::npos) {
            const int n = std::stoi(text);
            return {n, n};
        }
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw CalibError(ErrorCode::InvalidConfig, "--blocks expects N or NxM, got '" + text + "'");
    }
}

/// Loads the config file (or defaults), applies overrides, and validates everything.
inline auto load_config(const std::optional<fs::path>& path, const Overrides& o) -> io::RunConfig {
    io::RunConfig rc = path ? io::read_run_config(*path) : io::RunConfig{};
    auto& p = rc.pipeline;
    if (o.seed) rc.seed = *o.seed;
    if (o.gate) {
        p.refine.gate.max_distance = *o.gate;
        p.correction.gate.max_distance = *o.gate;
    }
    if (o.interval) p.refine.recalib_interval = *o.interval;
    if (o.blocks) {
        p.grid.blocks_x = o.blocks->first;
        p.grid.blocks_y = o.blocks->second;
    }
    if (o.parity) p.grid.parity = io::parse_parity(*o.parity);
    if (o.threshold) p.ransac.inlier_threshold = *o.threshold;
    io::propagate(rc);
    p.validate();
    return rc;
}

/// Runs `body`, mapping library errors to exit codes.
template <typename F>
auto guarded(const char* command, F&& body) -> int {
    try {
        return body();
    } catch (const CalibError& e) {
        spdlog::error("{}: {}", command, e.what());
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        spdlog::error("{}: {}", command, e.what());
        return k_exit_io;
    }
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw CalibError(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
    }
}

inline void print_report(std::ostream& out, const std::string& label, const ResidualReport& r) {
    out << label << ": n=" << r.n << " aed=" << io::format_number(r.aed)
        << " rmse=" << io::format_number(r.rmse) << "\n";
}

// ---------------------------------------------------------------------------------------------

/// Writes frames.jsonl (every frame), stream.jsonl (frames the stages may consume),
/// oracle_pairs.json, eval_pairs.json (held-out ground truth) and ground_truth.json.
inline auto cmd_simulate(const io::RunConfig& rc, const fs::path& out_dir, std::ostream& out) -> int {
    return guarded("simulate", [&] {
        const auto& cfg = rc.pipeline;
        cfg.validate();
        const auto simulation = sim::generate(cfg.scene);
        const auto inputs = split_simulation(simulation, cfg);
        ensure_directory(out_dir);
        io::write_frames(out_dir / "frames.jsonl", sim::frames_view(simulation.frames));
        io::write_frames(out_dir / "stream.jsonl", inputs.frames);
        io::write_pairs(out_dir / "oracle_pairs.json", inputs.oracle_pairs);
        io::write_pairs(out_dir / "eval_pairs.json", inputs.eval_pairs);
        io::write_text(out_dir / "ground_truth.json", io::to_json(simulation.truth).dump() + "\n");
        out << "frames=" << simulation.frames.size() << " stream=" << inputs.frames.size()
            << " oracle_pairs=" << inputs.oracle_pairs.size()
            << " eval_pairs=" << inputs.eval_pairs.size() << "\n";
        return k_exit_ok;
    });
}

/// Coarse stage on a pair file. Optionally writes the inlier set for use as refine seeds.
inline auto cmd_calibrate(const io::RunConfig& rc, const std::optional<fs::path>& frames_path,
                          const fs::path& oracle_path, const fs::path& matrix_out,
                          const std::optional<fs::path>& inliers_out, std::ostream& out) -> int {
    return guarded("calibrate", [&] {
        const auto& cfg = rc.pipeline;
        if (frames_path) {
            const auto frames = io::read_frames(*frames_path);
            spdlog::info("calibrate: {} frames in {}", frames.size(), frames_path->string());
        }
        const auto pairs = io::read_pairs(oracle_path);
        if (pairs.empty()) {
            throw CalibError(ErrorCode::EmptySet, oracle_path.string() + " holds no pairs");
        }
        std::optional<CoarseResult> coarse;
        try {
            coarse = coarse_calibrate(pairs, cfg.grid, cfg.ransac, cfg.coarse_block_sampling);
        } catch (const CalibError& e) {
            if (e.code() == ErrorCode::ConsensusFailure || e.code() == ErrorCode::InsufficientPairs) {
                const auto sampled = cfg.coarse_block_sampling ? block_sample(pairs, cfg.grid).size()
                                                               : pairs.size();
                spdlog::error("calibrate: input={} after_block_sampling={}", pairs.size(), sampled);
            }
            throw;
        }
        io::write_homography(matrix_out, coarse->h);
        if (inliers_out) {
            io::write_pairs(*inliers_out, coarse->inliers);
        }
        out << "input=" << pairs.size() << " sampled=" << coarse->sampled.size()
            << " inliers=" << coarse->inliers.size() << "\n";
        print_report(out, "inliers", reprojection_metrics(coarse->h, coarse->inliers));
        return k_exit_ok;
    });
}

enum class RefineMode { Iterative, Correction, Both };

inline auto parse_mode(const std::string& s) -> RefineMode {
    if (s == "iterative") return RefineMode::Iterative;
    if (s == "correction") return RefineMode::Correction;
    if (s == "both") return RefineMode::Both;
    throw CalibError(ErrorCode::InvalidConfig, "--mode must be iterative, correction or both");
}

/// Writes matrix.json, plus checkpoints.csv (iterative) and/or correction.json (correction).
inline auto cmd_refine(const io::RunConfig& rc, const fs::path& frames_path, const fs::path& matrix_path,
                       RefineMode mode, const std::optional<fs::path>& seed_pairs_path,
                       const fs::path& out_dir, std::ostream& out) -> int {
    return guarded("refine", [&] {
        const auto& cfg = rc.pipeline;
        const auto frames = io::read_frames(frames_path);
        Homography h = io::read_homography(matrix_path);
        const auto seeds = seed_pairs_path ? io::read_pairs(*seed_pairs_path) : std::vector<Correspondence>{};
        ensure_directory(out_dir);

        if (mode != RefineMode::Correction) {
            const auto state = run_iterative(frames, h, cfg.refine, seeds);
            for (const auto& m : state.diagnostics.messages) {
                spdlog::warn("refine: {}", m);
            }
            io::write_text(out_dir / "checkpoints.csv", io::checkpoints_to_csv(state.checkpoints));
            for (const auto& c : state.checkpoints) {
                if (c.updated && !(c.err_new < c.err_best)) {
                    throw CalibError(ErrorCode::SingularResult,
                                     "checkpoint at frame " + std::to_string(c.frame_id) +
                                         " accepted a matrix that does not lower the guard metric");
                }
            }
            const auto updates = std::count_if(state.checkpoints.begin(), state.checkpoints.end(),
                                               [](const CheckpointRecord& c) { return c.updated; });
            out << "checkpoints=" << state.checkpoints.size() << " updates=" << updates
                << " accumulated=" << state.accumulated.size() << "\n";
            h = state.h_best;
        }
        if (mode != RefineMode::Iterative) {
            const auto result = fit_correction(h, frames, cfg.correction);
            if (!result.loss_trace.empty() && result.loss_trace.back() > result.loss_trace.front()) {
                throw CalibError(ErrorCode::SingularResult, "correction increased the reprojection loss");
            }
            io::write_text(out_dir / "correction.json", io::to_json(result).dump(2) + "\n");
            out << "correction_rounds=" << (result.loss_trace.empty() ? 0 : result.loss_trace.size() - 1)
                << " pairs=" << result.pairs_used << "\n";
            h = result.h_star;
        }
        io::write_homography(out_dir / "matrix.json", h);
        return k_exit_ok;
    });
}

/// Writes report.json and histogram.csv for one matrix on one pair set.
inline auto cmd_evaluate(const fs::path& matrix_path, const fs::path& pairs_path, const fs::path& out_dir,
                         std::ostream& out) -> int {
    return guarded("evaluate", [&] {
        const Homography h = io::read_homography(matrix_path);
        const auto pairs = io::read_pairs(pairs_path);
        const Evaluation e = evaluate(h, pairs);
        ensure_directory(out_dir);
        io::write_text(out_dir / "report.json", io::to_json(e.report).dump(2) + "\n");
        io::write_text(out_dir / "histogram.csv", io::histogram_to_csv(e.histogram));
        print_report(out, "evaluation", e.report);
        return k_exit_ok;
    });
}

// ---------------------------------------------------------------------------------------------

namespace detail {

inline void write_pipeline_outputs(const fs::path& dir, const PipelineReport& report) {
    ensure_directory(dir);
    io::write_text(dir / "report.json", io::to_json(report).dump(2) + "\n");
    io::write_text(dir / "checkpoints.csv", io::checkpoints_to_csv(report.checkpoints));
    std::vector<std::string> names;
    std::vector<std::vector<std::size_t>> series;
    for (const auto& s : report.stage_metrics) {
        names.push_back(to_string(s.stage));
        series.push_back(s.evaluation.histogram);
    }
    io::write_text(dir / "histogram.csv", io::histogram_to_csv(names, series));
}

}  // namespace detail

/// Full simulated pipeline for seeds seed, seed+1, ..., each in out_dir/seed_<s>/, plus a
/// sweep.csv summary. Seeds are independent, so `jobs` workers may process them concurrently;
/// the outputs do not depend on `jobs`.
inline auto cmd_pipeline(const io::RunConfig& rc, int seeds, int jobs, const fs::path& out_dir,
                         std::ostream& out) -> int {
    return guarded("pipeline", [&] {
        if (seeds < 1) throw CalibError(ErrorCode::InvalidConfig, "--seeds must be >= 1");
        if (jobs < 1) throw CalibError(ErrorCode::InvalidConfig, "--jobs must be >= 1");
        ensure_directory(out_dir);

        struct Outcome {
            std::uint64_t seed = 0;
            std::optional<PipelineReport> report;
            std::optional<CalibError> error;
        };
        std::vector<Outcome> outcomes(static_cast<std::size_t>(seeds));
        std::mutex next_mutex;
        std::size_t next = 0;
        auto worker = [&] {
            for (;;) {
                std::size_t k = 0;
                {
                    std::lock_guard lock(next_mutex);
                    if (next >= outcomes.size()) return;
                    k = next++;
                }
                io::RunConfig local = rc;
                local.seed = rc.seed + k;
                io::propagate(local);
                outcomes[k].seed = local.seed;
                try {
                    outcomes[k].report = run_full(local.pipeline);
                    detail::write_pipeline_outputs(out_dir / ("seed_" + std::to_string(local.seed)),
                                                   *outcomes[k].report);
                } catch (const CalibError& e) {
                    outcomes[k].error = e;
                }
            }
        };
        const int n_workers = std::min(jobs, seeds);
        std::vector<std::thread> pool;
        for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();

        std::string sweep = "seed,coarse_aed,iterative_aed,correction_aed,coarse_rmse,iterative_rmse,correction_rmse,status\n";
        int worst = k_exit_ok;
        for (const auto& o : outcomes) {
            sweep += std::to_string(o.seed);
            if (o.report) {
                for (const auto& s : o.report->stage_metrics) sweep += "," + io::format_number(s.evaluation.report.aed);
                for (const auto& s : o.report->stage_metrics) sweep += "," + io::format_number(s.evaluation.report.rmse);
                sweep += ",ok\n";
                out << "seed " << o.seed << ":";
                for (const auto& s : o.report->stage_metrics) {
                    out << " " << to_string(s.stage) << "=" << io::format_number(s.evaluation.report.aed);
                }
                out << "\n";
            } else {
                sweep += ",nan,nan,nan,nan,nan,nan," + std::string(to_string(o.error->code())) + "\n";
                spdlog::error("pipeline seed {}: {}", o.seed, o.error->what());
                worst = std::max(worst, exit_code_for(o.error->code()));
            }
        }
        io::write_text(out_dir / "sweep.csv", sweep);
        return worst;
    });
}

}  // namespace calibrefine::cli
