#pragma once

// Four-stage flow: oracle correspondences -> coarse homography -> iterative refinement ->
// correction refinement, each stage scored on one held-out evaluation set.

#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "calibrefine/block_sampling.hpp"
#include "calibrefine/correction_refine.hpp"
#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/iterative_refine.hpp"
#include "calibrefine/ransac.hpp"
#include "calibrefine/simulator.hpp"

namespace calibrefine {

struct CoarseResult {
    Homography h;
    std::vector<Correspondence> sampled;  // after block sampling
    std::vector<Correspondence> inliers;  // RANSAC inliers among `sampled`
    RansacResult ransac;
};

/// Block-samples the oracle pairs, then fits them with RANSAC (which refits its inliers).
inline auto coarse_calibrate(std::span<const Correspondence> oracle_pairs, const BlockGrid& grid,
                             const RansacConfig& cfg, bool apply_block_sampling = true)
    -> CoarseResult {
    auto sampled = apply_block_sampling
                       ? block_sample(oracle_pairs, grid)
                       : std::vector<Correspondence>(oracle_pairs.begin(), oracle_pairs.end());
    if (sampled.size() < k_min_pairs) {
        throw CalibError(ErrorCode::InsufficientPairs,
                         std::to_string(sampled.size()) + " pairs survive block sampling, need 4");
    }
    auto ransac = ransac_homography(sampled, cfg);
    auto inliers = detail::gather(sampled, ransac.inlier_indices);
    return {ransac.h, std::move(sampled), std::move(inliers), std::move(ransac)};
}

inline constexpr int k_histogram_buckets = 200;  // 1 px wide over [0, 200), plus overflow

struct Evaluation {
    ResidualReport report;
    std::vector<std::size_t> histogram;  // k_histogram_buckets + 1 entries; last is overflow
};

inline auto residual_histogram(std::span<const double> residuals) -> std::vector<std::size_t> {
    std::vector<std::size_t> buckets(k_histogram_buckets + 1, 0);
    for (double r : residuals) {
        const auto b = r < k_histogram_buckets ? static_cast<std::size_t>(std::floor(r))
                                               : static_cast<std::size_t>(k_histogram_buckets);
        ++buckets[b];
    }
    return buckets;
}

inline auto evaluate(const Homography& h, std::span<const Correspondence> eval_pairs) -> Evaluation {
    Evaluation e{reprojection_metrics(h, eval_pairs), {}};
    e.histogram = residual_histogram(e.report.per_pair);
    return e;
}

struct PipelineConfig {
    sim::SceneConfig scene;
    BlockGrid grid;
    RansacConfig ransac;
    RefineConfig refine;
    CorrectionConfig correction;
    bool coarse_block_sampling = true;
    int holdout_period = 10;  // every holdout_period-th frame is held out for evaluation

    void validate() const {
        scene.validate();
        grid.validate();
        ransac.validate();
        refine.validate();
        correction.validate();
        if (holdout_period < 2) {
            throw CalibError(ErrorCode::InvalidConfig, "holdout_period must be >= 2");
        }
    }
};

/// Same scene, grid and seed everywhere. The image size is taken from the scene.
inline auto make_pipeline_config(const sim::SceneConfig& scene) -> PipelineConfig {
    PipelineConfig cfg;
    cfg.scene = scene;
    cfg.grid.image_width = scene.image_width;
    cfg.grid.image_height = scene.image_height;
    cfg.ransac.seed = scene.seed;
    cfg.refine.grid = cfg.grid;
    cfg.refine.ransac = cfg.ransac;
    return cfg;
}

enum class Stage { Coarse, Iterative, Correction };

inline auto to_string(Stage s) -> std::string {
    switch (s) {
        case Stage::Coarse: return "coarse";
        case Stage::Iterative: return "iterative";
        case Stage::Correction: return "correction";
    }
    return "unknown";
}

struct StageMetric {
    Stage stage;
    Evaluation evaluation;
};

struct PipelineReport {
    Homography h_coarse;
    Homography h_iterative;
    Homography h_star;
    std::optional<Homography> h_true;
    std::vector<StageMetric> stage_metrics;  // coarse, iterative, correction
    std::vector<CheckpointRecord> checkpoints;
    std::vector<double> correction_loss_trace;
    std::size_t oracle_pair_count = 0;
    std::size_t coarse_inlier_count = 0;
    std::size_t accumulated_count = 0;
    std::size_t eval_pair_count = 0;
    std::set<std::uint64_t> consumed_frame_ids;
    std::set<std::uint64_t> eval_frame_ids;
};

struct PipelineInputs {
    std::vector<Frame> frames;                // detections streamed to the refinement stages
    std::vector<Correspondence> oracle_pairs;  // coarse-stage correspondences
    std::vector<Correspondence> eval_pairs;    // never shown to any stage
};

namespace detail {

template <typename F>
auto run_stage(Stage stage, F&& body) {
    try {
        return body();
    } catch (const CalibError& e) {
        throw CalibError(e.code(), to_string(stage) + " stage: " + e.what());
    }
}

}  // namespace detail

inline auto run_stages(const PipelineInputs& in, const PipelineConfig& cfg) -> PipelineReport {
    cfg.validate();
    PipelineReport report;
    for (const auto& f : in.frames) {
        report.consumed_frame_ids.insert(f.frame_id);
    }
    for (const auto& c : in.oracle_pairs) {
        report.consumed_frame_ids.insert(c.frame_id);
    }
    for (const auto& c : in.eval_pairs) {
        report.eval_frame_ids.insert(c.frame_id);
    }
    report.oracle_pair_count = in.oracle_pairs.size();
    report.eval_pair_count = in.eval_pairs.size();

    const auto coarse = detail::run_stage(Stage::Coarse, [&] {
        return coarse_calibrate(in.oracle_pairs, cfg.grid, cfg.ransac, cfg.coarse_block_sampling);
    });
    report.h_coarse = coarse.h;
    report.coarse_inlier_count = coarse.inliers.size();

    const auto state = detail::run_stage(Stage::Iterative, [&] {
        return run_iterative(in.frames, coarse.h, cfg.refine, coarse.inliers);
    });
    report.h_iterative = state.h_best;
    report.checkpoints = state.checkpoints;
    report.accumulated_count = state.accumulated.size();

    const auto correction = detail::run_stage(Stage::Correction, [&] {
        return fit_correction(state.h_best, in.frames, cfg.correction);
    });
    report.h_star = correction.h_star;
    report.correction_loss_trace = correction.loss_trace;

    for (auto [stage, h] : {std::pair{Stage::Coarse, report.h_coarse},
                            std::pair{Stage::Iterative, report.h_iterative},
                            std::pair{Stage::Correction, report.h_star}}) {
        report.stage_metrics.push_back({stage, evaluate(h, in.eval_pairs)});
    }
    return report;
}

/// Splits a simulation into stage inputs: every holdout_period-th frame is held out and its
/// noise-free ground-truth pairs become the evaluation set.
inline auto split_simulation(const sim::Simulation& simulation, const PipelineConfig& cfg)
    -> PipelineInputs {
    PipelineInputs in;
    std::vector<std::size_t> held_out;
    const std::uint64_t oracle_seed = mix64(cfg.scene.seed ^ 0x6f7261636c65ULL);
    for (std::size_t f = 0; f < simulation.frames.size(); ++f) {
        if (static_cast<int>(f % static_cast<std::size_t>(cfg.holdout_period)) ==
            cfg.holdout_period - 1) {
            held_out.push_back(f);
            continue;
        }
        const auto& sf = simulation.frames[f];
        in.frames.push_back(sf.frame);
        auto pairs = sim::oracle_pairs(sf, cfg.scene.oracle_error_rate, oracle_seed);
        in.oracle_pairs.insert(in.oracle_pairs.end(), pairs.begin(), pairs.end());
    }
    in.eval_pairs = sim::ground_truth_pairs(simulation.truth, held_out);
    return in;
}

inline auto run_full(const sim::Simulation& simulation, const PipelineConfig& cfg) -> PipelineReport {
    auto report = run_stages(split_simulation(simulation, cfg), cfg);
    report.h_true = simulation.truth.h_true;
    return report;
}

inline auto run_full(const PipelineConfig& cfg) -> PipelineReport {
    return run_full(sim::generate(cfg.scene), cfg);
}

}  // namespace calibrefine
