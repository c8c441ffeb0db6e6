#pragma once

// Online accumulate-and-recalibrate loop with a best-matrix error guard.
//
// Each frame: project LiDAR centers through the current best matrix, greedy-match them to
// camera centers, block-sample the matches, and add the survivors to the accumulated set.
// Every `recalib_interval` frames the accumulated set is refit; the new matrix replaces the
// best one only if it lowers the guard metric on that same set.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calibrefine/association.hpp"
#include "calibrefine/block_sampling.hpp"
#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/ransac.hpp"

namespace calibrefine {

struct Frame {
    std::uint64_t frame_id = 0;
    std::vector<PlanePoint> lidar_centers;
    std::vector<PixelPoint> camera_centers;

    friend auto operator==(const Frame&, const Frame&) -> bool = default;
};

struct RefineConfig {
    int recalib_interval = 100;
    MatchGate gate;
    BlockGrid grid;
    ErrorMetric metric = ErrorMetric::AED;
    RansacConfig ransac;
    bool block_sampling = true;  // apply the per-frame block filter before accumulation
    int max_pairs_per_block = 3;
    // Minimum camera-point spacing inside one block, as a fraction of the block diagonal.
    // Half a diagonal is the center-to-corner distance, so with a center-seeded block it would
    // never admit a second pair.
    double min_separation_fraction = 0.25;

    void validate() const {
        if (recalib_interval < 1) {
            throw CalibError(ErrorCode::InvalidConfig, "refine.interval must be >= 1");
        }
        if (max_pairs_per_block < 1) {
            throw CalibError(ErrorCode::InvalidConfig, "refine.max_pairs_per_block must be >= 1");
        }
        if (!(min_separation_fraction >= 0.0)) {
            throw CalibError(ErrorCode::InvalidConfig, "refine.min_separation_fraction must be >= 0");
        }
        gate.validate();
        grid.validate();
        ransac.validate();
    }
};

enum class CheckpointStatus { Evaluated, SkippedInsufficient, SkippedConsensus };

struct CheckpointRecord {
    std::uint64_t frame_id = 0;
    std::uint64_t frames_seen = 0;
    double err_new = std::numeric_limits<double>::quiet_NaN();
    double err_best = std::numeric_limits<double>::quiet_NaN();
    bool updated = false;  // err_new < err_best
    CheckpointStatus status = CheckpointStatus::Evaluated;
    std::size_t accumulated = 0;

    friend auto operator==(const CheckpointRecord&, const CheckpointRecord&) -> bool = default;
};

struct RefineDiagnostics {
    std::size_t degenerate_projections = 0;
    std::size_t rejected_frames = 0;
    std::vector<std::string> messages;
};

struct CalibrationState {
    Homography h_best;
    std::vector<Correspondence> accumulated;
    std::uint64_t frames_seen = 0;
    std::optional<std::uint64_t> last_frame_id;
    std::vector<CheckpointRecord> checkpoints;
    RefineDiagnostics diagnostics;
};

/// Occupancy rule for the accumulated set: a block takes a pair if it is empty, or if the new
/// camera point is at least `min_separation_fraction` of a block diagonal from every pair
/// already stored there, up to `max_pairs_per_block`. Returns whether the pair was added.
inline auto try_accumulate(std::vector<Correspondence>& accumulated, const Correspondence& pair,
                           const BlockGrid& grid, int max_pairs_per_block,
                           double min_separation_fraction) -> bool {
    const auto block = block_of(grid, pair.pixel);
    if (!block) {
        return false;
    }
    const double min_separation = min_separation_fraction * grid.block_diagonal();
    int occupants = 0;
    for (const auto& stored : accumulated) {
        const auto other = block_of(grid, stored.pixel);
        if (!other || !(*other == *block)) {
            continue;
        }
        ++occupants;
        if (occupants >= max_pairs_per_block ||
            distance(stored.pixel, pair.pixel) < min_separation) {
            return false;
        }
    }
    accumulated.push_back(pair);
    return true;
}

/// Initial state: h_best = h0, accumulated set seeded (under the occupancy rule) with the
/// coarse stage's inlier correspondences.
inline auto make_state(const Homography& h0, std::span<const Correspondence> seed_pairs,
                       const RefineConfig& cfg) -> CalibrationState {
    cfg.validate();
    CalibrationState state{h0, {}, 0, std::nullopt, {}, {}};
    for (const auto& c : seed_pairs) {
        try_accumulate(state.accumulated, c, cfg.grid, cfg.max_pairs_per_block,
                       cfg.min_separation_fraction);
    }
    return state;
}

/// Adds one frame's matched, block-sampled pairs to the accumulated set. Never changes h_best.
inline auto ingest_frame(CalibrationState state, const Frame& frame, const RefineConfig& cfg)
    -> CalibrationState {
    if (state.last_frame_id && frame.frame_id <= *state.last_frame_id) {
        throw CalibError(ErrorCode::OutOfOrderFrame,
                         "frame " + std::to_string(frame.frame_id) + " after " +
                             std::to_string(*state.last_frame_id));
    }
    std::vector<PixelPoint> projected;
    std::vector<std::size_t> lidar_of;
    projected.reserve(frame.lidar_centers.size());
    for (std::size_t i = 0; i < frame.lidar_centers.size(); ++i) {
        double w = 0.0;
        const PixelPoint p = project_raw(state.h_best.matrix(), frame.lidar_centers[i], w);
        if (!(std::abs(w) > k_w_epsilon)) {
            ++state.diagnostics.degenerate_projections;
            continue;
        }
        projected.push_back(p);
        lidar_of.push_back(i);
    }
    const MatchSet matched = greedy_match(projected, frame.camera_centers, cfg.gate);
    std::vector<Correspondence> candidates;
    candidates.reserve(matched.matches.size());
    for (const auto& m : matched.matches) {
        candidates.push_back({frame.lidar_centers[lidar_of[m.lidar_index]],
                              frame.camera_centers[m.camera_index], frame.frame_id,
                              PairSource::GreedyMatched});
    }
    const auto survivors = cfg.block_sampling ? block_sample(candidates, cfg.grid) : candidates;
    for (const auto& c : survivors) {
        try_accumulate(state.accumulated, c, cfg.grid, cfg.max_pairs_per_block,
                       cfg.min_separation_fraction);
    }
    ++state.frames_seen;
    state.last_frame_id = frame.frame_id;
    return state;
}

namespace detail {

inline auto guard_error(const Homography& h, std::span<const Correspondence> pairs,
                        ErrorMetric metric) -> double {
    try {
        return metric_value(reprojection_metrics(h, pairs), metric);
    } catch (const CalibError& e) {
        if (e.code() != ErrorCode::DegenerateProjection) {
            throw;
        }
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/// Refits the accumulated set and keeps the new matrix only if it lowers the guard metric
/// on that same set. Always appends a checkpoint record.
inline auto checkpoint_recalibrate(CalibrationState state, const RefineConfig& cfg)
    -> CalibrationState {
    CheckpointRecord record;
    record.frame_id = state.last_frame_id.value_or(0);
    record.frames_seen = state.frames_seen;
    record.accumulated = state.accumulated.size();
    if (!state.accumulated.empty()) {
        record.err_best = detail::guard_error(state.h_best, state.accumulated, cfg.metric);
    }
    if (state.accumulated.size() < k_min_pairs) {
        record.status = CheckpointStatus::SkippedInsufficient;
        state.checkpoints.push_back(record);
        return state;
    }
    std::optional<Homography> h_new;
    try {
        h_new = ransac_homography(state.accumulated, cfg.ransac).h;
    } catch (const CalibError& e) {
        if (e.code() != ErrorCode::ConsensusFailure) {
            throw;
        }
        record.status = CheckpointStatus::SkippedConsensus;
        state.checkpoints.push_back(record);
        return state;
    }
    record.err_new = detail::guard_error(*h_new, state.accumulated, cfg.metric);
    record.updated = record.err_new < record.err_best;
    if (record.updated) {
        state.h_best = *h_new;
    }
    state.checkpoints.push_back(record);
    return state;
}

/// Folds the frame stream through ingest/checkpoint. A final checkpoint runs at the end of
/// the stream when the last block of frames was shorter than the interval.
inline auto run_iterative(std::span<const Frame> frames, const Homography& h0,
                          const RefineConfig& cfg,
                          std::span<const Correspondence> seed_pairs = {}) -> CalibrationState {
    CalibrationState state = make_state(h0, seed_pairs, cfg);
    const auto interval = static_cast<std::uint64_t>(cfg.recalib_interval);
    for (const auto& frame : frames) {
        if (state.last_frame_id && frame.frame_id <= *state.last_frame_id) {
            ++state.diagnostics.rejected_frames;
            state.diagnostics.messages.push_back("OutOfOrderFrame: frame " +
                                                 std::to_string(frame.frame_id) + " skipped");
            continue;
        }
        state = ingest_frame(std::move(state), frame, cfg);
        if (state.frames_seen % interval == 0) {
            state = checkpoint_recalibrate(std::move(state), cfg);
        }
    }
    if (state.frames_seen % interval != 0) {
        state = checkpoint_recalibrate(std::move(state), cfg);
    }
    return state;
}

}  // namespace calibrefine
