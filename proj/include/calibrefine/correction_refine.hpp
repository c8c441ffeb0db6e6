#pragma once

// Correction-matrix refinement: find H_delta such that H* = H * H_delta minimizes the mean
// squared reprojection loss against implicit nearest-neighbour pairings. Pairings are
// recomputed after every solver round because they depend on H*.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "calibrefine/association.hpp"
#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/homography_fit.hpp"
#include "calibrefine/iterative_refine.hpp"
#include "calibrefine/least_squares.hpp"

namespace calibrefine {

/// H_delta's (2,2) entry is held at 1; the other eight entries are the free parameters.
inline constexpr int k_correction_frozen_index = 8;

struct CorrectionConfig {
    MatchGate gate;
    int max_outer_rounds = 10;
    LmSettings solver;
    std::size_t min_pairs = 12;
    double relative_tolerance = 1e-8;
    // When set, too few implicit pairs yields an identity correction instead of an error.
    bool lenient = false;

    void validate() const {
        gate.validate();
        if (max_outer_rounds < 1) {
            throw CalibError(ErrorCode::InvalidConfig, "correction.max_outer_rounds must be >= 1");
        }
        if (min_pairs < k_min_pairs) {
            throw CalibError(ErrorCode::InvalidConfig, "correction.min_pairs must be >= 4");
        }
    }
};

struct CorrectionResult {
    Homography h_delta;
    Homography h_star;
    std::vector<double> loss_trace;  // one entry per accepted round, starting with round 0
    std::size_t pairs_used = 0;
    bool applied = true;  // false only in lenient mode with too few pairs
};

inline auto implicit_pairs(const Homography& h, std::span<const PlanePoint> lidar,
                           std::span<const PixelPoint> camera, const MatchGate& gate,
                           std::uint64_t frame_id = 0) -> std::vector<Correspondence> {
    std::vector<PixelPoint> projected;
    std::vector<std::size_t> lidar_of;
    for (std::size_t i = 0; i < lidar.size(); ++i) {
        double w = 0.0;
        const PixelPoint p = project_raw(h.matrix(), lidar[i], w);
        if (std::abs(w) > k_w_epsilon) {
            projected.push_back(p);
            lidar_of.push_back(i);
        }
    }
    const MatchSet matched = greedy_match(projected, camera, gate);
    std::vector<Correspondence> out;
    out.reserve(matched.matches.size());
    for (const auto& m : matched.matches) {
        out.push_back({lidar[lidar_of[m.lidar_index]], camera[m.camera_index], frame_id,
                       PairSource::GreedyMatched});
    }
    return out;
}

/// Pairs each frame independently; detections never pair across frames.
inline auto implicit_pairs(const Homography& h, std::span<const Frame> frames,
                           const MatchGate& gate) -> std::vector<Correspondence> {
    std::vector<Correspondence> out;
    for (const auto& f : frames) {
        auto pairs = implicit_pairs(h, f.lidar_centers, f.camera_centers, gate, f.frame_id);
        out.insert(out.end(), pairs.begin(), pairs.end());
    }
    return out;
}

inline auto correction_problem(const Homography& h, const Eigen::Matrix3d& h_delta,
                               std::span<const Correspondence> pairs)
    -> HomographyResidualProblem {
    return {h.matrix(), h_delta, k_correction_frozen_index, pairs};
}

/// Mean squared reprojection error of h * h_delta over the given pairs.
inline auto reprojection_loss(const Homography& h, const Eigen::Matrix3d& h_delta,
                              std::span<const Correspondence> pairs) -> double {
    if (pairs.empty()) {
        throw CalibError(ErrorCode::EmptySet, "no pairs for the reprojection loss");
    }
    const auto problem = correction_problem(h, h_delta, pairs);
    Eigen::VectorXd res;
    if (!problem.evaluate(problem.initial_params(), res, nullptr)) {
        throw CalibError(ErrorCode::DegenerateProjection, "loss evaluated at a point at infinity");
    }
    return res.squaredNorm() / static_cast<double>(pairs.size());
}

/// Analytic gradient of reprojection_loss with respect to the eight free entries of h_delta.
inline auto reprojection_loss_gradient(const Homography& h, const Eigen::Matrix3d& h_delta,
                                       std::span<const Correspondence> pairs)
    -> Eigen::VectorXd {
    if (pairs.empty()) {
        throw CalibError(ErrorCode::EmptySet, "no pairs for the reprojection loss");
    }
    const auto problem = correction_problem(h, h_delta, pairs);
    Eigen::VectorXd res;
    Eigen::MatrixXd jac;
    if (!problem.evaluate(problem.initial_params(), res, &jac)) {
        throw CalibError(ErrorCode::DegenerateProjection, "loss evaluated at a point at infinity");
    }
    return (2.0 / static_cast<double>(pairs.size())) * jac.transpose() * res;
}

inline auto fit_correction(const Homography& h, std::span<const Frame> frames,
                           const CorrectionConfig& cfg) -> CorrectionResult {
    cfg.validate();
    CorrectionResult result{Homography::identity(), h, {}, 0, true};
    Eigen::Matrix3d delta = Eigen::Matrix3d::Identity();
    auto pairs = implicit_pairs(h, frames, cfg.gate);
    if (pairs.size() < cfg.min_pairs) {
        if (!cfg.lenient) {
            throw CalibError(ErrorCode::InsufficientPairs,
                             std::to_string(pairs.size()) + " implicit pairs, need " +
                                 std::to_string(cfg.min_pairs));
        }
        result.applied = false;
        result.pairs_used = pairs.size();
        return result;
    }
    double loss = reprojection_loss(h, delta, pairs);
    result.loss_trace.push_back(loss);

    for (int round = 0; round < cfg.max_outer_rounds && loss > 0.0; ++round) {
        const auto problem = correction_problem(h, delta, pairs);
        const LmResult lm = levenberg_marquardt(problem, problem.initial_params(), cfg.solver);
        const Eigen::Matrix3d candidate = problem.right_matrix(lm.params);
        std::optional<Homography> candidate_star;
        try {
            candidate_star = Homography(h.matrix() * candidate);
        } catch (const CalibError&) {
            break;
        }
        auto repaired = implicit_pairs(*candidate_star, frames, cfg.gate);
        if (repaired.size() < cfg.min_pairs) {
            break;
        }
        const double new_loss = reprojection_loss(h, candidate, repaired);
        if (new_loss > loss) {
            break;
        }
        const double relative_decrease = (loss - new_loss) / loss;
        delta = candidate;
        pairs = std::move(repaired);
        loss = new_loss;
        result.loss_trace.push_back(loss);
        if (relative_decrease < cfg.relative_tolerance) {
            break;
        }
    }
    result.h_delta = Homography(delta);
    result.h_star = compose(h, result.h_delta);
    result.pairs_used = pairs.size();
    return result;
}

/// Single-scene form: one set of LiDAR and camera detections.
inline auto fit_correction(const Homography& h, std::span<const PlanePoint> lidar,
                           std::span<const PixelPoint> camera, const CorrectionConfig& cfg)
    -> CorrectionResult {
    const Frame frame{0, {lidar.begin(), lidar.end()}, {camera.begin(), camera.end()}};
    return fit_correction(h, std::span<const Frame>(&frame, 1), cfg);
}

}  // namespace calibrefine
