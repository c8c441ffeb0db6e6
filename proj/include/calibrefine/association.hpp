#pragma once

// Greedy bipartite matching of projected LiDAR detections to camera detections.

#include <algorithm>
#include <span>
#include <tuple>
#include <vector>

#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"

namespace calibrefine {

struct MatchGate {
    double max_distance = 40.0;  // pixels

    void validate() const {
        if (!(max_distance > 0.0)) {
            throw CalibError(ErrorCode::InvalidConfig, "gate.max_distance must be > 0");
        }
    }
};

struct Match {
    std::size_t lidar_index = 0;
    std::size_t camera_index = 0;
    double cost = 0.0;

    friend auto operator==(const Match&, const Match&) -> bool = default;
};

struct MatchSet {
    std::vector<Match> matches;  // in selection order
    std::vector<std::size_t> unmatched_lidar;
    std::vector<std::size_t> unmatched_camera;
};

/// Repeatedly takes the globally cheapest admissible pair whose endpoints are both free.
/// Ties go to (lower cost, lower lidar index, lower camera index). Detections that have no
/// partner within the gate stay unmatched.
inline auto greedy_match(std::span<const PixelPoint> projected,
                         std::span<const PixelPoint> detections, const MatchGate& gate)
    -> MatchSet {
    gate.validate();
    std::vector<Match> candidates;
    for (std::size_t i = 0; i < projected.size(); ++i) {
        for (std::size_t j = 0; j < detections.size(); ++j) {
            const double cost = distance(projected[i], detections[j]);
            if (cost <= gate.max_distance) {
                candidates.push_back({i, j, cost});
            }
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) {
        return std::tie(a.cost, a.lidar_index, a.camera_index) <
               std::tie(b.cost, b.lidar_index, b.camera_index);
    });

    std::vector<bool> lidar_used(projected.size(), false);
    std::vector<bool> camera_used(detections.size(), false);
    MatchSet out;
    for (const auto& m : candidates) {
        if (lidar_used[m.lidar_index] || camera_used[m.camera_index]) {
            continue;
        }
        lidar_used[m.lidar_index] = true;
        camera_used[m.camera_index] = true;
        out.matches.push_back(m);
    }
    for (std::size_t i = 0; i < projected.size(); ++i) {
        if (!lidar_used[i]) {
            out.unmatched_lidar.push_back(i);
        }
    }
    for (std::size_t j = 0; j < detections.size(); ++j) {
        if (!camera_used[j]) {
            out.unmatched_camera.push_back(j);
        }
    }
    return out;
}

}  // namespace calibrefine
