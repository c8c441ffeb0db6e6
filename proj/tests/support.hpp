#pragma once

// Shared fixtures and independent reference implementations used by the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "calibrefine/calibrefine.hpp"

namespace support {

using namespace calibrefine;

/// Metrics from plain scalar arithmetic, no shared code with the library.
struct BruteMetrics {
    double aed = 0.0;
    double rmse = 0.0;
};

inline auto brute_metrics(const Eigen::Matrix3d& h, const std::vector<Correspondence>& pairs) -> BruteMetrics {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& c : pairs) {
        const double w = h(2, 0) * c.lidar.x + h(2, 1) * c.lidar.y + h(2, 2);
        const double u = (h(0, 0) * c.lidar.x + h(0, 1) * c.lidar.y + h(0, 2)) / w;
        const double v = (h(1, 0) * c.lidar.x + h(1, 1) * c.lidar.y + h(1, 2)) / w;
        const double du = u - c.pixel.u;
        const double dv = v - c.pixel.v;
        sum += std::sqrt(du * du + dv * dv);
        sum_sq += du * du + dv * dv;
    }
    const double n = static_cast<double>(pairs.size());
    return {sum / n, std::sqrt(sum_sq / n)};
}

/// Greedy by repeated full scans for the cheapest admissible unmatched pair.
inline auto brute_greedy(const std::vector<PixelPoint>& projected, const std::vector<PixelPoint>& detections,
                         double gate) -> std::vector<Match> {
    std::vector<bool> lu(projected.size(), false);
    std::vector<bool> cu(detections.size(), false);
    std::vector<Match> out;
    for (;;) {
        std::optional<Match> best;
        for (std::size_t i = 0; i < projected.size(); ++i) {
            for (std::size_t j = 0; j < detections.size(); ++j) {
                if (lu[i] || cu[j]) continue;
                const double d = std::hypot(projected[i].u - detections[j].u, projected[i].v - detections[j].v);
                if (d > gate) continue;
                if (!best || d < best->cost || (d == best->cost && (i < best->lidar_index ||
                                                                    (i == best->lidar_index && j < best->camera_index)))) {
                    best = Match{i, j, d};
                }
            }
        }
        if (!best) return out;
        lu[best->lidar_index] = true;
        cu[best->camera_index] = true;
        out.push_back(*best);
    }
}

/// For every retained block, scans all pairs for the one nearest the center (first on ties).
inline auto brute_block_sample(const std::vector<Correspondence>& pairs, const BlockGrid& g)
    -> std::vector<std::size_t> {
    const double bw = static_cast<double>(g.image_width) / g.blocks_x;
    const double bh = static_cast<double>(g.image_height) / g.blocks_y;
    std::vector<std::size_t> keep;
    for (int iy = 0; iy < g.blocks_y; ++iy) {
        for (int ix = 0; ix < g.blocks_x; ++ix) {
            if ((ix + iy) % 2 != (g.parity == BlockParity::Even ? 0 : 1)) continue;
            std::optional<std::size_t> best;
            double best_d = 0.0;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const auto& p = pairs[i].pixel;
                if (p.u < 0 || p.v < 0 || p.u >= g.image_width || p.v >= g.image_height) continue;
                const int bx = std::min(static_cast<int>(p.u / bw), g.blocks_x - 1);
                const int by = std::min(static_cast<int>(p.v / bh), g.blocks_y - 1);
                if (bx != ix || by != iy) continue;
                const double d = std::hypot(p.u - (ix + 0.5) * bw, p.v - (iy + 0.5) * bh);
                if (!best || d < best_d) {
                    best = i;
                    best_d = d;
                }
            }
            if (best) keep.push_back(*best);
        }
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

/// Random well-conditioned plane-to-image homography in the default simulator family.
inline auto random_homography(std::uint64_t seed) -> Homography {
    sim::SceneConfig cfg;
    return sim::random_homography(seed, cfg);
}

inline auto random_plane_points(std::mt19937_64& rng, std::size_t n, double half_extent = 30.0)
    -> std::vector<PlanePoint> {
    std::uniform_real_distribution<double> d(-half_extent, half_extent);
    std::vector<PlanePoint> pts(n);
    for (auto& p : pts) p = {d(rng), d(rng)};
    return pts;
}

inline auto exact_pairs(const Homography& h, const std::vector<PlanePoint>& pts) -> std::vector<Correspondence> {
    std::vector<Correspondence> out;
    for (const auto& p : pts) out.push_back({p, project(h, p), 0, PairSource::Manual});
    return out;
}

/// Pairs with pixels spread uniformly over the image.
inline auto random_pixel_pairs(std::mt19937_64& rng, std::size_t n, double width = 1920, double height = 1080)
    -> std::vector<Correspondence> {
    std::uniform_real_distribution<double> du(0.0, width);
    std::uniform_real_distribution<double> dv(0.0, height);
    std::vector<Correspondence> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].pixel = {du(rng), dv(rng)};
        out[i].lidar = {static_cast<double>(i), 0.0};
        out[i].frame_id = i;
    }
    return out;
}

/// Small noise-free scene for fast stage tests.
inline auto small_scene(std::uint64_t seed, int n_frames = 200) -> sim::SceneConfig {
    sim::SceneConfig s;
    s.seed = seed;
    s.n_frames = n_frames;
    return s;
}

}  // namespace support
