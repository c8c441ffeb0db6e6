#pragma once

// RANSAC homography fitting with inlier consensus and a refit on the winning inlier set.

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/homography_fit.hpp"

namespace calibrefine {

struct RansacConfig {
    int max_iterations = 2000;
    double inlier_threshold = 3.0;  // pixels
    double min_inlier_ratio = 0.5;
    double confidence = 0.999;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_iterations < 1) {
            throw CalibError(ErrorCode::InvalidConfig, "ransac.max_iterations must be >= 1");
        }
        if (!(inlier_threshold > 0.0)) {
            throw CalibError(ErrorCode::InvalidConfig, "ransac.inlier_threshold must be > 0");
        }
        if (!(min_inlier_ratio > 0.0 && min_inlier_ratio <= 1.0)) {
            throw CalibError(ErrorCode::InvalidConfig, "ransac.min_inlier_ratio must be in (0, 1]");
        }
        if (!(confidence > 0.0 && confidence < 1.0)) {
            throw CalibError(ErrorCode::InvalidConfig, "ransac.confidence must be in (0, 1)");
        }
    }
};

struct RansacResult {
    Homography h;
    std::vector<std::size_t> inlier_indices;  // strictly increasing
    std::size_t iterations_run = 0;
    ResidualReport inlier_report;
    // Score of the best minimal-sample hypothesis, before the refit.
    std::size_t minimal_inlier_count = 0;
    double minimal_inlier_aed = 0.0;
};

/// splitmix64 finalizer.
inline auto mix64(std::uint64_t x) -> std::uint64_t {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31U);
}

using MinimalSample = std::array<std::size_t, 4>;

/// Draws 4 distinct indices in [0, n) as a pure function of (seed, draw, n).
struct CounterSampler {
    std::uint64_t seed = 0;

    auto operator()(std::uint64_t draw, std::size_t n) const -> MinimalSample {
        MinimalSample out{};
        const std::uint64_t base = mix64(mix64(seed) ^ draw);
        std::uint64_t counter = 0;
        for (std::size_t j = 0; j < out.size(); ++j) {
            bool fresh = false;
            while (!fresh) {
                const auto idx = static_cast<std::size_t>(mix64(base + counter++) % n);
                fresh = true;
                for (std::size_t k = 0; k < j; ++k) {
                    fresh = fresh && out[k] != idx;
                }
                out[j] = idx;
            }
        }
        return out;
    }
};

template <typename S>
concept MinimalSampler = requires(const S& s, std::uint64_t draw, std::size_t n) {
    { s(draw, n) } -> std::convertible_to<MinimalSample>;
};

namespace detail {

struct ConsensusScore {
    std::size_t count = 0;
    double aed = std::numeric_limits<double>::infinity();

    // Larger consensus first, then lower inlier AED.
    [[nodiscard]] auto better_than(const ConsensusScore& o) const -> bool {
        return count > o.count || (count == o.count && aed < o.aed);
    }
};

inline auto score_model(const Eigen::Matrix3d& h, std::span<const Correspondence> pairs,
                        double threshold, std::vector<std::size_t>* inliers = nullptr)
    -> ConsensusScore {
    ConsensusScore s;
    double sum = 0.0;
    if (inliers != nullptr) {
        inliers->clear();
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        double w = 0.0;
        const PixelPoint p = project_raw(h, pairs[i].lidar, w);
        if (!(std::abs(w) > k_w_epsilon)) {
            continue;
        }
        const double r = distance(pairs[i].pixel, p);
        if (r <= threshold) {
            ++s.count;
            sum += r;
            if (inliers != nullptr) {
                inliers->push_back(i);
            }
        }
    }
    if (s.count > 0) {
        s.aed = sum / static_cast<double>(s.count);
    }
    return s;
}

inline auto gather(std::span<const Correspondence> pairs, std::span<const std::size_t> idx)
    -> std::vector<Correspondence> {
    std::vector<Correspondence> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        out.push_back(pairs[i]);
    }
    return out;
}

// Iterations needed to draw an all-inlier minimal sample with the given confidence.
inline auto required_iterations(double inlier_ratio, double confidence) -> double {
    const double p_good = std::pow(inlier_ratio, 4.0);
    if (p_good >= 1.0) {
        return 0.0;
    }
    if (p_good <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return std::ceil(std::log(1.0 - confidence) / std::log(1.0 - p_good));
}

}  // namespace detail

template <MinimalSampler Sampler>
auto ransac_homography(std::span<const Correspondence> pairs, const RansacConfig& cfg,
                       const Sampler& sampler) -> RansacResult {
    cfg.validate();
    const std::size_t n = pairs.size();
    if (n < k_min_pairs) {
        throw CalibError(ErrorCode::InsufficientPairs,
                         "RANSAC needs at least 4 pairs, got " + std::to_string(n));
    }

    std::optional<Homography> best_h;
    detail::ConsensusScore best;
    const auto max_iterations = static_cast<std::size_t>(cfg.max_iterations);
    const std::size_t max_draws = 10 * max_iterations;
    double needed = static_cast<double>(max_iterations);
    std::size_t iterations = 0;
    std::array<Correspondence, 4> minimal;
    for (std::uint64_t draw = 0; draw < max_draws && iterations < max_iterations &&
                                 static_cast<double>(iterations) < needed;
         ++draw) {
        const MinimalSample sample = sampler(draw, n);
        for (std::size_t k = 0; k < sample.size(); ++k) {
            minimal[k] = pairs[sample[k]];
        }
        std::optional<Homography> candidate;
        try {
            candidate = estimate_homography(minimal);
        } catch (const CalibError& e) {
            if (e.code() != ErrorCode::DegenerateConfiguration) {
                throw;
            }
            continue;  // degenerate draws do not use up iterations
        }
        ++iterations;
        const auto score = detail::score_model(candidate->matrix(), pairs, cfg.inlier_threshold);
        if (score.better_than(best)) {
            best = score;
            best_h = candidate;
            needed = detail::required_iterations(
                static_cast<double>(best.count) / static_cast<double>(n), cfg.confidence);
        }
    }
    if (!best_h) {
        throw CalibError(ErrorCode::ConsensusFailure, "every minimal sample was degenerate");
    }

    RansacResult result{*best_h, {}, iterations, {}, best.count, best.aed};
    std::vector<std::size_t> inliers;
    detail::ConsensusScore current = detail::score_model(best_h->matrix(), pairs,
                                                         cfg.inlier_threshold, &inliers);
    Homography current_h = *best_h;
    // Refit on the inlier set until it stops changing; keep a refit only if it scores at
    // least as well as the model it replaces.
    for (int round = 0; round < 5 && inliers.size() >= k_min_pairs; ++round) {
        const auto subset = detail::gather(pairs, inliers);
        Homography start = current_h;
        try {
            start = estimate_homography(subset);
        } catch (const CalibError& e) {
            if (e.code() != ErrorCode::DegenerateConfiguration) {
                throw;
            }
        }
        Homography refit = current_h;
        try {
            refit = refine_homography(subset, start).h;
        } catch (const CalibError& e) {
            if (e.code() != ErrorCode::DegenerateProjection) {
                throw;
            }
            break;
        }
        std::vector<std::size_t> refit_inliers;
        const auto refit_score =
            detail::score_model(refit.matrix(), pairs, cfg.inlier_threshold, &refit_inliers);
        if (current.better_than(refit_score)) {
            break;
        }
        const bool same_set = refit_inliers == inliers;
        current = refit_score;
        current_h = refit;
        inliers = std::move(refit_inliers);
        if (same_set) {
            break;
        }
    }

    const double ratio = static_cast<double>(inliers.size()) / static_cast<double>(n);
    if (inliers.size() < k_min_pairs || ratio < cfg.min_inlier_ratio) {
        throw CalibError(ErrorCode::ConsensusFailure,
                         "best consensus " + std::to_string(inliers.size()) + "/" +
                             std::to_string(n) + " is below the minimum inlier ratio");
    }
    result.h = current_h;
    result.inlier_report = reprojection_metrics(current_h, detail::gather(pairs, inliers));
    result.inlier_indices = std::move(inliers);
    return result;
}

inline auto ransac_homography(std::span<const Correspondence> pairs, const RansacConfig& cfg)
    -> RansacResult {
    return ransac_homography(pairs, cfg, CounterSampler{cfg.seed});
}

}  // namespace calibrefine
