#pragma once

// Planar projective geometry between the LiDAR ground plane and the image plane.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calibrefine/error.hpp"

namespace calibrefine {

inline constexpr double k_w_epsilon = 1e-12;
inline constexpr double k_singularity_tolerance = 1e-12;

/// Point on the LiDAR ground plane, metres (Z dropped).
struct PlanePoint {
    double x = 0.0;
    double y = 0.0;

    friend auto operator==(const PlanePoint&, const PlanePoint&) -> bool = default;
};

/// Image coordinates in pixels. May lie outside the image.
struct PixelPoint {
    double u = 0.0;
    double v = 0.0;

    friend auto operator==(const PixelPoint&, const PixelPoint&) -> bool = default;
};

inline auto is_finite(const PlanePoint& p) -> bool { return std::isfinite(p.x) && std::isfinite(p.y); }
inline auto is_finite(const PixelPoint& p) -> bool { return std::isfinite(p.u) && std::isfinite(p.v); }

inline auto distance(const PixelPoint& a, const PixelPoint& b) -> double {
    return std::hypot(a.u - b.u, a.v - b.v);
}

enum class PairSource { Oracle, GreedyMatched, Manual };

inline auto to_string(PairSource s) -> std::string {
    switch (s) {
        case PairSource::Oracle: return "oracle";
        case PairSource::GreedyMatched: return "greedy";
        case PairSource::Manual: return "manual";
    }
    return "manual";
}

struct Correspondence {
    PlanePoint lidar;
    PixelPoint pixel;
    std::uint64_t frame_id = 0;
    PairSource source = PairSource::Manual;

    friend auto operator==(const Correspondence&, const Correspondence&) -> bool = default;
};

/// Scales a 3x3 matrix to unit Frobenius norm with h33 >= 0, or, when h33 == 0, with the
/// first nonzero entry (row-major) positive. Throws SingularResult for a zero matrix.
/// Idempotent bit for bit: a norm within a few ulps of 1 is left unscaled.
inline auto canonicalize(const Eigen::Matrix3d& m) -> Eigen::Matrix3d {
    const double norm = m.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw CalibError(ErrorCode::SingularResult, "matrix is zero or non-finite");
    }
    constexpr double unit_band = 8.0 * std::numeric_limits<double>::epsilon();
    Eigen::Matrix3d out = std::abs(norm - 1.0) <= unit_band ? m : Eigen::Matrix3d(m / norm);
    double sign_ref = out(2, 2);
    if (sign_ref == 0.0) {
        for (int r = 0; r < 3 && sign_ref == 0.0; ++r) {
            for (int c = 0; c < 3 && sign_ref == 0.0; ++c) {
                sign_ref = out(r, c);
            }
        }
    }
    if (sign_ref < 0.0) {
        out = -out;
    }
    return out;
}

/// Non-singular 3x3 plane-to-image projective map, always held in canonical scale.
class Homography {
  public:
    Homography() : m_(Eigen::Matrix3d::Identity() / std::sqrt(3.0)) {}

    /// Accepts any nonzero scale; rejects non-finite or singular input.
    explicit Homography(const Eigen::Matrix3d& m) : m_(canonicalize(m)) {
        if (!m_.allFinite()) {
            throw CalibError(ErrorCode::SingularResult, "non-finite homography");
        }
        if (!(std::abs(m_.determinant()) > k_singularity_tolerance)) {
            throw CalibError(ErrorCode::SingularResult, "homography is singular");
        }
    }

    static auto identity() -> Homography { return Homography{}; }

    static auto translation(double tu, double tv) -> Homography {
        Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
        m(0, 2) = tu;
        m(1, 2) = tv;
        return Homography(m);
    }

    [[nodiscard]] auto matrix() const -> const Eigen::Matrix3d& { return m_; }
    [[nodiscard]] auto operator()(int r, int c) const -> double { return m_(r, c); }

    [[nodiscard]] auto inverse() const -> Homography { return Homography(m_.inverse()); }

    friend auto operator==(const Homography& a, const Homography& b) -> bool {
        return a.m_ == b.m_;
    }

  private:
    Eigen::Matrix3d m_;
};

inline auto max_abs_difference(const Homography& a, const Homography& b) -> double {
    return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

/// Raw projection through an unnormalized matrix; the caller owns the w check.
inline auto project_raw(const Eigen::Matrix3d& h, const PlanePoint& p, double& w) -> PixelPoint {
    w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
    return {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / w,
            (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / w};
}

inline auto project(const Eigen::Matrix3d& h, const PlanePoint& p) -> PixelPoint {
    double w = 0.0;
    const PixelPoint out = project_raw(h, p, w);
    if (!(std::abs(w) > k_w_epsilon)) {
        throw CalibError(ErrorCode::DegenerateProjection,
                         "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                             ") maps to infinity");
    }
    return out;
}

inline auto project(const Homography& h, const PlanePoint& p) -> PixelPoint {
    return project(h.matrix(), p);
}

/// Homogeneous image of p under h, without dehomogenization.
inline auto project_homogeneous(const Homography& h, const PlanePoint& p) -> Eigen::Vector3d {
    return h.matrix() * Eigen::Vector3d(p.x, p.y, 1.0);
}

/// Product outer * inner in canonical scale: inner is applied first.
inline auto compose(const Homography& outer, const Homography& inner) -> Homography {
    return Homography(outer.matrix() * inner.matrix());
}

struct ResidualReport {
    std::vector<double> per_pair;
    double aed = 0.0;
    double rmse = 0.0;
    std::size_t n = 0;
};

/// Builds the report from precomputed Euclidean residuals.
inline auto summarize_residuals(std::vector<double> residuals) -> ResidualReport {
    if (residuals.empty()) {
        throw CalibError(ErrorCode::EmptySet, "no residuals to summarize");
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double r : residuals) {
        sum += r;
        sum_sq += r * r;
    }
    const auto n = static_cast<double>(residuals.size());
    ResidualReport report;
    report.n = residuals.size();
    report.aed = sum / n;
    report.rmse = std::sqrt(sum_sq / n);
    // Guard the power-mean inequality against last-bit rounding.
    report.rmse = std::max(report.rmse, report.aed);
    report.per_pair = std::move(residuals);
    return report;
}

inline auto residual(const Homography& h, const Correspondence& c) -> double {
    return distance(c.pixel, project(h, c.lidar));
}

/// Average Euclidean distance and RMSE of the reprojection residuals.
inline auto reprojection_metrics(const Homography& h, std::span<const Correspondence> pairs)
    -> ResidualReport {
    if (pairs.empty()) {
        throw CalibError(ErrorCode::EmptySet, "no correspondences");
    }
    std::vector<double> residuals;
    residuals.reserve(pairs.size());
    for (const auto& c : pairs) {
        residuals.push_back(residual(h, c));
    }
    return summarize_residuals(std::move(residuals));
}

enum class ErrorMetric { AED, RMSE };

inline auto metric_value(const ResidualReport& r, ErrorMetric metric) -> double {
    return metric == ErrorMetric::AED ? r.aed : r.rmse;
}

}  // namespace calibrefine
