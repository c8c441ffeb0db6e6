#pragma once

// Homography estimation: normalized DLT and geometric (reprojection) refinement.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/least_squares.hpp"

namespace calibrefine {

inline constexpr std::size_t k_min_pairs = 4;

/// Relative singular-value floor below which the DLT design matrix counts as rank deficient.
inline constexpr double k_dlt_rank_tolerance = 1e-9;

namespace detail {

// Hartley normalization: centroid to origin, mean distance sqrt(2).
template <typename PointOf>
auto isotropic_normalization(std::span<const Correspondence> pairs, PointOf point_of)
    -> Eigen::Matrix3d {
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (const auto& c : pairs) {
        centroid += point_of(c);
    }
    centroid /= static_cast<double>(pairs.size());
    double mean_dist = 0.0;
    for (const auto& c : pairs) {
        mean_dist += (point_of(c) - centroid).norm();
    }
    mean_dist /= static_cast<double>(pairs.size());
    const double s = mean_dist > 0.0 ? std::numbers::sqrt2 / mean_dist : 1.0;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -s * centroid.x();
    t(1, 2) = -s * centroid.y();
    return t;
}

}  // namespace detail

/// Normalized direct linear transform over all pairs.
inline auto estimate_homography(std::span<const Correspondence> pairs) -> Homography {
    if (pairs.size() < k_min_pairs) {
        throw CalibError(ErrorCode::InsufficientPairs,
                         "need at least 4 pairs, got " + std::to_string(pairs.size()));
    }
    for (const auto& c : pairs) {
        if (!is_finite(c.lidar) || !is_finite(c.pixel)) {
            throw CalibError(ErrorCode::InvalidInput, "non-finite correspondence");
        }
    }
    const Eigen::Matrix3d t_src = detail::isotropic_normalization(
        pairs, [](const Correspondence& c) { return Eigen::Vector2d(c.lidar.x, c.lidar.y); });
    const Eigen::Matrix3d t_dst = detail::isotropic_normalization(
        pairs, [](const Correspondence& c) { return Eigen::Vector2d(c.pixel.u, c.pixel.v); });

    const auto n = static_cast<Eigen::Index>(pairs.size());
    Eigen::MatrixXd design(2 * n, 9);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& c = pairs[static_cast<std::size_t>(i)];
        const Eigen::Vector3d s = t_src * Eigen::Vector3d(c.lidar.x, c.lidar.y, 1.0);
        const Eigen::Vector3d d = t_dst * Eigen::Vector3d(c.pixel.u, c.pixel.v, 1.0);
        const double x = s.x();
        const double y = s.y();
        const double u = d.x();
        const double v = d.y();
        design.row(2 * i) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
        design.row(2 * i + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
    const Eigen::VectorXd& sv = svd.singularValues();
    if (sv.size() < 8 || !(sv(7) > k_dlt_rank_tolerance * sv(0))) {
        throw CalibError(ErrorCode::DegenerateConfiguration,
                         "design matrix rank < 8 (collinear or coincident points)");
    }
    const Eigen::VectorXd hvec = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
    const Eigen::Matrix3d h = t_dst.inverse() * hn * t_src;
    try {
        return Homography(h);
    } catch (const CalibError&) {
        throw CalibError(ErrorCode::DegenerateConfiguration, "DLT produced a singular matrix");
    }
}

/// Reprojection residuals of M = left * right(theta), where theta holds the eight entries of
/// `right` other than the frozen one (row-major order).
class HomographyResidualProblem {
  public:
    HomographyResidualProblem(Eigen::Matrix3d left, Eigen::Matrix3d base, int frozen_index,
                              std::span<const Correspondence> pairs)
        : left_(std::move(left)), base_(std::move(base)), frozen_(frozen_index), pairs_(pairs) {}

    [[nodiscard]] auto initial_params() const -> Eigen::VectorXd {
        Eigen::VectorXd theta(8);
        for (int k = 0, j = 0; k < 9; ++k) {
            if (k != frozen_) {
                theta(j++) = base_(k / 3, k % 3);
            }
        }
        return theta;
    }

    [[nodiscard]] auto right_matrix(const Eigen::VectorXd& theta) const -> Eigen::Matrix3d {
        Eigen::Matrix3d m = base_;
        for (int k = 0, j = 0; k < 9; ++k) {
            if (k != frozen_) {
                m(k / 3, k % 3) = theta(j++);
            }
        }
        return m;
    }

    [[nodiscard]] auto full_matrix(const Eigen::VectorXd& theta) const -> Eigen::Matrix3d {
        return left_ * right_matrix(theta);
    }

    auto evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd& res, Eigen::MatrixXd* jac) const
        -> bool {
        const Eigen::Matrix3d m = full_matrix(theta);
        const auto n = static_cast<Eigen::Index>(pairs_.size());
        res.resize(2 * n);
        if (jac != nullptr) {
            jac->resize(2 * n, 8);
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& c = pairs_[static_cast<std::size_t>(i)];
            const Eigen::Vector3d p(c.lidar.x, c.lidar.y, 1.0);
            const Eigen::Vector3d q = m * p;
            if (!(std::abs(q.z()) > k_w_epsilon)) {
                return false;
            }
            const double u_hat = q.x() / q.z();
            const double v_hat = q.y() / q.z();
            res(2 * i) = u_hat - c.pixel.u;
            res(2 * i + 1) = v_hat - c.pixel.v;
            if (jac == nullptr) {
                continue;
            }
            // d(M p)/d right(r, c) = left.col(r) * p(c)
            for (int k = 0, j = 0; k < 9; ++k) {
                if (k == frozen_) {
                    continue;
                }
                const Eigen::Vector3d dq = left_.col(k / 3) * p(k % 3);
                (*jac)(2 * i, j) = (dq.x() - u_hat * dq.z()) / q.z();
                (*jac)(2 * i + 1, j) = (dq.y() - v_hat * dq.z()) / q.z();
                ++j;
            }
        }
        return true;
    }

  private:
    Eigen::Matrix3d left_;
    Eigen::Matrix3d base_;
    int frozen_;
    std::span<const Correspondence> pairs_;
};

inline auto largest_entry_index(const Eigen::Matrix3d& m) -> int {
    int best = 0;
    for (int k = 1; k < 9; ++k) {
        if (std::abs(m(k / 3, k % 3)) > std::abs(m(best / 3, best % 3))) {
            best = k;
        }
    }
    return best;
}

struct RefineOutcome {
    Homography h;
    double initial_cost = 0.0;  // sum of squared residuals at h0
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;  // false: hit max_iterations, h is the best iterate
};

/// Minimizes the summed squared reprojection error starting from h0, with the scale gauge
/// fixed by freezing h0's largest-magnitude entry.
inline auto refine_homography(std::span<const Correspondence> pairs, const Homography& h0,
                              const LmSettings& settings = {}) -> RefineOutcome {
    if (pairs.size() < k_min_pairs) {
        throw CalibError(ErrorCode::InsufficientPairs,
                         "need at least 4 pairs, got " + std::to_string(pairs.size()));
    }
    const HomographyResidualProblem problem(Eigen::Matrix3d::Identity(), h0.matrix(),
                                            largest_entry_index(h0.matrix()), pairs);
    const LmResult lm = levenberg_marquardt(problem, problem.initial_params(), settings);
    RefineOutcome out{h0, lm.initial_cost, lm.cost, lm.iterations, lm.converged};
    if (lm.cost < lm.initial_cost) {
        out.h = Homography(problem.full_matrix(lm.params));
    }
    return out;
}

}  // namespace calibrefine
