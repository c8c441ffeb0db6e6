#include <gtest/gtest.h>

#include "support.hpp"

using namespace calibrefine;

namespace {

/// Dense exact detections from `truth`, spread over a 60 m patch.
auto dense_scene(std::uint64_t seed, const Homography& truth, std::size_t n = 60)
    -> std::pair<std::vector<PlanePoint>, std::vector<PixelPoint>> {
    std::mt19937_64 rng(seed);
    auto lidar = support::random_plane_points(rng, n);
    std::vector<PixelPoint> camera;
    for (const auto& p : lidar) camera.push_back(project(truth, p));
    return {lidar, camera};
}

}  // namespace

TEST(ImplicitPairs, ExactOverlay) {
    const auto h = support::random_homography(1);
    const auto [lidar, camera] = dense_scene(1, h, 20);
    const auto pairs = implicit_pairs(h, lidar, camera, {});
    EXPECT_EQ(pairs.size(), 20u);
    for (const auto& c : pairs) {
        EXPECT_LT(residual(h, c), 1e-9);
        EXPECT_EQ(c.source, PairSource::GreedyMatched);
    }
}

TEST(ImplicitPairs, NothingWithinGate) {
    const std::vector<PlanePoint> lidar{{0, 0}};
    const std::vector<PixelPoint> camera{{500, 500}};
    EXPECT_TRUE(implicit_pairs(Homography::identity(), lidar, camera, {}).empty());
}

TEST(ImplicitPairs, Injection) {
    const std::vector<PlanePoint> lidar{{10, 10}, {12, 10}};
    const std::vector<PixelPoint> camera{{11, 10}};
    EXPECT_EQ(implicit_pairs(Homography::identity(), lidar, camera, {}).size(), 1u);
}

TEST(Correction, AlreadyOptimal) {
    const auto h = support::random_homography(2);
    const auto [lidar, camera] = dense_scene(2, h);
    const auto r = fit_correction(h, lidar, camera, {});
    EXPECT_LT(max_abs_difference(r.h_delta, Homography::identity()), 1e-8);
    ASSERT_FALSE(r.loss_trace.empty());
    EXPECT_LT(r.loss_trace.front(), 1e-18);
}

TEST(Correction, RecoversTwoPixelShift) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto truth = support::random_homography(10 + s);
        const auto [lidar, camera] = dense_scene(10 + s, truth);
        const auto h = compose(Homography::translation(2.0, 0.0), truth);
        const auto r = fit_correction(h, lidar, camera, {});
        EXPECT_LT(max_abs_difference(r.h_star, truth), 1e-6) << s;
        EXPECT_LT(r.loss_trace.back(), 1e-10);
        EXPECT_LT(max_abs_difference(compose(h, r.h_delta), r.h_star), 1e-12);
    }
}

TEST(Correction, NoisyLossDoesNotIncrease) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto truth = support::random_homography(20 + s);
        auto [lidar, camera] = dense_scene(20 + s, truth);
        for (auto& p : camera) {
            p.u += noise(rng);
            p.v += noise(rng);
        }
        const auto r = fit_correction(compose(Homography::translation(1.0, 1.5), truth), lidar, camera, {});
        for (std::size_t k = 1; k < r.loss_trace.size(); ++k) {
            EXPECT_LE(r.loss_trace[k], r.loss_trace[k - 1]);
        }
        EXPECT_LE(r.loss_trace.back(), r.loss_trace.front());
    }
}

TEST(Correction, InsufficientPairs) {
    const std::vector<PlanePoint> lidar{{0, 0}, {1, 0}};
    const std::vector<PixelPoint> camera{{0, 0}, {1, 0}};
    try {
        fit_correction(Homography::identity(), lidar, camera, {});
        FAIL();
    } catch (const CalibError& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientPairs);
    }
    CorrectionConfig lenient;
    lenient.lenient = true;
    const auto r = fit_correction(Homography::identity(), lidar, camera, lenient);
    EXPECT_FALSE(r.applied);
    EXPECT_EQ(r.h_delta, Homography::identity());
}

TEST(Correction, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0.0, 2.0);
    std::uniform_real_distribution<double> jitter(-1e-3, 1e-3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto truth = support::random_homography(30 + s);
        auto pairs = support::exact_pairs(truth, support::random_plane_points(rng, 25));
        for (auto& c : pairs) c.pixel.u += noise(rng);
        Eigen::Matrix3d delta = Eigen::Matrix3d::Identity();
        for (int k = 0; k < 8; ++k) delta(k / 3, k % 3) += jitter(rng);
        const Eigen::VectorXd g = reprojection_loss_gradient(truth, delta, pairs);
        ASSERT_EQ(g.size(), 8);
        for (int k = 0; k < 8; ++k) {
            Eigen::Matrix3d dp = delta, dm = delta;
            dp(k / 3, k % 3) += 1e-6;
            dm(k / 3, k % 3) -= 1e-6;
            const double fd = (reprojection_loss(truth, dp, pairs) - reprojection_loss(truth, dm, pairs)) / 2e-6;
            EXPECT_LT(std::abs(fd - g(k)), 1e-4 * std::max(1.0, std::abs(g(k)))) << s << " " << k;
        }
    }
}

TEST(Correction, IdentityFixedPointStep) {
    std::mt19937_64 rng(5);
    const auto h = support::random_homography(5);
    const auto pairs = support::exact_pairs(h, support::random_plane_points(rng, 30));
    const auto problem = correction_problem(h, Eigen::Matrix3d::Identity(), pairs);
    Eigen::VectorXd r;
    Eigen::MatrixXd jac;
    ASSERT_TRUE(problem.evaluate(problem.initial_params(), r, &jac));
    EXPECT_LT(damped_step(jac, r, 1e-3).norm(), 1e-8);
}

TEST(Correction, FramesAreMatchedIndependently) {
    const auto h = support::random_homography(6);
    const PlanePoint p{0.0, 0.0};
    const auto px = project(h, p);
    // Frame 0 has the LiDAR point, frame 1 the camera point: no cross-frame pairing.
    const std::vector<Frame> frames{{0, {p}, {}}, {1, {}, {px}}};
    EXPECT_TRUE(implicit_pairs(h, frames, {}).empty());
}
