#include <gtest/gtest.h>

#include "support.hpp"

using namespace calibrefine;

namespace {

auto diag(double a, double b, double c) -> Eigen::Matrix3d {
    return Eigen::Vector3d(a, b, c).asDiagonal();
}

}  // namespace

TEST(Project, IdentityKeepsPoint) {
    const auto p = project(Homography::identity(), {3.0, 4.0});
    EXPECT_DOUBLE_EQ(p.u, 3.0);
    EXPECT_DOUBLE_EQ(p.v, 4.0);
}

TEST(Project, PureScaling) {
    const auto p = project(Homography(diag(2, 2, 1)), {3.0, 4.0});
    EXPECT_NEAR(p.u, 6.0, 1e-12);
    EXPECT_NEAR(p.v, 8.0, 1e-12);
}

TEST(Project, ProjectiveDivision) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(2, 0) = 0.1;
    const auto p = project(Homography(m), {1.0, 0.0});
    EXPECT_NEAR(p.u, 1.0 / 1.1, 1e-12);
    EXPECT_NEAR(p.v, 0.0, 1e-12);
}

TEST(Project, PointAtInfinityThrows) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(2, 0) = 1.0;
    try {
        project(Homography(m), {-1.0, 0.0});
        FAIL() << "expected DegenerateProjection";
    } catch (const CalibError& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateProjection);
    }
}

TEST(HomographyType, CanonicalScaleAndSign) {
    const Homography h(-7.0 * diag(2, 3, 1));
    EXPECT_NEAR(h.matrix().norm(), 1.0, 1e-15);
    EXPECT_GT(h(2, 2), 0.0);
    EXPECT_EQ(h, Homography(diag(2, 3, 1)));
}

TEST(HomographyType, ZeroCornerUsesFirstNonzeroSign) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    m(0, 1) = -1.0;
    m(0, 2) = 1.0;
    m(1, 0) = 1.0;
    m(2, 0) = 0.5;
    m(2, 1) = 0.5;
    const Homography h(m);
    EXPECT_GT(h(0, 1), 0.0);
}

TEST(HomographyType, RejectsSingularAndNonFinite) {
    Eigen::Matrix3d singular = Eigen::Matrix3d::Identity();
    singular(2, 2) = 0.0;
    EXPECT_THROW(Homography{singular}, CalibError);
    Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(Homography{bad}, CalibError);
}

TEST(HomographyType, CanonicalizeIsIdempotent) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto h = support::random_homography(s);
        EXPECT_EQ(canonicalize(h.matrix()), h.matrix());
    }
}

TEST(HomographyType, ScaleInvariance) {
    for (double lambda : {2.0, -4.0, 0.5, 1024.0}) {
        const Homography a(diag(2, 3, 1) + Eigen::Matrix3d::Constant(0.01));
        const Homography b(lambda * (diag(2, 3, 1) + Eigen::Matrix3d::Constant(0.01)));
        EXPECT_EQ(a, b) << lambda;
    }
    const Homography a(diag(2, 3, 1) + Eigen::Matrix3d::Constant(0.01));
    const Homography b(10.0 * (diag(2, 3, 1) + Eigen::Matrix3d::Constant(0.01)));
    EXPECT_LT(max_abs_difference(a, b), 1e-12);
}

TEST(Compose, IdentityIsNeutral) {
    const auto h = support::random_homography(3);
    EXPECT_LT(max_abs_difference(compose(h, Homography::identity()), h), 1e-15);
}

TEST(Compose, InversePair) {
    EXPECT_LT(max_abs_difference(compose(Homography(diag(2, 2, 1)), Homography(diag(0.5, 0.5, 1))),
                                 Homography::identity()),
              1e-15);
}

TEST(Compose, TranslationsAdd) {
    const auto h = compose(Homography::translation(3, 0), Homography::translation(0, 4));
    const auto p = project(h, {0.0, 0.0});
    EXPECT_NEAR(p.u, 3.0, 1e-12);
    EXPECT_NEAR(p.v, 4.0, 1e-12);
}

TEST(Compose, MatchesSequentialProjection) {
    std::mt19937_64 rng(11);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = Homography::translation(5.0 * s, -2.0);
        const auto b = support::random_homography(s);
        for (const auto& p : support::random_plane_points(rng, 10)) {
            const Eigen::Vector3d hb = project_homogeneous(b, p);
            const Eigen::Vector3d ab = a.matrix() * hb;
            const auto direct = project(compose(a, b), p);
            EXPECT_NEAR(direct.u, ab(0) / ab(2), 1e-9);
            EXPECT_NEAR(direct.v, ab(1) / ab(2), 1e-9);
        }
    }
}

TEST(Metrics, ExactPairsGiveZero) {
    std::mt19937_64 rng(5);
    const auto h = support::random_homography(5);
    const auto pairs = support::exact_pairs(h, support::random_plane_points(rng, 30));
    const auto r = reprojection_metrics(h, pairs);
    EXPECT_LT(r.aed, 1e-9);
    EXPECT_LT(r.rmse, 1e-9);
}

TEST(Metrics, ThreeFourFive) {
    const std::vector<Correspondence> pairs{{{0, 0}, {3, 4}, 0, PairSource::Manual}};
    const auto r = reprojection_metrics(Homography::identity(), pairs);
    EXPECT_DOUBLE_EQ(r.aed, 5.0);
    EXPECT_DOUBLE_EQ(r.rmse, 5.0);
    EXPECT_EQ(r.n, 1u);
}

TEST(Metrics, ZeroAndTen) {
    const std::vector<Correspondence> pairs{{{0, 0}, {0, 0}, 0, PairSource::Manual},
                                            {{0, 0}, {10, 0}, 0, PairSource::Manual}};
    const auto r = reprojection_metrics(Homography::identity(), pairs);
    EXPECT_DOUBLE_EQ(r.aed, 5.0);
    EXPECT_NEAR(r.rmse, std::sqrt(50.0), 1e-12);
}

TEST(Metrics, EmptyThrows) {
    try {
        reprojection_metrics(Homography::identity(), std::vector<Correspondence>{});
        FAIL();
    } catch (const CalibError& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptySet);
    }
}

TEST(Metrics, PropertyMatchesBruteForce) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 5.0);
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto h = support::random_homography(s);
        auto pairs = support::exact_pairs(h, support::random_plane_points(rng, 1 + s % 40));
        for (auto& c : pairs) {
            c.pixel.u += noise(rng);
            c.pixel.v += noise(rng);
        }
        const auto r = reprojection_metrics(h, pairs);
        const auto b = support::brute_metrics(h.matrix(), pairs);
        EXPECT_NEAR(r.aed, b.aed, 1e-12 * std::max(1.0, b.aed));
        EXPECT_NEAR(r.rmse, b.rmse, 1e-12 * std::max(1.0, b.rmse));
        EXPECT_GE(r.rmse, r.aed);
        ASSERT_EQ(r.per_pair.size(), pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            EXPECT_DOUBLE_EQ(r.per_pair[i], residual(h, pairs[i]));
        }
    }
}

TEST(Metrics, PermutationInvariant) {
    std::mt19937_64 rng(7);
    const auto h = support::random_homography(7);
    auto pairs = support::exact_pairs(h, support::random_plane_points(rng, 25));
    for (auto& c : pairs) c.pixel.u += 1.5;
    const auto a = reprojection_metrics(h, pairs);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const auto b = reprojection_metrics(h, pairs);
    EXPECT_NEAR(a.aed, b.aed, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
}
