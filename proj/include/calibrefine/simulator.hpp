#pragma once

// Ground-truth scene generator and correspondence oracle.
//
// Objects move on piecewise-linear ground-plane tracks. The camera sees whatever projects
// inside the image, the LiDAR sees a disc around its origin, so some objects are visible to
// one sensor only. Every random draw is seeded from SceneConfig::seed; per-frame draws use a
// stream keyed by the frame index, so frames are reproducible in any consumption order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/iterative_refine.hpp"
#include "calibrefine/ransac.hpp"

namespace calibrefine::sim {

struct SceneConfig {
    int image_width = 1920;
    int image_height = 1080;
    int n_objects = 12;
    int n_frames = 600;
    double pixel_noise_sigma = 0.5;   // px
    double lidar_noise_sigma = 0.05;  // m
    double camera_dropout = 0.1;
    double lidar_dropout = 0.1;
    double clutter_per_frame = 2.0;  // Poisson mean, per sensor
    double oracle_error_rate = 0.02;
    std::uint64_t seed = 0;
    bool projective = true;  // false: h31 = h32 = 0

    // Scene geometry (metres unless noted).
    double patch_half_extent = 30.0;  // central patch guaranteed inside the image
    double world_margin = 0.1;        // roaming box = camera footprint grown by this fraction
    double lidar_range_fraction = 0.85;  // LiDAR disc radius / farthest footprint corner
    double frame_dt = 0.1;  // s

    void validate() const {
        auto fail = [](const char* what) { throw CalibError(ErrorCode::InvalidConfig, what); };
        if (image_width <= 0 || image_height <= 0) fail("scene.image_width/image_height must be positive");
        if (n_objects < 0) fail("scene.n_objects must be >= 0");
        if (n_frames < 1) fail("scene.n_frames must be >= 1");
        if (!(pixel_noise_sigma >= 0.0)) fail("scene.pixel_noise_sigma must be >= 0");
        if (!(lidar_noise_sigma >= 0.0)) fail("scene.lidar_noise_sigma must be >= 0");
        auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!prob(camera_dropout)) fail("scene.camera_dropout must be in [0, 1]");
        if (!prob(lidar_dropout)) fail("scene.lidar_dropout must be in [0, 1]");
        if (!prob(oracle_error_rate)) fail("scene.oracle_error_rate must be in [0, 1]");
        if (!(clutter_per_frame >= 0.0)) fail("scene.clutter_per_frame must be >= 0");
        if (!(patch_half_extent > 0.0)) fail("scene.patch_half_extent must be > 0");
        if (!(world_margin >= 0.0)) fail("scene.world_margin must be >= 0");
        if (!(lidar_range_fraction > 0.0)) fail("scene.lidar_range_fraction must be > 0");
        if (!(frame_dt > 0.0)) fail("scene.frame_dt must be > 0");
    }
};

struct ObjectTruth {
    std::uint32_t object_id = 0;
    PlanePoint plane;
    PixelPoint pixel;  // exactly project(h_true, plane)
    bool in_camera_view = false;
    bool in_lidar_view = false;
    bool visible_to_camera = false;  // in view and not dropped
    bool visible_to_lidar = false;
};

/// Axis-aligned ground-plane box objects move in.
struct WorldBox {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;
};

struct GroundTruth {
    Homography h_true;
    WorldBox world;
    double lidar_range = 0.0;  // disc around the plane origin
    std::vector<std::vector<ObjectTruth>> frames;  // indexed like the frame stream
};

/// Hidden identity of a detection; nullopt marks clutter.
using DetectionLabel = std::optional<std::uint32_t>;

struct SimFrame {
    Frame frame;  // the only part calibrators see
    std::vector<DetectionLabel> lidar_labels;
    std::vector<DetectionLabel> camera_labels;
};

struct Simulation {
    std::vector<SimFrame> frames;
    GroundTruth truth;
};

namespace detail {

inline auto stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
    -> std::uint64_t {
    return mix64(mix64(seed ^ mix64(stream)) + index);
}

inline constexpr std::uint64_t k_stream_homography = 0x484f4d4fULL;
inline constexpr std::uint64_t k_stream_tracks = 0x5452434bULL;
inline constexpr std::uint64_t k_stream_frame = 0x46524d45ULL;
inline constexpr std::uint64_t k_stream_oracle = 0x4f52434cULL;

inline auto inside_image(const PixelPoint& p, int width, int height) -> bool {
    return p.u >= 0.0 && p.u < width && p.v >= 0.0 && p.v < height;
}

}  // namespace detail

/// Condition number of h expressed between unit-scaled coordinates: the central patch mapped
/// to [-1, 1]^2 and the image to [-1, 1] along its longer side. This is the conditioning the
/// normalized DLT actually sees; raw pixel/metre units inflate it with the translation.
inline auto normalized_condition(const Homography& h, const SceneConfig& cfg) -> double {
    Eigen::Matrix3d plane_to_unit = Eigen::Matrix3d::Identity();
    plane_to_unit(0, 0) = plane_to_unit(1, 1) = 1.0 / cfg.patch_half_extent;
    const double s = 2.0 / std::max(cfg.image_width, cfg.image_height);
    Eigen::Matrix3d image_to_unit = Eigen::Matrix3d::Identity();
    image_to_unit(0, 0) = image_to_unit(1, 1) = s;
    image_to_unit(0, 2) = -s * 0.5 * cfg.image_width;
    image_to_unit(1, 2) = -s * 0.5 * cfg.image_height;
    const Eigen::Matrix3d m = image_to_unit * h.matrix() * plane_to_unit.inverse();
    // Singular values are the square roots of the eigenvalues of m^T m (ascending here).
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m.transpose() * m);
    return std::sqrt(eig.eigenvalues()(2) / eig.eigenvalues()(0));
}

inline auto patch_inside_image(const Homography& h, const SceneConfig& cfg) -> bool {
    const double e = cfg.patch_half_extent;
    for (const auto& corner : {PlanePoint{-e, -e}, PlanePoint{e, -e}, PlanePoint{e, e}, PlanePoint{-e, e}}) {
        double w = 0.0;
        const PixelPoint p = project_raw(h.matrix(), corner, w);
        if (!(w > k_w_epsilon) || !detail::inside_image(p, cfg.image_width, cfg.image_height)) {
            return false;
        }
    }
    return true;
}

/// Seeded rotation, anisotropic scale, optional reflection, translation and small projective
/// terms, resampled until the central patch maps inside the image with condition < 1e4.
inline auto random_homography(std::uint64_t seed, const SceneConfig& cfg) -> Homography {
    const double base_scale = std::min(cfg.image_width, cfg.image_height) / (6.0 * cfg.patch_half_extent);
    for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
        std::mt19937_64 rng(detail::stream_seed(seed, detail::k_stream_homography, attempt));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double angle = (2.0 * unit(rng) - 1.0) * std::numbers::pi;
        const double sx = base_scale * (0.5 + 1.5 * unit(rng));
        const double sy = base_scale * (0.5 + 1.5 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
        const double tx = 0.5 * cfg.image_width + (unit(rng) - 0.5) * 0.4 * cfg.image_width;
        const double ty = 0.5 * cfg.image_height + (unit(rng) - 0.5) * 0.4 * cfg.image_height;
        const double p1 = cfg.projective ? (2.0 * unit(rng) - 1.0) * 1e-3 : 0.0;
        const double p2 = cfg.projective ? (2.0 * unit(rng) - 1.0) * 1e-3 : 0.0;

        Eigen::Matrix3d affine = Eigen::Matrix3d::Identity();
        affine(0, 0) = std::cos(angle) * sx;
        affine(0, 1) = -std::sin(angle) * sy;
        affine(1, 0) = std::sin(angle) * sx;
        affine(1, 1) = std::cos(angle) * sy;
        affine(0, 2) = tx;
        affine(1, 2) = ty;
        Eigen::Matrix3d perspective = Eigen::Matrix3d::Identity();
        perspective(2, 0) = p1;
        perspective(2, 1) = p2;
        const Homography h(affine * perspective);
        if (patch_inside_image(h, cfg) && normalized_condition(h, cfg) < 1e4) {
            return h;
        }
    }
    throw CalibError(ErrorCode::InvalidConfig, "could not sample a homography for this scene");
}

/// Camera footprint on the ground (pre-image of the image corners), grown by the margin, and
/// the LiDAR disc radius covering `lidar_range_fraction` of the farthest footprint corner.
inline auto scene_extent(const Homography& h, const SceneConfig& cfg) -> std::pair<WorldBox, double> {
    const Homography inv = h.inverse();
    const double w = cfg.image_width;
    const double ht = cfg.image_height;
    WorldBox box{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                 std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    double farthest = 0.0;
    for (const auto& corner : {PlanePoint{0.0, 0.0}, PlanePoint{w, 0.0}, PlanePoint{w, ht}, PlanePoint{0.0, ht}}) {
        // The inverse maps pixels to the plane; reuse the plane-point projection.
        const PixelPoint g = project(inv, corner);
        box.x_min = std::min(box.x_min, g.u);
        box.x_max = std::max(box.x_max, g.u);
        box.y_min = std::min(box.y_min, g.v);
        box.y_max = std::max(box.y_max, g.v);
        farthest = std::max(farthest, std::hypot(g.u, g.v));
    }
    const double gx = cfg.world_margin * (box.x_max - box.x_min);
    const double gy = cfg.world_margin * (box.y_max - box.y_min);
    box = {box.x_min - gx, box.x_max + gx, box.y_min - gy, box.y_max + gy};
    return {box, cfg.lidar_range_fraction * farthest};
}

namespace detail {

// Positions of every object at every frame: tracks[f][obj].
inline auto generate_tracks(const SceneConfig& cfg, const WorldBox& box)
    -> std::vector<std::vector<PlanePoint>> {
    std::mt19937_64 rng(stream_seed(cfg.seed, k_stream_tracks));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> turn(0.0, 0.6);
    // Speeds scale with the box so coverage does not depend on the map's pixel scale.
    const double extent = std::max(box.x_max - box.x_min, box.y_max - box.y_min);
    const auto n_obj = static_cast<std::size_t>(cfg.n_objects);

    struct Mover {
        double x, y, heading, speed;
        int frames_left;
    };
    std::vector<Mover> movers(n_obj);
    for (auto& m : movers) {
        m.x = box.x_min + unit(rng) * (box.x_max - box.x_min);
        m.y = box.y_min + unit(rng) * (box.y_max - box.y_min);
        m.heading = (2.0 * unit(rng) - 1.0) * std::numbers::pi;
        m.speed = extent * (0.02 + 0.06 * unit(rng));  // box widths per second
        m.frames_left = 20 + static_cast<int>(60.0 * unit(rng));
    }
    std::vector<std::vector<PlanePoint>> tracks(static_cast<std::size_t>(cfg.n_frames));
    for (auto& positions : tracks) {
        positions.reserve(n_obj);
        for (auto& m : movers) {
            positions.push_back({m.x, m.y});
            if (--m.frames_left <= 0) {
                m.heading += turn(rng);
                m.frames_left = 20 + static_cast<int>(60.0 * unit(rng));
            }
            m.x += m.speed * cfg.frame_dt * std::cos(m.heading);
            m.y += m.speed * cfg.frame_dt * std::sin(m.heading);
            // Reflect off the world boundary.
            if (m.x < box.x_min || m.x > box.x_max) {
                m.x = std::clamp(m.x, box.x_min, box.x_max);
                m.heading = std::numbers::pi - m.heading;
            }
            if (m.y < box.y_min || m.y > box.y_max) {
                m.y = std::clamp(m.y, box.y_min, box.y_max);
                m.heading = -m.heading;
            }
        }
    }
    return tracks;
}

}  // namespace detail

/// Synthesizes one frame from the object positions; deterministic in (cfg, index).
inline auto synthesize_frame(const SceneConfig& cfg, const Homography& h_true,
                             double lidar_range, std::span<const PlanePoint> positions,
                             std::size_t index,
                             std::vector<ObjectTruth>& truth) -> SimFrame {
    std::mt19937_64 rng(detail::stream_seed(cfg.seed, detail::k_stream_frame, index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> pixel_noise(0.0, 1.0);

    struct Detection {
        double a, b;
        DetectionLabel label;
    };
    std::vector<Detection> lidar;
    std::vector<Detection> camera;
    truth.clear();
    for (std::size_t obj = 0; obj < positions.size(); ++obj) {
        ObjectTruth t;
        t.object_id = static_cast<std::uint32_t>(obj);
        t.plane = positions[obj];
        double w = 0.0;
        t.pixel = project_raw(h_true.matrix(), t.plane, w);
        t.in_camera_view = w > k_w_epsilon && detail::inside_image(t.pixel, cfg.image_width, cfg.image_height);
        t.in_lidar_view = std::hypot(t.plane.x, t.plane.y) <= lidar_range;
        // Fixed draw count per object keeps the stream aligned whatever is visible.
        const double cam_keep = unit(rng);
        const double lidar_keep = unit(rng);
        const double nu = pixel_noise(rng);
        const double nv = pixel_noise(rng);
        const double nx = pixel_noise(rng);
        const double ny = pixel_noise(rng);
        t.visible_to_camera = t.in_camera_view && cam_keep >= cfg.camera_dropout;
        t.visible_to_lidar = t.in_lidar_view && lidar_keep >= cfg.lidar_dropout;
        if (t.visible_to_camera) {
            camera.push_back({t.pixel.u + cfg.pixel_noise_sigma * nu,
                              t.pixel.v + cfg.pixel_noise_sigma * nv, t.object_id});
        }
        if (t.visible_to_lidar) {
            lidar.push_back({t.plane.x + cfg.lidar_noise_sigma * nx,
                             t.plane.y + cfg.lidar_noise_sigma * ny, t.object_id});
        }
        truth.push_back(t);
    }

    std::poisson_distribution<int> clutter(cfg.clutter_per_frame);
    const int camera_clutter = cfg.clutter_per_frame > 0.0 ? clutter(rng) : 0;
    const int lidar_clutter = cfg.clutter_per_frame > 0.0 ? clutter(rng) : 0;
    for (int k = 0; k < camera_clutter; ++k) {
        const double u = unit(rng) * cfg.image_width;
        const double v = unit(rng) * cfg.image_height;
        camera.push_back({u, v, std::nullopt});
    }
    for (int k = 0; k < lidar_clutter; ++k) {
        const double r = lidar_range * std::sqrt(unit(rng));
        const double a = 2.0 * std::numbers::pi * unit(rng);
        lidar.push_back({r * std::cos(a), r * std::sin(a), std::nullopt});
    }
    std::shuffle(lidar.begin(), lidar.end(), rng);
    std::shuffle(camera.begin(), camera.end(), rng);

    SimFrame out;
    out.frame.frame_id = index;
    for (const auto& d : lidar) {
        out.frame.lidar_centers.push_back({d.a, d.b});
        out.lidar_labels.push_back(d.label);
    }
    for (const auto& d : camera) {
        out.frame.camera_centers.push_back({d.a, d.b});
        out.camera_labels.push_back(d.label);
    }
    return out;
}

inline auto generate(const SceneConfig& cfg) -> Simulation {
    cfg.validate();
    Simulation sim;
    sim.truth.h_true = random_homography(cfg.seed, cfg);
    std::tie(sim.truth.world, sim.truth.lidar_range) = scene_extent(sim.truth.h_true, cfg);
    const auto tracks = detail::generate_tracks(cfg, sim.truth.world);
    sim.frames.reserve(tracks.size());
    sim.truth.frames.resize(tracks.size());
    for (std::size_t f = 0; f < tracks.size(); ++f) {
        sim.frames.push_back(synthesize_frame(cfg, sim.truth.h_true, sim.truth.lidar_range, tracks[f], f,
                                          sim.truth.frames[f]));
    }
    return sim;
}

/// The calibration-facing view: detections only, no identities.
inline auto frames_view(std::span<const SimFrame> frames) -> std::vector<Frame> {
    std::vector<Frame> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        out.push_back(f.frame);
    }
    return out;
}

struct OraclePair {
    Correspondence pair;
    std::uint32_t object_id = 0;
    bool corrupted = false;
};

/// Stand-in for a learned cross-sensor object discriminator: reports true-identity pairs for
/// objects detected by both sensors; with probability error_rate a pair's camera endpoint is
/// swapped for another camera detection (object or clutter) of the same frame.
inline auto oracle_pairs_labeled(const SimFrame& frame, double error_rate, std::uint64_t seed)
    -> std::vector<OraclePair> {
    if (!(error_rate >= 0.0 && error_rate <= 1.0)) {
        throw CalibError(ErrorCode::InvalidConfig, "oracle error rate must be in [0, 1]");
    }
    std::mt19937_64 rng(detail::stream_seed(seed, detail::k_stream_oracle, frame.frame.frame_id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<OraclePair> out;
    for (std::size_t li = 0; li < frame.lidar_labels.size(); ++li) {
        const auto& id = frame.lidar_labels[li];
        if (!id) {
            continue;
        }
        const auto cam = std::find(frame.camera_labels.begin(), frame.camera_labels.end(), id);
        if (cam == frame.camera_labels.end()) {
            continue;
        }
        auto ci = static_cast<std::size_t>(cam - frame.camera_labels.begin());
        OraclePair op;
        op.object_id = *id;
        const double draw = unit(rng);
        const double pick = unit(rng);
        const std::size_t others = frame.camera_labels.size() - 1;
        if (draw < error_rate && others > 0) {
            auto k = std::min(static_cast<std::size_t>(pick * static_cast<double>(others)), others - 1);
            ci = k >= ci ? k + 1 : k;
            op.corrupted = true;
        }
        op.pair = {frame.frame.lidar_centers[li], frame.frame.camera_centers[ci],
                   frame.frame.frame_id, PairSource::Oracle};
        out.push_back(op);
    }
    std::sort(out.begin(), out.end(),
              [](const OraclePair& a, const OraclePair& b) { return a.object_id < b.object_id; });
    return out;
}

inline auto oracle_pairs(const SimFrame& frame, double error_rate, std::uint64_t seed)
    -> std::vector<Correspondence> {
    std::vector<Correspondence> out;
    for (const auto& op : oracle_pairs_labeled(frame, error_rate, seed)) {
        out.push_back(op.pair);
    }
    return out;
}

/// Noise-free (true plane point, true pixel) pairs for objects inside the camera view.
inline auto ground_truth_pairs(const GroundTruth& truth, std::span<const std::size_t> frame_indices)
    -> std::vector<Correspondence> {
    std::vector<Correspondence> out;
    for (auto f : frame_indices) {
        for (const auto& t : truth.frames.at(f)) {
            if (t.in_camera_view) {
                out.push_back({t.plane, t.pixel, f, PairSource::Manual});
            }
        }
    }
    return out;
}

}  // namespace calibrefine::sim
