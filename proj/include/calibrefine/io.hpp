#pragma once

// Readers and writers for every on-disk format, plus the run configuration. Parsers are
// strict: unknown keys and malformed values are rejected.

#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "calibrefine/correction_refine.hpp"
#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/iterative_refine.hpp"
#include "calibrefine/pipeline.hpp"
#include "calibrefine/simulator.hpp"

namespace calibrefine::io {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Files

inline auto read_text(const std::filesystem::path& path) -> std::string {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CalibError(ErrorCode::Io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CalibError(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw CalibError(ErrorCode::Io, "write failed for " + path.string());
    }
}

inline auto parse_json(std::string_view text, const std::string& what) -> json {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw CalibError(ErrorCode::InvalidInput, what + ": " + e.what());
    }
}

/// Shortest round-trip decimal form; "nan" for NaN.
inline auto format_number(double v) -> std::string {
    if (std::isnan(v)) {
        return "nan";
    }
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

// ---------------------------------------------------------------------------------------------
// Points and matrices

namespace detail {

inline auto as_pair(const json& j, const std::string& what) -> std::array<double, 2> {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw CalibError(ErrorCode::InvalidInput, what + ": expected [a, b]");
    }
    const std::array<double, 2> out{j[0].get<double>(), j[1].get<double>()};
    if (!std::isfinite(out[0]) || !std::isfinite(out[1])) {
        throw CalibError(ErrorCode::InvalidInput, what + ": non-finite coordinate");
    }
    return out;
}

inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where, ErrorCode code) {
    if (!j.is_object()) {
        throw CalibError(code, where + ": expected an object");
    }
    for (const auto& item : j.items()) {
        bool known = false;
        for (auto a : allowed) {
            known = known || item.key() == a;
        }
        if (!known) {
            throw CalibError(code, where + ": unknown key '" + item.key() + "'");
        }
    }
}

}  // namespace detail

inline auto to_json(const Homography& h) -> json {
    json rows = json::array();
    for (int r = 0; r < 3; ++r) {
        rows.push_back({h(r, 0), h(r, 1), h(r, 2)});
    }
    return json{{"h", rows}};
}

/// Accepts any nonzero scale and re-canonicalizes.
inline auto homography_from_json(const json& j) -> Homography {
    detail::require_keys(j, {"h"}, "homography", ErrorCode::InvalidInput);
    const json& rows = j.at("h");
    if (!rows.is_array() || rows.size() != 3) {
        throw CalibError(ErrorCode::InvalidInput, "homography: 'h' must be 3 rows");
    }
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) {
        const json& row = rows[static_cast<std::size_t>(r)];
        if (!row.is_array() || row.size() != 3) {
            throw CalibError(ErrorCode::InvalidInput, "homography: each row needs 3 entries");
        }
        for (int c = 0; c < 3; ++c) {
            const json& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) {
                throw CalibError(ErrorCode::InvalidInput, "homography: non-numeric entry");
            }
            m(r, c) = v.get<double>();
        }
    }
    try {
        return Homography(m);
    } catch (const CalibError& e) {
        throw CalibError(ErrorCode::InvalidInput, std::string("homography: ") + e.what());
    }
}

inline void write_homography(const std::filesystem::path& path, const Homography& h) {
    write_text(path, to_json(h).dump(2) + "\n");
}

inline auto read_homography(const std::filesystem::path& path) -> Homography {
    return homography_from_json(parse_json(read_text(path), path.string()));
}

// ---------------------------------------------------------------------------------------------
// Frame streams (JSON Lines)

inline auto to_json(const Frame& f) -> json {
    json lidar = json::array();
    for (const auto& p : f.lidar_centers) {
        lidar.push_back({p.x, p.y});
    }
    json camera = json::array();
    for (const auto& p : f.camera_centers) {
        camera.push_back({p.u, p.v});
    }
    return json{{"frame_id", f.frame_id}, {"lidar", lidar}, {"camera", camera}};
}

inline auto frame_from_json(const json& j) -> Frame {
    detail::require_keys(j, {"frame_id", "lidar", "camera"}, "frame", ErrorCode::InvalidInput);
    if (!j.contains("frame_id") || !j["frame_id"].is_number_unsigned()) {
        throw CalibError(ErrorCode::InvalidInput, "frame: 'frame_id' must be a non-negative integer");
    }
    Frame f;
    f.frame_id = j["frame_id"].get<std::uint64_t>();
    const std::string where = "frame " + std::to_string(f.frame_id);
    for (const char* key : {"lidar", "camera"}) {
        if (!j.contains(key) || !j[key].is_array()) {
            throw CalibError(ErrorCode::InvalidInput, where + ": '" + key + "' must be an array");
        }
    }
    for (const auto& p : j["lidar"]) {
        const auto xy = detail::as_pair(p, where + " lidar");
        f.lidar_centers.push_back({xy[0], xy[1]});
    }
    for (const auto& p : j["camera"]) {
        const auto uv = detail::as_pair(p, where + " camera");
        f.camera_centers.push_back({uv[0], uv[1]});
    }
    return f;
}

inline auto frames_to_jsonl(std::span<const Frame> frames) -> std::string {
    std::string out;
    for (const auto& f : frames) {
        out += to_json(f).dump();
        out += '\n';
    }
    return out;
}

inline auto frames_from_jsonl(std::string_view text) -> std::vector<Frame> {
    std::vector<Frame> frames;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line_no;
        const auto line = text.substr(start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            continue;
        }
        frames.push_back(frame_from_json(parse_json(line, "frames line " + std::to_string(line_no))));
    }
    return frames;
}

inline void write_frames(const std::filesystem::path& path, std::span<const Frame> frames) {
    write_text(path, frames_to_jsonl(frames));
}

inline auto read_frames(const std::filesystem::path& path) -> std::vector<Frame> {
    return frames_from_jsonl(read_text(path));
}

// ---------------------------------------------------------------------------------------------
// Correspondence sets: {"frame_ids": [...], "lidar": [[x, y], ...], "pixel": [[u, v], ...],
// "sources": [...]}. frame_ids and sources are optional; lidar and pixel must match in length.

inline auto source_from_string(std::string_view s) -> PairSource {
    if (s == "oracle") return PairSource::Oracle;
    if (s == "greedy") return PairSource::GreedyMatched;
    if (s == "manual") return PairSource::Manual;
    throw CalibError(ErrorCode::InvalidInput, "unknown pair source '" + std::string(s) + "'");
}

inline auto pairs_to_json(std::span<const Correspondence> pairs) -> json {
    json ids = json::array();
    json lidar = json::array();
    json pixel = json::array();
    json sources = json::array();
    for (const auto& c : pairs) {
        ids.push_back(c.frame_id);
        lidar.push_back({c.lidar.x, c.lidar.y});
        pixel.push_back({c.pixel.u, c.pixel.v});
        sources.push_back(to_string(c.source));
    }
    return json{{"frame_ids", ids}, {"lidar", lidar}, {"pixel", pixel}, {"sources", sources}};
}

inline auto pairs_from_json(const json& j) -> std::vector<Correspondence> {
    detail::require_keys(j, {"frame_ids", "lidar", "pixel", "sources"}, "pairs", ErrorCode::InvalidInput);
    if (!j.contains("lidar") || !j["lidar"].is_array() || !j.contains("pixel") || !j["pixel"].is_array()) {
        throw CalibError(ErrorCode::InvalidInput, "pairs: 'lidar' and 'pixel' arrays are required");
    }
    const std::size_t n = j["lidar"].size();
    if (j["pixel"].size() != n) {
        throw CalibError(ErrorCode::InvalidInput,
                         "pairs: " + std::to_string(n) + " lidar points but " +
                             std::to_string(j["pixel"].size()) + " pixel points");
    }
    for (const char* key : {"frame_ids", "sources"}) {
        if (j.contains(key) && (!j[key].is_array() || j[key].size() != n)) {
            throw CalibError(ErrorCode::InvalidInput,
                             std::string("pairs: '") + key + "' must match the pair count");
        }
    }
    std::vector<Correspondence> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xy = detail::as_pair(j["lidar"][i], "pair " + std::to_string(i) + " lidar");
        const auto uv = detail::as_pair(j["pixel"][i], "pair " + std::to_string(i) + " pixel");
        out[i].lidar = {xy[0], xy[1]};
        out[i].pixel = {uv[0], uv[1]};
        if (j.contains("frame_ids")) {
            if (!j["frame_ids"][i].is_number_unsigned()) {
                throw CalibError(ErrorCode::InvalidInput, "pairs: frame ids must be non-negative integers");
            }
            out[i].frame_id = j["frame_ids"][i].get<std::uint64_t>();
        }
        if (j.contains("sources")) {
            if (!j["sources"][i].is_string()) {
                throw CalibError(ErrorCode::InvalidInput, "pairs: sources must be strings");
            }
            out[i].source = source_from_string(j["sources"][i].get<std::string>());
        }
    }
    return out;
}

inline void write_pairs(const std::filesystem::path& path, std::span<const Correspondence> pairs) {
    write_text(path, pairs_to_json(pairs).dump() + "\n");
}

inline auto read_pairs(const std::filesystem::path& path) -> std::vector<Correspondence> {
    return pairs_from_json(parse_json(read_text(path), path.string()));
}

// ---------------------------------------------------------------------------------------------
// Ground-truth sidecar

inline auto to_json(const sim::GroundTruth& gt) -> json {
    json frames = json::array();
    for (std::size_t f = 0; f < gt.frames.size(); ++f) {
        json objects = json::array();
        for (const auto& t : gt.frames[f]) {
            objects.push_back({{"id", t.object_id},
                               {"plane", {t.plane.x, t.plane.y}},
                               {"pixel", {t.pixel.u, t.pixel.v}},
                               {"in_camera_view", t.in_camera_view},
                               {"in_lidar_view", t.in_lidar_view},
                               {"visible_to_camera", t.visible_to_camera},
                               {"visible_to_lidar", t.visible_to_lidar}});
        }
        frames.push_back({{"frame_id", f}, {"objects", objects}});
    }
    return json{{"h_true", to_json(gt.h_true)},
                {"world", {gt.world.x_min, gt.world.x_max, gt.world.y_min, gt.world.y_max}},
                {"lidar_range", gt.lidar_range},
                {"frames", frames}};
}

inline auto read_ground_truth_homography(const std::filesystem::path& path) -> Homography {
    const json j = parse_json(read_text(path), path.string());
    if (!j.is_object() || !j.contains("h_true")) {
        throw CalibError(ErrorCode::InvalidInput, path.string() + ": missing 'h_true'");
    }
    return homography_from_json(j["h_true"]);
}

// ---------------------------------------------------------------------------------------------
// Reports and logs

inline auto to_string(CheckpointStatus s) -> std::string {
    switch (s) {
        case CheckpointStatus::Evaluated: return "evaluated";
        case CheckpointStatus::SkippedInsufficient: return "skipped_insufficient";
        case CheckpointStatus::SkippedConsensus: return "skipped_consensus";
    }
    return "evaluated";
}

/// frame_id,err_new,err_best,updated: one row per checkpoint.
inline auto checkpoints_to_csv(std::span<const CheckpointRecord> records) -> std::string {
    std::string out = "frame_id,err_new,err_best,updated\n";
    for (const auto& r : records) {
        out += std::to_string(r.frame_id) + "," + format_number(r.err_new) + "," +
               format_number(r.err_best) + "," + (r.updated ? "yes" : "no") + "\n";
    }
    return out;
}

inline auto to_json(const CheckpointRecord& r) -> json {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    return json{{"frame_id", r.frame_id},       {"frames_seen", r.frames_seen},
                {"err_new", num(r.err_new)},    {"err_best", num(r.err_best)},
                {"updated", r.updated},         {"status", to_string(r.status)},
                {"accumulated", r.accumulated}};
}

inline auto to_json(const ResidualReport& r) -> json {
    return json{{"n", r.n}, {"aed", r.aed}, {"rmse", r.rmse}, {"per_pair", r.per_pair}};
}

/// bucket_lo,bucket_hi,<one count column per named series>. The last row is the overflow
/// bucket [200, inf).
inline auto histogram_to_csv(std::span<const std::string> names,
                             std::span<const std::vector<std::size_t>> series) -> std::string {
    std::string out = "bucket_lo,bucket_hi";
    for (const auto& n : names) {
        out += "," + n;
    }
    out += "\n";
    for (int b = 0; b <= k_histogram_buckets; ++b) {
        out += std::to_string(b) + "," + (b < k_histogram_buckets ? std::to_string(b + 1) : "inf");
        for (const auto& s : series) {
            out += "," + std::to_string(s.at(static_cast<std::size_t>(b)));
        }
        out += "\n";
    }
    return out;
}

inline auto histogram_to_csv(const std::vector<std::size_t>& counts) -> std::string {
    const std::vector<std::string> names{"count"};
    const std::vector<std::vector<std::size_t>> series{counts};
    return histogram_to_csv(names, series);
}

inline auto to_json(const CorrectionResult& r) -> json {
    return json{{"h_delta", to_json(r.h_delta)},
                {"h_star", to_json(r.h_star)},
                {"loss_trace", r.loss_trace},
                {"pairs_used", r.pairs_used},
                {"applied", r.applied}};
}

inline auto to_json(const PipelineReport& r) -> json {
    json stages = json::array();
    for (const auto& s : r.stage_metrics) {
        stages.push_back({{"stage", to_string(s.stage)},
                          {"aed", s.evaluation.report.aed},
                          {"rmse", s.evaluation.report.rmse},
                          {"n", s.evaluation.report.n},
                          {"histogram", s.evaluation.histogram}});
    }
    json checkpoints = json::array();
    for (const auto& c : r.checkpoints) {
        checkpoints.push_back(to_json(c));
    }
    json out{{"h_coarse", to_json(r.h_coarse)},
             {"h_iterative", to_json(r.h_iterative)},
             {"h_star", to_json(r.h_star)},
             {"stage_metrics", stages},
             {"checkpoints", checkpoints},
             {"correction_loss_trace", r.correction_loss_trace},
             {"oracle_pair_count", r.oracle_pair_count},
             {"coarse_inlier_count", r.coarse_inlier_count},
             {"accumulated_count", r.accumulated_count},
             {"eval_pair_count", r.eval_pair_count},
             {"eval_frame_ids", r.eval_frame_ids}};
    if (r.h_true) {
        out["h_true"] = to_json(*r.h_true);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Run configuration

/// Everything a command needs; image size is shared by scene and grid.
struct RunConfig {
    std::uint64_t seed = 0;
    PipelineConfig pipeline;
};

namespace detail {

template <typename T>
void read_field(const json& section, const char* key, T& target, const std::string& where) {
    if (!section.contains(key)) {
        return;
    }
    const json& v = section[key];
    const std::string name = where + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw CalibError(ErrorCode::InvalidConfig, name + " must be a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw CalibError(ErrorCode::InvalidConfig, name + " must be a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw CalibError(ErrorCode::InvalidConfig, name + " must be an integer");
    } else {
        if (!v.is_number()) throw CalibError(ErrorCode::InvalidConfig, name + " must be a number");
    }
    target = v.get<T>();
}

inline auto section(const json& root, const char* key) -> json {
    return root.contains(key) ? root[key] : json::object();
}

}  // namespace detail

inline auto parse_parity(std::string_view s) -> BlockParity {
    if (s == "even") return BlockParity::Even;
    if (s == "odd") return BlockParity::Odd;
    throw CalibError(ErrorCode::InvalidConfig, "grid.parity must be 'even' or 'odd'");
}

inline auto parse_metric(std::string_view s) -> ErrorMetric {
    if (s == "aed") return ErrorMetric::AED;
    if (s == "rmse") return ErrorMetric::RMSE;
    throw CalibError(ErrorCode::InvalidConfig, "refine.metric must be 'aed' or 'rmse'");
}

/// Copies shared settings (seed, image size, grid) into every section that carries them.
inline void propagate(RunConfig& rc) {
    auto& p = rc.pipeline;
    p.scene.seed = rc.seed;
    p.ransac.seed = rc.seed;
    p.grid.image_width = p.scene.image_width;
    p.grid.image_height = p.scene.image_height;
    p.refine.grid = p.grid;
    p.refine.ransac = p.ransac;
}

inline auto parse_run_config(const json& root) -> RunConfig {
    using detail::read_field;
    using detail::require_keys;
    constexpr auto bad = ErrorCode::InvalidConfig;
    require_keys(root, {"seed", "scene", "ransac", "grid", "refine", "correction", "coarse", "holdout_period"},
                 "config", bad);
    RunConfig rc;
    auto& p = rc.pipeline;
    read_field(root, "seed", rc.seed, "config");
    read_field(root, "holdout_period", p.holdout_period, "config");

    const json scene = detail::section(root, "scene");
    require_keys(scene, {"image_width", "image_height", "n_objects", "n_frames", "pixel_noise_sigma",
                         "lidar_noise_sigma", "camera_dropout", "lidar_dropout", "clutter_per_frame",
                         "oracle_error_rate", "projective", "patch_half_extent", "world_margin",
                         "lidar_range_fraction", "frame_dt"},
                 "scene", bad);
    auto& s = p.scene;
    read_field(scene, "image_width", s.image_width, "scene");
    read_field(scene, "image_height", s.image_height, "scene");
    read_field(scene, "n_objects", s.n_objects, "scene");
    read_field(scene, "n_frames", s.n_frames, "scene");
    read_field(scene, "pixel_noise_sigma", s.pixel_noise_sigma, "scene");
    read_field(scene, "lidar_noise_sigma", s.lidar_noise_sigma, "scene");
    read_field(scene, "camera_dropout", s.camera_dropout, "scene");
    read_field(scene, "lidar_dropout", s.lidar_dropout, "scene");
    read_field(scene, "clutter_per_frame", s.clutter_per_frame, "scene");
    read_field(scene, "oracle_error_rate", s.oracle_error_rate, "scene");
    read_field(scene, "projective", s.projective, "scene");
    read_field(scene, "patch_half_extent", s.patch_half_extent, "scene");
    read_field(scene, "world_margin", s.world_margin, "scene");
    read_field(scene, "lidar_range_fraction", s.lidar_range_fraction, "scene");
    read_field(scene, "frame_dt", s.frame_dt, "scene");

    const json ransac = detail::section(root, "ransac");
    require_keys(ransac, {"max_iterations", "inlier_threshold", "min_inlier_ratio", "confidence"}, "ransac", bad);
    read_field(ransac, "max_iterations", p.ransac.max_iterations, "ransac");
    read_field(ransac, "inlier_threshold", p.ransac.inlier_threshold, "ransac");
    read_field(ransac, "min_inlier_ratio", p.ransac.min_inlier_ratio, "ransac");
    read_field(ransac, "confidence", p.ransac.confidence, "ransac");

    const json grid = detail::section(root, "grid");
    require_keys(grid, {"blocks_x", "blocks_y", "parity"}, "grid", bad);
    read_field(grid, "blocks_x", p.grid.blocks_x, "grid");
    read_field(grid, "blocks_y", p.grid.blocks_y, "grid");
    if (grid.contains("parity")) {
        if (!grid["parity"].is_string()) throw CalibError(bad, "grid.parity must be a string");
        p.grid.parity = parse_parity(grid["parity"].get<std::string>());
    }

    const json refine = detail::section(root, "refine");
    require_keys(refine, {"interval", "gate", "metric", "max_pairs_per_block", "min_separation_fraction",
                          "block_sampling"},
                 "refine", bad);
    read_field(refine, "interval", p.refine.recalib_interval, "refine");
    read_field(refine, "gate", p.refine.gate.max_distance, "refine");
    read_field(refine, "max_pairs_per_block", p.refine.max_pairs_per_block, "refine");
    read_field(refine, "min_separation_fraction", p.refine.min_separation_fraction, "refine");
    read_field(refine, "block_sampling", p.refine.block_sampling, "refine");
    if (refine.contains("metric")) {
        if (!refine["metric"].is_string()) throw CalibError(bad, "refine.metric must be a string");
        p.refine.metric = parse_metric(refine["metric"].get<std::string>());
    }

    const json correction = detail::section(root, "correction");
    require_keys(correction, {"gate", "max_outer_rounds", "min_pairs", "relative_tolerance", "lenient"},
                 "correction", bad);
    read_field(correction, "gate", p.correction.gate.max_distance, "correction");
    read_field(correction, "max_outer_rounds", p.correction.max_outer_rounds, "correction");
    read_field(correction, "min_pairs", p.correction.min_pairs, "correction");
    read_field(correction, "relative_tolerance", p.correction.relative_tolerance, "correction");
    read_field(correction, "lenient", p.correction.lenient, "correction");

    const json coarse = detail::section(root, "coarse");
    require_keys(coarse, {"block_sampling"}, "coarse", bad);
    read_field(coarse, "block_sampling", p.coarse_block_sampling, "coarse");

    propagate(rc);
    return rc;
}

inline auto read_run_config(const std::filesystem::path& path) -> RunConfig {
    const std::string text = read_text(path);
    try {
        return parse_run_config(json::parse(text));
    } catch (const json::parse_error& e) {
        throw CalibError(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

}  // namespace calibrefine::io
