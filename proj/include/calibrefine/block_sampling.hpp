#pragma once

// Spatially diversified selection of correspondences over a checkerboard of image blocks.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"

namespace calibrefine {

enum class BlockParity { Even, Odd };

struct BlockIndex {
    int ix = 0;
    int iy = 0;

    friend auto operator==(const BlockIndex&, const BlockIndex&) -> bool = default;
};

struct BlockGrid {
    int image_width = 1920;
    int image_height = 1080;
    int blocks_x = 5;
    int blocks_y = 5;
    BlockParity parity = BlockParity::Even;

    void validate() const {
        if (image_width <= 0 || image_height <= 0) {
            throw CalibError(ErrorCode::InvalidConfig, "grid image size must be positive");
        }
        if (blocks_x <= 0 || blocks_y <= 0) {
            throw CalibError(ErrorCode::InvalidConfig, "grid block counts must be positive");
        }
        if (blocks_x * blocks_y < 4) {
            throw CalibError(ErrorCode::InvalidConfig, "grid needs at least 4 blocks");
        }
    }

    [[nodiscard]] auto block_width() const -> double {
        return static_cast<double>(image_width) / blocks_x;
    }
    [[nodiscard]] auto block_height() const -> double {
        return static_cast<double>(image_height) / blocks_y;
    }
    [[nodiscard]] auto block_diagonal() const -> double {
        return std::hypot(block_width(), block_height());
    }
    [[nodiscard]] auto block_count() const -> int { return blocks_x * blocks_y; }

    [[nodiscard]] auto center(BlockIndex b) const -> PixelPoint {
        return {(b.ix + 0.5) * block_width(), (b.iy + 0.5) * block_height()};
    }

    [[nodiscard]] auto retained(BlockIndex b) const -> bool {
        const int phase = parity == BlockParity::Even ? 0 : 1;
        return (b.ix + b.iy) % 2 == phase;
    }

    [[nodiscard]] auto linear(BlockIndex b) const -> int { return b.iy * blocks_x + b.ix; }

    [[nodiscard]] auto retained_block_count() const -> int {
        int count = 0;
        for (int iy = 0; iy < blocks_y; ++iy) {
            for (int ix = 0; ix < blocks_x; ++ix) {
                count += retained({ix, iy}) ? 1 : 0;
            }
        }
        return count;
    }
};

/// Block containing p, or nullopt when p lies outside [0, width) x [0, height).
inline auto block_of(const BlockGrid& grid, const PixelPoint& p) -> std::optional<BlockIndex> {
    if (!(p.u >= 0.0 && p.u < grid.image_width && p.v >= 0.0 && p.v < grid.image_height)) {
        return std::nullopt;
    }
    // Floor semantics; clamp only guards u/bw rounding up to blocks_x just below the edge.
    const int ix = std::min(static_cast<int>(std::floor(p.u / grid.block_width())), grid.blocks_x - 1);
    const int iy = std::min(static_cast<int>(std::floor(p.v / grid.block_height())), grid.blocks_y - 1);
    return BlockIndex{ix, iy};
}

/// Keeps, per retained-parity block, the pair whose camera point is nearest the block
/// center (earliest input wins ties). Output preserves input order.
inline auto block_sample(std::span<const Correspondence> pairs, const BlockGrid& grid)
    -> std::vector<Correspondence> {
    grid.validate();
    std::vector<std::optional<std::size_t>> winner(static_cast<std::size_t>(grid.block_count()));
    std::vector<double> winner_dist(winner.size(), 0.0);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto block = block_of(grid, pairs[i].pixel);
        if (!block || !grid.retained(*block)) {
            continue;
        }
        const auto slot = static_cast<std::size_t>(grid.linear(*block));
        const double d = distance(pairs[i].pixel, grid.center(*block));
        if (!winner[slot] || d < winner_dist[slot]) {
            winner[slot] = i;
            winner_dist[slot] = d;
        }
    }
    std::vector<bool> keep(pairs.size(), false);
    for (const auto& w : winner) {
        if (w) {
            keep[*w] = true;
        }
    }
    std::vector<Correspondence> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (keep[i]) {
            out.push_back(pairs[i]);
        }
    }
    return out;
}

}  // namespace calibrefine
