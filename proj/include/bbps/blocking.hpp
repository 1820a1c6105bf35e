#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bbps/common.hpp"

namespace bbps {

/// A rectangular block of state coordinates: spatial rows i..j crossed with
/// time columns l..m, all bounds 1-based and inclusive.
struct Block {
  int id = 0;
  int i = 1, j = 1;  // spatial range
  int l = 1, m = 1;  // temporal range

  int rows() const { return j - i + 1; }
  int cols() const { return m - l + 1; }
  long size() const { return static_cast<long>(rows()) * cols(); }

  bool contains(int row, int col) const {
    return i <= row && row <= j && l <= col && col <= m;
  }

  bool intersects(const Block& o) const {
    return i <= o.j && o.i <= j && l <= o.m && o.l <= m;
  }

  bool same_extent(const Block& o) const {
    return i == o.i && j == o.j && l == o.l && m == o.m;
  }
};

/// The sub-matrix of x covered by block b (copies the entries).
inline Matrix restrict_to(const Matrix& x, const Block& b) {
  return x.block(b.i - 1, b.l - 1, b.rows(), b.cols());
}

/// Mutable view of the entries of x covered by block b.
inline Eigen::Block<Matrix> block_view(Matrix& x, const Block& b) {
  return x.block(b.i - 1, b.l - 1, b.rows(), b.cols());
}
inline Eigen::Block<const Matrix> block_view(const Matrix& x, const Block& b) {
  return x.block(b.i - 1, b.l - 1, b.rows(), b.cols());
}

/// A grouping of block ids into sub-strategies.  For the even-odd sampler
/// the blocks inside each group must be pairwise disjoint.
struct Partition {
  std::vector<std::vector<int>> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
};

/// Outcome of validate_partition: every within-group overlapping pair plus
/// any coverage defect (ids missing from the partition or listed twice).
struct PartitionCheck {
  bool ok = false;
  std::vector<std::pair<int, int>> overlapping;  // within-group block id pairs
  std::vector<int> missing;                      // ids in no group
  std::vector<int> duplicated;                   // ids in more than one slot

  std::string describe() const {
    std::ostringstream out;
    if (ok) return "partition ok";
    for (const auto& [a, b] : overlapping)
      out << "blocks " << a << " and " << b
          << " overlap but share a sub-strategy; ";
    if (!missing.empty()) {
      out << "ids missing from partition:";
      for (int id : missing) out << ' ' << id;
      out << "; ";
    }
    if (!duplicated.empty()) {
      out << "ids listed more than once:";
      for (int id : duplicated) out << ' ' << id;
      out << "; ";
    }
    return out.str();
  }
};

/// A collection of blocks that together cover every coordinate of a d x N
/// state.  Construction computes the coordinate multiplicities (how many
/// blocks cover each entry) and the neighbourhood of each block (all blocks
/// it intersects, itself included) and verifies the cover is exact.
class BlockingStrategy {
 public:
  BlockingStrategy(int d, int N, std::vector<Block> blocks)
      : d_(d), N_(N), blocks_(std::move(blocks)) {
    if (d_ < 1 || N_ < 1)
      throw ConfigError("blocking strategy needs d >= 1 and N >= 1");
    if (blocks_.empty())
      throw ConfigError("blocking strategy needs at least one block");
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      Block& b = blocks_[k];
      b.id = static_cast<int>(k) + 1;  // ids are 1-based list positions
      if (b.i < 1 || b.j > d_ || b.i > b.j || b.l < 1 || b.m > N_ || b.l > b.m) {
        std::ostringstream msg;
        msg << "block " << b.id << " [" << b.i << ':' << b.j << " x " << b.l
            << ':' << b.m << "] does not fit a " << d_ << " x " << N_
            << " state";
        throw ConfigError(msg.str());
      }
    }

    phi_ = Matrix::Zero(d_, N_);
    for (const Block& b : blocks_)
      block_view(phi_, b).array() += 1.0;
    if ((phi_.array() < 0.5).any()) {
      // Report the first uncovered coordinate to make the fix obvious.
      for (int c = 0; c < N_; ++c)
        for (int r = 0; r < d_; ++r)
          if (phi_(r, c) < 0.5) {
            std::ostringstream msg;
            msg << "blocks do not cover coordinate (" << r + 1 << ", " << c + 1
                << ") of a " << d_ << " x " << N_ << " state";
            throw ConfigError(msg.str());
          }
    }

    neighbors_.resize(blocks_.size());
    for (std::size_t a = 0; a < blocks_.size(); ++a) {
      for (std::size_t b = 0; b < blocks_.size(); ++b)
        if (blocks_[a].intersects(blocks_[b]))
          neighbors_[a].push_back(blocks_[b].id);
    }
  }

  int d() const { return d_; }
  int N() const { return N_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block(int id) const { return blocks_.at(id - 1); }

  /// Multiplicity phi(k, n) = number of blocks covering coordinate (k, n),
  /// stored as doubles because it scales the deterministic flow.
  const Matrix& phi() const { return phi_; }

  /// Ids of all blocks intersecting block id (id itself included), ascending.
  const std::vector<int>& neighbors(int id) const {
    return neighbors_.at(id - 1);
  }

  /// True if no two distinct blocks intersect (phi is identically one).
  bool is_non_overlapping() const {
    return (phi_.array() == 1.0).all();
  }

 private:
  int d_, N_;
  std::vector<Block> blocks_;
  Matrix phi_;
  std::vector<std::vector<int>> neighbors_;
};

/// Evenly spaced 1-based starts of width-wide windows covering 1..extent
/// with the given overlap; the last window is clamped to end at extent.
inline std::vector<int> axis_starts(int extent, int width, int overlap) {
  const int stride = width - overlap;
  std::vector<int> starts;
  for (int s = 1;; s += stride) {
    if (s + width - 1 >= extent) {
      starts.push_back(extent - width + 1);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

/// Regular grid of possibly overlapping rectangular blocks.  Blocks are
/// numbered row-major with the temporal index fastest: all time windows of
/// the first spatial band, then the second band, and so on.
inline BlockingStrategy make_grid_strategy(int d, int N, int spatial_width,
                                           int temporal_width,
                                           int spatial_overlap,
                                           int temporal_overlap) {
  auto check_axis = [](const char* name, int extent, int width, int overlap) {
    if (width < 1)
      throw ConfigError(std::string(name) + " block width must be >= 1");
    if (overlap < 0 || overlap >= width)
      throw ConfigError(std::string(name) +
                        " overlap must satisfy 0 <= overlap < width");
    if (width > extent)
      throw ConfigError(std::string(name) +
                        " block width exceeds the grid extent");
  };
  check_axis("spatial", d, spatial_width, spatial_overlap);
  check_axis("temporal", N, temporal_width, temporal_overlap);

  const std::vector<int> row_starts = axis_starts(d, spatial_width, spatial_overlap);
  const std::vector<int> col_starts = axis_starts(N, temporal_width, temporal_overlap);
  std::vector<Block> blocks;
  blocks.reserve(row_starts.size() * col_starts.size());
  for (int rs : row_starts)
    for (int cs : col_starts)
      blocks.push_back(Block{0, rs, rs + spatial_width - 1, cs,
                             cs + temporal_width - 1});
  return BlockingStrategy(d, N, std::move(blocks));
}

/// Checks that the partition lists every block exactly once and that blocks
/// sharing a group are pairwise disjoint.
inline PartitionCheck validate_partition(const BlockingStrategy& strategy,
                                         const Partition& partition) {
  PartitionCheck check;
  std::vector<int> count(strategy.num_blocks() + 1, 0);
  for (const auto& group : partition.groups) {
    for (std::size_t a = 0; a < group.size(); ++a) {
      const int id = group[a];
      if (id < 1 || id > strategy.num_blocks()) {
        check.duplicated.push_back(id);  // out-of-range ids are also defects
        continue;
      }
      ++count[id];
      for (std::size_t b = a + 1; b < group.size(); ++b) {
        const int other = group[b];
        if (other < 1 || other > strategy.num_blocks()) continue;
        if (strategy.block(id).intersects(strategy.block(other)))
          check.overlapping.emplace_back(std::min(id, other),
                                         std::max(id, other));
      }
    }
  }
  for (int id = 1; id <= strategy.num_blocks(); ++id) {
    if (count[id] == 0) check.missing.push_back(id);
    if (count[id] > 1) check.duplicated.push_back(id);
  }
  std::sort(check.overlapping.begin(), check.overlapping.end());
  check.overlapping.erase(
      std::unique(check.overlapping.begin(), check.overlapping.end()),
      check.overlapping.end());
  check.ok = check.overlapping.empty() && check.missing.empty() &&
             check.duplicated.empty();
  return check;
}

/// Parity partition of a grid-shaped strategy into 1, 2, or 4 sub-strategies.
///
/// Blocks are grouped by the parity of their spatial band and of their
/// position within the band, so alternate blocks along each axis land in
/// different groups.  With overlap at most half the width minus one this
/// separates every intersecting pair; the result is validated and an
/// overlapping pair raises an error rather than a silently invalid sampler.
inline Partition even_odd_partition(const BlockingStrategy& strategy) {
  // Identify the spatial bands: distinct (i, j) ranges ordered by start row.
  std::map<std::pair<int, int>, int> band_index;
  for (const Block& b : strategy.blocks())
    band_index.emplace(std::make_pair(b.i, b.j), 0);
  int next = 0;
  for (auto& [range, idx] : band_index) idx = next++;

  // Within each band, order blocks by time window start.
  std::vector<std::vector<const Block*>> bands(band_index.size());
  for (const Block& b : strategy.blocks())
    bands[band_index[{b.i, b.j}]].push_back(&b);
  for (auto& band : bands)
    std::sort(band.begin(), band.end(),
              [](const Block* a, const Block* b) { return a->l < b->l; });

  // Class (band parity, position parity), in the fixed order 00, 01, 10, 11.
  std::vector<std::vector<int>> classes(4);
  for (std::size_t bi = 0; bi < bands.size(); ++bi)
    for (std::size_t p = 0; p < bands[bi].size(); ++p)
      classes[2 * (bi % 2) + (p % 2)].push_back(bands[bi][p]->id);

  Partition partition;
  for (auto& cls : classes) {
    if (cls.empty()) continue;
    std::sort(cls.begin(), cls.end());
    partition.groups.push_back(std::move(cls));
  }

  const PartitionCheck check = validate_partition(strategy, partition);
  if (!check.ok)
    throw ConfigError(
        "even-odd partition invalid for this strategy (" + check.describe() +
        "); reduce the overlap below half the block width or supply a "
        "partition with more sub-strategies");
  return partition;
}

}  // namespace bbps
