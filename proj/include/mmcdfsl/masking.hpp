#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmcdfsl/tensor.hpp"

namespace mmcdfsl {

/// Token layout of one clip: temporal slices x (grid_h * grid_w) spatial positions.
struct TokenGrid {
  int temporal_slices = 4;
  int grid_h = 8;
  int grid_w = 8;

  int spatial() const { return grid_h * grid_w; }
  int total() const { return temporal_slices * spatial(); }

  /// Throws ConfigError when frames are not a multiple of the tubelet size.
  static TokenGrid from_frames(int frames, int tubelet_size, int grid_h, int grid_w);

  bool operator==(const TokenGrid&) const = default;
};

/// Spatial keep pattern shared by every temporal slice.
struct TubeMask {
  TokenGrid grid;
  std::vector<int> kept_spatial;  // sorted, unique, in [0, S)
  double ratio = 0.0;

  int visible_count() const { return grid.temporal_slices * static_cast<int>(kept_spatial.size()); }
  /// Visible token indices in slice-major, spatial-ascending order.
  std::vector<int> visible_indices() const;
  /// Complement of visible_indices(), same ordering.
  std::vector<int> masked_indices() const;

  bool operator==(const TubeMask&) const = default;
};

/// max(1, round((1 - ratio) * spatial)).
int kept_spatial_count(int spatial, double ratio);

/// Throws ConfigError unless 0 <= ratio < 1.
TubeMask tube_mask(const TokenGrid& grid, double ratio, std::uint64_t seed);

/// Keep-all mask (ratio 0) without touching an RNG.
TubeMask identity_mask(const TokenGrid& grid);

struct MaskedTokens {
  Mat visible;
  std::vector<int> visible_indices;
};

/// Gathers visible rows of an I x dim token matrix. Throws ContractError on shape mismatch.
MaskedTokens apply_mask(const Mat& tokens, const TubeMask& mask);

/// Inverse of apply_mask: writes rows back into an I x dim matrix (other rows zero).
Mat scatter_rows(const Mat& rows, std::span<const int> indices, int total_rows);

}  // namespace mmcdfsl
