#include "mmcdfsl/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

TokenGrid TokenGrid::from_frames(int frames, int tubelet_size, int grid_h, int grid_w) {
  if (tubelet_size < 1 || frames < tubelet_size || frames % tubelet_size != 0)
    throw ConfigError("tubelet_size", "frames (" + std::to_string(frames) + ") must be a positive multiple of " +
                                          std::to_string(tubelet_size));
  return {frames / tubelet_size, grid_h, grid_w};
}

std::vector<int> TubeMask::visible_indices() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(visible_count()));
  const int S = grid.spatial();
  for (int t = 0; t < grid.temporal_slices; ++t)
    for (int s : kept_spatial) out.push_back(t * S + s);
  return out;
}

std::vector<int> TubeMask::masked_indices() const {
  std::vector<bool> keep(static_cast<std::size_t>(grid.spatial()), false);
  for (int s : kept_spatial) keep[static_cast<std::size_t>(s)] = true;
  std::vector<int> out;
  const int S = grid.spatial();
  for (int t = 0; t < grid.temporal_slices; ++t)
    for (int s = 0; s < S; ++s)
      if (!keep[static_cast<std::size_t>(s)]) out.push_back(t * S + s);
  return out;
}

int kept_spatial_count(int spatial, double ratio) {
  return std::max(1, static_cast<int>(std::lround((1.0 - ratio) * spatial)));
}

TubeMask tube_mask(const TokenGrid& grid, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1)");
  const int S = grid.spatial();
  const int keep = kept_spatial_count(S, ratio);
  TubeMask mask{grid, {}, ratio};
  if (keep == S) {
    mask.kept_spatial.resize(static_cast<std::size_t>(S));
    std::iota(mask.kept_spatial.begin(), mask.kept_spatial.end(), 0);
    return mask;
  }
  // Partial Fisher-Yates: the first `keep` slots are a uniform draw without replacement.
  std::vector<int> perm(static_cast<std::size_t>(S));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "tube_mask"));
  for (int i = 0; i < keep; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(S - i));
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
  }
  mask.kept_spatial.assign(perm.begin(), perm.begin() + keep);
  std::sort(mask.kept_spatial.begin(), mask.kept_spatial.end());
  return mask;
}

TubeMask identity_mask(const TokenGrid& grid) {
  TubeMask mask{grid, std::vector<int>(static_cast<std::size_t>(grid.spatial())), 0.0};
  std::iota(mask.kept_spatial.begin(), mask.kept_spatial.end(), 0);
  return mask;
}

MaskedTokens apply_mask(const Mat& tokens, const TubeMask& mask) {
  if (tokens.rows() != mask.grid.total())
    throw ContractError("apply_mask: got " + std::to_string(tokens.rows()) + " tokens, grid has " +
                        std::to_string(mask.grid.total()));
  MaskedTokens out{Mat(mask.visible_count(), tokens.cols()), mask.visible_indices()};
  for (std::size_t r = 0; r < out.visible_indices.size(); ++r)
    out.visible.row(static_cast<Eigen::Index>(r)) = tokens.row(out.visible_indices[r]);
  return out;
}

Mat scatter_rows(const Mat& rows, std::span<const int> indices, int total_rows) {
  if (static_cast<Eigen::Index>(indices.size()) != rows.rows())
    throw ContractError("scatter_rows: index count does not match row count");
  Mat out = Mat::Zero(total_rows, rows.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= total_rows) throw ContractError("scatter_rows: index out of range");
    out.row(indices[r]) = rows.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

}  // namespace mmcdfsl
