#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/masking.hpp"

using namespace mmcdfsl;

TEST_SUITE("masking") {
  TEST_CASE("toy grid at rho 0.75 keeps 16 positions in every slice") {
    const TokenGrid g{4, 8, 8};
    const TubeMask m = tube_mask(g, 0.75, 123);
    CHECK(m.kept_spatial.size() == 16);
    const auto vis = m.visible_indices();
    CHECK(vis.size() == 64);
    // Count per slice and per spatial position independently of the kept set.
    std::vector<int> per_slice(4, 0), per_pos(64, 0);
    for (int i : vis) ++per_slice[static_cast<std::size_t>(i / 64)], ++per_pos[static_cast<std::size_t>(i % 64)];
    for (int c : per_slice) CHECK(c == 16);
    int kept_positions = 0;
    for (int c : per_pos) {
      CHECK((c == 0 || c == 4));
      kept_positions += c == 4;
    }
    CHECK(kept_positions == 16);
  }

  TEST_CASE("rho 0 keeps everything") {
    const TokenGrid g{4, 8, 8};
    const TubeMask m = tube_mask(g, 0.0, 5);
    CHECK(m == identity_mask(g));
    CHECK(m.masked_indices().empty());
    testutil::Rng rng(1);
    const Mat tokens = testutil::random_mat(g.total(), 3, rng);
    const MaskedTokens mt = apply_mask(tokens, m);
    CHECK(mt.visible == tokens);
    for (int i = 0; i < g.total(); ++i) CHECK(mt.visible_indices[static_cast<std::size_t>(i)] == i);
  }

  TEST_CASE("rounding rule") {
    CHECK(kept_spatial_count(196, 0.9) == 20);
    CHECK(tube_mask({1, 14, 14}, 0.9, 0).kept_spatial.size() == 20);
    CHECK(kept_spatial_count(4, 0.99) == 1);
    CHECK(kept_spatial_count(64, 0.5) == 32);
  }

  TEST_CASE("canonical ordering") {
    const TubeMask m{{2, 2, 2}, {1, 3}, 0.5};
    CHECK(m.visible_indices() == std::vector<int>{1, 3, 5, 7});
    CHECK(m.masked_indices() == std::vector<int>{0, 2, 4, 6});
  }

  TEST_CASE("scatter inverts apply_mask on visible rows") {
    testutil::Rng rng(77);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const TokenGrid g{3, 4, 5};
      const TubeMask m = tube_mask(g, rng.uniform(0.0, 0.95), seed);
      const Mat tokens = testutil::random_mat(g.total(), 6, rng);
      const MaskedTokens mt = apply_mask(tokens, m);
      const Mat back = scatter_rows(mt.visible, mt.visible_indices, g.total());
      for (int i : mt.visible_indices) CHECK(back.row(i) == tokens.row(i));
      for (int i : m.masked_indices()) CHECK(back.row(i).isZero());
    }
  }

  TEST_CASE("errors") {
    const TokenGrid g{4, 8, 8};
    CHECK_THROWS_AS(tube_mask(g, 1.0, 0), ConfigError);
    CHECK_THROWS_AS(tube_mask(g, -0.1, 0), ConfigError);
    CHECK_THROWS_AS(apply_mask(Mat::Zero(10, 2), identity_mask(g)), ContractError);
    CHECK_THROWS_AS(TokenGrid::from_frames(7, 2, 8, 8), ConfigError);
    CHECK(TokenGrid::from_frames(8, 2, 8, 8) == TokenGrid{4, 8, 8});
  }

  TEST_CASE("deterministic and seed sensitive") {
    const TokenGrid g{4, 8, 8};
    CHECK(tube_mask(g, 0.5, 9) == tube_mask(g, 0.5, 9));
    CHECK_FALSE(tube_mask(g, 0.5, 9) == tube_mask(g, 0.5, 10));
  }

  TEST_CASE("property: tube and count laws over many grids and seeds") {
    testutil::Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
      const TokenGrid g{1 + static_cast<int>(rng.below(4)), 1 + static_cast<int>(rng.below(8)),
                        1 + static_cast<int>(rng.below(8))};
      const double rho = rng.uniform(0.0, 0.999);
      const TubeMask m = tube_mask(g, rho, rng.next_u64());
      const int S = g.spatial();
      CHECK(m.visible_count() == g.temporal_slices * std::max(1, static_cast<int>(std::lround((1 - rho) * S))));
      std::vector<std::set<int>> slices(static_cast<std::size_t>(g.temporal_slices));
      for (int i : m.visible_indices()) slices[static_cast<std::size_t>(i / S)].insert(i % S);
      for (const auto& s : slices) CHECK(s == slices.front());
      CHECK(std::is_sorted(m.kept_spatial.begin(), m.kept_spatial.end()));
    }
  }
}
