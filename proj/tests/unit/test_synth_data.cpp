#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "mmcdfsl/errors.hpp"

using namespace mmcdfsl;

namespace {

std::set<int> labels_of(const std::vector<MultimodalSample>& pool) {
  std::set<int> out;
  for (const auto& s : pool)
    if (s.label) out.insert(*s.label);
  return out;
}

// Centroid of the pixels where the sprite dominates the RGB frame.
std::array<double, 2> sprite_centroid(const Clip& rgb, int t) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < rgb.frames.height(); ++y)
    for (int x = 0; x < rgb.frames.width(); ++x) {
      float m = 0;
      for (int c = 0; c < 3; ++c) m = std::max(m, rgb.frames.at(t, y, x, c));
      if (m * kRgbStd + kRgbMean > 0.65) sx += x, sy += y, n += 1;
    }
  REQUIRE(n > 0);
  return {sx / n, sy / n};
}

}  // namespace

TEST_SUITE("synth_data") {
  TEST_CASE("static scene gives an all-zero FLOW clip") {
    DatasetSpec spec = testutil::tiny_spec();
    spec.motion_scale = 0.0;
    spec.source.noise_level = 0.0;
    spec.source.brightness_shift = 0.0;
    const Dataset ds = generate_dataset(spec);
    for (const auto& s : ds.source)
      for (float v : s.clip(ModalityKind::FLOW).frames.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("generation is deterministic in the seed") {
    const Dataset a = generate_dataset(testutil::tiny_spec(11));
    const Dataset b = generate_dataset(testutil::tiny_spec(11));
    CHECK(a == b);
    const Dataset c = generate_dataset(testutil::tiny_spec(12));
    CHECK_FALSE(a == c);
  }

  TEST_CASE("pool sizes and labels") {
    DatasetSpec spec = testutil::tiny_spec();
    spec.n_source_classes = 8;
    spec.samples_per_class = 10;
    const Dataset ds = generate_dataset(spec);
    CHECK(ds.source.size() == 80);
    for (const auto& s : ds.source) {
      CHECK(s.label.has_value());
      CHECK(s.domain == Domain::Source);
    }
    for (const auto& s : ds.target_unlabeled) {
      CHECK_FALSE(s.label.has_value());
      CHECK(s.domain == Domain::Target);
    }
    CHECK(ds.target_labeled.size() == static_cast<std::size_t>(spec.n_target_classes * spec.target_labeled_per_class));
  }

  TEST_CASE("source and target classes are disjoint") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Dataset ds = generate_dataset(testutil::tiny_spec(seed));
      const auto src = labels_of(ds.source);
      const auto tgt = labels_of(ds.target_labeled);
      for (int c : tgt) CHECK(src.count(c) == 0);
    }
  }

  TEST_CASE("sample ids are unique across pools") {
    const Dataset ds = generate_dataset(testutil::tiny_spec());
    std::set<std::uint64_t> ids;
    std::size_t n = 0;
    for (const auto* pool : {&ds.source, &ds.target_unlabeled, &ds.target_labeled})
      for (const auto& s : *pool) ids.insert(s.id), ++n;
    CHECK(ids.size() == n);
  }

  TEST_CASE("clip shapes follow the modality specs") {
    const DatasetSpec spec = testutil::tiny_spec();
    const Dataset ds = generate_dataset(spec);
    for (const auto& s : ds.target_labeled)
      for (const ModalitySpec& m : spec.modalities) {
        const Tensor4& f = s.clip(m.kind).frames;
        CHECK(f.frames() == spec.frames);
        CHECK(f.height() == m.height);
        CHECK(f.width() == m.width);
        CHECK(f.channels() == m.channels);
      }
  }

  TEST_CASE("invalid specs are rejected") {
    DatasetSpec spec = testutil::tiny_spec();
    spec.modalities[0].width = 30;
    CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

    spec = testutil::tiny_spec();
    spec.target_class_offset = 1;
    CHECK_THROWS_AS(generate_dataset(spec), ConfigError);

    spec = testutil::tiny_spec();
    spec.modalities[2].patch_size = 4;  // 4x4 grid against 8x8 for RGB
    CHECK_THROWS_AS(generate_dataset(spec), ConfigError);
  }

  TEST_CASE("FLOW matches the sprite displacement seen in RGB") {
    DatasetSpec spec = testutil::tiny_spec(5);
    spec.frames = 8;
    spec.source.noise_level = 0.0;
    const Dataset ds = generate_dataset(spec);
    for (const auto& s : ds.source) {
      const Clip& rgb = s.clip(ModalityKind::RGB);
      const Clip& flow = s.clip(ModalityKind::FLOW);
      for (int t = 0; t + 1 < spec.frames; ++t) {
        const auto c0 = sprite_centroid(rgb, t);
        const auto c1 = sprite_centroid(rgb, t + 1);
        double fx = 0, fy = 0, n = 0;
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x)
            if (flow.frames.at(t, y, x, 0) != 0.0f || flow.frames.at(t, y, x, 1) != 0.0f)
              fx = flow.frames.at(t, y, x, 0), fy = flow.frames.at(t, y, x, 1), ++n;
        if (n == 0) {
          CHECK(std::hypot(c1[0] - c0[0], c1[1] - c0[1]) <= 1.0);
          continue;
        }
        CHECK(std::abs(fx - (c1[0] - c0[0])) <= 1.0);
        CHECK(std::abs(fy - (c1[1] - c0[1])) <= 1.0);
      }
    }
  }

  TEST_CASE("POSE channels are in [0,1] and visible keypoints peak at 1") {
    const Dataset ds = generate_dataset(testutil::tiny_spec());
    for (const auto& s : ds.target_labeled) {
      const Tensor4& p = s.clip(ModalityKind::POSE).frames;
      for (int t = 0; t < p.frames(); ++t)
        for (int j = 0; j < kNumKeypoints; ++j) {
          float mx = 0.0f;
          for (int y = 0; y < p.height(); ++y)
            for (int x = 0; x < p.width(); ++x) {
              const float v = p.at(t, y, x, j);
              CHECK(v >= 0.0f);
              CHECK(v <= 1.0f);
              mx = std::max(mx, v);
            }
          CHECK((mx == 0.0f || mx == 1.0f));
        }
    }
  }
}

TEST_SUITE("make_heatmap") {
  TEST_CASE("peak and one-sigma values") {
    std::vector<Keypoint> kps(kNumKeypoints);
    kps[0] = {{8.0, 8.0}};
    const Tensor4 hm = make_heatmap(kps, 32, 32, 10.0);
    CHECK(hm.frames() == 1);
    CHECK(hm.channels() == kNumKeypoints);
    CHECK(hm.at(0, 8, 8, 0) == 1.0f);
    CHECK(hm.at(0, 8, 18, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-6));
    CHECK(hm.at(0, 8, 18, 0) == doctest::Approx(0.6065).epsilon(1e-4));
    for (int j = 1; j < kNumKeypoints; ++j) CHECK(hm.at(0, 8, 8, j) == 0.0f);
  }

  TEST_CASE("absent keypoints give an all-zero tensor") {
    const std::vector<Keypoint> kps(kNumKeypoints);
    const Tensor4 hm = make_heatmap(kps, 16, 16, 2.0);
    CHECK(std::all_of(hm.data().begin(), hm.data().end(), [](float v) { return v == 0.0f; }));
  }

  TEST_CASE("errors") {
    std::vector<Keypoint> kps(kNumKeypoints);
    CHECK_THROWS_AS(make_heatmap(kps, 16, 16, 0.0), ConfigError);
    CHECK_THROWS_AS(make_heatmap(kps, 16, 16, -1.0), ConfigError);
    kps[3] = {{20.0, 2.0}};
    CHECK_THROWS_AS(make_heatmap(kps, 16, 16, 2.0), ContractError);
  }
}

TEST_SUITE("sample_episode") {
  const Dataset ds = generate_dataset([] {
    DatasetSpec s = testutil::tiny_spec(3);
    s.n_target_classes = 8;
    s.target_labeled_per_class = 16;
    return s;
  }());

  TEST_CASE("5-way 1-shot with 15 queries") {
    const Episode ep = sample_episode(ds.target_labeled, 5, 1, 15, 42);
    CHECK(ep.support.size() == 5);
    CHECK(ep.query.size() == 75);
    CHECK(ep.n_way() == 5);
    std::set<std::size_t> s(ep.support.begin(), ep.support.end());
    for (std::size_t q : ep.query) CHECK(s.count(q) == 0);
    std::set<std::size_t> all(ep.query.begin(), ep.query.end());
    all.insert(s.begin(), s.end());
    CHECK(all.size() == 80);
    for (std::size_t i = 0; i < ep.query.size(); ++i)
      CHECK(*ds.target_labeled[ep.query[i]].label == ep.class_ids[static_cast<std::size_t>(ep.query_labels[i])]);
    for (std::size_t i = 0; i < ep.support.size(); ++i)
      CHECK(*ds.target_labeled[ep.support[i]].label == ep.class_ids[static_cast<std::size_t>(ep.support_labels[i])]);
  }

  TEST_CASE("precondition violations") {
    CHECK_THROWS_AS(sample_episode(ds.target_labeled, 9, 1, 1, 0), EpisodeError);
    CHECK_THROWS_AS(sample_episode(ds.target_labeled, 5, 2, 15, 0), EpisodeError);
  }

  TEST_CASE("deterministic given the seed") {
    CHECK(sample_episode(ds.target_labeled, 5, 1, 15, 9) == sample_episode(ds.target_labeled, 5, 1, 15, 9));
    CHECK_FALSE(sample_episode(ds.target_labeled, 5, 1, 15, 9) == sample_episode(ds.target_labeled, 5, 1, 15, 10));
  }

  TEST_CASE("600 episodes cover every class with exactly K shots each") {
    std::set<int> seen;
    for (std::uint64_t e = 0; e < 600; ++e) {
      const Episode ep = sample_episode(ds.target_labeled, 5, 2, 3, 1000 + e);
      std::vector<int> per_class(5, 0);
      for (int l : ep.support_labels) ++per_class[static_cast<std::size_t>(l)];
      for (int c : per_class) CHECK(c == 2);
      seen.insert(ep.class_ids.begin(), ep.class_ids.end());
    }
    CHECK(seen == labels_of(ds.target_labeled));
  }
}
