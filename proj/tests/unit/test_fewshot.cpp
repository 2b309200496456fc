#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmcdfsl/autodiff.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/fewshot.hpp"

using namespace mmcdfsl;

namespace {

struct Fixture {
  Dataset ds = generate_dataset(testutil::tiny_spec(51));
  EncoderConfig cfg = testutil::tiny_config();
  Encoder enc;
  ClassifierHead head;

  Fixture() {
    Rng rng(8);
    enc = init_encoder(cfg, default_modality_spec(ModalityKind::RGB), 4, rng);
    testutil::randomize(enc, 12, 0.2);
    head = init_classifier(cfg.embed_dim, 5, rng);
    testutil::randomize(head, 13, 1.0);
  }

  const Clip& clip(std::size_t i) const { return ds.target_labeled[i].clip(ModalityKind::RGB); }

  Mat single(const Clip& c, const TubeMask& m) const {
    return ad::softmax_rows(classify(head, encode(enc, c, m).pooled));
  }
};

}  // namespace

TEST_SUITE("fewshot") {
  TEST_CASE("rho 0 collapses the ensemble to the plain forward pass") {
    Fixture f;
    const Mat plain = f.single(f.clip(0), identity_mask(f.enc.grid));
    for (int p : {1, 2, 5}) {
      const Prediction pr = ensemble_masked_predict(f.enc, f.head, f.clip(0), {0.0, p, 99});
      CHECK(pr.probs == plain);
    }
  }

  TEST_CASE("two-member ensemble equals the mean of two single-mask passes") {
    Fixture f;
    const InferenceConfig ic{0.75, 2, 1234};
    const Prediction pr = ensemble_masked_predict(f.enc, f.head, f.clip(3), ic);
    const Mat a = f.single(f.clip(3), tube_mask(f.enc.grid, 0.75, member_mask_seed(1234, 0)));
    const Mat b = f.single(f.clip(3), tube_mask(f.enc.grid, 0.75, member_mask_seed(1234, 1)));
    CHECK((pr.probs - 0.5 * (a + b)).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::Index arg;
    pr.probs.row(0).maxCoeff(&arg);
    CHECK(pr.argmax == static_cast<int>(arg));
    CHECK(pr.probs == ensemble_masked_predict(f.enc, f.head, f.clip(3), ic).probs);
  }

  TEST_CASE("predictions lie on the simplex") {
    Fixture f;
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const InferenceConfig ic{rng.uniform(0.0, 0.95), 1 + static_cast<int>(rng.below(4)), rng.next_u64()};
      const Prediction pr = ensemble_masked_predict(f.enc, f.head, f.clip(static_cast<std::size_t>(trial % 10)), ic);
      CHECK((pr.probs.array() >= 0.0).all());
      CHECK(std::abs(pr.probs.sum() - 1.0) < 1e-6);
    }
  }

  TEST_CASE("ensemble size below one is rejected") {
    Fixture f;
    CHECK_THROWS_AS(ensemble_masked_predict(f.enc, f.head, f.clip(0), {0.5, 0, 1}), ConfigError);
    CHECK_THROWS_AS(count_flops(f.cfg, f.enc.grid, 96, 5, 0.5, 0), ConfigError);
  }

  TEST_CASE("5-way 5-shot head maps d to 5 and leaves the encoder untouched") {
    Fixture f;
    std::vector<const MultimodalSample*> support;
    std::vector<int> labels;
    for (std::size_t i = 0; i < f.ds.target_labeled.size(); ++i) {
      const int local = *f.ds.target_labeled[i].label - *f.ds.target_labeled[0].label;
      if (local < 0 || local >= 5) continue;
      support.push_back(&f.ds.target_labeled[i]);
      labels.push_back(local);
    }
    REQUIRE(support.size() == 20);
    const std::uint64_t before = parameter_hash(f.enc);
    HeadTrainingConfig hc;
    hc.iterations = 10;
    hc.mask_refreshes = 5;
    const ClassifierHead h = train_fewshot_head(f.enc, support, labels, 5, 0.75, 2, hc);
    CHECK(h.fc.weight.rows() == f.cfg.embed_dim);
    CHECK(h.fc.weight.cols() == 5);
    CHECK(parameter_hash(f.enc) == before);

    const std::vector<const MultimodalSample*> none;
    const std::vector<int> no_labels;
    CHECK_THROWS_AS(train_fewshot_head(f.enc, none, no_labels, 5, 0.75, 2, hc), ContractError);
  }

  TEST_CASE("linearly separable features are fit perfectly") {
    Fixture f;
    std::vector<const MultimodalSample*> support;
    std::vector<int> labels;
    for (std::size_t i = 0; i < 10; ++i) {
      support.push_back(&f.ds.target_labeled[i]);
      labels.push_back(static_cast<int>(i % 5));
    }
    // Each support sample's feature is a noisy one-hot of its label, regardless of the mask.
    std::map<std::uint64_t, int> label_of;
    for (std::size_t i = 0; i < support.size(); ++i) label_of[support[i]->id] = labels[i];
    const FeatureExtractor fx{f.enc.grid, 8, [&](const MultimodalSample& s, const TubeMask& m) {
                                Rng rng(derive_seed(s.id, "feat", {m.kept_spatial.empty() ? 0u : 1u}));
                                Mat v = testutil::random_mat(1, 8, rng, 0.1);
                                v(0, label_of.at(s.id)) += 2.0;
                                return v;
                              }};
    const ClassifierHead h = train_fewshot_head(fx, support, labels, 5, 0.75, 4);
    int correct = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const Mat logits = classify(h, fx.features(*support[i], identity_mask(f.enc.grid)));
      Eigen::Index arg;
      logits.row(0).maxCoeff(&arg);
      correct += static_cast<int>(arg) == labels[i];
    }
    CHECK(correct == 10);
  }

  TEST_CASE("FLOPs laws on the toy geometry") {
    const EncoderConfig cfg;
    const TokenGrid g{4, 8, 8};
    const CostReport one = count_flops(cfg, g, 96, 5, 0.75, 1);
    const CostReport two = count_flops(cfg, g, 96, 5, 0.75, 2);
    CHECK(two.flops_linear == 2 * one.flops_linear);
    CHECK(two.flops_attention_quadratic == 2 * one.flops_attention_quadratic);
    CHECK(two.flops_head == one.flops_head);
    CHECK(two.flops_total == doctest::Approx(two.flops_linear + two.flops_attention_quadratic + two.flops_head));

    const CostReport full = count_flops(cfg, g, 96, 5, 0.0, 1);
    CHECK(full.tokens_full == 256);
    CHECK(one.tokens_visible == 64);
    CHECK(one.flops_attention_quadratic == doctest::Approx(full.flops_attention_quadratic / 16.0).epsilon(1e-12));

    // Strictly increasing in P, strictly decreasing in rho whenever the visible count changes.
    double prev_ratio_cost = full.flops_total;
    int prev_visible = full.tokens_visible;
    for (double rho = 0.05; rho < 0.99; rho += 0.05) {
      const CostReport r = count_flops(cfg, g, 96, 5, rho, 1);
      if (r.tokens_visible < prev_visible) CHECK(r.flops_total < prev_ratio_cost);
      if (r.tokens_visible == prev_visible) CHECK(r.flops_total == prev_ratio_cost);
      prev_ratio_cost = r.flops_total;
      prev_visible = r.tokens_visible;
      for (int p = 1; p < 4; ++p) CHECK(count_flops(cfg, g, 96, 5, rho, p + 1).flops_total > count_flops(cfg, g, 96, 5, rho, p).flops_total);
    }
  }

  TEST_CASE("ViT-S cost ratio at rho 0.75, P 2 lies in [0.35, 0.55]") {
    EncoderConfig vits;
    vits.embed_dim = 384;
    vits.depth = 12;
    vits.heads = 6;
    vits.mlp_ratio = 4;
    const TokenGrid g{8, 14, 14};
    REQUIRE(g.total() == 1568);
    const int patch_volume = 2 * 16 * 16 * 3;
    const double ratio = count_flops(vits, g, patch_volume, 5, 0.75, 2).flops_total /
                         count_flops(vits, g, patch_volume, 5, 0.0, 1).flops_total;
    INFO("ratio " << ratio);
    CHECK(ratio >= 0.35);
    CHECK(ratio <= 0.55);
  }

  TEST_CASE("wall clock statistics over a constant-time stub") {
    double now = 0.0;
    int calls = 0;
    const WallclockStats s = measure_wallclock([&] { ++calls; }, 600, 7, [&] {
      const double t = now;
      now += 1.25;
      return t;
    });
    CHECK(s.iters == 600);
    CHECK(calls == 607);
    CHECK(s.mean_ms == 1.25);
    CHECK(s.std_ms == 0.0);
  }

  TEST_CASE("heavier masking runs faster on the toy model") {
    Rng rng(1);
    EncoderConfig cfg;
    const Encoder enc = init_encoder(cfg, default_modality_spec(ModalityKind::RGB), 8, rng);
    const ClassifierHead head = init_classifier(cfg.embed_dim, 5, rng);
    DatasetSpec spec = testutil::tiny_spec(2);
    spec.frames = 8;
    const Dataset ds = generate_dataset(spec);
    const Clip& c = ds.target_labeled[0].clip(ModalityKind::RGB);
    const WallclockStats dense = measure_runtime(enc, head, c, {0.0, 1, 0}, 20, 2);
    const WallclockStats sparse = measure_runtime(enc, head, c, {0.9, 1, 0}, 20, 2);
    CHECK(dense.iters == 20);
    INFO("dense " << dense.mean_ms << " ms, sparse " << sparse.mean_ms << " ms");
    CHECK(sparse.mean_ms < dense.mean_ms);
  }
}
