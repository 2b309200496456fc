#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/pretrain.hpp"

using namespace mmcdfsl;

namespace {

struct Fixture {
  Dataset ds = generate_dataset(testutil::tiny_spec(21));
  LabelIndex labels = LabelIndex::from_pool(ds.source);
  ModalityModel model =
      init_modality_model(testutil::tiny_config(), default_modality_spec(ModalityKind::RGB), 4, labels.size(), 5);

  std::vector<const MultimodalSample*> source_batch(std::size_t a, std::size_t b) const {
    return {&ds.source[a], &ds.source[b]};
  }
  std::vector<const MultimodalSample*> target_batch(std::size_t a, std::size_t b) const {
    return {&ds.target_unlabeled[a], &ds.target_unlabeled[b]};
  }
};

}  // namespace

TEST_SUITE("pretrain") {
  TEST_CASE("loss combination") {
    PretrainLossBreakdown b{1.0, 2.0, 3.0, 0.05, 0.0};
    CHECK(b.combined() == doctest::Approx(3.15).epsilon(1e-12));
    b.lambda_ce = 0.0;
    CHECK(b.combined() == 3.0);
  }

  TEST_CASE("uniform logits over four classes cost lambda * ln 4") {
    ad::Tape t;
    const int labels[] = {2};
    const double ce = ad::cross_entropy(t.constant(Mat::Zero(1, 4)), labels).scalar();
    CHECK(ce == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    const PretrainLossBreakdown b{0.0, 0.0, ce, 0.05, 0.0};
    CHECK(b.combined() == doctest::Approx(0.05 * std::log(4.0)).epsilon(1e-12));

    // Same through the model: a zeroed classifier yields uniform logits.
    Fixture f;
    ClassifierHead& h = f.model.classifier;
    h.fc.weight.setZero();
    h.fc.bias.setZero();
    PretrainConfig pc;
    pc.lambda_ce = 0.05;
    const auto src = f.source_batch(0, 2);
    const auto tgt = f.target_batch(0, 1);
    const PretrainLossBreakdown r = pretrain_loss(f.model, nullptr, src, tgt, pc, f.labels, 1);
    CHECK(r.ce_source == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  TEST_CASE("reconstruction loss examples") {
    const ModalitySpec spec{ModalityKind::RGB, 8, 8, 3, 4};
    Clip clip{spec, Tensor4(2, 8, 8, 3)};
    Rng rng(3);
    for (float& v : clip.frames.data()) v = static_cast<float>(rng.uniform());
    const TokenGrid grid{1, 2, 2};

    const TubeMask one_masked{grid, {0, 1, 2}, 0.25};
    const std::vector<int> masked = one_masked.masked_indices();
    REQUIRE(masked.size() == 1);
    const Mat target = normalized_patch_targets(extract_patches(clip, 2, masked));
    CHECK(reconstruction_loss(target, clip, one_masked, 2) == doctest::Approx(0.0));
    CHECK(reconstruction_loss((target.array() + 1.0).matrix(), clip, one_masked, 2) == doctest::Approx(1.0));
    CHECK(reconstruction_loss(Mat(0, 96), clip, identity_mask(grid), 2) == 0.0);
  }

  TEST_CASE("normalized targets have zero mean and unit variance per patch") {
    Rng rng(4);
    const Mat p = testutil::random_mat(5, 48, rng, 3.0);
    const Mat n = normalized_patch_targets(p);
    for (Eigen::Index r = 0; r < n.rows(); ++r) {
      CHECK(std::abs(n.row(r).mean()) < 1e-12);
      CHECK((n.row(r).array() - n.row(r).mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  TEST_CASE("breakdown identity and lambda = 0 path") {
    Fixture f;
    testutil::randomize(f.model, 8, 0.1);
    PretrainConfig pc;
    const auto src = f.source_batch(0, 3);
    const auto tgt = f.target_batch(2, 4);
    for (double lambda : {0.0, 0.01, 0.05, 0.1, 1.0}) {
      pc.lambda_ce = lambda;
      const PretrainLossBreakdown b = pretrain_loss(f.model, nullptr, src, tgt, pc, f.labels, 11);
      CHECK(std::abs(b.total - b.combined()) < 1e-9);
      if (lambda == 0.0) CHECK(std::abs(b.total - (b.recon_source + b.recon_target)) < 1e-12);
    }
  }

  TEST_CASE("target batches contribute nothing to the classifier gradient") {
    Fixture f;
    testutil::randomize(f.model, 9, 0.1);
    PretrainConfig pc;
    pc.lambda_ce = 0.5;
    const auto src = f.source_batch(1, 4);
    const auto tgt_a = f.target_batch(0, 1);
    const auto tgt_b = f.target_batch(3, 5);
    ModalityModel ga = empty_grads(f.model), gb = empty_grads(f.model);
    pretrain_loss(f.model, &ga, src, tgt_a, pc, f.labels, 5);
    pretrain_loss(f.model, &gb, src, tgt_b, pc, f.labels, 5);
    CHECK(ga.classifier.fc.weight == gb.classifier.fc.weight);
    CHECK(ga.classifier.fc.bias == gb.classifier.fc.bias);
    CHECK_FALSE(ga.encoder.pos_embed == gb.encoder.pos_embed);
  }

  TEST_CASE("labeled targets and unlabeled sources are rejected") {
    Fixture f;
    PretrainConfig pc;
    const std::vector<const MultimodalSample*> bad_target = {&f.ds.source[0]};
    const auto src = f.source_batch(0, 1);
    CHECK_THROWS_AS(pretrain_loss(f.model, nullptr, src, bad_target, pc, f.labels, 0), ContractError);
    const std::vector<const MultimodalSample*> bad_source = {&f.ds.target_unlabeled[0]};
    const auto tgt = f.target_batch(0, 1);
    CHECK_THROWS_AS(pretrain_loss(f.model, nullptr, bad_source, tgt, pc, f.labels, 0), ContractError);
  }

  TEST_CASE("config validation") {
    PretrainConfig pc;
    pc.mask_ratio = 1.0;
    CHECK_THROWS_AS(pc.validate(), ConfigError);
    pc = {};
    pc.epochs = -1;
    CHECK_THROWS_AS(pc.validate(), ConfigError);
    CHECK(default_lambda_ce(ModalityKind::RGB) == 0.05);
    CHECK(default_lambda_ce(ModalityKind::POSE) == 0.01);
  }

  TEST_CASE("zero epochs leave the model untouched") {
    Fixture f;
    const std::uint64_t before = parameter_hash(f.model);
    PretrainConfig pc;
    pc.epochs = 0;
    run_pretrain(f.model, f.ds.source, f.ds.target_unlabeled, pc);
    CHECK(parameter_hash(f.model) == before);
  }

  TEST_CASE("lambda = 0 leaves the classifier at initialization") {
    Fixture f;
    const std::uint64_t cls = parameter_hash(f.model.classifier);
    const std::uint64_t enc = parameter_hash(f.model.encoder);
    PretrainConfig pc;
    pc.lambda_ce = 0.0;
    pc.epochs = 2;
    pc.batch_size = 3;
    run_pretrain(f.model, f.ds.source, f.ds.target_unlabeled, pc);
    CHECK(parameter_hash(f.model.classifier) == cls);
    CHECK(parameter_hash(f.model.encoder) != enc);
  }

  TEST_CASE("logged steps satisfy the breakdown identity and runs are reproducible") {
    Fixture f;
    ModalityModel copy = f.model;
    PretrainConfig pc;
    pc.epochs = 2;
    pc.batch_size = 2;
    pc.seed = 17;
    int rows = 0;
    run_pretrain(f.model, f.ds.source, f.ds.target_unlabeled, pc, [&](const PretrainLogRow& r) {
      CHECK(std::abs(r.loss.total - r.loss.combined()) < 1e-9);
      ++rows;
    });
    CHECK(rows == 6);
    run_pretrain(copy, f.ds.source, f.ds.target_unlabeled, pc);
    CHECK(parameter_hash(copy) == parameter_hash(f.model));
  }

  TEST_CASE("training lifts source accuracy well above chance") {
    DatasetSpec spec = testutil::tiny_spec(31);
    spec.n_source_classes = 4;
    spec.samples_per_class = 6;
    const Dataset ds = generate_dataset(spec);
    const LabelIndex labels = LabelIndex::from_pool(ds.source);
    ModalityModel model =
        init_modality_model(testutil::tiny_config(), default_modality_spec(ModalityKind::FLOW), 4, labels.size(), 3);
    PretrainConfig pc;
    pc.modality = ModalityKind::FLOW;
    pc.lambda_ce = 1.0;
    pc.epochs = 40;
    pc.batch_size = 4;
    pc.mask_ratio = 0.5;
    pc.seed = 4;
    run_pretrain(model, ds.source, ds.target_unlabeled, pc);
    const double acc = source_accuracy(model, ds.source, labels, 0.0, 1);
    INFO("source accuracy " << acc);
    CHECK(acc >= 3.0 / labels.size());
  }
}
