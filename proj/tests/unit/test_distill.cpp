#include <doctest.h>

#include "helpers.hpp"
#include "mmcdfsl/distill.hpp"
#include "mmcdfsl/errors.hpp"

using namespace mmcdfsl;

namespace {

struct Fixture {
  Dataset ds = generate_dataset(testutil::tiny_spec(41));
  EncoderConfig cfg = testutil::tiny_config();
  TeacherSet teachers;
  StudentModel student;

  Fixture() {
    for (ModalityKind k : kAllModalities) {
      Rng rng(derive_seed(3, "t", {static_cast<std::uint64_t>(k)}));
      Encoder e = init_encoder(cfg, default_modality_spec(k), 4, rng);
      testutil::randomize(e, 50 + static_cast<std::uint64_t>(k), 0.1);
      teachers.emplace(k, std::move(e));
    }
    student = init_student(cfg, teachers.at(ModalityKind::RGB), kAllModalities, 7);
    testutil::randomize(student, 60, 0.1);
  }

  std::vector<const MultimodalSample*> batch(std::size_t a, std::size_t b) const {
    return {&ds.target_unlabeled[a], &ds.target_unlabeled[b]};
  }
};

}  // namespace

TEST_SUITE("distill") {
  TEST_CASE("feature distance examples") {
    std::map<ModalityKind, Mat> f, g;
    f[ModalityKind::RGB] = (Mat(1, 2) << 1, 2).finished();
    g[ModalityKind::RGB] = (Mat(1, 2) << 1, 0).finished();
    CHECK(distill_loss(f, g).fd.at(ModalityKind::RGB) == 4.0);
    CHECK(distill_loss(f, f).total == 0.0);

    DistillLossBreakdown b;
    b.fd = {{ModalityKind::RGB, 0.5}, {ModalityKind::FLOW, 0.25}, {ModalityKind::POSE, 0.25}};
    CHECK(b.combined() == 1.0);

    g[ModalityKind::FLOW] = f[ModalityKind::RGB];
    CHECK_THROWS_AS(distill_loss(f, g), ContractError);
  }

  TEST_CASE("zero projection gives a zero vector; outputs have length d and are deterministic") {
    Fixture fx;
    const Clip& rgb = fx.ds.target_unlabeled[0].clip(ModalityKind::RGB);
    const TubeMask m = tube_mask(fx.student.encoder.grid, 0.75, 3);
    ProjectionHead p = fx.student.projections.at(ModalityKind::FLOW);
    const Mat a = student_projection(fx.student.encoder, p, rgb, m);
    CHECK(a.cols() == fx.cfg.embed_dim);
    CHECK(a == student_projection(fx.student.encoder, p, rgb, m));
    for (NamedParam& q : params_of(p)) q.value->setZero();
    CHECK(student_projection(fx.student.encoder, p, rgb, m).isZero());

    const Mat t = teacher_feature(fx.teachers.at(ModalityKind::POSE), fx.ds.target_unlabeled[0].clip(ModalityKind::POSE), m);
    CHECK(t.cols() == fx.cfg.embed_dim);
    CHECK_THROWS_AS(teacher_feature(fx.teachers.at(ModalityKind::POSE), rgb, m), ContractError);
  }

  TEST_CASE("teacher parameters receive exactly no gradient") {
    Fixture fx;
    TeacherSet tg;
    for (const auto& [k, e] : fx.teachers) tg.emplace(k, empty_grads(e));
    StudentModel sg = empty_grads(fx.student);
    DistillConfig dc;
    const auto b = fx.batch(0, 1);
    distill_objective(fx.student, &sg, fx.teachers, &tg, b, dc, 9);
    for (auto& [k, g] : tg)
      for (const NamedParam& p : params_of(g)) {
        INFO(p.name);
        CHECK((p.value->size() == 0 || p.value->isZero()));
      }
    // The student did receive gradient.
    CHECK(sg.encoder.pos_embed.size() > 0);
    CHECK_FALSE(sg.encoder.pos_embed.isZero());
  }

  TEST_CASE("breakdown identity, including custom weights") {
    Fixture fx;
    DistillConfig dc;
    const auto b = fx.batch(1, 2);
    const DistillLossBreakdown l = distill_objective(fx.student, nullptr, fx.teachers, nullptr, b, dc, 4);
    CHECK(l.fd.size() == 3);
    CHECK(std::abs(l.total - l.combined()) < 1e-9);
    double sum = 0.0;
    for (const auto& [k, v] : l.fd) sum += v;
    CHECK(std::abs(l.total - sum) < 1e-9);

    dc.weights[ModalityKind::POSE] = 0.5;
    const DistillLossBreakdown w = distill_objective(fx.student, nullptr, fx.teachers, nullptr, b, dc, 4);
    CHECK(std::abs(w.total - w.combined()) < 1e-9);
    CHECK(w.total < l.total);
  }

  TEST_CASE("gradient matches central finite differences") {
    Fixture fx;
    DistillConfig dc;
    const auto b = fx.batch(0, 3);
    StudentModel g = empty_grads(fx.student);
    distill_objective(fx.student, &g, fx.teachers, nullptr, b, dc, 21);
    ParamList vals = params_of(fx.student), gs = params_of(g);
    Rng pick(5);
    const double h = 1e-5;
    for (std::size_t k = 0; k < vals.size(); ++k) {
      Mat& v = *vals[k].value;
      const Mat ana = gs[k].value->size() == 0 ? Mat::Zero(v.rows(), v.cols()) : *gs[k].value;
      double diff = 0, nn = 0, an = 0;
      for (int s = 0; s < 3; ++s) {
        const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(v.size())));
        const double o = v.data()[i];
        v.data()[i] = o + h;
        const double up = distill_objective(fx.student, nullptr, fx.teachers, nullptr, b, dc, 21).total;
        v.data()[i] = o - h;
        const double down = distill_objective(fx.student, nullptr, fx.teachers, nullptr, b, dc, 21).total;
        v.data()[i] = o;
        const double num = (up - down) / (2 * h);
        diff += (num - ana.data()[i]) * (num - ana.data()[i]);
        nn += num * num;
        an += ana.data()[i] * ana.data()[i];
      }
      INFO(vals[k].name);
      CHECK(std::sqrt(diff) / std::max({std::sqrt(nn), std::sqrt(an), 1e-7}) < 1e-4);
    }
  }

  TEST_CASE("teachers are frozen and only the student changes") {
    Fixture fx;
    std::map<ModalityKind, std::uint64_t> before;
    for (const auto& [k, e] : fx.teachers) before[k] = parameter_hash(e);
    const std::uint64_t student_before = parameter_hash(fx.student);
    DistillConfig dc;
    dc.epochs = 3;
    dc.batch_size = 4;
    int rows = 0;
    run_distill(fx.student, fx.teachers, fx.ds.target_unlabeled, dc, [&](const DistillLogRow& r) {
      CHECK(std::abs(r.loss.total - r.loss.combined()) < 1e-9);
      ++rows;
    });
    CHECK(rows == 9);  // 10 unlabeled samples, batches of 4, 3 epochs
    for (const auto& [k, e] : fx.teachers) CHECK(parameter_hash(e) == before.at(k));
    CHECK(parameter_hash(fx.student) != student_before);
  }

  TEST_CASE("RGB + POSE configuration runs") {
    Fixture fx;
    const std::vector<ModalityKind> mods = {ModalityKind::RGB, ModalityKind::POSE};
    StudentModel s = init_student(fx.cfg, fx.teachers.at(ModalityKind::RGB), mods, 3);
    CHECK(s.projections.size() == 2);
    DistillConfig dc;
    dc.modalities = mods;
    dc.epochs = 1;
    std::size_t n_fd = 0;
    run_distill(s, fx.teachers, fx.ds.target_unlabeled, dc, [&](const DistillLogRow& r) { n_fd = r.loss.fd.size(); });
    CHECK(n_fd == 2);
  }

  TEST_CASE("validation and contracts") {
    DistillConfig dc;
    dc.modalities = {ModalityKind::FLOW};
    CHECK_THROWS_AS(dc.validate(), ConfigError);
    Fixture fx;
    DistillConfig ok;
    const std::vector<const MultimodalSample*> labeled = {&fx.ds.target_labeled[0]};
    CHECK_THROWS_AS(distill_objective(fx.student, nullptr, fx.teachers, nullptr, labeled, ok, 0), ContractError);
    CHECK_THROWS_AS(init_student(fx.cfg, fx.teachers.at(ModalityKind::FLOW), kAllModalities, 0), ContractError);
  }
}
