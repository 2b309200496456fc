#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "helpers.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/distill.hpp"
#include "mmcdfsl/io.hpp"

using namespace mmcdfsl;
namespace fs = std::filesystem;

namespace {

ModelBundle sample_bundle() {
  ModelBundle b;
  b.config = testutil::tiny_config();
  b.frames = 4;
  for (ModalityKind k : {ModalityKind::RGB, ModalityKind::POSE}) {
    ModalityModel m = init_modality_model(b.config, default_modality_spec(k), 4, 3, 10 + static_cast<int>(k));
    testutil::randomize(m, 20 + static_cast<std::uint64_t>(k));
    b.teachers.emplace(k, std::move(m));
  }
  b.student = init_student(b.config, b.teachers.at(ModalityKind::RGB).encoder,
                           std::vector<ModalityKind>{ModalityKind::RGB, ModalityKind::POSE}, 5);
  b.metadata["config_hash"] = "0123456789abcdef";
  return b;
}

void truncate_file(const fs::path& p, std::uintmax_t keep) { fs::resize_file(p, keep); }

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("tensor round trip is bit exact") {
    const auto dir = testutil::temp_dir("tensor");
    Tensor4 t(2, 3, 4, 5);
    Rng rng(1);
    for (float& v : t.data()) v = static_cast<float>(rng.normal());
    t.data()[0] = -0.0f;
    t.data()[1] = std::numeric_limits<float>::denorm_min();
    io::write_tensor(dir / "t.bin", t);
    const Tensor4 back = io::read_tensor(dir / "t.bin");
    CHECK(back == t);
    CHECK(std::signbit(back.data()[0]));

    truncate_file(dir / "t.bin", fs::file_size(dir / "t.bin") - 3);
    CHECK_THROWS_AS(io::read_tensor(dir / "t.bin"), IoError);
    CHECK_THROWS_AS(io::read_tensor(dir / "missing.bin"), IoError);
    std::ofstream(dir / "junk.bin") << "not a tensor";
    CHECK_THROWS_AS(io::read_tensor(dir / "junk.bin"), IoError);
  }

  TEST_CASE("dataset round trip") {
    const auto dir = testutil::temp_dir("dataset");
    const Dataset ds = generate_dataset(testutil::tiny_spec(2));
    io::save_dataset(dir, ds, "feedface");
    CHECK(io::load_dataset(dir) == ds);
    CHECK_THROWS_AS(io::load_dataset(dir / "nowhere"), IoError);

    // A tensor whose shape disagrees with the manifest is rejected.
    fs::path victim;
    for (const auto& e : fs::recursive_directory_iterator(dir / "clips"))
      if (e.is_regular_file()) {
        victim = e.path();
        break;
      }
    REQUIRE_FALSE(victim.empty());
    io::write_tensor(victim, Tensor4(1, 2, 2, 1));
    CHECK_THROWS_AS(io::load_dataset(dir), IoError);
  }

  TEST_CASE("bundle round trip is bit exact") {
    const auto dir = testutil::temp_dir("bundle");
    ModelBundle b = sample_bundle();
    io::save_bundle(dir / "m.ckpt", b);
    ModelBundle back = io::load_bundle(dir / "m.ckpt");
    CHECK(back.config == b.config);
    CHECK(back.frames == b.frames);
    CHECK(back.metadata == b.metadata);
    CHECK(back.teachers.size() == 2);
    REQUIRE(back.student.has_value());
    CHECK(back.student->projections.size() == 2);
    CHECK(parameter_hash(back) == parameter_hash(b));
    ParamList x = params_of(b), y = params_of(back);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].name == y[i].name);
      CHECK(*x[i].value == *y[i].value);
    }
  }

  TEST_CASE("bundle corruption is detected") {
    const auto dir = testutil::temp_dir("bundle_bad");
    io::save_bundle(dir / "m.ckpt", sample_bundle());
    const auto size = fs::file_size(dir / "m.ckpt");
    fs::copy_file(dir / "m.ckpt", dir / "short.ckpt");
    truncate_file(dir / "short.ckpt", size / 2);
    CHECK_THROWS_AS(io::load_bundle(dir / "short.ckpt"), IoError);

    std::ofstream(dir / "magic.ckpt") << "something else\n";
    CHECK_THROWS_AS(io::load_bundle(dir / "magic.ckpt"), IoError);

    // Bump the version string in the header.
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    const auto at = bytes.find(ModelBundle::kVersion);
    REQUIRE(at != std::string::npos);
    bytes[at + std::string(ModelBundle::kVersion).size() - 1] = '9';
    std::ofstream(dir / "version.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(io::load_bundle(dir / "version.ckpt"), IoError);
  }

  TEST_CASE("format_double round trips") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const double v = rng.normal() * std::pow(10.0, rng.uniform(-20.0, 20.0));
      CHECK(std::stod(io::format_double(v)) == v);
    }
    CHECK(io::format_double(0.5) == "0.5");
  }

  TEST_CASE("csv round trip with hash comment") {
    const auto dir = testutil::temp_dir("csv");
    io::write_csv(dir / "a.csv", "abcd", {"x", "y"}, {{"1", "2"}, {"3", ""}});
    const io::CsvTable t = io::read_csv(dir / "a.csv");
    CHECK(t.config_hash == "abcd");
    CHECK(t.header == std::vector<std::string>{"x", "y"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1] == std::vector<std::string>{"3", ""});
    CHECK_THROWS_AS(io::read_csv(dir / "none.csv"), IoError);
  }
}
