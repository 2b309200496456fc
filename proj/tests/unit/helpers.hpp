#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "mmcdfsl/models.hpp"
#include "mmcdfsl/rng.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace testutil {

using namespace mmcdfsl;

inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.decoder_dim = 8;
  c.decoder_depth = 1;
  c.decoder_heads = 2;
  return c;
}

/// 4 frames (two temporal slices) of the default geometry, few classes.
inline DatasetSpec tiny_spec(std::uint64_t seed = 7) {
  DatasetSpec s;
  s.n_source_classes = 3;
  s.n_target_classes = 5;
  s.samples_per_class = 2;
  s.target_labeled_per_class = 4;
  s.frames = 4;
  s.seed = seed;
  return s;
}

inline Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Randomizes every parameter so that zero-initialized biases and unit gains do not hide bugs.
template <class M>
void randomize(M& model, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (NamedParam& p : params_of(model))
    for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] += scale * rng.normal();
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mmcdfsl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace testutil
