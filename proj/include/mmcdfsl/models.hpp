#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmcdfsl/autodiff.hpp"
#include "mmcdfsl/masking.hpp"
#include "mmcdfsl/rng.hpp"
#include "mmcdfsl/synth_data.hpp"
#include "mmcdfsl/tensor.hpp"

namespace mmcdfsl {

struct EncoderConfig {
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int tubelet_size = 2;
  int decoder_dim = 32;
  int decoder_depth = 1;
  int decoder_heads = 2;

  int projection_hidden() const { return 2 * embed_dim; }
  /// Throws ConfigError (e.g. embed_dim not divisible by heads).
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

struct Linear {
  Mat weight;  // in x out
  Mat bias;    // 1 x out
};

struct LayerNormParams {
  Mat gamma;
  Mat beta;
};

/// Pre-norm transformer block.
struct Block {
  LayerNormParams norm1;
  Linear qkv;
  Linear proj;
  LayerNormParams norm2;
  Linear fc1;
  Linear fc2;
  int heads = 1;
};

struct Encoder {
  ModalitySpec modality;
  TokenGrid grid;
  int tubelet_size = 2;
  Linear patch_embed;
  Mat pos_embed;  // I x d, one row per token of the full grid
  std::vector<Block> blocks;
  LayerNormParams norm;

  int embed_dim() const { return static_cast<int>(pos_embed.cols()); }
  int patch_volume() const { return static_cast<int>(patch_embed.weight.rows()); }
};

/// Maps visible encoder tokens plus a shared mask token to per-token patch predictions.
struct Decoder {
  Linear embed;
  Mat mask_token;  // 1 x decoder_dim
  Mat pos_embed;   // I x decoder_dim
  std::vector<Block> blocks;
  LayerNormParams norm;
  Linear head;  // decoder_dim -> patch volume
};

struct ClassifierHead {
  Linear fc;
  int n_classes() const { return static_cast<int>(fc.weight.cols()); }
};

/// d -> 2d -> d perceptron with a GELU in between.
struct ProjectionHead {
  Linear fc1;
  Linear fc2;
};

struct ModalityModel {
  Encoder encoder;
  Decoder decoder;
  ClassifierHead classifier;
};

struct StudentModel {
  Encoder encoder;
  std::map<ModalityKind, ProjectionHead> projections;
};

/// Everything a checkpoint carries.
struct ModelBundle {
  static constexpr const char* kVersion = "mmcdfsl-bundle/1";
  EncoderConfig config;
  int frames = 8;
  std::map<ModalityKind, ModalityModel> teachers;
  std::optional<StudentModel> student;
  std::map<std::string, std::string> metadata;
};

// ---------------------------------------------------------------------------
// Parameter enumeration. Names are stable and used as checkpoint keys.

struct NamedParam {
  std::string name;
  Mat* value;
};
using ParamList = std::vector<NamedParam>;

void list_params(Linear& m, const std::string& prefix, ParamList& out);
void list_params(LayerNormParams& m, const std::string& prefix, ParamList& out);
void list_params(Block& m, const std::string& prefix, ParamList& out);
void list_params(Encoder& m, const std::string& prefix, ParamList& out);
void list_params(Decoder& m, const std::string& prefix, ParamList& out);
void list_params(ClassifierHead& m, const std::string& prefix, ParamList& out);
void list_params(ProjectionHead& m, const std::string& prefix, ParamList& out);
void list_params(ModalityModel& m, const std::string& prefix, ParamList& out);
void list_params(StudentModel& m, const std::string& prefix, ParamList& out);
void list_params(ModelBundle& m, const std::string& prefix, ParamList& out);

template <class M>
ParamList params_of(M& m, const std::string& prefix = "") {
  ParamList out;
  list_params(m, prefix, out);
  return out;
}

/// Same structure as `m` with every parameter emptied; a gradient buffer that
/// records which parameters were reached by backward().
template <class M>
M empty_grads(const M& m) {
  M g = m;
  for (NamedParam& p : params_of(g)) p.value->resize(0, 0);
  return g;
}

/// Same structure as `m` with every parameter zero-filled.
template <class M>
M zeros_like(const M& m) {
  M g = m;
  for (NamedParam& p : params_of(g)) p.value->setZero();
  return g;
}

/// FNV-1a over names, shapes and raw bytes of every parameter.
template <class M>
std::uint64_t parameter_hash(const M& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const NamedParam& p : params_of(const_cast<M&>(m))) {
    eat(p.name.data(), p.name.size());
    const std::int64_t shape[2] = {p.value->rows(), p.value->cols()};
    eat(shape, sizeof shape);
    eat(p.value->data(), static_cast<std::size_t>(p.value->size()) * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Initialization: truncated-normal(0.02) weights, zero biases, unit LayerNorm gain,
// sin-cos positional tables (still trained).

Encoder init_encoder(const EncoderConfig& cfg, const ModalitySpec& modality, int frames, Rng& rng);
Decoder init_decoder(const EncoderConfig& cfg, const Encoder& encoder, Rng& rng);
ClassifierHead init_classifier(int in_dim, int n_classes, Rng& rng);
ProjectionHead init_projection(const EncoderConfig& cfg, Rng& rng);
ModalityModel init_modality_model(const EncoderConfig& cfg, const ModalitySpec& modality, int frames,
                                  int n_classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tokenization and plain (tape-free) inference.

/// Tubelet patches for the given token indices (all tokens when `indices` is empty
/// and `all` is true). Each row is flattened as (frame, y, x, channel).
Mat extract_patches(const Clip& clip, int tubelet_size, std::span<const int> indices);
Mat extract_all_patches(const Clip& clip, int tubelet_size);

/// Throws ContractError when the clip does not match the encoder's modality.
void check_clip(const Encoder& encoder, const Clip& clip);

/// Full linear patch embedding, I x d.
Mat tokenize(const Encoder& encoder, const Clip& clip);

struct EncodeResult {
  Mat tokens;  // I_vis x d
  Mat pooled;  // 1 x d
};

EncodeResult encode(const Encoder& encoder, const Clip& clip, const TubeMask& mask);
Mat classify(const ClassifierHead& head, const Mat& pooled);

struct Reconstruction {
  Mat predictions;  // n_masked x patch volume
  std::vector<int> masked_indices;
};
Reconstruction reconstruct(const Decoder& decoder, const Mat& encoded_tokens, const TubeMask& mask);
Mat project(const ProjectionHead& head, const Mat& pooled);

// ---------------------------------------------------------------------------
// Tape forward passes. A null gradient pointer freezes that module.

struct EncoderVars {
  ad::Var tokens;
  ad::Var pooled;
};

ad::Var linear(ad::Tape& t, ad::Var x, const Linear& m, Linear* g);
EncoderVars encoder_forward(ad::Tape& t, const Encoder& m, Encoder* g, const Mat& visible_patches,
                            const std::vector<int>& visible_indices);
/// Encodes the visible part of `clip` under `mask`.
EncoderVars encoder_forward(ad::Tape& t, const Encoder& m, Encoder* g, const Clip& clip, const TubeMask& mask);
/// Predictions for the masked positions (ascending token index).
ad::Var decoder_forward(ad::Tape& t, const Decoder& m, Decoder* g, ad::Var encoded, const TubeMask& mask);
ad::Var classifier_forward(ad::Tape& t, const ClassifierHead& m, ClassifierHead* g, ad::Var pooled);
ad::Var projection_forward(ad::Tape& t, const ProjectionHead& m, ProjectionHead* g, ad::Var pooled);

// ---------------------------------------------------------------------------
// Generic gradients.

/// Evaluates `loss_fn` on a fresh tape with every parameter in `params` bound
/// to a gradient buffer and returns one gradient per parameter (zeros where
/// the loss does not depend on it). Throws NumericError on a non-finite loss.
std::vector<Mat> gradients(const std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>& loss_fn,
                           std::span<Mat* const> params);

}  // namespace mmcdfsl
