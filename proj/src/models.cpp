#include "mmcdfsl/models.hpp"

#include <string>

#include "mmcdfsl/errors.hpp"

namespace mmcdfsl {

void EncoderConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim", "must be >= 1");
  if (depth < 0) throw ConfigError("depth", "must be >= 0");
  if (heads < 1 || embed_dim % heads != 0) throw ConfigError("heads", "embed_dim must be divisible by heads");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio", "must be >= 1");
  if (tubelet_size < 1) throw ConfigError("tubelet_size", "must be >= 1");
  if (decoder_dim < 1) throw ConfigError("decoder_dim", "must be >= 1");
  if (decoder_depth < 0) throw ConfigError("decoder_depth", "must be >= 0");
  if (decoder_heads < 1 || decoder_dim % decoder_heads != 0)
    throw ConfigError("decoder_heads", "decoder_dim must be divisible by decoder_heads");
}

// ---------------------------------------------------------------------------

void list_params(Linear& m, const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "weight", &m.weight});
  out.push_back({prefix + "bias", &m.bias});
}

void list_params(LayerNormParams& m, const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "gamma", &m.gamma});
  out.push_back({prefix + "beta", &m.beta});
}

void list_params(Block& m, const std::string& prefix, ParamList& out) {
  list_params(m.norm1, prefix + "norm1.", out);
  list_params(m.qkv, prefix + "qkv.", out);
  list_params(m.proj, prefix + "proj.", out);
  list_params(m.norm2, prefix + "norm2.", out);
  list_params(m.fc1, prefix + "fc1.", out);
  list_params(m.fc2, prefix + "fc2.", out);
}

void list_params(Encoder& m, const std::string& prefix, ParamList& out) {
  list_params(m.patch_embed, prefix + "patch_embed.", out);
  out.push_back({prefix + "pos_embed", &m.pos_embed});
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    list_params(m.blocks[i], prefix + "blocks." + std::to_string(i) + ".", out);
  list_params(m.norm, prefix + "norm.", out);
}

void list_params(Decoder& m, const std::string& prefix, ParamList& out) {
  list_params(m.embed, prefix + "embed.", out);
  out.push_back({prefix + "mask_token", &m.mask_token});
  out.push_back({prefix + "pos_embed", &m.pos_embed});
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    list_params(m.blocks[i], prefix + "blocks." + std::to_string(i) + ".", out);
  list_params(m.norm, prefix + "norm.", out);
  list_params(m.head, prefix + "head.", out);
}

void list_params(ClassifierHead& m, const std::string& prefix, ParamList& out) {
  list_params(m.fc, prefix + "fc.", out);
}

void list_params(ProjectionHead& m, const std::string& prefix, ParamList& out) {
  list_params(m.fc1, prefix + "fc1.", out);
  list_params(m.fc2, prefix + "fc2.", out);
}

void list_params(ModalityModel& m, const std::string& prefix, ParamList& out) {
  list_params(m.encoder, prefix + "encoder.", out);
  list_params(m.decoder, prefix + "decoder.", out);
  list_params(m.classifier, prefix + "classifier.", out);
}

void list_params(StudentModel& m, const std::string& prefix, ParamList& out) {
  list_params(m.encoder, prefix + "encoder.", out);
  for (auto& [kind, head] : m.projections)
    list_params(head, prefix + "projection." + std::string(to_string(kind)) + ".", out);
}

void list_params(ModelBundle& m, const std::string& prefix, ParamList& out) {
  for (auto& [kind, model] : m.teachers) list_params(model, prefix + "teacher." + std::string(to_string(kind)) + ".", out);
  if (m.student) list_params(*m.student, prefix + "student.", out);
}

// ---------------------------------------------------------------------------

namespace {

Mat trunc_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.truncated_normal(0.02);
  return m;
}

Linear init_linear(int in, int out, Rng& rng) { return {trunc_normal(in, out, rng), Mat::Zero(1, out)}; }

// Factorized sin-cos table over (slice, row, column); a quarter of the channels encode time.
Mat sincos_positions(const TokenGrid& grid, int dim) {
  const int dt = 2 * (dim / 8);
  const int dy = 2 * ((dim - dt) / 4);
  const int dx = dim - dt - dy;
  Mat out = Mat::Zero(grid.total(), dim);
  auto fill = [&](Eigen::Index row, int offset, int width, double pos) {
    for (int j = 0; j < width; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / width);
      out(row, offset + j) = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  };
  for (int t = 0; t < grid.temporal_slices; ++t)
    for (int y = 0; y < grid.grid_h; ++y)
      for (int x = 0; x < grid.grid_w; ++x) {
        const Eigen::Index row = (static_cast<Eigen::Index>(t) * grid.grid_h + y) * grid.grid_w + x;
        fill(row, 0, dt, t);
        fill(row, dt, dy, y);
        fill(row, dt + dy, dx, x);
      }
  return out;
}

LayerNormParams init_norm(int d) { return {Mat::Ones(1, d), Mat::Zero(1, d)}; }

Block init_block(int d, int heads, int mlp_ratio, Rng& rng) {
  Block b;
  b.norm1 = init_norm(d);
  b.qkv = init_linear(d, 3 * d, rng);
  b.proj = init_linear(d, d, rng);
  b.norm2 = init_norm(d);
  b.fc1 = init_linear(d, mlp_ratio * d, rng);
  b.fc2 = init_linear(mlp_ratio * d, d, rng);
  b.heads = heads;
  return b;
}

ad::Var norm_forward(ad::Tape& t, ad::Var x, const LayerNormParams& m, LayerNormParams* g) {
  return ad::layer_norm(x, t.parameter(m.gamma, g ? &g->gamma : nullptr), t.parameter(m.beta, g ? &g->beta : nullptr));
}

ad::Var block_forward(ad::Tape& t, ad::Var x, const Block& m, Block* g) {
  ad::Var h = norm_forward(t, x, m.norm1, g ? &g->norm1 : nullptr);
  h = linear(t, h, m.qkv, g ? &g->qkv : nullptr);
  h = ad::attention(h, m.heads);
  h = linear(t, h, m.proj, g ? &g->proj : nullptr);
  x = ad::add(x, h);
  h = norm_forward(t, x, m.norm2, g ? &g->norm2 : nullptr);
  h = ad::gelu(linear(t, h, m.fc1, g ? &g->fc1 : nullptr));
  h = linear(t, h, m.fc2, g ? &g->fc2 : nullptr);
  return ad::add(x, h);
}

void check_mask(const Encoder& e, const TubeMask& mask) {
  if (!(mask.grid == e.grid)) throw ContractError("mask grid does not match the encoder token grid");
}

}  // namespace

Encoder init_encoder(const EncoderConfig& cfg, const ModalitySpec& modality, int frames, Rng& rng) {
  cfg.validate();
  modality.validate();
  Encoder e;
  e.modality = modality;
  e.tubelet_size = cfg.tubelet_size;
  e.grid = TokenGrid::from_frames(frames, cfg.tubelet_size, modality.grid_h(), modality.grid_w());
  const int volume = modality.patch_size * modality.patch_size * cfg.tubelet_size * modality.channels;
  e.patch_embed = init_linear(volume, cfg.embed_dim, rng);
  e.pos_embed = sincos_positions(e.grid, cfg.embed_dim);
  for (int i = 0; i < cfg.depth; ++i) e.blocks.push_back(init_block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, rng));
  e.norm = init_norm(cfg.embed_dim);
  return e;
}

Decoder init_decoder(const EncoderConfig& cfg, const Encoder& encoder, Rng& rng) {
  Decoder d;
  d.embed = init_linear(encoder.embed_dim(), cfg.decoder_dim, rng);
  d.mask_token = trunc_normal(1, cfg.decoder_dim, rng);
  d.pos_embed = sincos_positions(encoder.grid, cfg.decoder_dim);
  for (int i = 0; i < cfg.decoder_depth; ++i)
    d.blocks.push_back(init_block(cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio, rng));
  d.norm = init_norm(cfg.decoder_dim);
  d.head = init_linear(cfg.decoder_dim, encoder.patch_volume(), rng);
  return d;
}

ClassifierHead init_classifier(int in_dim, int n_classes, Rng& rng) {
  if (n_classes < 1) throw ConfigError("n_classes", "must be >= 1");
  return {init_linear(in_dim, n_classes, rng)};
}

ProjectionHead init_projection(const EncoderConfig& cfg, Rng& rng) {
  return {init_linear(cfg.embed_dim, cfg.projection_hidden(), rng),
          init_linear(cfg.projection_hidden(), cfg.embed_dim, rng)};
}

ModalityModel init_modality_model(const EncoderConfig& cfg, const ModalitySpec& modality, int frames,
                                  int n_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init", {static_cast<std::uint64_t>(modality.kind)}));
  ModalityModel m;
  m.encoder = init_encoder(cfg, modality, frames, rng);
  m.decoder = init_decoder(cfg, m.encoder, rng);
  m.classifier = init_classifier(cfg.embed_dim, n_classes, rng);
  return m;
}

// ---------------------------------------------------------------------------

Mat extract_patches(const Clip& clip, int tubelet_size, std::span<const int> indices) {
  const ModalitySpec& ms = clip.modality;
  const Tensor4& f = clip.frames;
  const int p = ms.patch_size;
  const int gw = ms.grid_w(), S = ms.grid_h() * ms.grid_w();
  const int slices = f.frames() / tubelet_size;
  const int C = ms.channels;
  Mat out(static_cast<Eigen::Index>(indices.size()), p * p * tubelet_size * C);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    if (idx < 0 || idx >= slices * S) throw ContractError("extract_patches: token index out of range");
    const int slice = idx / S, s = idx % S;
    const int y0 = (s / gw) * p, x0 = (s % gw) * p;
    double* dst = out.row(static_cast<Eigen::Index>(r)).data();
    for (int dt = 0; dt < tubelet_size; ++dt)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < C; ++c) *dst++ = f.at(slice * tubelet_size + dt, y0 + py, x0 + px, c);
  }
  return out;
}

Mat extract_all_patches(const Clip& clip, int tubelet_size) {
  const int n = (clip.frames.frames() / tubelet_size) * clip.modality.grid_h() * clip.modality.grid_w();
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  return extract_patches(clip, tubelet_size, all);
}

void check_clip(const Encoder& encoder, const Clip& clip) {
  if (!(clip.modality == encoder.modality))
    throw ContractError("clip modality " + std::string(to_string(clip.modality.kind)) + " does not match encoder " +
                        std::string(to_string(encoder.modality.kind)));
  const Tensor4& f = clip.frames;
  if (f.height() != encoder.modality.height || f.width() != encoder.modality.width ||
      f.channels() != encoder.modality.channels ||
      f.frames() != encoder.grid.temporal_slices * encoder.tubelet_size)
    throw ContractError("clip tensor dimensions do not match the encoder");
}

Mat tokenize(const Encoder& encoder, const Clip& clip) {
  check_clip(encoder, clip);
  Mat tokens = extract_all_patches(clip, encoder.tubelet_size) * encoder.patch_embed.weight;
  tokens.rowwise() += encoder.patch_embed.bias.row(0);
  return tokens;
}

EncodeResult encode(const Encoder& encoder, const Clip& clip, const TubeMask& mask) {
  ad::Tape t;
  const EncoderVars v = encoder_forward(t, encoder, nullptr, clip, mask);
  return {v.tokens.value(), v.pooled.value()};
}

Mat classify(const ClassifierHead& head, const Mat& pooled) {
  if (pooled.cols() != head.fc.weight.rows()) throw ContractError("classify: feature dimension mismatch");
  Mat logits = pooled * head.fc.weight;
  logits.rowwise() += head.fc.bias.row(0);
  return logits;
}

Reconstruction reconstruct(const Decoder& decoder, const Mat& encoded_tokens, const TubeMask& mask) {
  ad::Tape t;
  const ad::Var pred = decoder_forward(t, decoder, nullptr, t.constant(encoded_tokens), mask);
  return {pred.value(), mask.masked_indices()};
}

Mat project(const ProjectionHead& head, const Mat& pooled) {
  ad::Tape t;
  return projection_forward(t, head, nullptr, t.constant(pooled)).value();
}

// ---------------------------------------------------------------------------

ad::Var linear(ad::Tape& t, ad::Var x, const Linear& m, Linear* g) {
  return ad::affine(x, t.parameter(m.weight, g ? &g->weight : nullptr), t.parameter(m.bias, g ? &g->bias : nullptr));
}

EncoderVars encoder_forward(ad::Tape& t, const Encoder& m, Encoder* g, const Mat& visible_patches,
                            const std::vector<int>& visible_indices) {
  if (visible_patches.rows() != static_cast<Eigen::Index>(visible_indices.size()) || visible_indices.empty())
    throw ContractError("encoder_forward: need one patch row per visible index");
  if (visible_patches.cols() != m.patch_volume()) throw ContractError("encoder_forward: patch volume mismatch");
  ad::Var x = linear(t, t.constant(visible_patches), m.patch_embed, g ? &g->patch_embed : nullptr);
  const ad::Var pos = t.parameter(m.pos_embed, g ? &g->pos_embed : nullptr);
  x = ad::add(x, ad::gather_rows(pos, visible_indices));
  for (std::size_t i = 0; i < m.blocks.size(); ++i) x = block_forward(t, x, m.blocks[i], g ? &g->blocks[i] : nullptr);
  x = norm_forward(t, x, m.norm, g ? &g->norm : nullptr);
  return {x, ad::mean_rows(x)};
}

EncoderVars encoder_forward(ad::Tape& t, const Encoder& m, Encoder* g, const Clip& clip, const TubeMask& mask) {
  check_clip(m, clip);
  check_mask(m, mask);
  const std::vector<int> visible = mask.visible_indices();
  return encoder_forward(t, m, g, extract_patches(clip, m.tubelet_size, visible), visible);
}

ad::Var decoder_forward(ad::Tape& t, const Decoder& m, Decoder* g, ad::Var encoded, const TubeMask& mask) {
  const std::vector<int> visible = mask.visible_indices();
  const std::vector<int> masked = mask.masked_indices();
  if (encoded.rows() != static_cast<Eigen::Index>(visible.size()))
    throw ContractError("decoder_forward: encoded tokens do not match the mask");
  if (masked.empty()) return t.constant(Mat(0, m.head.weight.cols()));
  ad::Var x = linear(t, encoded, m.embed, g ? &g->embed : nullptr);
  x = ad::scatter_fill(x, visible, t.parameter(m.mask_token, g ? &g->mask_token : nullptr), mask.grid.total());
  x = ad::add(x, t.parameter(m.pos_embed, g ? &g->pos_embed : nullptr));
  for (std::size_t i = 0; i < m.blocks.size(); ++i) x = block_forward(t, x, m.blocks[i], g ? &g->blocks[i] : nullptr);
  x = ad::gather_rows(x, masked);
  x = norm_forward(t, x, m.norm, g ? &g->norm : nullptr);
  return linear(t, x, m.head, g ? &g->head : nullptr);
}

ad::Var classifier_forward(ad::Tape& t, const ClassifierHead& m, ClassifierHead* g, ad::Var pooled) {
  return linear(t, pooled, m.fc, g ? &g->fc : nullptr);
}

ad::Var projection_forward(ad::Tape& t, const ProjectionHead& m, ProjectionHead* g, ad::Var pooled) {
  ad::Var h = ad::gelu(linear(t, pooled, m.fc1, g ? &g->fc1 : nullptr));
  return linear(t, h, m.fc2, g ? &g->fc2 : nullptr);
}

std::vector<Mat> gradients(const std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>& loss_fn,
                           std::span<Mat* const> params) {
  ad::Tape t;
  std::vector<Mat> grads(params.size());
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) leaves.push_back(t.parameter(*params[i], &grads[i]));
  const ad::Var loss = loss_fn(t, leaves);
  t.backward(loss);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].size() == 0) grads[i] = Mat::Zero(params[i]->rows(), params[i]->cols());
  return grads;
}

}  // namespace mmcdfsl
