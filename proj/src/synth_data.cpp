#include "mmcdfsl/synth_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

std::string_view to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::RGB:
      return "rgb";
    case ModalityKind::FLOW:
      return "flow";
    case ModalityKind::POSE:
      return "pose";
  }
  return "unknown";
}

ModalityKind parse_modality(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "rgb") return ModalityKind::RGB;
  if (lower == "flow") return ModalityKind::FLOW;
  if (lower == "pose") return ModalityKind::POSE;
  throw ConfigError("modality", "unknown modality '" + std::string(name) + "'");
}

std::vector<ModalityKind> parse_modality_list(std::string_view csv) {
  std::vector<ModalityKind> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', start), csv.size());
    std::string_view item = csv.substr(start, comma - start);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (!item.empty()) {
      const ModalityKind kind = parse_modality(item);
      if (std::find(out.begin(), out.end(), kind) != out.end())
        throw ConfigError("modalities", "duplicate modality '" + std::string(item) + "'");
      out.push_back(kind);
    }
    start = comma + 1;
  }
  return out;
}

std::string_view to_string(Domain domain) { return domain == Domain::Source ? "source" : "target"; }

void ModalitySpec::validate() const {
  const std::string name(to_string(kind));
  if (height <= 0 || width <= 0 || channels <= 0 || patch_size <= 0)
    throw ConfigError(name, "dimensions must be positive");
  if (height % patch_size != 0 || width % patch_size != 0)
    throw ConfigError(name, "height and width must be divisible by patch_size");
  const int expected = kind == ModalityKind::RGB ? 3 : kind == ModalityKind::FLOW ? 2 : kNumKeypoints;
  if (channels != expected)
    throw ConfigError(name, "expected " + std::to_string(expected) + " channels");
}

ModalitySpec default_modality_spec(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::RGB:
      return {ModalityKind::RGB, 32, 32, 3, 4};
    case ModalityKind::FLOW:
      return {ModalityKind::FLOW, 32, 32, 2, 4};
    case ModalityKind::POSE:
      return {ModalityKind::POSE, 16, 16, kNumKeypoints, 2};
  }
  throw ContractError("unknown modality");
}

const Clip& MultimodalSample::clip(ModalityKind kind) const {
  const auto it = clips.find(kind);
  if (it == clips.end())
    throw ContractError("sample " + std::to_string(id) + " has no " + std::string(to_string(kind)) + " clip");
  return it->second;
}

void DatasetSpec::validate() const {
  if (n_source_classes < 1) throw ConfigError("n_source_classes", "must be >= 1");
  if (n_target_classes < 1) throw ConfigError("n_target_classes", "must be >= 1");
  if (samples_per_class < 1) throw ConfigError("samples_per_class", "must be >= 1");
  if (target_labeled_per_class < 0) throw ConfigError("target_labeled_per_class", "must be >= 0");
  if (frames < 1) throw ConfigError("frames", "must be >= 1");
  if (modalities.empty()) throw ConfigError("modalities", "at least one modality required");
  if (heatmap_sigma <= 0.0) throw ConfigError("heatmap_sigma", "must be > 0");
  if (motion_scale < 0.0) throw ConfigError("motion_scale", "must be >= 0");
  if (source.noise_level < 0.0 || target.noise_level < 0.0) throw ConfigError("noise", "must be >= 0");
  for (const DomainAppearance& a : {source, target})
    if (a.texture_id < 0 || a.texture_id > 2) throw ConfigError("texture_id", "must be 0, 1 or 2");

  std::set<ModalityKind> seen;
  for (const ModalitySpec& m : modalities) {
    m.validate();
    if (!seen.insert(m.kind).second) throw ConfigError(std::string(to_string(m.kind)), "duplicate modality");
    if (m.grid_h() != modalities.front().grid_h() || m.grid_w() != modalities.front().grid_w())
      throw ConfigError(std::string(to_string(m.kind)), "token grid differs from other modalities");
  }

  const int s0 = source_class_offset;
  const int s1 = s0 + n_source_classes;
  const int t0 = resolved_target_offset();
  const int t1 = t0 + n_target_classes;
  if (s0 < 0 || t0 < 0) throw ConfigError("class_offset", "class offsets must be >= 0");
  if (s0 < t1 && t0 < s1) throw ConfigError("target_class_offset", "source and target class ranges overlap");
}

namespace {

enum class Path { Linear, Zigzag, Circular, Swing };

struct MotionPattern {
  Path path;
  double angle_deg;
  double speed;  // px/frame for linear paths, amplitude scale otherwise
  int spin;      // +1 counter-clockwise, -1 clockwise
};

// Source and target draw from disjoint pattern tables.
constexpr std::array<MotionPattern, 8> kSourcePatterns = {{
    {Path::Linear, 0.0, 2.0, 1},
    {Path::Linear, 90.0, 2.0, 1},
    {Path::Linear, 180.0, 2.0, 1},
    {Path::Linear, 270.0, 2.0, 1},
    {Path::Zigzag, 45.0, 1.6, 1},
    {Path::Zigzag, 225.0, 1.6, 1},
    {Path::Circular, 0.0, 1.0, 1},
    {Path::Circular, 0.0, 1.0, -1},
}};

constexpr std::array<MotionPattern, 8> kTargetPatterns = {{
    {Path::Linear, 45.0, 2.0, 1},
    {Path::Linear, 135.0, 2.0, 1},
    {Path::Linear, 225.0, 2.0, 1},
    {Path::Linear, 315.0, 2.0, 1},
    {Path::Zigzag, 135.0, 1.6, 1},
    {Path::Zigzag, 315.0, 1.6, 1},
    {Path::Swing, 0.0, 1.0, 1},
    {Path::Swing, 90.0, 1.0, 1},
}};

MotionPattern pattern_for(Domain domain, int class_index) {
  const auto& table = domain == Domain::Source ? kSourcePatterns : kTargetPatterns;
  if (class_index < static_cast<int>(table.size())) return table[static_cast<std::size_t>(class_index)];
  // Beyond the tables: linear paths at golden-angle directions, offset per domain.
  const double angle = std::fmod(137.50776 * (class_index + (domain == Domain::Source ? 0 : 64)), 360.0);
  return {Path::Linear, angle, 1.5 + 0.25 * (class_index % 3), 1};
}

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// Sprite centre offsets relative to frame 0, for frames 0..T (T+1 entries).
std::vector<Vec2> trajectory_offsets(const MotionPattern& p, int frames, double scale, Rng& rng) {
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const Vec2 u{std::cos(theta), std::sin(theta)};
  const Vec2 n{-u.y, u.x};
  const double jitter = rng.uniform(0.85, 1.15);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double omega = 2.0 * std::numbers::pi / 8.0;

  std::vector<Vec2> out(static_cast<std::size_t>(frames) + 1);
  for (int t = 0; t <= frames; ++t) {
    Vec2 o;
    switch (p.path) {
      case Path::Linear:
        o = {t * p.speed * jitter * u.x, t * p.speed * jitter * u.y};
        break;
      case Path::Zigzag: {
        const double along = t * p.speed * jitter;
        const double across = 2.5 * std::sin(std::numbers::pi * t / 2.0);
        o = {along * u.x + across * n.x, along * u.y + across * n.y};
        break;
      }
      case Path::Circular: {
        const double r = 5.5 * jitter;
        const double a = phase + p.spin * omega * t;
        o = {r * (std::cos(a) - std::cos(phase)), r * (std::sin(a) - std::sin(phase))};
        break;
      }
      case Path::Swing: {
        const double amp = 7.0 * jitter;
        const double s = amp * (std::sin(omega * t + phase) - std::sin(phase));
        o = {s * u.x, s * u.y};
        break;
      }
    }
    out[static_cast<std::size_t>(t)] = {o.x * scale, o.y * scale};
  }
  return out;
}

// 21 points of a hand-like layout (wrist + 5 fingers x 4 joints), in units of the sprite radius.
std::array<Vec2, kNumKeypoints> keypoint_layout() {
  std::array<Vec2, kNumKeypoints> kp{};
  kp[0] = {0.0, 0.9};
  for (int f = 0; f < 5; ++f) {
    const double a = (-60.0 + 30.0 * f - 90.0) * std::numbers::pi / 180.0;
    for (int j = 0; j < 4; ++j) {
      const double d = 0.3 + 0.4 * j;
      kp[static_cast<std::size_t>(1 + 4 * f + j)] = {d * std::cos(a), 0.3 + d * std::sin(a)};
    }
  }
  return kp;
}

struct Disc {
  Vec2 c;
  double r;
  std::array<double, 3> color;
};

// Fraction of the pixel (x, y) covered by the disc, 4x4 supersampled.
double coverage(const Disc& d, int x, int y) {
  const double dx0 = x + 0.5 - d.c.x;
  const double dy0 = y + 0.5 - d.c.y;
  if (dx0 * dx0 + dy0 * dy0 > (d.r + 1.0) * (d.r + 1.0)) return 0.0;
  int inside = 0;
  for (int sy = 0; sy < 4; ++sy)
    for (int sx = 0; sx < 4; ++sx) {
      const double px = x + (sx + 0.5) / 4.0 - d.c.x;
      const double py = y + (sy + 0.5) / 4.0 - d.c.y;
      inside += px * px + py * py <= d.r * d.r;
    }
  return inside / 16.0;
}

// Every channel is brighter than any background value, so a sprite always reads as a
// positive bump in intensity whatever its hue.
std::array<double, 3> sprite_color(Rng& rng) {
  std::array<double, 3> c{rng.uniform(0.65, 0.85), rng.uniform(0.65, 0.85), rng.uniform(0.65, 0.85)};
  c[static_cast<std::size_t>(rng.below(3))] = rng.uniform(0.9, 1.0);
  return c;
}

// Dark, so that static clutter never looks like a sprite.
std::array<double, 3> clutter_color(Rng& rng) {
  return {rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
}

// Static background, H x W x 3, values in [0, 0.42] before brightness/noise.
std::vector<double> render_background(int texture, int h, int w, Rng& rng) {
  std::vector<double> bg(static_cast<std::size_t>(h) * w * 3);
  const double alpha = rng.uniform(0.0, std::numbers::pi);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const std::array<double, 3> tint{0.30, 0.32, 0.28};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double s = (x * std::cos(alpha) + y * std::sin(alpha));
      for (int c = 0; c < 3; ++c) {
        double v;
        if (texture == 0) {
          v = tint[static_cast<std::size_t>(c)] + 0.1 * std::sin(2.0 * std::numbers::pi * s / w + phase + c);
        } else {
          v = tint[static_cast<std::size_t>(c)] + (std::sin(2.0 * std::numbers::pi * s / 6.0 + phase) > 0 ? 0.1 : -0.1);
        }
        bg[(static_cast<std::size_t>(y) * w + x) * 3 + c] = v;
      }
    }
  if (texture == 2) {
    const int n_clutter = 2 + static_cast<int>(rng.below(2));
    for (int k = 0; k < n_clutter; ++k) {
      const Disc d{{rng.uniform(0.0, w), rng.uniform(0.0, h)}, rng.uniform(2.0, 3.5), clutter_color(rng)};
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double a = coverage(d, x, y);
          if (a <= 0.0) continue;
          for (int c = 0; c < 3; ++c) {
            double& v = bg[(static_cast<std::size_t>(y) * w + x) * 3 + c];
            v = (1.0 - a) * v + a * d.color[static_cast<std::size_t>(c)];
          }
        }
    }
  }
  return bg;
}

MultimodalSample render_sample(const DatasetSpec& spec, Domain domain, const MotionPattern& pattern,
                               std::optional<int> label, std::uint64_t id, std::uint64_t seed) {
  Rng rng(seed);
  const DomainAppearance& look = domain == Domain::Source ? spec.source : spec.target;

  // Scene coordinates follow the RGB resolution when present.
  int scene_w = spec.modalities.front().width, scene_h = spec.modalities.front().height;
  for (const ModalitySpec& m : spec.modalities)
    if (m.kind == ModalityKind::RGB) scene_w = m.width, scene_h = m.height;

  const double radius = rng.uniform(5.25, 7.0);
  const auto color = sprite_color(rng);
  const std::vector<Vec2> offsets = trajectory_offsets(pattern, spec.frames, spec.motion_scale, rng);

  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  for (const Vec2& o : offsets) {
    min_x = std::min(min_x, o.x), max_x = std::max(max_x, o.x);
    min_y = std::min(min_y, o.y), max_y = std::max(max_y, o.y);
  }
  const double margin = radius + 1.0;
  auto pick_start = [&](double lo_off, double hi_off, int extent) {
    const double lo = margin - lo_off;
    const double hi = extent - margin - hi_off;
    return hi > lo ? rng.uniform(lo, hi) : 0.5 * (lo + hi);
  };
  const Vec2 start{pick_start(min_x, max_x, scene_w), pick_start(min_y, max_y, scene_h)};
  std::vector<Vec2> centres(offsets.size());
  for (std::size_t t = 0; t < offsets.size(); ++t) centres[t] = {start.x + offsets[t].x, start.y + offsets[t].y};

  MultimodalSample sample;
  sample.id = id;
  sample.label = label;
  sample.domain = domain;
  const int T = spec.frames;

  for (const ModalitySpec& m : spec.modalities) {
    Clip clip{m, Tensor4(T, m.height, m.width, m.channels)};
    const double sx = static_cast<double>(m.width) / scene_w;
    const double sy = static_cast<double>(m.height) / scene_h;
    switch (m.kind) {
      case ModalityKind::RGB: {
        // One scene per domain: the background is shared by every clip of the domain.
        Rng scene_rng(derive_seed(spec.seed, "scene", {static_cast<std::uint64_t>(domain)}));
        const std::vector<double> bg = render_background(look.texture_id, m.height, m.width, scene_rng);
        for (int t = 0; t < T; ++t) {
          const Disc sprite{{centres[static_cast<std::size_t>(t)].x * sx, centres[static_cast<std::size_t>(t)].y * sy},
                            radius * sx, color};
          for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
              const double a = coverage(sprite, x, y);
              for (int c = 0; c < 3; ++c) {
                // The shift is scene illumination: it moves the background, not the sprite.
                double v = bg[(static_cast<std::size_t>(y) * m.width + x) * 3 + c] + look.brightness_shift;
                v = (1.0 - a) * v + a * color[static_cast<std::size_t>(c)];
                if (look.noise_level > 0.0) v += look.noise_level * rng.normal();
                clip.frames.at(t, y, x, c) = static_cast<float>((v - kRgbMean) / kRgbStd);
              }
            }
        }
        break;
      }
      case ModalityKind::FLOW: {
        const double flow_noise = 0.5 * look.noise_level;
        for (int t = 0; t < T; ++t) {
          const Vec2 p = centres[static_cast<std::size_t>(t)];
          const Vec2 q = centres[static_cast<std::size_t>(t) + 1];
          const Disc sprite{{p.x * sx, p.y * sy}, radius * sx, color};
          const double dx = (q.x - p.x) * sx, dy = (q.y - p.y) * sy;
          for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
              const bool on = coverage(sprite, x, y) >= 0.5;
              double fx = on ? dx : 0.0, fy = on ? dy : 0.0;
              if (flow_noise > 0.0) {
                fx += flow_noise * rng.normal();
                fy += flow_noise * rng.normal();
              }
              clip.frames.at(t, y, x, 0) = static_cast<float>(fx);
              clip.frames.at(t, y, x, 1) = static_cast<float>(fy);
            }
        }
        break;
      }
      case ModalityKind::POSE: {
        static const auto layout = keypoint_layout();
        for (int t = 0; t < T; ++t) {
          std::array<Keypoint, kNumKeypoints> kps;
          for (int j = 0; j < kNumKeypoints; ++j) {
            const Vec2 c = centres[static_cast<std::size_t>(t)];
            // Snapped to the pixel grid so a visible keypoint peaks at exactly 1.
            const double px = std::round((c.x + radius * layout[static_cast<std::size_t>(j)].x) * sx - 0.5);
            const double py = std::round((c.y + radius * layout[static_cast<std::size_t>(j)].y) * sy - 0.5);
            if (px >= 0.0 && px < m.width && py >= 0.0 && py < m.height) kps[static_cast<std::size_t>(j)] = {{px, py}};
          }
          const Tensor4 hm = make_heatmap(kps, m.height, m.width, spec.heatmap_sigma);
          std::copy(hm.data().begin(), hm.data().end(),
                    clip.frames.data().begin() + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(hm.size()));
        }
        break;
      }
    }
    sample.clips.emplace(m.kind, std::move(clip));
  }
  return sample;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  std::uint64_t next_id = 0;

  auto fill = [&](std::vector<MultimodalSample>& pool, Domain domain, int n_classes, int offset, int per_class,
                  bool labeled, std::uint64_t pool_tag) {
    pool.reserve(static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(per_class));
    for (int c = 0; c < n_classes; ++c) {
      const MotionPattern pattern = pattern_for(domain, c);
      for (int i = 0; i < per_class; ++i) {
        const std::uint64_t seed =
            derive_seed(spec.seed, "sample", {pool_tag, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
        std::optional<int> label;
        if (labeled) label = offset + c;
        pool.push_back(render_sample(spec, domain, pattern, label, next_id++, seed));
      }
    }
  };

  fill(ds.source, Domain::Source, spec.n_source_classes, spec.source_class_offset, spec.samples_per_class, true, 0);
  fill(ds.target_unlabeled, Domain::Target, spec.n_target_classes, spec.resolved_target_offset(),
       spec.samples_per_class, false, 1);
  fill(ds.target_labeled, Domain::Target, spec.n_target_classes, spec.resolved_target_offset(),
       spec.target_labeled_per_class, true, 2);
  return ds;
}

Tensor4 make_heatmap(std::span<const Keypoint> keypoints, int height, int width, double sigma) {
  if (sigma <= 0.0) throw ConfigError("heatmap_sigma", "sigma must be > 0");
  if (static_cast<int>(keypoints.size()) != kNumKeypoints)
    throw ContractError("make_heatmap expects " + std::to_string(kNumKeypoints) + " keypoints");
  Tensor4 out(1, height, width, kNumKeypoints);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j < kNumKeypoints; ++j) {
    const Keypoint& kp = keypoints[static_cast<std::size_t>(j)];
    if (!kp) continue;
    const double kx = (*kp)[0], ky = (*kp)[1];
    if (kx < 0.0 || kx >= width || ky < 0.0 || ky >= height)
      throw ContractError("keypoint " + std::to_string(j) + " outside the image");
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d2 = (x - kx) * (x - kx) + (y - ky) * (y - ky);
        out.at(0, y, x, j) = static_cast<float>(std::exp(-d2 * inv));
      }
  }
  return out;
}

Episode sample_episode(std::span<const MultimodalSample> pool, int n_way, int k_shot, int n_query,
                       std::uint64_t seed) {
  if (n_way < 1 || k_shot < 1 || n_query < 0) throw EpisodeError("need n_way >= 1, k_shot >= 1, n_query >= 0");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!pool[i].label) throw ContractError("episode pool contains an unlabeled sample");
    by_class[*pool[i].label].push_back(i);
  }
  std::vector<int> eligible;
  for (const auto& [cls, members] : by_class)
    if (static_cast<int>(members.size()) >= k_shot + n_query) eligible.push_back(cls);
  if (static_cast<int>(eligible.size()) < n_way)
    throw EpisodeError("pool has " + std::to_string(eligible.size()) + " classes with >= " +
                       std::to_string(k_shot + n_query) + " samples, need " + std::to_string(n_way));

  Rng rng(derive_seed(seed, "episode"));
  rng.shuffle(eligible.begin(), eligible.end());

  Episode ep;
  ep.class_ids.assign(eligible.begin(), eligible.begin() + n_way);
  for (int local = 0; local < n_way; ++local) {
    std::vector<std::size_t> members = by_class[ep.class_ids[static_cast<std::size_t>(local)]];
    rng.shuffle(members.begin(), members.end());
    for (int k = 0; k < k_shot; ++k) {
      ep.support.push_back(members[static_cast<std::size_t>(k)]);
      ep.support_labels.push_back(local);
    }
    for (int k = 0; k < n_query; ++k) {
      ep.query.push_back(members[static_cast<std::size_t>(k_shot + k)]);
      ep.query_labels.push_back(local);
    }
  }
  return ep;
}

}  // namespace mmcdfsl
