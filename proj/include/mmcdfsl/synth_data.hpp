#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmcdfsl/tensor.hpp"

namespace mmcdfsl {

enum class ModalityKind : std::uint8_t { RGB = 0, FLOW = 1, POSE = 2 };

inline constexpr std::array<ModalityKind, 3> kAllModalities = {ModalityKind::RGB, ModalityKind::FLOW,
                                                               ModalityKind::POSE};

std::string_view to_string(ModalityKind kind);
/// Accepts "rgb", "flow", "pose" (case-insensitive). Throws ConfigError.
ModalityKind parse_modality(std::string_view name);
/// Comma-separated list, e.g. "rgb,flow,pose".
std::vector<ModalityKind> parse_modality_list(std::string_view csv);

struct ModalitySpec {
  ModalityKind kind = ModalityKind::RGB;
  int height = 32;
  int width = 32;
  int channels = 3;
  int patch_size = 4;

  int grid_h() const { return height / patch_size; }
  int grid_w() const { return width / patch_size; }
  /// Throws ConfigError unless dimensions are positive and patch-divisible.
  void validate() const;

  bool operator==(const ModalitySpec&) const = default;
};

/// Desk-scale geometry: RGB/FLOW 32x32 patch 4, POSE 16x16 patch 2 (8x8 token grid each).
ModalitySpec default_modality_spec(ModalityKind kind);

enum class Domain : std::uint8_t { Source = 0, Target = 1 };
std::string_view to_string(Domain domain);

/// RGB clips are stored normalized: (intensity - kRgbMean) / kRgbStd.
inline constexpr double kRgbMean = 0.45;
inline constexpr double kRgbStd = 0.225;

struct Clip {
  ModalitySpec modality;
  Tensor4 frames;  // T x H x W x C

  bool operator==(const Clip&) const = default;
};

struct MultimodalSample {
  std::uint64_t id = 0;
  std::map<ModalityKind, Clip> clips;
  std::optional<int> label;
  Domain domain = Domain::Source;

  /// Throws ContractError if the modality is missing.
  const Clip& clip(ModalityKind kind) const;

  bool operator==(const MultimodalSample&) const = default;
};

/// Appearance knobs that make up the domain gap. Motion is unaffected by them.
struct DomainAppearance {
  int texture_id = 0;  // 0 smooth gradient, 1 stripes, 2 stripes + static clutter
  double brightness_shift = 0.0;  // added to the background only
  double noise_level = 0.0;
};

struct DatasetSpec {
  int n_source_classes = 8;
  int n_target_classes = 8;
  /// Samples per class for the labeled source pool and the unlabeled target pool.
  int samples_per_class = 12;
  /// Samples per class in the labeled target pool used for episodes.
  int target_labeled_per_class = 20;
  int frames = 8;
  int source_class_offset = 0;
  /// Defaults to n_source_classes when unset.
  std::optional<int> target_class_offset;
  std::vector<ModalitySpec> modalities = {default_modality_spec(ModalityKind::RGB),
                                          default_modality_spec(ModalityKind::FLOW),
                                          default_modality_spec(ModalityKind::POSE)};
  DomainAppearance source{0, 0.0, 0.02};
  DomainAppearance target{2, -0.1, 0.10};
  /// Multiplies every sprite displacement; 0 gives a static scene.
  double motion_scale = 1.0;
  /// Heatmap std in POSE pixels (10 px at 56x56, rescaled to the 16x16 toy grid).
  double heatmap_sigma = 10.0 * 16.0 / 56.0;
  std::uint64_t seed = 0;

  int resolved_target_offset() const { return target_class_offset.value_or(source_class_offset + n_source_classes); }
  /// Throws ConfigError on non-divisible dims, misaligned grids, overlapping class ranges.
  void validate() const;
};

struct Dataset {
  std::vector<MultimodalSample> source;
  std::vector<MultimodalSample> target_unlabeled;
  std::vector<MultimodalSample> target_labeled;

  bool operator==(const Dataset&) const = default;
};

Dataset generate_dataset(const DatasetSpec& spec);

inline constexpr int kNumKeypoints = 21;
/// Keypoint in pixel coordinates (x, y); nullopt when absent.
using Keypoint = std::optional<std::array<double, 2>>;

/// Unnormalized Gaussian heatmaps, one channel per keypoint. Output is 1 x H x W x 21.
Tensor4 make_heatmap(std::span<const Keypoint> keypoints, int height, int width, double sigma);

struct Episode {
  /// Indices into the pool the episode was drawn from, class-major.
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
  /// Global class ids; position in this vector is the episode-local label.
  std::vector<int> class_ids;
  std::vector<int> support_labels;
  std::vector<int> query_labels;

  int n_way() const { return static_cast<int>(class_ids.size()); }
  bool operator==(const Episode&) const = default;
};

/// N-way K-shot episode with q queries per class, without replacement.
/// Throws EpisodeError if the pool lacks classes or samples.
Episode sample_episode(std::span<const MultimodalSample> pool, int n_way, int k_shot, int n_query,
                       std::uint64_t seed);

}  // namespace mmcdfsl
