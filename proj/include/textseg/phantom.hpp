#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textseg/grid.hpp"
#include "textseg/tensor_ops.hpp"

namespace textseg {

/// An ellipsoidal organ in physical coordinates (mm, z/y/x order).
struct PhantomOrgan {
  int class_id = 0;
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
  double intensity_mean = 0.0;
  double intensity_sigma = 0.0;
};

struct PhantomSpec {
  Dims dims{48, 48, 48};
  Spacing spacing{2.0, 1.5, 1.5};
  std::vector<PhantomOrgan> organs;  // earlier entries win on overlap
  double background_mean = -50.0;
  double background_sigma = 30.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Spleen, kidneys, liver and stomach on a 48^3 grid. With jitter, centers
/// move up to +-3 mm and radii scale by [0.9, 1.1], all drawn from `seed`.
PhantomSpec default_phantom_spec(std::uint64_t seed, bool jitter = true);

/// `key: value` lines plus one `organ: id,cz,cy,cx,rz,ry,rx,mean,sigma` per organ.
PhantomSpec parse_phantom_spec(std::string_view text);
PhantomSpec load_phantom_spec(const std::string& path);
std::string serialize_phantom_spec(const PhantomSpec& spec);

struct Phantom {
  Volume volume;  // raw intensities (HU-like)
  LabelMap labels;
};

Phantom generate_phantom(const PhantomSpec& spec);

struct ConfusionPair {
  int from = 0;
  int to = 0;
  double prob = 0.0;
};

struct LogitOracleConfig {
  double scale = 4.0;
  double noise_sigma = 0.5;
  std::vector<int> suppressed_classes;
  double suppression_margin = 2.0;
  std::vector<ConfusionPair> confusion_pairs;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stand-in for frozen visual logits: scale * onehot(G) plus Gaussian noise.
/// A suppressed organ's voxels get background logit `scale` and own-class
/// logit `scale - margin`, so they argmax to background. Confusion pairs
/// move the one-hot target from `from` to `to` with probability `prob`.
LogitTensor oracle_logits(const LabelMap& labels, const LogitOracleConfig& cfg, int num_classes = kDefaultClasses);

struct PatchSamplerConfig {
  PatchShape patch{96, 96, 96};
  double pos_fraction = 0.5;
  std::size_t samples_per_volume = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PatchSample {
  Volume volume;
  LabelMap labels;
  std::array<std::size_t, 3> offset{};
};

/// Patch origins only. Positive samples center on a uniformly chosen
/// foreground voxel, the rest are uniform over valid origins; origins are
/// clamped so the patch stays inside the grid when it fits.
std::vector<std::array<std::size_t, 3>> sample_patch_offsets(const LabelMap& labels, const PatchSamplerConfig& cfg);

std::vector<PatchSample> sample_patches(const Volume& volume, const LabelMap& labels, const PatchSamplerConfig& cfg);

/// One concrete augmentation: flips per axis (z, y, x), `rot_k` quarter turns
/// in the plane of `rot_axes`, and a multiplicative intensity factor.
struct AugmentOps {
  std::array<bool, 3> flip{false, false, false};
  std::array<int, 2> rot_axes{1, 2};
  int rot_k = 0;
  double intensity_factor = 1.0;
};

struct AugmentConfig {
  double flip_prob = 0.5;
  bool rot90 = true;
  double max_intensity_shift = 0.1;

  void validate() const;
};

AugmentOps draw_augment(const AugmentConfig& cfg, std::uint64_t seed);
std::pair<Volume, LabelMap> apply_augment(const Volume& volume, const LabelMap& labels, const AugmentOps& ops);
std::pair<Volume, LabelMap> augment(const Volume& volume, const LabelMap& labels, const AugmentConfig& cfg,
                                    std::uint64_t seed);

inline constexpr double kHuLow = -175.0;
inline constexpr double kHuHigh = 250.0;

/// Clip to [-175, 250] HU and map linearly onto [0, 1].
Volume normalize_intensity(const Volume& raw);

/// Gaussian intensity classifier used when inference starts from a volume:
/// logit_c(v) = -scale * (x - mean_c)^2 / (2 sigma_c^2) on normalized
/// intensities. Means and sigmas are stored in normalized units.
struct IntensityModel {
  std::vector<double> mean;
  std::vector<double> sigma;
  double scale = 1.0;

  int classes() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

/// Class intensities from a phantom spec; classes without an organ get a
/// far-away mean so they never win.
IntensityModel intensity_model_from_spec(const PhantomSpec& spec, int num_classes = kDefaultClasses);
IntensityModel load_intensity_model(const std::string& path);
void save_intensity_model(const IntensityModel& model, const std::string& path);

/// Per-voxel logits of an already normalized volume.
LogitTensor intensity_logits(const Volume& normalized, const IntensityModel& model);

}  // namespace textseg
