#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "textseg/embedding.hpp"
#include "textseg/fusion.hpp"
#include "textseg/metrics.hpp"
#include "textseg/phantom.hpp"
#include "textseg/prompt.hpp"
#include "textseg/refinement.hpp"
#include "textseg/spatial_prior.hpp"

namespace textseg {

struct TrainRunConfig {
  int epochs = 20;
  int iterations_per_epoch = 100;
  double lr = 2e-3;
  double min_lr = 0.0;
  int cycles = 1;
  double weight_decay = 1e-4;
  LossConfig loss;
  std::uint64_t seed = 0;
  PatchShape patch{32, 32, 32};
  double pos_fraction = 0.5;
  int num_classes = kDefaultClasses;
  RelationPriorConfig prior;
  /// Inference-time post-process; stored so a run's config is complete.
  bool restrict_to_prompt = false;

  void validate() const;
  /// `key: value` text; its crc32 is the checkpoint's config hash.
  std::string serialize() const;
  std::string hash() const;
  static TrainRunConfig parse(std::string_view text);
  static TrainRunConfig load(const std::string& path);
};

/// Source of the frozen visual logits for a training patch.
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  /// `labels` is the ground-truth patch of volume `volume_index` at `offset`.
  virtual LogitTensor logits(std::size_t volume_index, const LabelMap& labels, std::array<std::size_t, 3> offset,
                             const ParsedPrompt& prompt, std::uint64_t seed) const = 0;
  /// crc32 over any stored state; training asserts it does not change.
  virtual std::uint32_t checksum() const { return 0; }
};

/// Suppression oracle. With `suppress_prompted`, every organ the prompt
/// mentions is hidden from the visual logits of that iteration.
class OracleLogitSource final : public LogitSource {
 public:
  OracleLogitSource(LogitOracleConfig cfg, int num_classes, bool suppress_prompted)
      : cfg_(std::move(cfg)), classes_(num_classes), suppress_prompted_(suppress_prompted) {}
  LogitTensor logits(std::size_t volume_index, const LabelMap& labels, std::array<std::size_t, 3> offset,
                     const ParsedPrompt& prompt, std::uint64_t seed) const override;

 private:
  LogitOracleConfig cfg_;
  int classes_;
  bool suppress_prompted_;
};

/// Precomputed full-volume logits, cropped per patch.
class FixedLogitSource final : public LogitSource {
 public:
  explicit FixedLogitSource(std::vector<LogitTensor> logits) : logits_(std::move(logits)) {}
  LogitTensor logits(std::size_t volume_index, const LabelMap& labels, std::array<std::size_t, 3> offset,
                     const ParsedPrompt& prompt, std::uint64_t seed) const override;
  std::uint32_t checksum() const override;

 private:
  std::vector<LogitTensor> logits_;
};

struct EpochSummary {
  LossBreakdown mean;          // over all iterations of the epoch
  double rel_mean = 0.0;       // over iterations that carried a relation
  std::size_t rel_iterations = 0;
  double lr = 0.0;
};

struct TrainResult {
  FusionCheckpoint checkpoint;
  std::vector<std::string> log;  // header line first, then one line per iteration
  std::vector<EpochSummary> epochs;
};

/// Fusion training: per iteration a patch, a prompt whose organs it contains
/// (any prompt of the volume if none fits), ground-truth relation anchors,
/// one AdamW step on the fusion parameters. lr is annealed per epoch.
/// Throws CorpusMisaligned when a prompt names an organ that no volume holds
/// or a volume has no usable prompt.
TrainResult train_fusion(const std::vector<LabelMap>& volumes, const LogitSource& source,
                         const std::vector<CorpusRecord>& corpus, const TextEncoder& encoder,
                         const TrainRunConfig& cfg);

/// Tab-separated log header and line formatting (shortest round-trip doubles).
std::string train_log_header();
std::string format_train_log_line(int epoch, int iteration, double lr, const LossBreakdown& loss);

struct InferenceConfig {
  bool restrict_to_prompt = false;
  RelationPriorConfig prior;
  PatchShape patch{96, 96, 96};
  double overlap = 0.5;
};

struct InferenceResult {
  LabelMap mask;
  std::vector<std::uint8_t> presence_used;
  std::vector<Relation> relations_used;
  std::vector<double> alpha_bias;
  bool fallback_visual_only = false;
};

/// Prompt-conditioned inference on visual logits.
InferenceResult infer(const LogitTensor& visual, std::string_view prompt, const Lexicon& lex,
                      const TextEncoder& encoder, const FusionParams& fusion, const RefineParams* refine,
                      const InferenceConfig& cfg);

/// Same, computing visual logits from a raw volume with the intensity model
/// (normalization and sliding window).
InferenceResult infer_volume(const Volume& raw, const IntensityModel& model, std::string_view prompt,
                             const Lexicon& lex, const TextEncoder& encoder, const FusionParams& fusion,
                             const RefineParams* refine, const InferenceConfig& cfg);

/// Visual logits of a raw volume, as infer_volume computes them.
LogitTensor visual_logits_from_volume(const Volume& raw, const IntensityModel& model, const InferenceConfig& cfg);

/// Every `<name>.vol` label map in `pred_dir` is paired with `gt_dir/<name>.vol`
/// (MissingPair otherwise). Writes `<name>.report.txt`/`.kv` per volume and
/// `aggregate.report.txt`/`.kv` into `out_dir`; returns the aggregate.
MetricsReport evaluate_run(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_dir,
                           int num_classes, const Lexicon& lex);

}  // namespace textseg
