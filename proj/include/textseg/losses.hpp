#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "textseg/grid.hpp"

namespace textseg {

struct LossConfig {
  double epsilon = 1e-5;  // Dice smoothing
  double gamma = 2.0;     // focal exponent
  double lambda_text = 0.2;
  double lambda_rel = 0.2;
  double prob_clamp = 1e-7;  // floor inside every log

  void validate() const;
};

struct LossBreakdown {
  double dice = 0.0;
  double ce = 0.0;
  double focal = 0.0;
  double seg = 0.0;
  double text = 0.0;
  double rel = 0.0;
  double total = 0.0;
};

// Every loss below takes probabilities (softmax output) and a ground truth
// of the same shape. When `dprobs` is given, weight * dLoss/dprobs is added
// into it; softmax_backward then maps that onto the raw logits. Voxel sums
// run in storage order so values are bit-reproducible.

/// Soft Dice with squared denominators, computed per channel and averaged
/// over all channels (background included).
double dice_loss(const LogitTensor& probs, const LogitTensor& gt, double eps, LogitTensor* dprobs = nullptr,
                 double weight = 1.0);

/// -mean over voxels of sum_c g(c) log(max(p(c), clamp)).
double cross_entropy(const LogitTensor& probs, const LogitTensor& gt, double clamp, LogitTensor* dprobs = nullptr,
                     double weight = 1.0);

double focal_loss(const LogitTensor& probs, const LogitTensor& gt, double gamma, double clamp,
                  LogitTensor* dprobs = nullptr, double weight = 1.0);

double dice_focal(const LogitTensor& probs, const LogitTensor& gt, const LossConfig& cfg,
                  LogitTensor* dprobs = nullptr, double weight = 1.0);
double dice_ce(const LogitTensor& probs, const LogitTensor& gt, const LossConfig& cfg, LogitTensor* dprobs = nullptr,
               double weight = 1.0);

/// Binary cross-entropy between sigmoid(bias) and the presence vector over
/// foreground classes 1..C-1, normalized by C-1. Class 0 gets no gradient.
double text_alignment_loss(std::span<const double> bias, std::span<const std::uint8_t> presence, double clamp,
                           std::vector<double>* dbias = nullptr, double weight = 1.0);

/// The prior field of one relation; its region is {v : field(v) > 0}.
struct RelationRegion {
  int target = 0;
  std::vector<double> field;
};

/// Mean over relations of the region-averaged binary cross-entropy between the
/// target-class probability and the ground-truth target indicator. Relations
/// with an empty region are skipped; if all are skipped the loss is 0.
double relation_loss_from_probs(const LogitTensor& probs, const std::vector<RelationRegion>& relations,
                                const LabelMap& gt, double clamp, LogitTensor* dprobs = nullptr, double weight = 1.0);

/// Same as above, starting from fused logits.
double relation_loss(const LogitTensor& fused_logits, const std::vector<RelationRegion>& relations, const LabelMap& gt,
                     double clamp);

/// total = seg + lambda_text * text + lambda_rel * rel.
LossBreakdown total_fusion_loss(const LossBreakdown& parts, const LossConfig& cfg);

/// dL/dz_c = p_c (g_c - sum_k p_k g_k) per voxel.
LogitTensor softmax_backward(const LogitTensor& probs, const LogitTensor& dprobs);

}  // namespace textseg
