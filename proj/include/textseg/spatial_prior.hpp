#pragma once

#include <map>
#include <vector>

#include "textseg/grid.hpp"
#include "textseg/losses.hpp"
#include "textseg/prompt.hpp"

namespace textseg {

/// Per-voxel distances (mm, or mm^2 for the squared transform).
struct DistanceField {
  Dims dims;
  Spacing spacing;
  std::vector<double> values;
};

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest set
/// voxel, with per-axis spacing. Separable: one 1D lower-envelope pass per
/// axis (Felzenszwalb & Huttenlocher). Throws EmptyMask.
DistanceField squared_edt(const BinaryMask& mask);

/// Spherical dilation: voxels whose distance to the mask is <= radius_mm.
BinaryMask dilate(const BinaryMask& mask, double radius_mm);

struct RelationPriorConfig {
  /// Falloff extent in voxels; converted to mm with the mean spacing.
  double d_max = 8.0;
  /// Measure distance from a dilated anchor instead of the raw one.
  bool dilate_anchor = false;
  double dilation_radius = 1.0;  // voxels

  double d_max_mm(const Spacing& sp) const { return d_max * sp.mean(); }
  void validate() const;
};

/// max(0, 1 - d / (d_max + 1)), both in the same unit.
double relation_prior_value(double distance, double d_max);

/// Prior field over the anchor's grid; 1 on the anchor, linear decay to 0.
std::vector<double> relation_prior(const BinaryMask& anchor, const RelationPriorConfig& cfg);

struct PriorAssembly {
  LogitTensor prior;                    // C channels, values in [0, 1]
  std::vector<RelationRegion> regions;  // one per non-degenerate relation
  std::vector<Relation> skipped;        // relations whose anchor mask was empty or missing
};

/// Each relation writes its field into the TARGET channel; several relations
/// on one target combine by elementwise max. Other channels stay zero.
PriorAssembly assemble_prior_tensor(const std::vector<Relation>& relations,
                                    const std::map<int, BinaryMask>& anchor_masks, int num_classes, Dims dims,
                                    Spacing spacing, const RelationPriorConfig& cfg);

/// Same, taking anchor regions from a label map (ground truth during training,
/// visual argmax at inference).
PriorAssembly assemble_prior_from_labels(const std::vector<Relation>& relations, const LabelMap& anchors,
                                         int num_classes, const RelationPriorConfig& cfg);

}  // namespace textseg
