#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "textseg/grid.hpp"
#include "textseg/prompt.hpp"

namespace textseg {

/// 2|P n G| / (|P| + |G|); 1 when both masks are empty.
double dsc(const BinaryMask& pred, const BinaryMask& gt);

/// |P n G| / |P u G|; 1 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// Mean over the given foreground IoUs (background is never passed in).
double miou(const std::vector<double>& per_class_iou);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f_beta = 0.0;
};

/// Standard definitions; any 0/0 is reported as 0.
PrecisionRecall precision_recall_fbeta(const BinaryMask& pred, const BinaryMask& gt, double beta);

/// Linear interpolation at rank q * (n - 1) over ascending values.
double percentile_linear(std::vector<double> values, double q);

/// Distances (mm) from every set voxel of `from` to the nearest set voxel of
/// `to`, in storage order.
std::vector<double> directed_distances(const BinaryMask& from, const BinaryMask& to);

/// Symmetric 95th-percentile Hausdorff distance in mm. 0 when both masks are
/// empty, nullopt when exactly one is.
std::optional<double> hd95(const BinaryMask& pred, const BinaryMask& gt);

/// (|P| - |G|) / |G| * 100; nullopt when G is empty.
std::optional<double> rvd(const BinaryMask& pred, const BinaryMask& gt);

struct OrganMetrics {
  double dsc = 0.0;
  double iou = 0.0;
  double f1_50 = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> hd95;
  std::optional<double> rvd;
};

struct MetricsReport {
  /// Only organs present in prediction or ground truth.
  std::map<int, OrganMetrics> per_organ;
  /// Foreground classes absent from both maps.
  std::vector<int> undefined_organs;
  OrganMetrics averages;
  int hd95_undefined = 0;
  int rvd_undefined = 0;
  double miou = 0.0;
};

MetricsReport evaluate_labelmaps(const LabelMap& pred, const LabelMap& gt, int num_classes = kDefaultClasses);

/// As above, with F1_50 computed from soft predictions thresholded at 0.5.
MetricsReport evaluate_with_probabilities(const LabelMap& pred, const LogitTensor& probs, const LabelMap& gt,
                                          int num_classes = kDefaultClasses);

/// Averages per-organ entries over several reports (defined entries only) and
/// averages their per-report averages.
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

/// Text table with the columns Organ DSC IoU F1_50 F1 F2 Precision Recall HD95.
std::string format_report_table(const MetricsReport& report, const Lexicon& lex);

/// `key: value` lines, including RVD and undefined counts.
std::string format_report_kv(const MetricsReport& report, const Lexicon& lex);

}  // namespace textseg
