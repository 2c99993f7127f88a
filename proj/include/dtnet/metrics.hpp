#pragma once

// Confusion-matrix accounting and segmentation scores (accuracy, sensitivity,
// specificity, Dice) plus region-composed Dice+/Sens+/Spec+ variants. All
// functions are pure; aggregation is associative over counts.

#include <cstdint>
#include <string>
#include <vector>

#include "dtnet/tensor.hpp"

namespace dtnet::metrics {

using LabelMap = Tensor<uint8_t>;

struct ConfusionCounts {
  uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// One-vs-rest pixel tally for class_id. Throws on shape mismatch or when a
/// label reaches num_classes (pass 0 to skip the range check).
ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, int class_id,
                          int num_classes = 0);

// Division-by-zero conventions: an empty foreground in both maps scores 1.
double accuracy(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);
double dice(const ConfusionCounts& c);

struct RegionSpec {
  std::string name;
  std::vector<int> labels;  // ground-truth labels composing the region
};

struct RegionScores {
  double dice_plus = 0, sens_plus = 0, spec_plus = 0;
};

/// Binarizes both maps by region membership and applies the set-form scores.
RegionScores region_scores(const LabelMap& pred, const LabelMap& truth, const RegionSpec& region);

struct ClassScores {
  double accuracy = 0, sensitivity = 0, specificity = 0, dice = 0;
};

ClassScores scores(const ConfusionCounts& c);

/// micro: sums confusion counts before scoring. macro: averages the
/// per-image scores. Both are reported.
ClassScores aggregate_micro(const std::vector<ConfusionCounts>& per_image);
ClassScores aggregate_macro(const std::vector<ConfusionCounts>& per_image);

/// CSV report: `class,accuracy,sensitivity,specificity,dice` rows followed by
/// a `region,dice_plus,sens_plus,spec_plus` section.
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<int, ClassScores>>& per_class,
                       const std::vector<std::pair<std::string, RegionScores>>& regions);

}  // namespace dtnet::metrics
