#include "dtnet/metrics.hpp"

#include <fstream>
#include <stdexcept>

namespace dtnet::metrics {

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, int class_id,
                          int num_classes) {
  if (pred.shape() != truth.shape())
    throw std::invalid_argument("confusion: prediction and truth shapes differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const int p = pred[i], t = truth[i];
    if (num_classes > 0 && (p >= num_classes || t >= num_classes))
      throw std::invalid_argument("confusion: label out of range");
    const bool pc = p == class_id, tc = t == class_id;
    if (pc && tc) ++c.tp;
    else if (pc && !tc) ++c.fp;
    else if (!pc && tc) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(const ConfusionCounts& c) {
  const uint64_t n = c.total();
  return n == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}

double sensitivity(const ConfusionCounts& c) {
  return c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double specificity(const ConfusionCounts& c) {
  return c.tn + c.fp == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

double dice(const ConfusionCounts& c) {
  const uint64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

ClassScores scores(const ConfusionCounts& c) {
  return {accuracy(c), sensitivity(c), specificity(c), dice(c)};
}

RegionScores region_scores(const LabelMap& pred, const LabelMap& truth, const RegionSpec& region) {
  if (pred.shape() != truth.shape())
    throw std::invalid_argument("region_scores: prediction and truth shapes differ");
  if (region.labels.empty())
    throw std::invalid_argument("region_scores: empty label set");
  auto in_region = [&](int l) {
    for (int r : region.labels)
      if (r == l) return true;
    return false;
  };
  // |M1|: predicted-inside count; |N1|: truth-inside count; wedge terms count
  // where both maps agree on membership.
  uint64_t m1 = 0, n1 = 0, both1 = 0, n0 = 0, both0 = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool mp = in_region(pred[i]), nt = in_region(truth[i]);
    m1 += mp;
    n1 += nt;
    both1 += mp && nt;
    n0 += !nt;
    both0 += !mp && !nt;
  }
  RegionScores s;
  s.dice_plus = (m1 + n1) == 0 ? 1.0 : static_cast<double>(both1) / ((m1 + n1) / 2.0);
  s.sens_plus = n1 == 0 ? 1.0 : static_cast<double>(both1) / static_cast<double>(n1);
  s.spec_plus = n0 == 0 ? 1.0 : static_cast<double>(both0) / static_cast<double>(n0);
  return s;
}

ClassScores aggregate_micro(const std::vector<ConfusionCounts>& per_image) {
  if (per_image.empty()) throw std::invalid_argument("aggregate: empty batch");
  ConfusionCounts sum;
  for (const auto& c : per_image) sum += c;
  return scores(sum);
}

ClassScores aggregate_macro(const std::vector<ConfusionCounts>& per_image) {
  if (per_image.empty()) throw std::invalid_argument("aggregate: empty batch");
  ClassScores m;
  for (const auto& c : per_image) {
    const ClassScores s = scores(c);
    m.accuracy += s.accuracy;
    m.sensitivity += s.sensitivity;
    m.specificity += s.specificity;
    m.dice += s.dice;
  }
  const double n = static_cast<double>(per_image.size());
  m.accuracy /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  m.dice /= n;
  return m;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<int, ClassScores>>& per_class,
                       const std::vector<std::pair<std::string, RegionScores>>& regions) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write metrics report: " + path);
  f << "class,accuracy,sensitivity,specificity,dice\n";
  for (const auto& [cls, s] : per_class)
    f << cls << ',' << s.accuracy << ',' << s.sensitivity << ',' << s.specificity << ',' << s.dice
      << '\n';
  if (!regions.empty()) {
    f << "region,dice_plus,sens_plus,spec_plus\n";
    for (const auto& [name, s] : regions)
      f << name << ',' << s.dice_plus << ',' << s.sens_plus << ',' << s.spec_plus << '\n';
  }
}

}  // namespace dtnet::metrics
