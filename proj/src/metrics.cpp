#include "jessi/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace jessi {

ConfusionCounts confusion(const std::vector<int>& predictions, const std::vector<int>& gold) {
  if (predictions.size() != gold.size())
    throw ValueError(strf("confusion: %zu predictions vs %zu gold labels", predictions.size(),
                          gold.size()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] != 0 && predictions[i] != 1)
      throw ValueError(strf("confusion: prediction %d is not 0/1", predictions[i]));
    if (gold[i] != 0 && gold[i] != 1)
      throw ValueError(strf("confusion: gold label %d is not 0/1", gold[i]));
    if (predictions[i] == 1)
      (gold[i] == 1 ? c.tp : c.fp)++;
    else
      (gold[i] == 1 ? c.fn : c.tn)++;
  }
  return c;
}

PrfReport prf1(const std::vector<int>& predictions, const std::vector<int>& gold) {
  PrfReport r;
  r.counts = confusion(predictions, gold);
  const auto& c = r.counts;
  r.precision = (c.tp + c.fp) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = (c.tp + c.fn) ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

StabilityRow stability_stats(const std::string& model, const std::vector<double>& scores) {
  if (scores.size() < 2)
    throw ValueError(strf("stability_stats: need at least 2 runs, got %zu", scores.size()));
  StabilityRow row;
  row.model = model;
  row.runs = scores.size();
  row.min = *std::min_element(scores.begin(), scores.end());
  row.max = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  row.mean = sum / static_cast<double>(scores.size());
  double ss = 0.0;
  for (double s : scores) ss += (s - row.mean) * (s - row.mean);
  row.std = std::sqrt(ss / static_cast<double>(scores.size() - 1));
  return row;
}

LengthBucketReport accuracy_by_length(const std::vector<int>& predictions,
                                      const std::vector<int>& gold,
                                      const std::vector<std::size_t>& lengths,
                                      std::size_t width) {
  if (predictions.size() != gold.size() || predictions.size() != lengths.size())
    throw ValueError("accuracy_by_length: inputs are not aligned");
  if (width == 0) throw ValueError("accuracy_by_length: width must be positive");

  std::size_t max_len = 0;
  for (std::size_t l : lengths) max_len = std::max(max_len, l);
  const std::size_t n_buckets = max_len / width + 1;

  LengthBucketReport report;
  report.width = width;
  report.buckets.resize(n_buckets);
  std::vector<std::size_t> correct(n_buckets, 0);
  for (std::size_t b = 0; b < n_buckets; ++b) {
    report.buckets[b].lo = b * width;
    report.buckets[b].hi = (b + 1) * width;
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::size_t b = lengths[i] / width;
    report.buckets[b].count++;
    if (predictions[i] == gold[i]) correct[b]++;
  }
  for (std::size_t b = 0; b < n_buckets; ++b) {
    if (report.buckets[b].count) {
      report.buckets[b].defined = true;
      report.buckets[b].accuracy =
          static_cast<double>(correct[b]) / static_cast<double>(report.buckets[b].count);
    }
  }
  return report;
}

}  // namespace jessi
