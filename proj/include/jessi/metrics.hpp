#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jessi/common.hpp"

namespace jessi {

// Positive class is "suggestion" (label 1) throughout.
struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct PrfReport {
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ConfusionCounts confusion(const std::vector<int>& predictions, const std::vector<int>& gold);

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); every 0/0 is defined as 0.
PrfReport prf1(const std::vector<int>& predictions, const std::vector<int>& gold);

struct StabilityRow {
  std::string model;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, divisor N-1
  std::size_t runs = 0;
};

StabilityRow stability_stats(const std::string& model, const std::vector<double>& scores);

struct LengthBucket {
  std::size_t lo = 0;  // inclusive
  std::size_t hi = 0;  // exclusive
  std::size_t count = 0;
  double accuracy = 0.0;
  bool defined = false;  // false for empty buckets
};

struct LengthBucketReport {
  std::size_t width = 10;
  std::vector<LengthBucket> buckets;
};

LengthBucketReport accuracy_by_length(const std::vector<int>& predictions,
                                      const std::vector<int>& gold,
                                      const std::vector<std::size_t>& lengths,
                                      std::size_t width = 10);

}  // namespace jessi
