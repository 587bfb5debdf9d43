#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xnet/image.hpp"
#include "xnet/probability.hpp"

namespace xnet {

// counts[t * K + p] = pixels of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;
  std::uint64_t trace() const;
  // trace / total
  double accuracy() const;
  void merge(const ConfusionMatrix& other);
};

// Throws DimensionError on length mismatch, DomainError for labels >= K.
ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::size_t k);
ConfusionMatrix confusion(const Mask& pred, const Mask& truth, std::size_t k);

// Fraction of pixels whose most probable class (lowest index on ties) is correct.
double categorical_accuracy(const ProbabilityMap& probs, std::span<const Mask> truth);

// Pixels pooled over a test set: K probabilities per pixel plus the truth.
struct PixelPool {
  std::size_t num_classes = 0;
  std::vector<double> probs;  // pixel-major, K values per pixel
  std::vector<std::uint8_t> truth;
  std::vector<std::uint32_t> image_index;  // which appended image each pixel came from
  std::vector<std::string> image_body_part;

  std::size_t size() const { return truth.size(); }
  double prob(std::size_t pixel, std::size_t k) const { return probs[pixel * num_classes + k]; }

  // Appends batch item n of `map` with its ground truth.
  void append(const ProbabilityMap& map, std::size_t n, const Mask& truth_mask, const std::string& body_part = {});
  std::vector<std::uint8_t> argmax() const;
  std::vector<double> scores(std::size_t k) const;
};

double categorical_accuracy(const PixelPool& pool);

struct ClassStats {
  std::uint64_t support = 0;    // true pixels
  std::uint64_t predicted = 0;  // predicted pixels
  double accuracy = 0.0;        // recall: row-normalised diagonal
  double precision = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  double confidence = 0.0;
  bool auc_defined = false;
  bool confidence_defined = false;
};

struct ClassMetrics {
  std::vector<ClassStats> per_class;
  // Support-weighted averages; auc/confidence average over defined classes.
  ClassStats weighted;
  std::vector<std::string> warnings;
};

// Recall, precision and F1 (0 when P + R = 0, with a warning) per class,
// plus support-weighted averages.
ClassMetrics per_class_metrics(const ConfusionMatrix& cm);

// sum_k metric_k * support_k / sum_k support_k
double weighted_average(std::span<const double> values, std::span<const std::uint64_t> supports);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) at +inf to (1,1)
  double auc = 0.0;
};

// One-vs-rest ROC over every distinct score; AUC by the trapezoid rule, which
// equals the probability that a random positive outscores a random negative
// (ties count one half). Throws DomainError when either class is absent.
RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_positive);
RocCurve roc_auc(const PixelPool& pool, std::size_t k);

struct Confidence {
  double sum = 0.0;        // sum of p_k over pixels assigned to k
  std::size_t count = 0;   // |assigned|
  double mean() const { return sum / static_cast<double>(count); }
};

// Throws DomainError when no pixel is assigned to k.
Confidence confidence(const PixelPool& pool, std::span<const std::uint8_t> pred, std::size_t k);

struct CalibrationGap {
  std::vector<double> per_class;  // |confidence - accuracy|
  double weighted = 0.0;          // |weighted confidence - weighted accuracy|
};

CalibrationGap calibration_gap(const ClassMetrics& metrics);
// Gap from a bare (confidence, accuracy) pair.
inline double calibration_gap(double confidence, double accuracy) {
  return confidence > accuracy ? confidence - accuracy : accuracy - confidence;
}

// Soft tissue only where it is the most probable class and p_soft > tau;
// otherwise the most probable of the remaining classes.
std::vector<std::uint8_t> threshold_soft_tissue(const PixelPool& pool, double tau,
                                                const std::map<std::string, double>& body_part_tau = {});
Mask threshold_soft_tissue(const ProbabilityMap& probs, std::size_t n, double tau);

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

// Reliability histogram over the predicted-class probability.
std::vector<HistogramBin> confidence_histogram(const PixelPool& pool, std::span<const std::uint8_t> pred,
                                               std::size_t bins = 10);

struct EvaluationReport {
  ConfusionMatrix cm;
  ClassMetrics metrics;
  CalibrationGap gaps;
  std::vector<RocCurve> roc;  // empty curve where undefined
  std::vector<HistogramBin> histogram;
  double categorical_accuracy = 0.0;
  double tau = 0.0;
};

// Full report with predictions from threshold_soft_tissue(pool, tau).
EvaluationReport evaluate(const PixelPool& pool, double tau, const std::map<std::string, double>& body_part_tau = {});

std::vector<std::string> class_names(std::size_t k);

void write_metrics_csv(const EvaluationReport& report, const std::filesystem::path& path);
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);
void write_histogram_csv(std::span<const HistogramBin> bins, const std::filesystem::path& path);
// Per-class text summary table.
std::string format_summary(const EvaluationReport& report);

}  // namespace xnet
