#include "xnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "xnet/error.hpp"

namespace xnet {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < num_classes; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < num_classes; ++t) s += at(t, pred);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < num_classes; ++k) s += at(k, k);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw DimensionError("confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::size_t k) {
  if (pred.size() != truth.size()) {
    throw DimensionError("confusion: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= k || truth[i] >= k) {
      throw DomainError("confusion: label " + std::to_string(std::max(pred[i], truth[i])) + " outside " +
                        std::to_string(k) + " classes");
    }
    ++cm.at(truth[i], pred[i]);
  }
  return cm;
}

ConfusionMatrix confusion(const Mask& pred, const Mask& truth, std::size_t k) {
  if (pred.height != truth.height || pred.width != truth.width) throw DimensionError("confusion: mask shapes differ");
  return confusion(pred.pixels, truth.pixels, k);
}

double categorical_accuracy(const ProbabilityMap& probs, std::span<const Mask> truth) {
  check_labels(probs.tensor().shape(), truth);
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    const Mask pred = probs.argmax(n);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred.pixels[i] == truth[n].pixels[i];
    total += pred.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

void PixelPool::append(const ProbabilityMap& map, std::size_t n, const Mask& truth_mask, const std::string& body_part) {
  if (num_classes == 0) num_classes = map.num_classes();
  if (map.num_classes() != num_classes) throw DimensionError("pixel pool: class count changed");
  if (truth_mask.height != map.height() || truth_mask.width != map.width()) {
    throw DimensionError("pixel pool: truth mask does not match probability map");
  }
  const auto image = static_cast<std::uint32_t>(image_body_part.size());
  image_body_part.push_back(body_part);
  const std::size_t hw = map.height() * map.width();
  const auto data = map.tensor().data();
  for (std::size_t q = 0; q < hw; ++q) {
    for (std::size_t k = 0; k < num_classes; ++k) probs.push_back(data[(n * num_classes + k) * hw + q]);
    if (truth_mask.pixels[q] >= num_classes) throw DomainError("pixel pool: truth label outside class range");
    truth.push_back(truth_mask.pixels[q]);
    image_index.push_back(image);
  }
}

std::vector<std::uint8_t> PixelPool::argmax() const {
  std::vector<std::uint8_t> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < num_classes; ++k) {
      if (prob(i, k) > prob(i, best)) best = k;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::vector<double> PixelPool::scores(std::size_t k) const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = prob(i, k);
  return out;
}

double categorical_accuracy(const PixelPool& pool) {
  return confusion(pool.argmax(), pool.truth, pool.num_classes).accuracy();
}

double weighted_average(std::span<const double> values, std::span<const std::uint64_t> supports) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += values[i] * static_cast<double>(supports[i]);
    den += static_cast<double>(supports[i]);
  }
  return den == 0.0 ? 0.0 : num / den;
}

std::vector<std::string> class_names(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    if (k == kNumTissueClasses) {
      names.push_back(i == kOpenBeam ? "open_beam" : i == kSoftTissue ? "soft_tissue" : "bone");
    } else {
      names.push_back("class_" + std::to_string(i));
    }
  }
  return names;
}

ClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
  ClassMetrics out;
  const auto names = class_names(cm.num_classes);
  std::vector<double> recall, precision, f1;
  std::vector<std::uint64_t> supports;
  for (std::size_t k = 0; k < cm.num_classes; ++k) {
    ClassStats s;
    s.support = cm.row_sum(k);
    s.predicted = cm.col_sum(k);
    const double tp = static_cast<double>(cm.at(k, k));
    s.accuracy = s.support == 0 ? 0.0 : tp / static_cast<double>(s.support);
    s.precision = s.predicted == 0 ? 0.0 : tp / static_cast<double>(s.predicted);
    if (s.predicted == 0) out.warnings.push_back("class '" + names[k] + "' is never predicted; precision and F1 set to 0");
    const double pr = s.precision + s.accuracy;
    s.f1 = pr == 0.0 ? 0.0 : 2.0 * s.precision * s.accuracy / pr;
    out.per_class.push_back(s);
    recall.push_back(s.accuracy);
    precision.push_back(s.precision);
    f1.push_back(s.f1);
    supports.push_back(s.support);
  }
  out.weighted.support = std::accumulate(supports.begin(), supports.end(), std::uint64_t{0});
  out.weighted.predicted = cm.total();
  out.weighted.accuracy = weighted_average(recall, supports);
  out.weighted.precision = weighted_average(precision, supports);
  out.weighted.f1 = weighted_average(f1, supports);
  return out;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> is_positive) {
  if (scores.size() != is_positive.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  std::uint64_t pos = 0;
  for (auto p : is_positive) pos += p != 0;
  const std::uint64_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw DomainError("roc_auc: AUC undefined without both positives and negatives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  std::uint64_t area2 = 0;  // twice the trapezoid area in units of 1/(pos*neg)
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    const std::uint64_t tp_prev = tp, fp_prev = fp;
    for (; i < order.size() && scores[order[i]] == thr; ++i) {
      if (is_positive[order[i]]) ++tp; else ++fp;
    }
    area2 += (fp - fp_prev) * (tp + tp_prev);
    curve.points.push_back({thr, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

RocCurve roc_auc(const PixelPool& pool, std::size_t k) {
  std::vector<std::uint8_t> positive(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) positive[i] = pool.truth[i] == k;
  return roc_auc(pool.scores(k), positive);
}

Confidence confidence(const PixelPool& pool, std::span<const std::uint8_t> pred, std::size_t k) {
  if (pred.size() != pool.size()) throw DimensionError("confidence: prediction length differs from pool");
  Confidence c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == k) {
      c.sum += pool.prob(i, k);
      ++c.count;
    }
  }
  if (c.count == 0) throw DomainError("confidence undefined: no pixel assigned to class " + std::to_string(k));
  return c;
}

CalibrationGap calibration_gap(const ClassMetrics& metrics) {
  CalibrationGap g;
  for (const auto& s : metrics.per_class) {
    g.per_class.push_back(s.confidence_defined ? calibration_gap(s.confidence, s.accuracy) : 0.0);
  }
  g.weighted = calibration_gap(metrics.weighted.confidence, metrics.weighted.accuracy);
  return g;
}

namespace {

std::uint8_t best_excluding(const PixelPool& pool, std::size_t i, std::size_t skip) {
  std::size_t best = skip == 0 ? 1 : 0;
  for (std::size_t k = 0; k < pool.num_classes; ++k) {
    if (k != skip && pool.prob(i, k) > pool.prob(i, best)) best = k;
  }
  return static_cast<std::uint8_t>(best);
}

}  // namespace

std::vector<std::uint8_t> threshold_soft_tissue(const PixelPool& pool, double tau,
                                                const std::map<std::string, double>& body_part_tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("soft-tissue threshold must be in [0, 1]");
  std::vector<std::uint8_t> out = pool.argmax();
  std::vector<double> image_tau(pool.image_body_part.size(), tau);
  for (std::size_t i = 0; i < image_tau.size(); ++i) {
    if (auto it = body_part_tau.find(pool.image_body_part[i]); it != body_part_tau.end()) image_tau[i] = it->second;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = image_tau.empty() ? tau : image_tau[pool.image_index[i]];
    if (out[i] == kSoftTissue && !(pool.prob(i, kSoftTissue) > t)) out[i] = best_excluding(pool, i, kSoftTissue);
  }
  return out;
}

Mask threshold_soft_tissue(const ProbabilityMap& probs, std::size_t n, double tau) {
  PixelPool pool;
  pool.append(probs, n, Mask(probs.height(), probs.width()));
  return Mask(probs.height(), probs.width(), threshold_soft_tissue(pool, tau));
}

std::vector<HistogramBin> confidence_histogram(const PixelPool& pool, std::span<const std::uint8_t> pred,
                                               std::size_t bins) {
  if (bins == 0) throw DomainError("histogram needs at least one bin");
  std::vector<HistogramBin> out(bins);
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / static_cast<double>(bins);
    out[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pool.prob(i, pred[i]);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
    ++out[b].count;
    conf_sum[b] += p;
    acc_sum[b] += pred[i] == pool.truth[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (out[b].count > 0) {
      out[b].mean_confidence = conf_sum[b] / static_cast<double>(out[b].count);
      out[b].mean_accuracy = acc_sum[b] / static_cast<double>(out[b].count);
    }
  }
  return out;
}

EvaluationReport evaluate(const PixelPool& pool, double tau, const std::map<std::string, double>& body_part_tau) {
  EvaluationReport r;
  r.tau = tau;
  const auto pred = threshold_soft_tissue(pool, tau, body_part_tau);
  r.cm = confusion(pred, pool.truth, pool.num_classes);
  r.categorical_accuracy = r.cm.accuracy();
  r.metrics = per_class_metrics(r.cm);
  const auto names = class_names(pool.num_classes);

  std::vector<double> aucs, confs;
  std::vector<std::uint64_t> auc_support, conf_support;
  for (std::size_t k = 0; k < pool.num_classes; ++k) {
    ClassStats& s = r.metrics.per_class[k];
    try {
      r.roc.push_back(roc_auc(pool, k));
      s.auc = r.roc.back().auc;
      s.auc_defined = true;
      aucs.push_back(s.auc);
      auc_support.push_back(s.support);
    } catch (const DomainError&) {
      r.roc.emplace_back();
      r.metrics.warnings.push_back("AUC undefined for class '" + names[k] + "'");
    }
    try {
      s.confidence = confidence(pool, pred, k).mean();
      s.confidence_defined = true;
      confs.push_back(s.confidence);
      conf_support.push_back(s.support);
    } catch (const DomainError&) {
      r.metrics.warnings.push_back("confidence undefined for class '" + names[k] + "' (no assigned pixels)");
    }
  }
  r.metrics.weighted.auc = weighted_average(aucs, auc_support);
  r.metrics.weighted.auc_defined = !aucs.empty();
  r.metrics.weighted.confidence = weighted_average(confs, conf_support);
  r.metrics.weighted.confidence_defined = !confs.empty();
  r.gaps = calibration_gap(r.metrics);
  r.histogram = confidence_histogram(pool, pred);
  return r;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(10);
  return os;
}

std::string opt(bool defined, double v) {
  if (!defined) return "NA";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void write_metrics_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "class,support,accuracy,precision,f1,auc,confidence,calibration_gap\n";
  const auto names = class_names(report.metrics.per_class.size());
  for (std::size_t k = 0; k < report.metrics.per_class.size(); ++k) {
    const auto& s = report.metrics.per_class[k];
    os << names[k] << "," << s.support << "," << s.accuracy << "," << s.precision << "," << s.f1 << ","
       << opt(s.auc_defined, s.auc) << "," << opt(s.confidence_defined, s.confidence) << ","
       << opt(s.confidence_defined, report.gaps.per_class[k]) << "\n";
  }
  const auto& w = report.metrics.weighted;
  os << "weighted_average," << w.support << "," << w.accuracy << "," << w.precision << "," << w.f1 << ","
     << opt(w.auc_defined, w.auc) << "," << opt(w.confidence_defined, w.confidence) << ","
     << opt(w.confidence_defined, report.gaps.weighted) << "\n";
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) os << p.threshold << "," << p.fpr << "," << p.tpr << "\n";
}

void write_histogram_csv(std::span<const HistogramBin> bins, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "bin,lower,upper,count,mean_confidence,mean_accuracy\n";
  for (std::size_t b = 0; b < bins.size(); ++b) {
    os << b << "," << bins[b].lower << "," << bins[b].upper << "," << bins[b].count << "," << bins[b].mean_confidence
       << "," << bins[b].mean_accuracy << "\n";
  }
}

std::string format_summary(const EvaluationReport& report) {
  std::ostringstream os;
  const auto names = class_names(report.metrics.per_class.size());
  auto cell = [](bool defined, double v) {
    if (!defined) return std::string("NA");
    std::ostringstream c;
    c << std::fixed << std::setprecision(4) << v;
    return c.str();
  };
  auto row = [&](const std::string& name, const ClassStats& s, double gap) {
    os << std::left << std::setw(18) << name << std::right << std::setw(10) << s.support << std::setw(10)
       << s.predicted << std::fixed << std::setprecision(4) << std::setw(10) << s.f1 << std::setw(10)
       << cell(s.auc_defined, s.auc) << std::setw(10) << s.accuracy << std::setw(12)
       << cell(s.confidence_defined, s.confidence) << std::setw(10) << cell(s.confidence_defined, gap) << "\n";
    os.unsetf(std::ios::fixed);
  };
  os << "soft-tissue threshold: " << report.tau << "\n";
  os << std::left << std::setw(18) << "category" << std::right << std::setw(10) << "support" << std::setw(10)
     << "predicted" << std::setw(10) << "f1" << std::setw(10) << "auc" << std::setw(10) << "accuracy"
     << std::setw(12) << "confidence" << std::setw(10) << "gap" << "\n";
  for (std::size_t k = 0; k < names.size(); ++k) row(names[k], report.metrics.per_class[k], report.gaps.per_class[k]);
  row("weighted_average", report.metrics.weighted, report.gaps.weighted);
  os << "categorical accuracy: " << std::setprecision(6) << report.categorical_accuracy << "\n";
  for (const auto& w : report.metrics.warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace xnet
