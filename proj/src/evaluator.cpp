#include "kilnnet/evaluator.hpp"

#include <cmath>
#include <sstream>

#include "kilnnet/csv.hpp"
#include "kilnnet/error.hpp"

namespace kiln {

std::vector<bool> binarize(const Tensor& probabilities, double threshold) {
  if (probabilities.rank() != 2) fail(ErrorKind::shape, "binarize expects [N,K] probabilities");
  return binarize(probabilities.values(), probabilities.dim(1), threshold);
}

std::vector<bool> binarize(std::span<const double> probabilities, std::size_t num_classes,
                           double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    fail(ErrorKind::config, "threshold " + format_double(threshold) + " outside (0,1)");
  }
  if (num_classes <= kKilnClass || probabilities.size() % num_classes != 0) {
    fail(ErrorKind::shape, "probability table does not hold whole rows of " +
                               std::to_string(num_classes) + " classes");
  }
  const std::size_t n = probabilities.size() / num_classes;
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probabilities.data() + i * num_classes;
    double total = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) total += row[k];
    if (!(std::abs(total - 1.0) <= 1e-6)) {
      fail(ErrorKind::normalization, "row " + std::to_string(i) + " sums to " +
                                         format_double(total) + ", not 1");
    }
    out[i] = row[kKilnClass] >= threshold;
  }
  return out;
}

ConfusionCounts confusion(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  if (predicted.size() != actual.size()) {
    fail(ErrorKind::shape, "confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                               std::to_string(actual.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i]) {
      actual[i] ? ++c.tp : ++c.fp;
    } else {
      actual[i] ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

std::optional<double> harmonic_mean(std::optional<double> p, std::optional<double> r) {
  if (!p || !r) return std::nullopt;
  if (*p == *r) return *p;
  if (*p + *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

MetricsReport metrics(const ConfusionCounts& counts, double threshold) {
  MetricsReport m;
  m.threshold = threshold;
  m.counts = counts;
  if (counts.tp + counts.fp > 0) {
    m.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  }
  if (counts.tp + counts.fn > 0) {
    m.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  }
  m.f1 = harmonic_mean(m.precision, m.recall);
  return m;
}

std::vector<MetricsReport> sweep_thresholds(std::span<const double> probabilities,
                                            std::size_t num_classes,
                                            const std::vector<bool>& actual,
                                            std::span<const double> thresholds) {
  std::vector<MetricsReport> out;
  for (double t : thresholds) {
    out.push_back(metrics(confusion(binarize(probabilities, num_classes, t), actual), t));
  }
  return out;
}

std::vector<PublishedRow> published_comparison() {
  return {
      {"Two Staged R-CNN", 0.9494, 0.9494, 0.9494},
      {"ResNet-152", 0.9906, 0.8166, 0.8952},
      {"ResNet-50", 0.9909, 0.8416, 0.9102},
      {"ResNet-34", 0.9892, 0.8841, 0.9337},
      {"Inception-v3", 0.9846, 0.7413, 0.8458},
      {"Inception-ResNet-v2", 0.9955, 0.8552, 0.9200},
      {"Tiny-Inception-ResNet-v2", 0.9854, 0.9052, 0.9435},
  };
}

std::vector<ConsistencyRow> published_f1_consistency(std::span<const PublishedRow> rows) {
  std::vector<ConsistencyRow> out;
  for (const auto& row : rows) {
    const double f1 = *harmonic_mean(row.precision, row.recall);
    out.push_back({row, f1, std::abs(f1 - row.reported_f1)});
  }
  return out;
}

std::string format_metric(const std::optional<double>& value) {
  return value ? format_fixed(*value, 6) : std::string("—");
}

std::string metrics_csv(std::span<const MetricsReport> reports) {
  std::ostringstream os;
  os << "threshold,tp,fp,fn,tn,precision,recall,f1\n";
  for (const auto& r : reports) {
    os << format_double(r.threshold) << ',' << r.counts.tp << ',' << r.counts.fp << ','
       << r.counts.fn << ',' << r.counts.tn << ',' << format_metric(r.precision) << ','
       << format_metric(r.recall) << ',' << format_metric(r.f1) << '\n';
  }
  return os.str();
}

void write_metrics_csv(const std::string& path, std::span<const MetricsReport> reports) {
  write_file(path, metrics_csv(reports));
}

}  // namespace kiln
