#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kilnnet/tensor.hpp"

namespace kiln {

/// Class index whose probability decides kiln-vs-rest.
inline constexpr std::size_t kKilnClass = 0;

/// positive[i] iff probs[i, kKilnClass] >= threshold. Rows of the [N,K]
/// probability table must sum to 1 within 1e-6 (normalization error
/// otherwise); threshold must lie in (0,1).
std::vector<bool> binarize(const Tensor& probabilities, double threshold);
std::vector<bool> binarize(std::span<const double> probabilities, std::size_t num_classes,
                           double threshold);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const std::vector<bool>& predicted, const std::vector<bool>& actual);

/// Undefined values (zero denominators) are empty, never 0.
struct MetricsReport {
  double threshold = 0.0;
  ConfusionCounts counts;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

/// 2pr / (p + r); returns p itself when p == r. Empty when either input is
/// empty; 0 when both are 0.
std::optional<double> harmonic_mean(std::optional<double> p, std::optional<double> r);

MetricsReport metrics(const ConfusionCounts& counts, double threshold);

/// Metrics at each threshold over one probability table. `actual` marks the
/// true kilns.
std::vector<MetricsReport> sweep_thresholds(std::span<const double> probabilities,
                                            std::size_t num_classes,
                                            const std::vector<bool>& actual,
                                            std::span<const double> thresholds);

struct PublishedRow {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double reported_f1 = 0.0;
};

struct ConsistencyRow {
  PublishedRow row;
  double recomputed_f1 = 0.0;
  double delta = 0.0;
};

/// The seven precision / recall / F1 rows of the published comparison of
/// architectures, in printed order.
std::vector<PublishedRow> published_comparison();

/// Recomputes F1 from each row's precision and recall; delta = |recomputed -
/// reported|.
std::vector<ConsistencyRow> published_f1_consistency(std::span<const PublishedRow> rows);

/// Fixed-notation value, or "—" when undefined.
std::string format_metric(const std::optional<double>& value);

/// Header `threshold,tp,fp,fn,tn,precision,recall,f1`, one row per report.
std::string metrics_csv(std::span<const MetricsReport> reports);
void write_metrics_csv(const std::string& path, std::span<const MetricsReport> reports);

}  // namespace kiln
