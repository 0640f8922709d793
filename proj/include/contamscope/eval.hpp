#pragma once

// Labelled scores to evaluation artifacts: AUC, ROC curves, D-value
// histograms, the dip test for unimodality, m sweeps and multi-seed summaries.

#include "contamscope/detectors.hpp"
#include "contamscope/stats.hpp"
#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace contamscope {

/// Split of one detector's values by label.
struct LabeledValues {
  std::vector<double> contaminated;
  std::vector<double> clean;
};

/// Mann-Whitney AUC by exhaustive pair counting, ties credited 0.5.
double auc_pairs(const std::vector<double>& contaminated, const std::vector<double>& clean);
/// Same statistic in O(n log n); bit-identical to auc_pairs.
double auc_rank(const std::vector<double>& contaminated, const std::vector<double>& clean);
/// Throws Error("degenerate labels") when either class is empty.
double auc(const std::vector<double>& contaminated, const std::vector<double>& clean);
inline double auc(const LabeledValues& v) { return auc(v.contaminated, v.clean); }

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Curve over distinct score thresholds, from (0,0) at +inf to (1,1).
std::vector<RocPoint> roc_curve(const std::vector<double>& contaminated,
                                const std::vector<double>& clean);
double trapezoid_area(const std::vector<RocPoint>& roc);

double orient(double auc, Orientation o);

struct DetectorEval {
  Detector detector = Detector::dvd;
  Orientation orientation = Orientation::higher_means_contaminated;
  double auc = 0.5;
  double auc_oriented = 0.5;
  int n_contaminated = 0;
  int n_clean = 0;
  int n_unavailable = 0;
  // False when the detector produced no value for any item; auc fields are NaN.
  bool available = true;
  std::vector<RocPoint> roc;
};

/// Groups scores by detector; unavailable records are counted, not ranked.
std::map<Detector, LabeledValues> group_scores(const std::vector<DetectorScore>& scores,
                                               std::map<Detector, int>* unavailable = nullptr);

/// Throws Error("degenerate labels") for a detector without both classes,
/// Error("no items") for an empty score set.
std::vector<DetectorEval> evaluate_scores(const std::vector<DetectorScore>& scores);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<int> contaminated;
  std::vector<int> clean;
};

/// Per-sample D values of every trace, pooled by label.
LabeledValues pooled_d_values(const std::vector<ItemTrace>& traces, const DvdConfig& cfg);
Histogram d_histogram(const std::vector<ItemTrace>& traces, const DvdConfig& cfg, int bins);
Histogram histogram(const LabeledValues& values, int bins);

/// Hartigan's dip statistic of the empirical distribution of x.
double dip_statistic(std::vector<double> x);

struct DipResult {
  double dip = 0.0;
  double p_value = 1.0;
};

/// Dip with a Monte-Carlo p-value against the uniform null of the same size:
/// (#{null dip >= observed} + 1) / (replicates + 1).
DipResult dip_test(const std::vector<double>& x, int replicates = 1000, std::uint64_t seed = 0);

/// DVD AUC recomputed per m from cached traces.
std::vector<std::pair<int, double>> sweep_min_tokens(const std::vector<ItemTrace>& traces,
                                                     const std::vector<int>& m_values,
                                                     int require_samples = 2);

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

/// Percentile interval of oriented AUC(a) - AUC(b) under label-stratified
/// resampling of items available to both detectors.
ConfidenceInterval paired_bootstrap_auc_difference(const std::vector<DetectorScore>& scores,
                                                   Detector a, Detector b, int replicates,
                                                   std::uint64_t seed, double level = 0.95);

struct SeedAuc {
  std::uint64_t seed = 0;
  std::map<Detector, double> auc_oriented;
};

struct MultiSeedSummary {
  std::vector<SeedAuc> runs;
  std::map<Detector, MeanStd> per_detector;
};

MultiSeedSummary summarize_seeds(std::vector<SeedAuc> runs);

/// "dvd  0.731 ± 0.013" lines, one per detector; std prints as "n/a" for a single seed.
std::string format_mean_std(const MultiSeedSummary& summary, int precision = 3);

/// Plain-text table: rows are detectors, columns are named configurations.
struct AucColumn {
  std::string name;
  std::map<Detector, double> values;
};
std::string format_auc_table(const std::vector<Detector>& rows, const std::vector<AucColumn>& columns,
                             int precision = 3);

void write_roc_csv(const std::vector<RocPoint>& roc, std::ostream& out);
void write_histogram_csv(const Histogram& h, std::ostream& out);
/// One JSON object per detector.
void write_report_jsonl(const std::vector<DetectorEval>& evals, std::ostream& out);

}  // namespace contamscope
