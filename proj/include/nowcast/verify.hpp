#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/datapipe.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/tensor.hpp"

#include "json.hpp"

namespace nowcast {

/// 2x2 contingency counts at one exceedance threshold. Events are value >= r
/// (inclusive). Counts merge additively across samples.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    void merge(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
    }
};

ConfusionCounts confusion(const Tensor& pred, const Tensor& obs, double threshold,
                          std::span<const std::uint8_t> fill_mask = {});

/// Zero-denominator ratios are reported as absent, never silently as 0.
struct CategoricalScores {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> csi;
    std::optional<double> hss;
};

CategoricalScores categorical_scores(const ConfusionCounts& counts);

/// Streaming fractions-skill-score terms over all fully contained s x s
/// windows (stride 1); merge is additive across fields/samples.
struct FssAccumulator {
    double sum_sq_diff = 0.0;
    double sum_sq_fcst = 0.0;
    double sum_sq_obs = 0.0;
    std::uint64_t windows = 0;

    void add(const Tensor& pred, const Tensor& obs, double threshold, std::size_t scale);
    void merge(const FssAccumulator& o);
    /// Absent when both fields were entirely non-event (zero denominators).
    std::optional<double> value() const;
};

std::optional<double> fss(const Tensor& pred, const Tensor& obs, double threshold,
                          std::size_t scale);

/// W1 distance between two discrete class distributions with unit inter-class
/// ground distance. Inputs must be nonnegative and sum to 1 +- 1e-9.
double wasserstein_1d(std::span<const double> p, std::span<const double> q);

/// C x C joint counts of (observed class, predicted class); classes are
/// 1-based, class 0 (masked) pixels are skipped.
struct JointHistogram {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;  // row = observed class-1, col = predicted class-1

    explicit JointHistogram(std::size_t classes = 0)
        : num_classes(classes), counts(classes * classes, 0) {}
    std::uint64_t at(std::size_t obs_cls, std::size_t pred_cls) const {
        return counts[(obs_cls - 1) * num_classes + (pred_cls - 1)];
    }
    void add(const ClassField& pred, const ClassField& obs);
    void merge(const JointHistogram& o);
    std::vector<double> pred_marginal() const;  // normalized
    std::vector<double> obs_marginal() const;
};

/// Conditional bias, delta-sigma and Wasserstein distance derived from a
/// joint class table. Bias and delta-sigma condition on observed class >= 2
/// and use geometric-mean representative rates; they are absent when no
/// precipitating pixels were scored.
struct DistributionDiagnostics {
    std::optional<double> cond_bias;
    std::optional<double> delta_sigma;
    std::optional<double> wasserstein;
};

DistributionDiagnostics distribution_diagnostics(const JointHistogram& joint,
                                                 const ClassScheme& scheme);

struct JointResult {
    JointHistogram table;
    DistributionDiagnostics diagnostics;
};

JointResult joint_histogram(const ClassField& pred, const ClassField& obs,
                            const ClassScheme& scheme);

struct AutocorrResult {
    std::vector<std::int64_t> lag_minutes;
    std::vector<double> median_corr;
    std::vector<double> corr_lo;  // 2.5 percentile across sampled pairs
    std::vector<double> corr_hi;  // 97.5 percentile
    std::vector<std::size_t> pair_counts;
    double alpha = 0.0;  // exponential decay rate, 1/hr
    double tau = 0.0;    // correlation length, hr
};

/// Per-lag Pearson correlation between precipitation snapshots, median and
/// 95% band over sampled pairs, and the least-squares exponential decay rate
/// fitted through the origin on log median correlations. Constant snapshots
/// are excluded.
AutocorrResult autocorr_fit(const FieldSeries& fields, std::int64_t max_lag_minutes,
                            std::size_t samples_per_lag, std::uint64_t seed);

/// Plug-in mutual information from an equal-width 2-D histogram (natural
/// log), clipped at zero. Requires at least 10 samples and 2 bins.
double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins);

enum class MrmrRule { Quotient, Difference };

struct MrmrResult {
    std::vector<std::string> feature_names;
    std::vector<double> relevance;                // I(x_j, y)
    std::vector<std::vector<double>> redundancy;  // pairwise I(x_j, x_k)
    std::vector<double> score;                    // greedy criterion value at selection
    std::vector<std::size_t> selection_order;     // indices into features
    std::vector<bool> zero_variance;

    nlohmann::json to_json() const;
};

MrmrResult mrmr_scores(const std::vector<std::vector<double>>& features,
                       const std::vector<std::string>& names, std::span<const double> response,
                       std::size_t bins, MrmrRule rule = MrmrRule::Difference);

/// Streaming verification over (lead, threshold, scale); all accumulation is
/// a commutative merge so sample order never matters.
class ScoreAccumulator {
public:
    ScoreAccumulator() = default;
    ScoreAccumulator(std::vector<double> thresholds, std::vector<std::size_t> scales,
                     ClassScheme scheme, std::size_t leads);

    void add(std::size_t lead_index, const Tensor& pred, const Tensor& obs,
             std::span<const std::uint8_t> fill_mask = {});
    void merge(const ScoreAccumulator& o);

    const ConfusionCounts& counts(std::size_t lead_index, std::size_t threshold_index) const;
    CategoricalScores scores(std::size_t lead_index, std::size_t threshold_index) const;
    std::optional<double> fss_value(std::size_t lead_index, std::size_t threshold_index,
                                    std::size_t scale_index) const;
    DistributionDiagnostics diagnostics(std::size_t lead_index) const;
    std::size_t lead_count() const { return leads_; }

    nlohmann::json to_json() const;
    std::string to_csv() const;  // flat rows: lead,metric,threshold,scale,value

private:
    std::vector<double> thresholds_;
    std::vector<std::size_t> scales_;
    ClassScheme scheme_;
    std::size_t leads_ = 0;
    std::vector<ConfusionCounts> confusion_;   // [lead][threshold]
    std::vector<FssAccumulator> fss_;          // [lead][threshold][scale]
    std::vector<JointHistogram> joint_;        // [lead]
    std::vector<std::uint64_t> pixel_counts_;  // [lead]
};

}  // namespace nowcast
