#include "nowcast/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

ConfusionCounts confusion(const Tensor& pred, const Tensor& obs, double threshold,
                          std::span<const std::uint8_t> fill_mask) {
    if (pred.shape() != obs.shape()) {
        throw std::invalid_argument("confusion: pred " + shape_str(pred.shape()) + " and obs " +
                                    shape_str(obs.shape()) + " must align");
    }
    if (!(threshold > 0.0)) throw std::invalid_argument("confusion: threshold must be positive");
    if (!fill_mask.empty() && fill_mask.size() != pred.numel()) {
        throw std::invalid_argument("confusion: mask size does not match fields");
    }
    ConfusionCounts c;
    const double* pp = pred.data().data();
    const double* po = obs.data().data();
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        if (!fill_mask.empty() && fill_mask[i]) continue;
        const bool p = pp[i] >= threshold;
        const bool o = po[i] >= threshold;
        if (p && o) ++c.tp;
        else if (p && !o) ++c.fp;
        else if (!p && o) ++c.fn;
        else ++c.tn;
    }
    if (c.total() == 0) throw std::invalid_argument("confusion: no unmasked pixels to score");
    return c;
}

CategoricalScores categorical_scores(const ConfusionCounts& c) {
    CategoricalScores s;
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
                 fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
    if (c.tp + c.fp > 0) s.precision = tp / (tp + fp);
    if (c.tp + c.fn > 0) s.recall = tp / (tp + fn);
    if (c.tp + c.fn + c.fp > 0) s.csi = tp / (tp + fn + fp);
    const double denom = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn);
    if (denom > 0) s.hss = 2.0 * (tp * tn - fp * fn) / denom;
    return s;
}

void FssAccumulator::add(const Tensor& pred, const Tensor& obs, double threshold,
                         std::size_t scale) {
    if (pred.rank() != 2 || obs.shape() != pred.shape()) {
        throw std::invalid_argument("fss: fields must be aligned rank-2 rasters");
    }
    const std::size_t rows = pred.extent(0), cols = pred.extent(1);
    if (scale < 1 || scale > rows || scale > cols) {
        throw std::invalid_argument("fss: scale " + std::to_string(scale) +
                                    " does not fit the field");
    }
    // summed-area tables of the binary exceedance fields
    const auto integral = [&](const Tensor& t) {
        std::vector<double> s((rows + 1) * (cols + 1), 0.0);
        const double* v = t.data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const double e = v[r * cols + c] >= threshold ? 1.0 : 0.0;
                s[(r + 1) * (cols + 1) + (c + 1)] = e + s[r * (cols + 1) + (c + 1)] +
                                                    s[(r + 1) * (cols + 1) + c] -
                                                    s[r * (cols + 1) + c];
            }
        }
        return s;
    };
    const std::vector<double> sp = integral(pred);
    const std::vector<double> so = integral(obs);
    const double inv_area = 1.0 / static_cast<double>(scale * scale);
    for (std::size_t r = 0; r + scale <= rows; ++r) {
        for (std::size_t c = 0; c + scale <= cols; ++c) {
            const auto window_sum = [&](const std::vector<double>& s) {
                return s[(r + scale) * (cols + 1) + (c + scale)] - s[r * (cols + 1) + (c + scale)] -
                       s[(r + scale) * (cols + 1) + c] + s[r * (cols + 1) + c];
            };
            const double f = window_sum(sp) * inv_area;
            const double o = window_sum(so) * inv_area;
            sum_sq_diff += (f - o) * (f - o);
            sum_sq_fcst += f * f;
            sum_sq_obs += o * o;
            ++windows;
        }
    }
}

void FssAccumulator::merge(const FssAccumulator& o) {
    sum_sq_diff += o.sum_sq_diff;
    sum_sq_fcst += o.sum_sq_fcst;
    sum_sq_obs += o.sum_sq_obs;
    windows += o.windows;
}

std::optional<double> FssAccumulator::value() const {
    const double denom = sum_sq_fcst + sum_sq_obs;
    if (windows == 0 || denom == 0.0) return std::nullopt;  // entirely non-event
    return 1.0 - sum_sq_diff / denom;
}

std::optional<double> fss(const Tensor& pred, const Tensor& obs, double threshold,
                          std::size_t scale) {
    FssAccumulator acc;
    acc.add(pred, obs, threshold, scale);
    return acc.value();
}

double wasserstein_1d(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) {
        throw std::invalid_argument("wasserstein_1d: distributions must share a class scheme");
    }
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) {
            throw std::invalid_argument("wasserstein_1d: negative mass at class " +
                                        std::to_string(i + 1));
        }
        sp += p[i];
        sq += q[i];
    }
    if (std::fabs(sp - 1.0) > 1e-9 || std::fabs(sq - 1.0) > 1e-9) {
        throw std::invalid_argument("wasserstein_1d: distributions must sum to 1 (got " +
                                    std::to_string(sp) + ", " + std::to_string(sq) + ")");
    }
    double cdf_diff = 0.0, total = 0.0;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        cdf_diff += p[i] - q[i];
        total += std::fabs(cdf_diff);
    }
    return total;
}

void JointHistogram::add(const ClassField& pred, const ClassField& obs) {
    if (pred.classes.size() != obs.classes.size()) {
        throw std::invalid_argument("joint_histogram: class fields must align");
    }
    for (std::size_t i = 0; i < pred.classes.size(); ++i) {
        const std::uint8_t pc = pred.classes[i], oc = obs.classes[i];
        if (pc == 0 || oc == 0) continue;  // masked
        if (pc > num_classes || oc > num_classes) {
            throw std::invalid_argument("joint_histogram: class out of range");
        }
        ++counts[(oc - 1) * num_classes + (pc - 1)];
    }
}

void JointHistogram::merge(const JointHistogram& o) {
    if (o.num_classes != num_classes) {
        throw std::invalid_argument("joint_histogram: class-count mismatch in merge");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
}

std::vector<double> JointHistogram::pred_marginal() const {
    std::vector<double> m(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t o = 0; o < num_classes; ++o) {
        for (std::size_t p = 0; p < num_classes; ++p) {
            m[p] += static_cast<double>(counts[o * num_classes + p]);
            total += static_cast<double>(counts[o * num_classes + p]);
        }
    }
    if (total > 0.0) {
        for (double& v : m) v /= total;
    }
    return m;
}

std::vector<double> JointHistogram::obs_marginal() const {
    std::vector<double> m(num_classes, 0.0);
    double total = 0.0;
    for (std::size_t o = 0; o < num_classes; ++o) {
        for (std::size_t p = 0; p < num_classes; ++p) {
            m[o] += static_cast<double>(counts[o * num_classes + p]);
            total += static_cast<double>(counts[o * num_classes + p]);
        }
    }
    if (total > 0.0) {
        for (double& v : m) v /= total;
    }
    return m;
}

DistributionDiagnostics distribution_diagnostics(const JointHistogram& joint,
                                                 const ClassScheme& scheme) {
    DistributionDiagnostics d;
    std::uint64_t total = 0;
    for (std::uint64_t c : joint.counts) total += c;
    if (total > 0) {
        d.wasserstein = wasserstein_1d(joint.pred_marginal(), joint.obs_marginal());
    }

    // conditional statistics over pixels with observed class >= 2
    double n = 0.0, sum_p = 0.0, sum_o = 0.0, sum_p2 = 0.0, sum_o2 = 0.0;
    for (std::size_t o = 2; o <= joint.num_classes; ++o) {
        const double ro = scheme.representative_rate(o);
        for (std::size_t p = 1; p <= joint.num_classes; ++p) {
            const double c = static_cast<double>(joint.at(o, p));
            if (c == 0.0) continue;
            const double rp = scheme.representative_rate(p);
            n += c;
            sum_p += c * rp;
            sum_o += c * ro;
            sum_p2 += c * rp * rp;
            sum_o2 += c * ro * ro;
        }
    }
    if (n > 0.0) {
        d.cond_bias = (sum_p - sum_o) / n;
        const double var_p = std::max(0.0, sum_p2 / n - (sum_p / n) * (sum_p / n));
        const double var_o = std::max(0.0, sum_o2 / n - (sum_o / n) * (sum_o / n));
        d.delta_sigma = std::sqrt(var_p) - std::sqrt(var_o);
    }
    return d;
}

JointResult joint_histogram(const ClassField& pred, const ClassField& obs,
                            const ClassScheme& scheme) {
    JointResult r{JointHistogram(scheme.num_classes()), {}};
    r.table.add(pred, obs);
    r.diagnostics = distribution_diagnostics(r.table, scheme);
    return r;
}

namespace {

/// Pearson correlation over jointly unmasked pixels; nullopt when either
/// field is constant (zero variance).
std::optional<double> field_correlation(const GridField& a, const GridField& b) {
    double n = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.masked(i) || b.masked(i)) continue;
        const double x = a.values[i], y = b.values[i];
        n += 1.0;
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    if (n < 2.0) return std::nullopt;
    const double va = saa - sa * sa / n;
    const double vb = sbb - sb * sb / n;
    if (va <= 0.0 || vb <= 0.0) return std::nullopt;
    return (sab - sa * sb / n) / std::sqrt(va * vb);
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(v.size() - 1, lo + 1);
    const double frac = pos - std::floor(pos);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

AutocorrResult autocorr_fit(const FieldSeries& fields, std::int64_t max_lag_minutes,
                            std::size_t samples_per_lag, std::uint64_t seed) {
    const std::vector<std::int64_t> times = fields.times("P");
    if (times.size() < 2) {
        throw std::invalid_argument("autocorr_fit: need at least 2 precipitation snapshots");
    }
    Rng rng(seed);
    AutocorrResult res;
    for (std::int64_t lag = 0; lag <= max_lag_minutes; lag += kStepMinutes) {
        std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
        for (std::int64_t t : times) {
            if (fields.find("P", t + lag) != nullptr) pairs.emplace_back(t, t + lag);
        }
        if (pairs.size() < (lag == 0 ? 1u : 2u)) continue;
        // deterministic subsample
        std::vector<double> corrs;
        const std::size_t take = std::min(samples_per_lag, pairs.size());
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t pick =
                take == pairs.size() ? i : static_cast<std::size_t>(rng.uniform_int(pairs.size()));
            const auto [t0, t1] = pairs[pick];
            const std::optional<double> c =
                field_correlation(fields.require("P", t0), fields.require("P", t1));
            if (c.has_value()) corrs.push_back(*c);
        }
        if (corrs.empty()) continue;  // constant fields: lag excluded
        res.lag_minutes.push_back(lag);
        res.median_corr.push_back(percentile(corrs, 0.5));
        res.corr_lo.push_back(percentile(corrs, 0.025));
        res.corr_hi.push_back(percentile(corrs, 0.975));
        res.pair_counts.push_back(corrs.size());
    }
    if (res.lag_minutes.empty()) {
        throw std::invalid_argument("autocorr_fit: no usable lag had non-constant snapshots");
    }
    // least squares through the origin on log median over the positive range
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < res.lag_minutes.size(); ++i) {
        if (res.lag_minutes[i] == 0 || res.median_corr[i] <= 0.0) continue;
        const double hours = static_cast<double>(res.lag_minutes[i]) / 60.0;
        num += hours * std::log(res.median_corr[i]);
        den += hours * hours;
    }
    if (den > 0.0) {
        res.alpha = -num / den;
        res.tau = res.alpha != 0.0 ? 1.0 / res.alpha : std::numeric_limits<double>::infinity();
    }
    return res;
}

double mutual_information(std::span<const double> x, std::span<const double> y, std::size_t bins) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("mutual_information: sample counts differ");
    }
    if (x.size() < 10) {
        throw std::invalid_argument("mutual_information: need at least 10 samples, got " +
                                    std::to_string(x.size()));
    }
    if (bins < 2) throw std::invalid_argument("mutual_information: need at least 2 bins");

    const auto range = [](std::span<const double> v) {
        double lo = v[0], hi = v[0];
        for (double e : v) {
            lo = std::min(lo, e);
            hi = std::max(hi, e);
        }
        return std::make_pair(lo, hi);
    };
    const auto [xlo, xhi] = range(x);
    const auto [ylo, yhi] = range(y);
    if (xhi <= xlo || yhi <= ylo) return 0.0;  // a constant margin carries no information

    const double n = static_cast<double>(x.size());
    std::vector<std::uint64_t> jointc(bins * bins, 0);
    std::vector<std::uint64_t> xc(bins, 0), yc(bins, 0);
    const double x_scale = static_cast<double>(bins) / (xhi - xlo);
    const double y_scale = static_cast<double>(bins) / (yhi - ylo);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t bx = static_cast<std::size_t>((x[i] - xlo) * x_scale);
        std::size_t by = static_cast<std::size_t>((y[i] - ylo) * y_scale);
        bx = std::min(bx, bins - 1);
        by = std::min(by, bins - 1);
        ++jointc[bx * bins + by];
        ++xc[bx];
        ++yc[by];
    }
    // summing the sorted cell contributions makes the estimate exactly
    // symmetric in (x, y): the multiset of addends is transpose-invariant
    std::vector<double> terms;
    terms.reserve(bins * bins);
    for (std::size_t bx = 0; bx < bins; ++bx) {
        for (std::size_t by = 0; by < bins; ++by) {
            const std::uint64_t c = jointc[bx * bins + by];
            if (c == 0) continue;
            terms.push_back((static_cast<double>(c) / n) *
                            std::log(static_cast<double>(c) * n /
                                     (static_cast<double>(xc[bx]) * static_cast<double>(yc[by]))));
        }
    }
    std::sort(terms.begin(), terms.end());
    double mi = 0.0;
    for (double t : terms) mi += t;
    return std::max(0.0, mi);
}

json MrmrResult::to_json() const {
    json features = json::array();
    for (std::size_t i = 0; i < feature_names.size(); ++i) {
        features.push_back(json{{"name", feature_names[i]},
                                {"relevance", relevance[i]},
                                {"score", score[i]},
                                {"zero_variance", static_cast<bool>(zero_variance[i])}});
    }
    json order = json::array();
    for (std::size_t idx : selection_order) order.push_back(feature_names[idx]);
    return json{{"schema_version", 1},
                {"features", features},
                {"selection_order", order},
                {"redundancy", redundancy}};
}

MrmrResult mrmr_scores(const std::vector<std::vector<double>>& features,
                       const std::vector<std::string>& names, std::span<const double> response,
                       std::size_t bins, MrmrRule rule) {
    const std::size_t f = features.size();
    if (f < 2) throw std::invalid_argument("mrmr_scores: need at least 2 features");
    if (names.size() != f) throw std::invalid_argument("mrmr_scores: name count mismatch");
    for (const auto& col : features) {
        if (col.size() != response.size()) {
            throw std::invalid_argument("mrmr_scores: feature/response sample counts differ");
        }
    }

    MrmrResult r;
    r.feature_names = names;
    r.relevance.resize(f);
    r.zero_variance.assign(f, false);
    r.score.assign(f, 0.0);
    r.redundancy.assign(f, std::vector<double>(f, 0.0));

    for (std::size_t j = 0; j < f; ++j) {
        const auto [lo, hi] =
            std::minmax_element(features[j].begin(), features[j].end());
        if (*hi <= *lo) r.zero_variance[j] = true;
        r.relevance[j] = mutual_information(features[j], response, bins);
    }
    for (std::size_t j = 0; j < f; ++j) {
        for (std::size_t k = j + 1; k < f; ++k) {
            const double mi = mutual_information(features[j], features[k], bins);
            r.redundancy[j][k] = mi;
            r.redundancy[k][j] = mi;
        }
    }

    std::vector<bool> selected(f, false);
    for (std::size_t round = 0; round < f; ++round) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_j = f;
        for (std::size_t j = 0; j < f; ++j) {
            if (selected[j]) continue;
            double criterion;
            if (round == 0) {
                criterion = r.relevance[j];  // no redundancy term yet
            } else {
                double red = 0.0;
                for (std::size_t s : r.selection_order) red += r.redundancy[j][s];
                red /= static_cast<double>(r.selection_order.size());
                criterion = rule == MrmrRule::Quotient ? r.relevance[j] / std::max(red, 1e-12)
                                                       : r.relevance[j] - red;
            }
            if (criterion > best) {
                best = criterion;
                best_j = j;
            }
        }
        selected[best_j] = true;
        r.selection_order.push_back(best_j);
        r.score[best_j] = r.zero_variance[best_j] ? 0.0 : best;
    }
    return r;
}

ScoreAccumulator::ScoreAccumulator(std::vector<double> thresholds, std::vector<std::size_t> scales,
                                   ClassScheme scheme, std::size_t leads)
    : thresholds_(std::move(thresholds)),
      scales_(std::move(scales)),
      scheme_(std::move(scheme)),
      leads_(leads),
      confusion_(leads * thresholds_.size()),
      fss_(leads * thresholds_.size() * scales_.size()),
      joint_(leads, JointHistogram(scheme_.num_classes())),
      pixel_counts_(leads, 0) {
    if (leads == 0 || thresholds_.empty()) {
        throw std::invalid_argument("ScoreAccumulator: need leads and thresholds");
    }
    scheme_.validate();
}

void ScoreAccumulator::add(std::size_t lead_index, const Tensor& pred, const Tensor& obs,
                           std::span<const std::uint8_t> fill_mask) {
    if (lead_index >= leads_) throw std::invalid_argument("ScoreAccumulator: lead out of range");
    // fill pixels count as non-event in the neighborhood coverages
    Tensor fss_pred = pred, fss_obs = obs;
    if (!fill_mask.empty()) {
        fss_pred = pred.clone();
        fss_obs = obs.clone();
        for (std::size_t i = 0; i < fill_mask.size(); ++i) {
            if (fill_mask[i]) {
                fss_pred.mutable_data()[i] = 0.0;
                fss_obs.mutable_data()[i] = 0.0;
            }
        }
    }
    for (std::size_t t = 0; t < thresholds_.size(); ++t) {
        ConfusionCounts c = confusion(pred, obs, thresholds_[t], fill_mask);
        confusion_[lead_index * thresholds_.size() + t].merge(c);
        for (std::size_t s = 0; s < scales_.size(); ++s) {
            fss_[(lead_index * thresholds_.size() + t) * scales_.size() + s].add(
                fss_pred, fss_obs, thresholds_[t], scales_[s]);
        }
    }
    ClassField pc = bin_classes(pred, scheme_, fill_mask);
    ClassField oc = bin_classes(obs, scheme_, fill_mask);
    joint_[lead_index].add(pc, oc);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        if (fill_mask.empty() || !fill_mask[i]) ++pixel_counts_[lead_index];
    }
}

void ScoreAccumulator::merge(const ScoreAccumulator& o) {
    if (o.leads_ != leads_ || o.thresholds_ != thresholds_ || o.scales_ != scales_) {
        throw std::invalid_argument("ScoreAccumulator: incompatible merge");
    }
    for (std::size_t i = 0; i < confusion_.size(); ++i) confusion_[i].merge(o.confusion_[i]);
    for (std::size_t i = 0; i < fss_.size(); ++i) fss_[i].merge(o.fss_[i]);
    for (std::size_t i = 0; i < joint_.size(); ++i) joint_[i].merge(o.joint_[i]);
    for (std::size_t i = 0; i < pixel_counts_.size(); ++i) pixel_counts_[i] += o.pixel_counts_[i];
}

const ConfusionCounts& ScoreAccumulator::counts(std::size_t lead_index,
                                                std::size_t threshold_index) const {
    return confusion_[lead_index * thresholds_.size() + threshold_index];
}

CategoricalScores ScoreAccumulator::scores(std::size_t lead_index,
                                           std::size_t threshold_index) const {
    return categorical_scores(counts(lead_index, threshold_index));
}

std::optional<double> ScoreAccumulator::fss_value(std::size_t lead_index,
                                                  std::size_t threshold_index,
                                                  std::size_t scale_index) const {
    return fss_[(lead_index * thresholds_.size() + threshold_index) * scales_.size() + scale_index]
        .value();
}

DistributionDiagnostics ScoreAccumulator::diagnostics(std::size_t lead_index) const {
    return distribution_diagnostics(joint_[lead_index], scheme_);
}

namespace {

json opt_json(const std::optional<double>& v) {
    return v.has_value() ? json(*v) : json(nullptr);
}

}  // namespace

json ScoreAccumulator::to_json() const {
    json leads = json::array();
    for (std::size_t l = 0; l < leads_; ++l) {
        json categorical = json::array();
        for (std::size_t t = 0; t < thresholds_.size(); ++t) {
            const ConfusionCounts& c = counts(l, t);
            const CategoricalScores s = categorical_scores(c);
            json fss_entries = json::array();
            for (std::size_t sc = 0; sc < scales_.size(); ++sc) {
                fss_entries.push_back(json{{"scale", scales_[sc]},
                                           {"fss", opt_json(fss_value(l, t, sc))}});
            }
            categorical.push_back(json{{"threshold", thresholds_[t]},
                                       {"tp", c.tp},
                                       {"fp", c.fp},
                                       {"fn", c.fn},
                                       {"tn", c.tn},
                                       {"precision", opt_json(s.precision)},
                                       {"recall", opt_json(s.recall)},
                                       {"csi", opt_json(s.csi)},
                                       {"hss", opt_json(s.hss)},
                                       {"fss", fss_entries}});
        }
        const DistributionDiagnostics d = diagnostics(l);
        leads.push_back(json{{"lead", l + 1},
                             {"pixels", pixel_counts_[l]},
                             {"thresholds", categorical},
                             {"wasserstein", opt_json(d.wasserstein)},
                             {"cond_bias", opt_json(d.cond_bias)},
                             {"delta_sigma", opt_json(d.delta_sigma)}});
    }
    return json{{"schema_version", 1},
                {"thresholds", thresholds_},
                {"scales", scales_},
                {"class_scheme", scheme_.to_json()},
                {"leads", leads}};
}

std::string ScoreAccumulator::to_csv() const {
    std::ostringstream os;
    os << "lead,metric,threshold,scale,value\n";
    os.precision(17);
    const auto emit = [&os](std::size_t lead, const char* metric, const std::string& thr,
                            const std::string& scale, const std::optional<double>& v) {
        os << lead << "," << metric << "," << thr << "," << scale << ",";
        if (v.has_value()) os << *v;
        os << "\n";
    };
    for (std::size_t l = 0; l < leads_; ++l) {
        for (std::size_t t = 0; t < thresholds_.size(); ++t) {
            const std::string thr = std::to_string(thresholds_[t]);
            const CategoricalScores s = scores(l, t);
            emit(l + 1, "precision", thr, "", s.precision);
            emit(l + 1, "recall", thr, "", s.recall);
            emit(l + 1, "csi", thr, "", s.csi);
            emit(l + 1, "hss", thr, "", s.hss);
            for (std::size_t sc = 0; sc < scales_.size(); ++sc) {
                emit(l + 1, "fss", thr, std::to_string(scales_[sc]), fss_value(l, t, sc));
            }
        }
        const DistributionDiagnostics d = diagnostics(l);
        emit(l + 1, "wasserstein", "", "", d.wasserstein);
        emit(l + 1, "cond_bias", "", "", d.cond_bias);
        emit(l + 1, "delta_sigma", "", "", d.delta_sigma);
    }
    return os.str();
}

}  // namespace nowcast
