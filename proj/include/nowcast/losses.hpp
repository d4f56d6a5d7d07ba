#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "nowcast/tensor.hpp"

#include "json.hpp"

namespace nowcast {

/// Logarithmic precipitation class binning with per-class weights.
/// Bins are left-closed: a rate exactly on a boundary belongs to the upper
/// class. Class indices are 1-based (1 = below the first boundary).
struct ClassScheme {
    std::vector<double> boundaries;  // strictly increasing, mm/hr
    std::vector<double> weights;     // alpha_c, sum to 1

    std::size_t num_classes() const { return boundaries.size() + 1; }
    std::size_t class_of(double rate) const;

    /// Geometric-mean rate of the class bin; 0 for class 1 (below detection),
    /// top boundary * sqrt(2) for the open-ended top class.
    double representative_rate(std::size_t cls) const;

    void validate() const;

    nlohmann::json to_json() const;
    static ClassScheme from_json(const nlohmann::json& j);
};

/// The 10-class ladder with boundaries 0.1 * 2^k, k = 0..8, and uniform
/// weights until data-driven weights are supplied.
ClassScheme default_scheme();

/// Inverse-frequency class weights, floored at 1e-6 and normalized to sum 1.
std::vector<double> class_weights(std::span<const double> frequencies);

/// Class-index field produced by binning a rate tensor; 0 marks masked pixels.
struct ClassField {
    Shape shape;
    std::vector<std::uint8_t> classes;
};

/// Bins each pixel into 1..C. `fill_mask` (1 = fill) propagates as class 0.
/// Negative unmasked rates are rejected.
ClassField bin_classes(const Tensor& rates, const ClassScheme& scheme,
                       std::span<const std::uint8_t> fill_mask = {});

/// One-hot tensor over the trailing class axis; masked pixels become all-zero
/// rows (and are excluded from loss normalization).
Tensor one_hot(const ClassField& field, std::size_t num_classes);

struct LossValue {
    Tensor loss;                    // scalar, connected to the forward graph
    std::vector<double> per_class;  // per-class contributions (classification only)
    std::size_t clamp_events = 0;   // true-class probabilities clamped at the floor
};

/// Focal loss FL = -(1/N) sum_i sum_c alpha_c y_ic (1-p_ic)^gamma log p_ic
/// over the N one-hot pixels of y. Probabilities are floored at 1e-12 before
/// the log; floor hits at true classes are counted in clamp_events.
LossValue focal_loss(const Tensor& y_onehot, const Tensor& probs,
                     std::span<const double> alpha, double gamma = 2.0);

/// Mean squared error over unmasked pixels (fill_mask: 1 = excluded).
LossValue mse_loss(const Tensor& pred, const Tensor& target,
                   std::span<const std::uint8_t> fill_mask = {});

}  // namespace nowcast
