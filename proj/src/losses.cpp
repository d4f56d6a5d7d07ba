#include "nowcast/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nowcast {

std::size_t ClassScheme::class_of(double rate) const {
    std::size_t below = 0;
    for (double b : boundaries) {
        if (rate >= b) ++below;  // left-closed: boundary belongs to the upper class
        else break;
    }
    return 1 + below;
}

double ClassScheme::representative_rate(std::size_t cls) const {
    const std::size_t c = num_classes();
    if (cls < 1 || cls > c) {
        throw std::invalid_argument("representative_rate: class " + std::to_string(cls) +
                                    " out of 1.." + std::to_string(c));
    }
    if (cls == 1) return 0.0;
    if (cls == c) return boundaries.back() * std::sqrt(2.0);
    return std::sqrt(boundaries[cls - 2] * boundaries[cls - 1]);
}

void ClassScheme::validate() const {
    if (boundaries.empty()) throw std::invalid_argument("ClassScheme: no boundaries");
    for (std::size_t i = 1; i < boundaries.size(); ++i) {
        if (!(boundaries[i] > boundaries[i - 1])) {
            throw std::invalid_argument("ClassScheme: boundaries not strictly increasing at index " +
                                        std::to_string(i));
        }
    }
    if (weights.size() != num_classes()) {
        throw std::invalid_argument("ClassScheme: weight count " + std::to_string(weights.size()) +
                                    " != class count " + std::to_string(num_classes()));
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw std::invalid_argument("ClassScheme: weights must be positive");
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("ClassScheme: weights sum to " + std::to_string(total));
    }
}

nlohmann::json ClassScheme::to_json() const {
    return nlohmann::json{{"boundaries", boundaries}, {"weights", weights}};
}

ClassScheme ClassScheme::from_json(const nlohmann::json& j) {
    ClassScheme s;
    s.boundaries = j.at("boundaries").get<std::vector<double>>();
    s.weights = j.at("weights").get<std::vector<double>>();
    s.validate();
    return s;
}

ClassScheme default_scheme() {
    ClassScheme s;
    s.boundaries.resize(9);
    double b = 0.1;
    for (double& v : s.boundaries) {
        v = b;
        b *= 2.0;
    }
    s.weights.assign(10, 0.1);
    return s;
}

std::vector<double> class_weights(std::span<const double> frequencies) {
    std::vector<double> alpha(frequencies.size());
    double total = 0.0;
    for (std::size_t c = 0; c < frequencies.size(); ++c) {
        alpha[c] = 1.0 / std::max(frequencies[c], 1e-6);
        total += alpha[c];
    }
    for (double& a : alpha) a /= total;
    return alpha;
}

ClassField bin_classes(const Tensor& rates, const ClassScheme& scheme,
                       std::span<const std::uint8_t> fill_mask) {
    if (!fill_mask.empty() && fill_mask.size() != rates.numel()) {
        throw std::invalid_argument("bin_classes: mask size does not match rate field");
    }
    ClassField field;
    field.shape = rates.shape();
    field.classes.resize(rates.numel());
    for (std::size_t i = 0; i < rates.numel(); ++i) {
        if (!fill_mask.empty() && fill_mask[i]) {
            field.classes[i] = 0;
            continue;
        }
        const double r = rates.data()[i];
        if (r < 0.0) {
            throw std::invalid_argument("bin_classes: negative unmasked rate " + std::to_string(r) +
                                        " at pixel " + std::to_string(i));
        }
        field.classes[i] = static_cast<std::uint8_t>(scheme.class_of(r));
    }
    return field;
}

Tensor one_hot(const ClassField& field, std::size_t num_classes) {
    Shape out_shape = field.shape;
    out_shape.push_back(num_classes);
    Tensor out = Tensor::zeros(out_shape);
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < field.classes.size(); ++i) {
        const std::uint8_t c = field.classes[i];
        if (c == 0) continue;  // masked pixel stays an all-zero row
        po[i * num_classes + (c - 1)] = 1.0;
    }
    return out;
}

LossValue focal_loss(const Tensor& y_onehot, const Tensor& probs, std::span<const double> alpha,
                     double gamma) {
    if (y_onehot.shape() != probs.shape()) {
        throw std::invalid_argument("focal_loss: y " + shape_str(y_onehot.shape()) +
                                    " and p " + shape_str(probs.shape()) + " must align");
    }
    const std::size_t c = y_onehot.shape().back();
    if (alpha.size() != c) {
        throw std::invalid_argument("focal_loss: alpha size " + std::to_string(alpha.size()) +
                                    " != class count " + std::to_string(c));
    }
    const std::size_t rows = y_onehot.numel() / c;
    const double floor = 1e-12;

    LossValue result;
    result.per_class.assign(c, 0.0);

    // constant weight alpha_c * y_ic; pixels with all-zero rows fall out of N
    Tensor weight = Tensor::zeros(y_onehot.shape());
    std::size_t n = 0;
    {
        const double* py = y_onehot.data().data();
        double* pw = weight.mutable_data().data();
        for (std::size_t r = 0; r < rows; ++r) {
            bool hot = false;
            for (std::size_t k = 0; k < c; ++k) {
                const double y = py[r * c + k];
                if (y != 0.0) {
                    pw[r * c + k] = alpha[k] * y;
                    hot = true;
                }
            }
            if (hot) ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("focal_loss: no unmasked pixels");

    Tensor pc = clamp_min(probs, floor);
    Tensor one_minus = add_scalar(mul_scalar(pc, -1.0), 1.0);
    Tensor modulator = pow_scalar(one_minus, gamma);
    Tensor logp = log_op(pc);
    Tensor core = mul(mul(modulator, logp), weight);
    result.loss = mul_scalar(sum(core), -1.0 / static_cast<double>(n));

    const double* py = y_onehot.data().data();
    const double* pp = probs.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < c; ++k) {
            const double y = py[r * c + k];
            if (y == 0.0) continue;
            double p = pp[r * c + k];
            if (p < floor) {
                p = floor;
                ++result.clamp_events;
            }
            result.per_class[k] -= alpha[k] * y * std::pow(1.0 - p, gamma) * std::log(p) /
                                   static_cast<double>(n);
        }
    }
    return result;
}

LossValue mse_loss(const Tensor& pred, const Tensor& target,
                   std::span<const std::uint8_t> fill_mask) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("mse_loss: pred " + shape_str(pred.shape()) + " and target " +
                                    shape_str(target.shape()) + " must align");
    }
    if (!fill_mask.empty() && fill_mask.size() != pred.numel()) {
        throw std::invalid_argument("mse_loss: mask size does not match field");
    }
    std::size_t n = pred.numel();
    LossValue result;
    Tensor diff = sub(pred, target);
    Tensor sq = mul(diff, diff);
    if (!fill_mask.empty()) {
        Tensor keep = Tensor::zeros(pred.shape());
        n = 0;
        for (std::size_t i = 0; i < fill_mask.size(); ++i) {
            if (!fill_mask[i]) {
                keep.mutable_data()[i] = 1.0;
                ++n;
            }
        }
        if (n == 0) throw std::invalid_argument("mse_loss: no unmasked pixels");
        sq = mul(sq, keep);
    }
    result.loss = mul_scalar(sum(sq), 1.0 / static_cast<double>(n));
    return result;
}

}  // namespace nowcast
