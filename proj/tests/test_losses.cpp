#include <cmath>

#include "doctest.h"
#include "nowcast/losses.hpp"
#include "test_support.hpp"

using namespace nowcast;
using testutil::fd_derivative;
using testutil::random_tensor;
using testutil::rel_err;

TEST_SUITE_BEGIN("losses");

TEST_CASE("default scheme boundary ladder") {
    ClassScheme s = default_scheme();
    s.validate();
    REQUIRE(s.num_classes() == 10);
    CHECK(s.boundaries.front() == doctest::Approx(0.1));
    CHECK(s.boundaries.back() == doctest::Approx(25.6));
    CHECK(s.class_of(0.05) == 1);
    CHECK(s.class_of(100.0) == 10);
    CHECK(s.class_of(0.3) == 3);
    CHECK(s.class_of(1.5) == 5);  // [0.8, 1.6) under the factor-2 ladder
}

TEST_CASE("boundary rates fall into the upper class (left-closed bins)") {
    ClassScheme s = default_scheme();
    CHECK(s.class_of(0.1) == 2);
    CHECK(s.class_of(0.2) == 3);
    CHECK(s.class_of(25.6) == 10);
}

TEST_CASE("bin_classes boundary arithmetic (0.05, 0.25, 5.0, 40.0) -> (1, 3, 7, 10)") {
    ClassScheme s = default_scheme();
    Tensor rates = Tensor::from_data({4}, {0.05, 0.25, 5.0, 40.0});
    ClassField f = bin_classes(rates, s);
    CHECK(f.classes[0] == 1);
    CHECK(f.classes[1] == 3);
    CHECK(f.classes[2] == 7);
    CHECK(f.classes[3] == 10);
}

TEST_CASE("bin_classes: all-zero field maps to class 1") {
    ClassScheme s = default_scheme();
    Tensor rates = Tensor::zeros({4, 4});
    ClassField f = bin_classes(rates, s);
    for (auto c : f.classes) CHECK(c == 1);
}

TEST_CASE("bin_classes rejects negative unmasked rates but masks propagate") {
    ClassScheme s = default_scheme();
    Tensor rates = Tensor::from_data({2}, {-1.0, 0.5});
    CHECK_THROWS_AS(bin_classes(rates, s), std::invalid_argument);
    std::vector<std::uint8_t> mask{1, 0};
    ClassField f = bin_classes(rates, s, mask);
    CHECK(f.classes[0] == 0);  // masked
    CHECK(f.classes[1] == 4);
}

TEST_CASE("binning the representative rate is the identity for interior classes") {
    ClassScheme s = default_scheme();
    for (std::size_t c = 2; c < s.num_classes(); ++c) {
        CHECK(s.class_of(s.representative_rate(c)) == c);
    }
}

TEST_CASE("class scheme json round trip") {
    ClassScheme s = default_scheme();
    ClassScheme r = ClassScheme::from_json(s.to_json());
    CHECK(r.boundaries == s.boundaries);
    CHECK(r.weights == s.weights);
}

TEST_CASE("class_weights: uniform frequencies give 1/C") {
    std::vector<double> f(10, 0.1);
    std::vector<double> a = class_weights(f);
    for (double w : a) CHECK(w == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("class_weights hand case (0.5, 0.25, 0.25) -> (0.2, 0.4, 0.4)") {
    std::vector<double> f{0.5, 0.25, 0.25};
    std::vector<double> a = class_weights(f);
    CHECK(a[0] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(a[2] == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("class_weights are scale invariant and sum to 1") {
    std::vector<double> f{0.3, 0.5, 0.1, 0.1};
    std::vector<double> f2{0.6, 1.0, 0.2, 0.2};
    std::vector<double> a = class_weights(f);
    std::vector<double> b = class_weights(f2);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
        total += a[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("focal loss is zero for a perfect prediction") {
    ClassField f;
    f.shape = {3, 3};
    f.classes.assign(9, 2);
    Tensor y = one_hot(f, 4);
    Tensor p = y.clone();
    std::vector<double> alpha(4, 0.25);
    LossValue lv = focal_loss(y, p, alpha, 2.0);
    CHECK(lv.loss.value() == 0.0);
}

TEST_CASE("focal loss single-pixel hand value 2.2314e-3") {
    Tensor y = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor p = Tensor::from_data({1, 2}, {0.8, 0.2});
    std::vector<double> alpha{0.25, 0.75};
    LossValue lv = focal_loss(y, p, alpha, 2.0);
    const double expect = 0.25 * 0.04 * (-std::log(0.8));
    CHECK(std::fabs(lv.loss.value() - expect) < 1e-15);
    CHECK(std::fabs(lv.loss.value() - 2.2314e-3) < 1e-7);
}

TEST_CASE("focal loss with gamma=0 and unit alpha equals mean cross-entropy") {
    Rng rng(43);
    const std::size_t rows = 24, c = 10;
    Tensor logits = random_tensor({rows, c}, rng, 2.0);
    Tensor p = softmax(logits, 1);
    ClassField f;
    f.shape = {rows};
    f.classes.resize(rows);
    for (auto& v : f.classes) v = static_cast<std::uint8_t>(1 + rng.uniform_int(c));
    Tensor y = one_hot(f, c);
    std::vector<double> unit_alpha(c, 1.0);
    LossValue lv = focal_loss(y, p, unit_alpha, 0.0);
    double ce = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        ce -= std::log(p.at({r, static_cast<std::size_t>(f.classes[r] - 1)}));
    }
    ce /= static_cast<double>(rows);
    CHECK(std::fabs(lv.loss.value() - ce) < 1e-12);
}

TEST_CASE("focal loss scalar equals the sum of per-class contributions") {
    Rng rng(47);
    const std::size_t rows = 40, c = 10;
    Tensor p = softmax(random_tensor({rows, c}, rng, 1.5), 1);
    ClassField f;
    f.shape = {rows};
    f.classes.resize(rows);
    for (auto& v : f.classes) v = static_cast<std::uint8_t>(1 + rng.uniform_int(c));
    Tensor y = one_hot(f, c);
    ClassScheme s = default_scheme();
    LossValue lv = focal_loss(y, p, s.weights, 2.0);
    double total = 0.0;
    for (double v : lv.per_class) total += v;
    CHECK(std::fabs(lv.loss.value() - total) < 1e-10);
}

TEST_CASE("focal loss gradient w.r.t. probabilities matches finite differences") {
    Rng rng(53);
    const std::size_t rows = 6, c = 4;
    Tensor p = Tensor::zeros({rows, c}, true);
    for (std::size_t r = 0; r < rows; ++r) {
        double z = 0.0;
        std::vector<double> raw(c);
        for (std::size_t k = 0; k < c; ++k) {
            raw[k] = 0.05 + rng.uniform();
            z += raw[k];
        }
        for (std::size_t k = 0; k < c; ++k) p.mutable_data()[r * c + k] = raw[k] / z;
    }
    ClassField f;
    f.shape = {rows};
    f.classes.resize(rows);
    for (auto& v : f.classes) v = static_cast<std::uint8_t>(1 + rng.uniform_int(c));
    Tensor y = one_hot(f, c);
    std::vector<double> alpha{0.1, 0.2, 0.3, 0.4};
    auto loss_value = [&] { return focal_loss(y, p, alpha, 2.0).loss.value(); };
    GradTape tape;
    LossValue lv = focal_loss(y, p, alpha, 2.0);
    tape.backward(lv.loss);
    for (std::size_t i = 0; i < p.numel(); ++i) {
        CHECK(rel_err(p.grad()[i], fd_derivative(loss_value, p, i)) < 1e-5);
    }
}

TEST_CASE("focal loss is monotone decreasing in the true-class probability") {
    std::vector<double> alpha{0.5, 0.5};
    double prev = 1e99;
    for (double p_true = 0.05; p_true < 1.0; p_true += 0.05) {
        Tensor y = Tensor::from_data({1, 2}, {1.0, 0.0});
        Tensor p = Tensor::from_data({1, 2}, {p_true, 1.0 - p_true});
        const double fl = focal_loss(y, p, alpha, 2.0).loss.value();
        CHECK(fl < prev);
        prev = fl;
    }
}

TEST_CASE("raising gamma never increases the contribution of a confident pixel") {
    std::vector<double> alpha{1.0, 1.0};
    for (double p_true : {0.55, 0.7, 0.9, 0.99}) {
        Tensor y = Tensor::from_data({1, 2}, {1.0, 0.0});
        Tensor p = Tensor::from_data({1, 2}, {p_true, 1.0 - p_true});
        double prev = focal_loss(y, p, alpha, 0.0).loss.value();
        for (double gamma : {1.0, 2.0, 3.0, 5.0}) {
            const double fl = focal_loss(y, p, alpha, gamma).loss.value();
            CHECK(fl <= prev);
            prev = fl;
        }
    }
}

TEST_CASE("zero probability at the true class is clamped and counted") {
    Tensor y = Tensor::from_data({1, 2}, {1.0, 0.0});
    Tensor p = Tensor::from_data({1, 2}, {0.0, 1.0});
    std::vector<double> alpha{0.5, 0.5};
    LossValue lv = focal_loss(y, p, alpha, 2.0);
    CHECK(lv.clamp_events == 1);
    CHECK(std::isfinite(lv.loss.value()));
}

TEST_CASE("mse loss basics") {
    Rng rng(59);
    Tensor t = random_tensor({4, 4}, rng);
    CHECK(mse_loss(t, t).loss.value() == 0.0);
    Tensor shifted = Tensor::zeros({4, 4});
    for (std::size_t i = 0; i < t.numel(); ++i) shifted.mutable_data()[i] = t.data()[i] + 2.0;
    CHECK(mse_loss(shifted, t).loss.value() == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("mse loss gradient is 2(pred-target)/N") {
    Rng rng(61);
    Tensor pred = random_tensor({3, 5}, rng, 1.0, true);
    Tensor target = random_tensor({3, 5}, rng);
    auto loss_value = [&] { return mse_loss(pred, target).loss.value(); };
    GradTape tape;
    tape.backward(mse_loss(pred, target).loss);
    const double n = static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double expect = 2.0 * (pred.data()[i] - target.data()[i]) / n;
        CHECK(pred.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(rel_err(pred.grad()[i], fd_derivative(loss_value, pred, i)) < 1e-6);
    }
}

TEST_CASE("mse loss with an all-fill mask is rejected") {
    Tensor a = Tensor::zeros({2, 2});
    std::vector<std::uint8_t> mask(4, 1);
    CHECK_THROWS_AS(mse_loss(a, a, mask), std::invalid_argument);
}

TEST_CASE("mse loss honors the fill mask") {
    Tensor pred = Tensor::from_data({4}, {1.0, 10.0, 3.0, 5.0});
    Tensor target = Tensor::from_data({4}, {0.0, -10.0, 3.0, 4.0});
    std::vector<std::uint8_t> mask{0, 1, 0, 0};
    // unmasked squared diffs: 1, 0, 1 -> mean 2/3
    CHECK(mse_loss(pred, target, mask).loss.value() == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_SUITE_END();
