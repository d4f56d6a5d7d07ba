#include <cmath>

#include "doctest.h"
#include "nowcast/nn.hpp"
#include "test_support.hpp"

using namespace nowcast;
using testutil::dot;
using testutil::fd_derivative;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

/// Swaps the last two kernel axes (Cin, Cout) -> (Cout, Cin); pairs a valid
/// strided convolution with its transpose in the adjoint identity.
Tensor swap_kernel_channels(const Tensor& k) {
    const Shape& s = k.shape();
    Shape out = s;
    std::swap(out[s.size() - 2], out[s.size() - 1]);
    Tensor r = Tensor::zeros(out);
    const std::size_t ci = s[s.size() - 2], co = s[s.size() - 1];
    const std::size_t taps = k.numel() / (ci * co);
    for (std::size_t t = 0; t < taps; ++t) {
        for (std::size_t a = 0; a < ci; ++a) {
            for (std::size_t b = 0; b < co; ++b) {
                r.mutable_data()[(t * co + b) * ci + a] = k.data()[(t * ci + a) * co + b];
            }
        }
    }
    return r;
}

}  // namespace

TEST_SUITE_BEGIN("nn");

TEST_CASE("conv2d: 1x1 channel-identity kernel with same padding is the identity") {
    Rng rng(31);
    Tensor x = random_tensor({5, 6, 3}, rng);
    Tensor k = Tensor::zeros({1, 1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k.mutable_data()[c * 3 + c] = 1.0;
    Tensor y = conv_forward(x, k, {1, 1}, Padding::Same, 2);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: 3x3 all-ones kernel on constant input gives 9c valid outputs") {
    const double c = 2.75;
    Tensor x = Tensor::full({6, 7, 1}, c);
    Tensor k = Tensor::full({3, 3, 1, 1}, 1.0);
    Tensor y = conv_forward(x, k, {1, 1}, Padding::Valid, 2);
    REQUIRE(y.shape() == Shape{4, 5, 1});
    for (double v : y.data()) CHECK(v == doctest::Approx(9.0 * c).epsilon(1e-14));
}

TEST_CASE("conv2d adjoint matches finite differences to 1e-6") {
    Rng rng(37);
    Tensor x = random_tensor({5, 5, 1}, rng, 1.0, true);
    Tensor k = random_tensor({3, 3, 1, 1}, rng, 1.0, true);
    Tensor w = random_tensor({3, 3, 1}, rng);
    auto forward = [&] {
        return sum(mul(conv_forward(x, k, {1, 1}, Padding::Valid, 2), w)).value();
    };
    GradTape tape;
    tape.backward(sum(mul(conv_forward(x, k, {1, 1}, Padding::Valid, 2), w)));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(rel_err(x.grad()[i], fd_derivative(forward, x, i)) < 1e-6);
    }
    for (std::size_t i = 0; i < k.numel(); ++i) {
        CHECK(rel_err(k.grad()[i], fd_derivative(forward, k, i)) < 1e-6);
    }
}

TEST_CASE("conv2d rejects channel mismatch with a diagnostic naming the axis") {
    Tensor x = Tensor::zeros({4, 4, 3});
    Tensor k = Tensor::zeros({3, 3, 2, 5});
    CHECK_THROWS_WITH_AS(conv_forward(x, k, {1, 1}, Padding::Same, 2),
                         doctest::Contains("channel axis"), std::invalid_argument);
}

TEST_CASE("conv3d strided same padding keeps ceil(extent/stride)") {
    Rng rng(41);
    Tensor x = random_tensor({4, 6, 6, 2}, rng);
    Tensor k = random_tensor({3, 3, 3, 2, 4}, rng);
    Tensor y = conv_forward(x, k, {1, 2, 2}, Padding::Same, 3);
    CHECK(y.shape() == Shape{4, 3, 3, 4});
}

TEST_CASE("conv_transpose: stride 1 with 1x1x1 unit kernel is the identity") {
    Rng rng(43);
    Tensor x = random_tensor({2, 3, 4, 1}, rng);
    Tensor k = Tensor::full({1, 1, 1, 1, 1}, 1.0);
    Tensor y = conv_transpose_forward(x, k, {1, 1, 1});
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv_transpose: stride-2 ones kernel expands a unit impulse to a 2x2 block") {
    Tensor x = Tensor::zeros({1, 2, 2, 1});
    x.mutable_data()[0] = 1.0;  // single 1 at spatial origin
    Tensor k = Tensor::full({1, 2, 2, 1, 1}, 1.0);
    Tensor y = conv_transpose_forward(x, k, {1, 2, 2});
    REQUIRE(y.shape() == Shape{1, 4, 4, 1});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(y.at({0, r, c, 0}) == ((r < 2 && c < 2) ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("conv / conv_transpose inner-product identity holds to 1e-10") {
    Rng rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t ci = 1 + rng.uniform_int(3);
        const std::size_t co = 1 + rng.uniform_int(3);
        const std::size_t kd = 1 + rng.uniform_int(2), kh = 1 + rng.uniform_int(3),
                          kw = 1 + rng.uniform_int(3);
        const std::size_t sd = 1 + rng.uniform_int(kd), sh = 1 + rng.uniform_int(kh),
                          sw = 1 + rng.uniform_int(kw);
        const std::size_t d = kd + sd * rng.uniform_int(3), h = kh + sh * rng.uniform_int(3),
                          w = kw + sw * rng.uniform_int(3);
        Tensor x = random_tensor({d, h, w, ci}, rng);
        Tensor kernel = random_tensor({kd, kh, kw, ci, co}, rng);
        Tensor cx = conv_forward(x, kernel, {sd, sh, sw}, Padding::Valid, 3);
        Tensor y = random_tensor(cx.shape(), rng);
        Tensor ty = conv_transpose_forward(y, swap_kernel_channels(kernel), {sd, sh, sw});
        REQUIRE(ty.shape() == x.shape());
        const double lhs = dot(cx.data(), y.data());
        const double rhs = dot(x.data(), ty.data());
        CHECK(std::fabs(lhs - rhs) < 1e-10 * std::max(1.0, std::fabs(lhs)));
    }
}

TEST_CASE("conv_transpose rejects kernel extents below the stride") {
    Tensor x = Tensor::zeros({2, 2, 2, 1});
    Tensor k = Tensor::zeros({1, 1, 1, 1, 1});
    CHECK_THROWS_AS(conv_transpose_forward(x, k, {1, 2, 2}), std::invalid_argument);
}

TEST_CASE("conv_transpose gradients match finite differences") {
    Rng rng(53);
    Tensor x = random_tensor({2, 3, 3, 2}, rng, 1.0, true);
    Tensor k = random_tensor({1, 2, 2, 2, 3}, rng, 1.0, true);
    Tensor probe = conv_transpose_forward(x, k, {1, 2, 2});
    Tensor w = random_tensor(probe.shape(), rng);
    auto forward = [&] { return sum(mul(conv_transpose_forward(x, k, {1, 2, 2}), w)).value(); };
    GradTape tape;
    tape.backward(sum(mul(conv_transpose_forward(x, k, {1, 2, 2}), w)));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(rel_err(x.grad()[i], fd_derivative(forward, x, i)) < 1e-6);
    }
    for (std::size_t i = 0; i < k.numel(); ++i) {
        CHECK(rel_err(k.grad()[i], fd_derivative(forward, k, i)) < 1e-6);
    }
}

TEST_CASE("maxpool2d hand case [[1,2],[3,4]] -> 4") {
    Tensor x = Tensor::from_data({2, 2, 1}, {1, 2, 3, 4});
    Tensor y = maxpool2d(x);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.data()[0] == 4.0);
}

TEST_CASE("maxpool2d keeps constants at half resolution") {
    Tensor x = Tensor::full({6, 8, 3}, 1.25);
    Tensor y = maxpool2d(x);
    REQUIRE(y.shape() == Shape{3, 4, 3});
    for (double v : y.data()) CHECK(v == 1.25);
}

TEST_CASE("maxpool2d rejects odd spatial extents") {
    CHECK_THROWS_AS(maxpool2d(Tensor::zeros({3, 4, 1})), std::invalid_argument);
    CHECK_THROWS_AS(maxpool2d(Tensor::zeros({4, 5, 1})), std::invalid_argument);
}

TEST_CASE("maxpool2d gradient is 1 at each window argmax and 0 elsewhere") {
    Rng rng(59);
    Tensor x = random_tensor({4, 4, 2}, rng, 1.0, true);
    GradTape tape;
    tape.backward(sum(maxpool2d(x)));
    auto forward = [&] { return sum(maxpool2d(x)).value(); };
    int ones = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double g = x.grad()[i];
        CHECK((g == 0.0 || g == 1.0));
        if (g == 1.0) ++ones;
        CHECK(rel_err(g, fd_derivative(forward, x, i)) < 1e-6);
    }
    CHECK(ones == 8);  // one argmax per window per channel
}

TEST_CASE("batchnorm train mode normalizes each channel") {
    Rng rng(61);
    Tensor x = random_tensor({8, 8, 3}, rng, 2.5);
    for (std::size_t i = 0; i < x.numel(); ++i) x.mutable_data()[i] += 4.0;
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    BatchNormStats stats(3);
    Tensor y = batchnorm(x, gamma, beta, Mode::Train, stats, 1e-9);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        for (std::size_t r = 0; r < 64; ++r) m += y.data()[r * 3 + c];
        m /= 64.0;
        for (std::size_t r = 0; r < 64; ++r) {
            const double d = y.data()[r * 3 + c] - m;
            v += d * d;
        }
        v /= 64.0;
        CHECK(std::fabs(m) < 1e-10);
        CHECK(std::fabs(v - 1.0) < 1e-6);
    }
}

TEST_CASE("batchnorm affine: gamma=2 beta=3 gives mean 3, std 2") {
    Rng rng(67);
    Tensor x = random_tensor({16, 16, 1}, rng, 1.3);
    Tensor gamma = Tensor::full({1}, 2.0);
    Tensor beta = Tensor::full({1}, 3.0);
    BatchNormStats stats(1);
    Tensor y = batchnorm(x, gamma, beta, Mode::Train, stats);
    double m = 0.0, v = 0.0;
    for (double val : y.data()) m += val;
    m /= static_cast<double>(y.numel());
    for (double val : y.data()) v += (val - m) * (val - m);
    v /= static_cast<double>(y.numel());
    CHECK(m == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::sqrt(v) == doctest::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("batchnorm eval mode reproduces the running-statistics formula") {
    const double mu = 1.5, var = 4.0, eps = 1e-5;
    Tensor x = Tensor::from_data({2, 2, 1}, {0.0, 1.0, 2.0, 5.0});
    Tensor gamma = Tensor::full({1}, 1.5);
    Tensor beta = Tensor::full({1}, -0.5);
    BatchNormStats stats(1);
    stats.mean.mutable_data()[0] = mu;
    stats.var.mutable_data()[0] = var;
    Tensor y = batchnorm(x, gamma, beta, Mode::Eval, stats, eps);
    for (std::size_t i = 0; i < 4; ++i) {
        const double expect = (x.data()[i] - mu) / std::sqrt(var + eps) * 1.5 - 0.5;
        CHECK(y.data()[i] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("batchnorm handles a zero-variance channel through eps") {
    Tensor x = Tensor::full({4, 4, 1}, 7.0);
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    BatchNormStats stats(1);
    Tensor y = batchnorm(x, gamma, beta, Mode::Train, stats);
    for (double v : y.data()) CHECK(std::isfinite(v));
    for (double v : y.data()) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("batchnorm train-mode gradients match finite differences") {
    Rng rng(71);
    Tensor x = random_tensor({4, 3, 2}, rng, 1.0, true);
    Tensor gamma = random_tensor({2}, rng, 0.5, true);
    Tensor beta = random_tensor({2}, rng, 0.5, true);
    for (std::size_t i = 0; i < 2; ++i) gamma.mutable_data()[i] += 1.0;
    Tensor w = random_tensor({4, 3, 2}, rng);
    auto forward = [&] {
        BatchNormStats stats(2);
        return sum(mul(batchnorm(x, gamma, beta, Mode::Train, stats), w)).value();
    };
    GradTape tape;
    BatchNormStats stats(2);
    tape.backward(sum(mul(batchnorm(x, gamma, beta, Mode::Train, stats), w)));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(rel_err(x.grad()[i], fd_derivative(forward, x, i)) < 1e-4);
    }
    for (std::size_t i = 0; i < gamma.numel(); ++i) {
        CHECK(rel_err(gamma.grad()[i], fd_derivative(forward, gamma, i)) < 1e-4);
        CHECK(rel_err(beta.grad()[i], fd_derivative(forward, beta, i)) < 1e-4);
    }
}

TEST_CASE("dropout eval mode returns the input exactly") {
    Rng rng(73);
    Tensor x = random_tensor({10, 10}, rng);
    Rng drop_rng(1);
    Tensor y = dropout(x, 0.15, Mode::Eval, drop_rng);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("dropout rate 0 is the identity in both modes") {
    Rng rng(79);
    Tensor x = random_tensor({5, 5}, rng);
    Rng r1(2), r2(2);
    Tensor yt = dropout(x, 0.0, Mode::Train, r1);
    Tensor ye = dropout(x, 0.0, Mode::Eval, r2);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(yt.data()[i] == x.data()[i]);
        CHECK(ye.data()[i] == x.data()[i]);
    }
}

TEST_CASE("dropout Monte Carlo: zero fraction 0.15 +- 0.01, mean preserved to 1%") {
    const std::size_t n = 1'000'000;
    Tensor x = Tensor::full({n}, 1.0);
    Rng rng(83);
    Tensor y = dropout(x, 0.15, Mode::Train, rng);
    std::size_t zeros = 0;
    double total = 0.0;
    for (double v : y.data()) {
        if (v == 0.0) ++zeros;
        total += v;
    }
    const double zero_frac = static_cast<double>(zeros) / static_cast<double>(n);
    CHECK(std::fabs(zero_frac - 0.15) < 0.01);
    CHECK(std::fabs(total / static_cast<double>(n) - 1.0) < 0.01);
}

TEST_CASE("dropout is deterministic under a fixed seed") {
    Rng data_rng(89);
    Tensor x = testutil::random_tensor({32, 32}, data_rng);
    Rng r1(5), r2(5);
    Tensor a = dropout(x, 0.15, Mode::Train, r1);
    Tensor b = dropout(x, 0.15, Mode::Train, r2);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_SUITE_END();
