#include "nowcast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nowcast {

namespace {

using detail::NodePtr;

struct AxisGeom {
    std::size_t out = 0;
    std::ptrdiff_t pad = 0;  // leading padding
};

AxisGeom conv_axis_geometry(std::size_t in, std::size_t k, std::size_t stride, Padding padding,
                            std::size_t axis) {
    if (stride == 0) {
        throw std::invalid_argument("conv: zero stride on axis " + std::to_string(axis));
    }
    AxisGeom g;
    if (padding == Padding::Valid) {
        if (in < k) {
            throw std::invalid_argument("conv: input extent " + std::to_string(in) +
                                        " smaller than kernel extent " + std::to_string(k) +
                                        " on axis " + std::to_string(axis));
        }
        g.out = (in - k) / stride + 1;
        g.pad = 0;
    } else {
        g.out = (in + stride - 1) / stride;
        const std::ptrdiff_t total =
            std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((g.out - 1) * stride + k) -
                                            static_cast<std::ptrdiff_t>(in));
        g.pad = total / 2;
    }
    return g;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::vector<std::size_t>& stride,
              Padding padding) {
    const std::size_t H = input.extent(0), W = input.extent(1), Ci = input.extent(2);
    const std::size_t kh = kernel.extent(0), kw = kernel.extent(1);
    const std::size_t Co = kernel.extent(3);
    if (kernel.extent(2) != Ci) {
        throw std::invalid_argument("conv: input channels " + std::to_string(Ci) +
                                    " != kernel input channels " + std::to_string(kernel.extent(2)) +
                                    " on channel axis");
    }
    const AxisGeom gy = conv_axis_geometry(H, kh, stride[0], padding, 0);
    const AxisGeom gx = conv_axis_geometry(W, kw, stride[1], padding, 1);
    Tensor out = Tensor::zeros({gy.out, gx.out, Co});

    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* po = out.mutable_data().data();
    const std::size_t sh = stride[0], sw = stride[1];
    for (std::size_t oy = 0; oy < gy.out; ++oy) {
        const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * sh) - gy.pad;
        for (std::size_t ox = 0; ox < gx.out; ++ox) {
            const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * sw) - gx.pad;
            double* orow = po + (oy * gx.out + ox) * Co;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                    const double* irow = in + (static_cast<std::size_t>(iy) * W +
                                               static_cast<std::size_t>(ix)) * Ci;
                    const double* krow = ker + (ky * kw + kx) * Ci * Co;
                    for (std::size_t ic = 0; ic < Ci; ++ic) {
                        const double v = irow[ic];
                        if (v == 0.0) continue;
                        const double* kr = krow + ic * Co;
                        for (std::size_t oc = 0; oc < Co; ++oc) orow[oc] += v * kr[oc];
                    }
                }
            }
        }
    }

    if (detail::should_record({&input, &kernel})) {
        NodePtr ni = input.node_ptr(), nk = kernel.node_ptr(), no = out.node_ptr();
        const std::ptrdiff_t pad_y = gy.pad, pad_x = gx.pad;
        const std::size_t oh = gy.out, ow = gx.out;
        detail::record(out, [ni, nk, no, H, W, Ci, kh, kw, Co, sh, sw, pad_y, pad_x, oh, ow] {
            const bool want_in = ni->requires_grad;
            const bool want_k = nk->requires_grad;
            if (want_in) ni->ensure_grad();
            if (want_k) nk->ensure_grad();
            const double* in = ni->data.data();
            const double* ker = nk->data.data();
            const double* g = no->grad.data();
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * sh) - pad_y;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * sw) - pad_x;
                    const double* grow = g + (oy * ow + ox) * Co;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            const std::size_t ibase = (static_cast<std::size_t>(iy) * W +
                                                       static_cast<std::size_t>(ix)) * Ci;
                            const std::size_t kbase = (ky * kw + kx) * Ci * Co;
                            for (std::size_t ic = 0; ic < Ci; ++ic) {
                                const double* kr = ker + kbase + ic * Co;
                                if (want_in) {
                                    double acc = 0.0;
                                    for (std::size_t oc = 0; oc < Co; ++oc) acc += grow[oc] * kr[oc];
                                    ni->grad[ibase + ic] += acc;
                                }
                                if (want_k) {
                                    const double v = in[ibase + ic];
                                    if (v != 0.0) {
                                        double* kg = nk->grad.data() + kbase + ic * Co;
                                        for (std::size_t oc = 0; oc < Co; ++oc) kg[oc] += v * grow[oc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv3d(const Tensor& input, const Tensor& kernel, const std::vector<std::size_t>& stride,
              Padding padding) {
    const std::size_t D = input.extent(0), H = input.extent(1), W = input.extent(2),
                      Ci = input.extent(3);
    const std::size_t kd = kernel.extent(0), kh = kernel.extent(1), kw = kernel.extent(2);
    const std::size_t Co = kernel.extent(4);
    if (kernel.extent(3) != Ci) {
        throw std::invalid_argument("conv: input channels " + std::to_string(Ci) +
                                    " != kernel input channels " + std::to_string(kernel.extent(3)) +
                                    " on channel axis");
    }
    const AxisGeom gd = conv_axis_geometry(D, kd, stride[0], padding, 0);
    const AxisGeom gy = conv_axis_geometry(H, kh, stride[1], padding, 1);
    const AxisGeom gx = conv_axis_geometry(W, kw, stride[2], padding, 2);
    Tensor out = Tensor::zeros({gd.out, gy.out, gx.out, Co});

    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* po = out.mutable_data().data();
    const std::size_t sd = stride[0], sh = stride[1], sw = stride[2];
    for (std::size_t od = 0; od < gd.out; ++od) {
        const std::ptrdiff_t id0 = static_cast<std::ptrdiff_t>(od * sd) - gd.pad;
        for (std::size_t oy = 0; oy < gy.out; ++oy) {
            const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * sh) - gy.pad;
            for (std::size_t ox = 0; ox < gx.out; ++ox) {
                const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * sw) - gx.pad;
                double* orow = po + ((od * gy.out + oy) * gx.out + ox) * Co;
                for (std::size_t zd = 0; zd < kd; ++zd) {
                    const std::ptrdiff_t id = id0 + static_cast<std::ptrdiff_t>(zd);
                    if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            const double* irow =
                                in + ((static_cast<std::size_t>(id) * H + static_cast<std::size_t>(iy)) *
                                          W + static_cast<std::size_t>(ix)) * Ci;
                            const double* krow = ker + ((zd * kh + ky) * kw + kx) * Ci * Co;
                            for (std::size_t ic = 0; ic < Ci; ++ic) {
                                const double v = irow[ic];
                                if (v == 0.0) continue;
                                const double* kr = krow + ic * Co;
                                for (std::size_t oc = 0; oc < Co; ++oc) orow[oc] += v * kr[oc];
                            }
                        }
                    }
                }
            }
        }
    }

    if (detail::should_record({&input, &kernel})) {
        NodePtr ni = input.node_ptr(), nk = kernel.node_ptr(), no = out.node_ptr();
        const std::ptrdiff_t pd = gd.pad, py = gy.pad, px = gx.pad;
        const std::size_t odn = gd.out, ohn = gy.out, own = gx.out;
        detail::record(out, [ni, nk, no, D, H, W, Ci, kd, kh, kw, Co, sd, sh, sw, pd, py, px, odn,
                             ohn, own] {
            const bool want_in = ni->requires_grad;
            const bool want_k = nk->requires_grad;
            if (want_in) ni->ensure_grad();
            if (want_k) nk->ensure_grad();
            const double* in = ni->data.data();
            const double* ker = nk->data.data();
            const double* g = no->grad.data();
            for (std::size_t od = 0; od < odn; ++od) {
                const std::ptrdiff_t id0 = static_cast<std::ptrdiff_t>(od * sd) - pd;
                for (std::size_t oy = 0; oy < ohn; ++oy) {
                    const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * sh) - py;
                    for (std::size_t ox = 0; ox < own; ++ox) {
                        const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * sw) - px;
                        const double* grow = g + ((od * ohn + oy) * own + ox) * Co;
                        for (std::size_t zd = 0; zd < kd; ++zd) {
                            const std::ptrdiff_t id = id0 + static_cast<std::ptrdiff_t>(zd);
                            if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t ibase =
                                        ((static_cast<std::size_t>(id) * H +
                                          static_cast<std::size_t>(iy)) * W +
                                         static_cast<std::size_t>(ix)) * Ci;
                                    const std::size_t kbase = ((zd * kh + ky) * kw + kx) * Ci * Co;
                                    for (std::size_t ic = 0; ic < Ci; ++ic) {
                                        const double* kr = ker + kbase + ic * Co;
                                        if (want_in) {
                                            double acc = 0.0;
                                            for (std::size_t oc = 0; oc < Co; ++oc) {
                                                acc += grow[oc] * kr[oc];
                                            }
                                            ni->grad[ibase + ic] += acc;
                                        }
                                        if (want_k) {
                                            const double v = in[ibase + ic];
                                            if (v != 0.0) {
                                                double* kg = nk->grad.data() + kbase + ic * Co;
                                                for (std::size_t oc = 0; oc < Co; ++oc) {
                                                    kg[oc] += v * grow[oc];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor conv_forward(const Tensor& input, const Tensor& kernel,
                    const std::vector<std::size_t>& stride, Padding padding, int rank) {
    if (rank != 2 && rank != 3) {
        throw std::invalid_argument("conv_forward: rank must be 2 or 3, got " + std::to_string(rank));
    }
    const std::size_t r = static_cast<std::size_t>(rank);
    if (input.rank() != r + 1) {
        throw std::invalid_argument("conv_forward: rank-" + std::to_string(rank) +
                                    " convolution expects input rank " + std::to_string(r + 1) +
                                    ", got " + shape_str(input.shape()));
    }
    if (kernel.rank() != r + 2) {
        throw std::invalid_argument("conv_forward: rank-" + std::to_string(rank) +
                                    " convolution expects kernel rank " + std::to_string(r + 2) +
                                    ", got " + shape_str(kernel.shape()));
    }
    if (stride.size() != r) {
        throw std::invalid_argument("conv_forward: stride rank " + std::to_string(stride.size()) +
                                    " does not match spatial rank " + std::to_string(rank));
    }
    return rank == 2 ? conv2d(input, kernel, stride, padding) : conv3d(input, kernel, stride, padding);
}

Tensor conv_transpose_forward(const Tensor& input, const Tensor& kernel,
                              const std::vector<std::size_t>& stride) {
    if (input.rank() != 4 || kernel.rank() != 5 || stride.size() != 3) {
        throw std::invalid_argument("conv_transpose_forward: expects input rank 4, kernel rank 5, "
                                    "stride rank 3; got input " + shape_str(input.shape()) +
                                    ", kernel " + shape_str(kernel.shape()));
    }
    const std::size_t D = input.extent(0), H = input.extent(1), W = input.extent(2),
                      Ci = input.extent(3);
    const std::size_t kd = kernel.extent(0), kh = kernel.extent(1), kw = kernel.extent(2);
    const std::size_t Co = kernel.extent(4);
    if (kernel.extent(3) != Ci) {
        throw std::invalid_argument("conv_transpose_forward: input channels " + std::to_string(Ci) +
                                    " != kernel input channels " + std::to_string(kernel.extent(3)));
    }
    const std::size_t ks[3] = {kd, kh, kw};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        if (stride[axis] == 0 || ks[axis] < stride[axis]) {
            throw std::invalid_argument(
                "conv_transpose_forward: kernel extent " + std::to_string(ks[axis]) +
                " incompatible with stride " + std::to_string(stride[axis]) + " on axis " +
                std::to_string(axis));
        }
    }
    const std::size_t sd = stride[0], sh = stride[1], sw = stride[2];
    const std::size_t OD = (D - 1) * sd + kd, OH = (H - 1) * sh + kh, OW = (W - 1) * sw + kw;
    Tensor out = Tensor::zeros({OD, OH, OW, Co});

    const double* in = input.data().data();
    const double* ker = kernel.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t id = 0; id < D; ++id) {
        for (std::size_t iy = 0; iy < H; ++iy) {
            for (std::size_t ix = 0; ix < W; ++ix) {
                const double* irow = in + ((id * H + iy) * W + ix) * Ci;
                for (std::size_t zd = 0; zd < kd; ++zd) {
                    const std::size_t od = id * sd + zd;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::size_t oy = iy * sh + ky;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t ox = ix * sw + kx;
                            double* orow = po + ((od * OH + oy) * OW + ox) * Co;
                            const double* krow = ker + ((zd * kh + ky) * kw + kx) * Ci * Co;
                            for (std::size_t ic = 0; ic < Ci; ++ic) {
                                const double v = irow[ic];
                                if (v == 0.0) continue;
                                const double* kr = krow + ic * Co;
                                for (std::size_t oc = 0; oc < Co; ++oc) orow[oc] += v * kr[oc];
                            }
                        }
                    }
                }
            }
        }
    }

    if (detail::should_record({&input, &kernel})) {
        NodePtr ni = input.node_ptr(), nk = kernel.node_ptr(), no = out.node_ptr();
        detail::record(out, [ni, nk, no, D, H, W, Ci, kd, kh, kw, Co, sd, sh, sw, OH, OW] {
            const bool want_in = ni->requires_grad;
            const bool want_k = nk->requires_grad;
            if (want_in) ni->ensure_grad();
            if (want_k) nk->ensure_grad();
            const double* in = ni->data.data();
            const double* ker = nk->data.data();
            const double* g = no->grad.data();
            for (std::size_t id = 0; id < D; ++id) {
                for (std::size_t iy = 0; iy < H; ++iy) {
                    for (std::size_t ix = 0; ix < W; ++ix) {
                        const std::size_t ibase = ((id * H + iy) * W + ix) * Ci;
                        for (std::size_t zd = 0; zd < kd; ++zd) {
                            const std::size_t od = id * sd + zd;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::size_t oy = iy * sh + ky;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::size_t ox = ix * sw + kx;
                                    const double* grow = g + ((od * OH + oy) * OW + ox) * Co;
                                    const std::size_t kbase = ((zd * kh + ky) * kw + kx) * Ci * Co;
                                    for (std::size_t ic = 0; ic < Ci; ++ic) {
                                        const double* kr = ker + kbase + ic * Co;
                                        if (want_in) {
                                            double acc = 0.0;
                                            for (std::size_t oc = 0; oc < Co; ++oc) {
                                                acc += grow[oc] * kr[oc];
                                            }
                                            ni->grad[ibase + ic] += acc;
                                        }
                                        if (want_k) {
                                            const double v = in[ibase + ic];
                                            if (v != 0.0) {
                                                double* kg = nk->grad.data() + kbase + ic * Co;
                                                for (std::size_t oc = 0; oc < Co; ++oc) {
                                                    kg[oc] += v * grow[oc];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor maxpool2d(const Tensor& input) {
    if (input.rank() != 3) {
        throw std::invalid_argument("maxpool2d: expects (H, W, C), got " + shape_str(input.shape()));
    }
    const std::size_t H = input.extent(0), W = input.extent(1), C = input.extent(2);
    if (H % 2 != 0 || W % 2 != 0) {
        throw std::invalid_argument("maxpool2d: spatial extents must be even, got " +
                                    shape_str(input.shape()));
    }
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor out = Tensor::zeros({OH, OW, C});
    std::vector<std::size_t> argmax(out.numel());
    const double* in = input.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t oy = 0; oy < OH; ++oy) {
        for (std::size_t ox = 0; ox < OW; ++ox) {
            for (std::size_t c = 0; c < C; ++c) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t i = ((oy * 2 + dy) * W + (ox * 2 + dx)) * C + c;
                        if (in[i] > best) {  // strict: first occurrence wins ties
                            best = in[i];
                            best_idx = i;
                        }
                    }
                }
                const std::size_t o = (oy * OW + ox) * C + c;
                po[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    if (detail::should_record({&input})) {
        NodePtr ni = input.node_ptr(), no = out.node_ptr();
        detail::record(out, [ni, no, argmax = std::move(argmax)] {
            ni->ensure_grad();
            for (std::size_t o = 0; o < no->grad.size(); ++o) ni->grad[argmax[o]] += no->grad[o];
        });
    }
    return out;
}

BatchNormStats::BatchNormStats(std::size_t channels)
    : mean(Tensor::zeros({channels})), var(Tensor::full({channels}, 1.0)) {}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                 BatchNormStats& stats, double eps) {
    if (input.rank() < 2) {
        throw std::invalid_argument("batchnorm: tensor rank must be >= 2, got " +
                                    shape_str(input.shape()));
    }
    const std::size_t C = input.shape().back();
    if (gamma.rank() != 1 || gamma.extent(0) != C || beta.rank() != 1 || beta.extent(0) != C) {
        throw std::invalid_argument("batchnorm: gamma/beta must be (" + std::to_string(C) + ")");
    }
    if (eps <= 0.0) throw std::invalid_argument("batchnorm: eps must be positive");
    if (!stats.mean.defined()) stats = BatchNormStats(C);

    if (mode == Mode::Train) {
        Tensor mu = channel_mean(input);
        Tensor centered = sub(input, channel_broadcast(mu, input.shape()));
        Tensor var = channel_mean(mul(centered, centered));
        Tensor inv = pow_scalar(add_scalar(var, eps), -0.5);
        Tensor scale = mul(inv, gamma);
        Tensor out = add(mul(centered, channel_broadcast(scale, input.shape())),
                         channel_broadcast(beta, input.shape()));
        // running statistics: EMA with momentum 0.9, outside the graph
        auto rm = stats.mean.mutable_data();
        auto rv = stats.var.mutable_data();
        for (std::size_t c = 0; c < C; ++c) {
            rm[c] = 0.9 * rm[c] + 0.1 * mu.data()[c];
            rv[c] = 0.9 * rv[c] + 0.1 * var.data()[c];
        }
        return out;
    }

    std::vector<double> inv_data(C), mean_data(C);
    for (std::size_t c = 0; c < C; ++c) {
        mean_data[c] = stats.mean.data()[c];
        inv_data[c] = 1.0 / std::sqrt(stats.var.data()[c] + eps);
    }
    Tensor run_mean = Tensor::from_data({C}, std::move(mean_data));
    Tensor run_inv = Tensor::from_data({C}, std::move(inv_data));
    Tensor centered = sub(input, channel_broadcast(run_mean, input.shape()));
    Tensor scale = mul(gamma, run_inv);
    return add(mul(centered, channel_broadcast(scale, input.shape())),
               channel_broadcast(beta, input.shape()));
}

Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::Eval || rate == 0.0) return input;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(input.numel());
    for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out = Tensor::zeros(input.shape());
    const double* px = input.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < mask.size(); ++i) po[i] = px[i] * mask[i];
    if (detail::should_record({&input})) {
        NodePtr nx = input.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, mask = std::move(mask)] {
            nx->ensure_grad();
            for (std::size_t i = 0; i < mask.size(); ++i) nx->grad[i] += no->grad[i] * mask[i];
        });
    }
    return out;
}

}  // namespace nowcast
