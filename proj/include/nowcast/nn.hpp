#pragma once

#include "nowcast/tensor.hpp"

namespace nowcast {

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

/// Spatial (rank 2) or spatiotemporal (rank 3) cross-correlation.
/// Channel-last layouts:
///   rank 2: input (H, W, Cin),    kernel (kh, kw, Cin, Cout)
///   rank 3: input (D, H, W, Cin), kernel (kd, kh, kw, Cin, Cout)
/// "Same" padding keeps ceil(extent/stride) per axis (TF convention);
/// "Valid" keeps only fully covered positions.
Tensor conv_forward(const Tensor& input, const Tensor& kernel,
                    const std::vector<std::size_t>& stride, Padding padding, int rank);

/// Adjoint of the strided valid convolution (rank 3 only). Input (D, H, W, Cin)
/// with kernel (kd, kh, kw, Cin, Cout) yields ((D-1)*sd+kd, ..., Cout): each
/// input element deposits a kernel-shaped stamp at stride offsets. Kernel
/// extents must be >= stride on every axis so upsampling leaves no gaps.
Tensor conv_transpose_forward(const Tensor& input, const Tensor& kernel,
                              const std::vector<std::size_t>& stride);

/// 2x2 max pooling over (H, W, C); both spatial extents must be even.
/// Backward routes the gradient to the window argmax, first in row-major
/// order on ties.
Tensor maxpool2d(const Tensor& input);

/// Per-channel running statistics for batch normalization, updated with an
/// exponential moving average (momentum 0.9) in train mode.
struct BatchNormStats {
    Tensor mean;  // (C)
    Tensor var;   // (C)
    explicit BatchNormStats(std::size_t channels);
    BatchNormStats() = default;
};

/// Normalizes per channel over all non-channel axes (train) or with running
/// statistics (eval), then applies the affine gamma/beta transform.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                 BatchNormStats& stats, double eps = 1e-5);

/// Inverted dropout: train mode zeroes elements with probability `rate` and
/// scales survivors by 1/(1-rate); eval mode is the identity.
Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng);

}  // namespace nowcast
