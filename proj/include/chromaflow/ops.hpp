#pragma once

// Differentiable primitives. Spatial ops take rank-3 (C,H,W) tensors;
// reductions return shape {1}.

#include "chromaflow/flow.hpp"
#include "chromaflow/tensor.hpp"

#include <span>
#include <vector>

namespace chromaflow::nn {

enum class Padding { Zero, Replicate };

/// 3x3 convolution, stride 1, padding 1. weight (O,C,3,3), bias (O).
Var conv2d(Var x, Var weight, Var bias, Padding pad = Padding::Zero);
/// Pointwise convolution. weight (O,C,1,1), bias (O).
Var conv1x1(Var x, Var weight, Var bias);

Var leaky_relu(Var x, float slope = 0.2f);
Var relu(Var x);
/// 2x2 average pooling; H and W must be even.
Var downsample(Var x);
/// Bilinear x2 upsampling with half-pixel centers and edge clamping.
Var upsample(Var x);

Var concat(std::span<const Var> xs);
Var concat(std::initializer_list<Var> xs);
Var slice_channels(Var x, int begin, int count);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product; b may have a single channel and is then broadcast.
Var mul(Var a, Var b);
Var abs(Var x);
Var mul_scalar(Var x, float s);
Var add_scalar(Var x, float s);
Var sum(Var x);
Var mean(Var x);
/// Mean over the channel axis: (C,H,W) -> (1,H,W).
Var mean_channels(Var x);

/// Hard clip to [0,1]; gradient passes where the input is inside the range.
Var clamp01(Var x);
/// Smooth bounded map into (0,1) (logistic).
Var sigmoid(Var x);

/// Per-pixel division by the L2 norm over channels.
Var channel_l2_normalize(Var x, float eps = 1e-6f);

/// Backward warp by a fixed flow field; taps leaving the grid contribute 0.
Var warp(Var x, const FlowField& flow);

/// Minimum over scalar nodes; the gradient goes to the first minimiser.
Var minimum(std::span<const Var> scalars);

/// Scalar read-out.
float item(Var x);

}  // namespace chromaflow::nn
