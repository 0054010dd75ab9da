#pragma once

#include <string>
#include <vector>

#include "sid/rng.hpp"
#include "sid/tensor.hpp"

namespace sid {

// Named view of a trainable tensor and its gradient accumulator.
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};
using ParamRegistry = std::vector<ParamRef>;

void zero_grads(ParamRegistry& params);

// Reflect padding (border pixel not repeated). Requires pad < H and pad < W.
Tensor pad_reflect(const Tensor& x, int pad);

// Scatter-adds a padded gradient back through reflect padding onto the
// original (C, h, w) extent.
Tensor fold_reflect(const Tensor& dpad, int pad, int h, int w);

double silu(double v);
Tensor silu(const Tensor& x);
// dx given the pre-activation input and the upstream gradient.
Tensor silu_backward(const Tensor& x, const Tensor& dy);

// 2D convolution over (C, H, W) tensors with reflect padding of (k-1)/2, so
// stride 1 preserves the spatial size and stride s yields ceil(H/s).
// forward(keep=true) caches the padded input for one backward() call;
// forward(keep=false) touches no member state and is safe to run from
// several threads over shared weights.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 1, stride = 1;
    Tensor w;   // (out_ch, in_ch, k, k)
    Tensor b;   // (out_ch)
    Tensor gw, gb;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int stride_ = 1);

    void init_he(Rng& rng);
    Tensor forward(const Tensor& x, bool keep = false);
    Tensor backward(const Tensor& dy);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    Tensor cached_pad_;
    int cached_h_ = 0, cached_w_ = 0;
};

// Channel-group RMS normalization with per-position statistics: each spatial
// site rescales its own channel groups by their root mean square. Keeps every
// output strictly local to its receptive field (spatial-extent statistics
// would not) and avoids the tie-crossing blowup of mean-subtracted stats on
// small groups. Channels must divide evenly into groups, at least 2 per group.
struct GroupNorm {
    int ch = 0, groups = 1;
    double eps = 1e-5;
    Tensor gamma, beta;  // (ch)
    Tensor ggamma, gbeta;

    GroupNorm() = default;
    GroupNorm(int channels, int groups_);

    Tensor forward(const Tensor& x, bool keep = false);
    Tensor backward(const Tensor& dy);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    Tensor cached_xhat_;
    std::vector<double> cached_inv_std_;
};

// Fully connected layer on vectors.
struct Linear {
    int in = 0, out = 0;
    Tensor w;  // (out, in)
    Tensor b;  // (out)
    Tensor gw, gb;

    Linear() = default;
    Linear(int in_, int out_);

    void init_he(Rng& rng);
    Tensor forward(const Tensor& x, bool keep = false);
    Tensor backward(const Tensor& dy);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    Tensor cached_in_;
};

}  // namespace sid
