#pragma once

#include <vector>

#include <json.hpp>

#include "sid/nn.hpp"
#include "sid/posenc.hpp"
#include "sid/rng.hpp"
#include "sid/tensor.hpp"

namespace sid {

struct DenoiserConfig {
    int num_blocks = 16;
    int channels = 64;
    std::vector<int> branch_kernels = {5, 7, 9, 11};
    int attn_reduction = 4;
    int time_embed_dim = 128;
    int pe_embed_dim = 32;
    int norm_groups = 8;

    void validate() const;
    int max_kernel() const;
    // Radius of influence of one input pixel: stem plus per-block branch reach.
    int receptive_radius() const;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

// Sin/cos embedding over geometrically spaced frequencies; dim must be even.
Tensor sinusoidal_time_embedding(int t, int dim);

// Softmax attention over parallel branches, driven by a pooled descriptor of
// their sum through a bottleneck. Weights are per-branch per-channel.
struct ArfFuse {
    int channels = 0, branches = 0, bottleneck = 0;
    Linear squeeze;                // channels -> bottleneck
    std::vector<Linear> logits;    // bottleneck -> channels, one per branch

    ArfFuse() = default;
    ArfFuse(int channels_, int branches_, int reduction);
    void init(Rng& rng);

    struct Result {
        Tensor fused;    // (C, H, W)
        Tensor weights;  // (K, C), rows sum to 1 per channel
    };
    Result forward(const std::vector<Tensor>& branch_outputs, bool keep = false);
    std::vector<Tensor> backward(const Tensor& dfused);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    std::vector<Tensor> cached_branches_;
    Tensor cached_weights_;
    Tensor cached_z_pre_;
    int cached_h_ = 0, cached_w_ = 0;
};

// One adaptive receptive field block: additive time/PE injection, norm,
// activation, parallel branch convolutions, attention fusion, residual.
struct ArfBlock {
    Linear time_proj;                 // time_embed_dim -> channels
    Conv2d pe_proj;                   // pe_embed_dim -> channels, 1x1
    GroupNorm norm;
    std::vector<Conv2d> branch_convs; // channels -> channels, per kernel size
    ArfFuse fuse;

    ArfBlock() = default;
    explicit ArfBlock(const DenoiserConfig& cfg);
    void init(Rng& rng);

    Tensor forward(const Tensor& x, const Tensor& t_embed, const Tensor& pe_embed,
                   bool keep = false, Tensor* attn_out = nullptr);
    // Accumulates into dt_embed / dpe_embed and returns dL/dx.
    Tensor backward(const Tensor& dy, Tensor& dt_embed, Tensor& dpe_embed);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    Tensor cached_hn_;
};

// Fully convolutional x0 predictor: stem, a symmetric stack of ARF blocks with
// additive mirror skips between the halves, group-norm head.
struct Denoiser {
    DenoiserConfig cfg;
    Conv2d stem;   // 3 -> channels, 3x3
    std::vector<ArfBlock> blocks;
    GroupNorm head_norm;
    Conv2d head;   // channels -> 3, 1x1, zero-initialized

    static Denoiser create(const DenoiserConfig& cfg, Rng& rng);

    // pe_embed must be (pe_embed_dim, H, W) matching x_t's spatial size;
    // x_t must be (3, H, W) with H, W >= max branch kernel.
    Tensor forward(const Tensor& x_t, int t, const Tensor& pe_embed, bool keep = false,
                   std::vector<Tensor>* attn_out = nullptr);
    // Returns dL/dx_t; accumulates parameter grads and dL/dpe_embed.
    Tensor backward(const Tensor& dy, Tensor& dpe_embed);
    void collect(ParamRegistry& reg, const std::string& prefix);

private:
    Tensor cached_head_hn_;
};

// Denoiser plus its jointly trained Fourier embedder.
struct Model {
    DenoiserConfig cfg;
    FourierEmbedder pe;
    Denoiser net;

    static Model create(const DenoiserConfig& cfg, double pe_sigma, uint64_t init_seed);
    ParamRegistry params();

    // Embeds a raw PE crop and predicts x0.
    Tensor predict_x0(const Tensor& x_t, int t, const Tensor& pe_raw, bool keep = false);
};

}  // namespace sid
