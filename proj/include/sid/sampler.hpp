#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/denoiser.hpp"
#include "sid/image.hpp"
#include "sid/posenc.hpp"
#include "sid/rng.hpp"
#include "sid/schedule.hpp"
#include "sid/tensor.hpp"

namespace sid {

enum class SampleMode { Unconditional, Controlled, Text, Reference, Outpaint };

const char* sample_mode_name(SampleMode mode);

struct SampleRequest {
    int height = 0, width = 0;
    SampleMode mode = SampleMode::Unconditional;
    std::optional<ControlSpec> control;  // required in controlled mode
    uint64_t seed = 0;
    int stride = 1;  // reverse-chain stride; 1 visits every timestep
};

// Image+text similarity oracle for text guidance: returns the loss and fills
// grad with dLoss/dImage.
class SimilarityModel {
public:
    virtual ~SimilarityModel() = default;
    virtual double loss_and_grad(const Tensor& image, const std::string& prompt,
                                 Tensor& grad) const = 0;
};

// Test double: quadratic pull toward a fixed target image, analytic gradient.
class QuadraticSimilarity : public SimilarityModel {
public:
    explicit QuadraticSimilarity(Tensor target) : target_(std::move(target)) {}
    double loss_and_grad(const Tensor& image, const std::string& prompt,
                         Tensor& grad) const override;

private:
    Tensor target_;
};

// Production adapter: joint image/text embedding loaded from a weights file
// (conv image encoder, hashed bag-of-words text table; cosine loss). The file
// uses the checkpoint container format described in docs/formats.md.
class EmbeddingSimilarity : public SimilarityModel {
public:
    static std::shared_ptr<EmbeddingSimilarity> load_file(const std::string& path);
    // Fresh random weights, for demos and tests; embed_dim is the joint space.
    static std::shared_ptr<EmbeddingSimilarity> random(int embed_dim, uint64_t seed);
    void save_file(const std::string& path) const;

    double loss_and_grad(const Tensor& image, const std::string& prompt,
                         Tensor& grad) const override;
    Tensor embed_text(const std::string& prompt) const;

private:
    EmbeddingSimilarity() = default;
    std::vector<Conv2d> convs_;
    Tensor proj_;   // (embed_dim, feature_ch)
    Tensor vocab_;  // (vocab_size, embed_dim), rows looked up by token hash
};

struct TextGuidanceConfig {
    std::string prompt;
    double eta = 0.3;
    double momentum_lambda = 0.9;
    std::vector<int> guided_steps;  // timesteps where the update fires
    Tensor guide_mask;              // (H, W) binary; empty means whole image
    const SimilarityModel* similarity = nullptr;
};

struct ReferenceConfig {
    Tensor y;  // (3, H, W), already at output size
    int down_factor = 8;
    std::vector<int> guided_steps;
};

struct OutpaintConfig {
    Tensor m_in;    // (H, W) binary inner-region mask
    Tensor source;  // (3, H, W) canvas holding the source inside m_in
    std::vector<int> injected_steps;
};

// Timesteps covering the leading fraction of the reverse chain (t counts down
// from T-1).
std::vector<int> leading_steps(int T, double fraction);
std::vector<int> every_kth_steps(int T, int k);

// N x N block average followed by block replication; idempotent. N must
// divide both dimensions.
Tensor lowpass(const Tensor& img, int N);

// Eq-style low-frequency swap: x - lowpass(x) + lowpass(q_sample(y, t, noise)).
Tensor reference_update(const Tensor& x_t_hat, const Tensor& y, int t, const Tensor& noise,
                        const ReferenceConfig& cfg, const NoiseSchedule& sched);

// Pointwise select of the noised source inside the mask.
Tensor outpaint_inject(const Tensor& x_t_hat, const Tensor& source, const Tensor& m_in, int t,
                       const Tensor& noise, const NoiseSchedule& sched);

// Masked gradient descent on the clean-image estimate with momentum blending
// outside the mask. grad is dL/dx0_hat from the similarity model.
Tensor clip_guidance_update(const Tensor& x0_hat, const Tensor& x0_hat_prev, const Tensor& grad,
                            const TextGuidanceConfig& cfg);

struct GuidanceTrace {
    const Tensor* ref_noised = nullptr;      // q(y, t) used by the reference update
    const Tensor* outpaint_noised = nullptr; // q(source, t) used by the injection
};

using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;
using StepObserver = std::function<void(int t, const Tensor& x, const GuidanceTrace&)>;

struct SampleHooks {
    const TextGuidanceConfig* text = nullptr;
    const ReferenceConfig* ref = nullptr;
    const OutpaintConfig* outpaint = nullptr;
    StepObserver observer;
};

// Core reverse chain from unit Gaussian noise at (3, h, w). Returns the raw
// sample in [-inf, inf]; callers clamp to [-1, 1] for encoding.
Tensor sample_chain(int h, int w, const NoiseSchedule& sched, const DenoiseFn& denoise, Rng& rng,
                    const SampleHooks& hooks = {}, int stride = 1);

struct SampleResult {
    Tensor raw;      // (3, H, W), unclamped
    ImageU8 image;   // clamped 8-bit encoding
    Tensor field_m;  // m plane actually used, for inspection
};

// Full pipeline: build the positional field (training mask resized to the
// output, then control-edited), embed it once, run the chain, encode.
SampleResult run_sample(const SampleRequest& request, Model& model, const NoiseSchedule& sched,
                        const Tensor& train_mask, const SampleHooks& hooks = {});

}  // namespace sid
