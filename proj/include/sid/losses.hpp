#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sid/nn.hpp"
#include "sid/tensor.hpp"

namespace sid {

struct LossWeights {
    double lambda1 = 1.0;   // perceptual term
    double lambda2 = 1.0;   // edge term
    double lambda_fg = 1.0;

    void validate() const;
};

// Deterministic multi-stage feature function used by the foreground loss,
// SIFID, and the diversity metric. Weights are frozen; evaluation never
// mutates shared state.
class PerceptualExtractor {
public:
    virtual ~PerceptualExtractor() = default;
    virtual int num_stages() const = 0;
    virtual std::vector<Tensor> features(const Tensor& img) const = 0;
    // dL/dimg given per-stage upstream gradients; recomputes internally.
    virtual Tensor features_backward(const Tensor& img,
                                     const std::vector<Tensor>& dstages) const = 0;
};

// Stack of conv + SiLU layers; the output of every layer is a feature stage.
class ConvStackExtractor : public PerceptualExtractor {
public:
    struct LayerSpec {
        int out_ch = 8;
        int ksize = 3;
        int stride = 1;
    };

    ConvStackExtractor(std::vector<LayerSpec> layers, uint64_t init_seed);

    // The frozen random extractor used across tests and desk-scale metrics:
    // 3 -> 8 (stride 1) -> 16 (stride 2), seed pinned.
    static std::shared_ptr<ConvStackExtractor> fixed_test_extractor();

    static std::shared_ptr<ConvStackExtractor> load_file(const std::string& path);
    void save_file(const std::string& path) const;

    int num_stages() const override { return static_cast<int>(convs_.size()); }
    std::vector<Tensor> features(const Tensor& img) const override;
    Tensor features_backward(const Tensor& img,
                             const std::vector<Tensor>& dstages) const override;

private:
    ConvStackExtractor() = default;
    std::vector<LayerSpec> specs_;
    std::vector<Conv2d> convs_;
};

// Mean squared per-pixel difference.
double mse_loss(const Tensor& pred, const Tensor& target);

// Per-channel gradient magnitude from the 3x3 Sobel kernels, reflect padded.
Tensor sobel_edge_map(const Tensor& img);

// Nearest-neighbor mask resample (H,W) -> (h2,w2), center aligned.
Tensor resize_mask_nearest(const Tensor& mask, int h2, int w2);

// Foreground-aware term: lambda1 * L1(masked feature diff, mean over stages)
// + lambda2 * L1(masked Sobel diff). Mask is (H, W) binary.
double fg_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
               const PerceptualExtractor& phi, const LossWeights& w);

double total_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
                  const PerceptualExtractor& phi, const LossWeights& w);

struct LossBreakdown {
    double total = 0.0;
    double mse = 0.0;
    double fg = 0.0;
    Tensor d_pred;  // gradient of total w.r.t. pred
};

// Value and gradient in one pass. phi may be null when w.lambda_fg == 0 or
// w.lambda1 == 0.
LossBreakdown total_loss_with_grad(const Tensor& pred, const Tensor& target, const Tensor& mask,
                                   const PerceptualExtractor* phi, const LossWeights& w);

}  // namespace sid
