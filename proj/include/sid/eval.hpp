#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/losses.hpp"
#include "sid/tensor.hpp"

namespace sid {

// Gaussian moments of per-position feature vectors: mean (d) and covariance
// (d, d) with 1/(N-1) normalization plus 1e-6 diagonal regularization.
struct FeatureGaussian {
    Tensor mean;
    Tensor cov;
};

FeatureGaussian fit_feature_gaussian(const Tensor& features);

// Squared Frechet distance between two Gaussians, clamped at 0.
double frechet_gaussian(const FeatureGaussian& a, const FeatureGaussian& b);

// Frechet distance between Gaussians fitted to the first feature stage of the
// extractor on each image. Images are (3, H, W) in [0, 1].
double sifid(const Tensor& real, const Tensor& fake, const PerceptualExtractor& phi);

// Mean pairwise perceptual distance over all unordered pairs: per stage the
// channel vectors are unit-normalized per position, distances averaged over
// positions and stages. Requires >= 2 samples.
double perceptual_diversity(const std::vector<Tensor>& samples, const PerceptualExtractor& phi);

inline constexpr double kPsnrCap = 100.0;  // reported when the region MSE is ~0

// PSNR over the masked pixels alone (unit range, capped), and SSIM from the
// standard 11-tap Gaussian window averaged over windows whose center lies in
// the region. Empty regions (or images too small for a window) are absent.
struct RegionMetrics {
    std::optional<double> psnr_fg, psnr_bg, ssim_fg, ssim_bg;
};
RegionMetrics psnr_ssim_split(const Tensor& src, const Tensor& gen, const Tensor& mask);

double psnr(const Tensor& a, const Tensor& b);              // full image, capped
std::optional<double> ssim(const Tensor& a, const Tensor& b);  // full image

// K x K counts of (rater A, rater B) labels.
struct ConfusionTable {
    Tensor counts;  // (K, K), nonnegative

    static ConfusionTable from_rows(const std::vector<std::vector<double>>& rows);
    double total() const;
};

double agreement_rate(const ConfusionTable& table);
// Absent when chance agreement is 1 (degenerate marginals).
std::optional<double> cohens_kappa(const ConfusionTable& table);

// Forward declaration; full type in judge.hpp.
struct SiqsScore;

struct SampleEval {
    std::string name;
    std::optional<double> sifid_value;
    std::optional<RegionMetrics> region;
    std::optional<int> siqs_quality, siqs_distortion, siqs_total;
    std::optional<std::string> error;
};

// Per-sample entries plus aggregates recomputed from them on serialization.
struct EvalReport {
    std::vector<SampleEval> samples;
    std::optional<double> diversity;
    nlohmann::json metadata;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

}  // namespace sid
