#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/denoiser.hpp"
#include "sid/losses.hpp"
#include "sid/posenc.hpp"
#include "sid/rng.hpp"
#include "sid/schedule.hpp"
#include "sid/tensor.hpp"

namespace sid {

struct TrainConfig {
    int crop_size = 0;  // 0 = auto: 64 when min(H,W) >= 128, else min(H,W)/2
    int batch_size = 16;
    int64_t total_steps = 50000;
    double lr = 2e-4;
    double ema_decay = 0.999;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    LossWeights loss;
    int fg_max_timestep = -1;  // foreground losses only when t <= this; -1 = always
    uint64_t seed = 0;
    DenoiserConfig arch;
    double pe_sigma = 1.0;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only

    int resolve_crop(int h, int w) const;
    void validate(int image_h, int image_w) const;

    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
};

// Aligned random crops: patch, raw PE and mask windows cut from the same
// source rectangle, plus per-item timestep and noise draws.
struct CropBatch {
    std::vector<Tensor> patch;   // (3, c, c), [-1, 1]
    std::vector<Tensor> pe_raw;  // (3, c, c), global-frame coordinates
    std::vector<Tensor> mask;    // (c, c)
    std::vector<int> t;
    std::vector<Tensor> noise;   // (3, c, c)
    std::vector<std::pair<int, int>> origin;  // (x, y) window corner
};

// Draw order per item: origin x, origin y, timestep, noise values. Fixed and
// documented so seeded runs replay exactly.
CropBatch sample_crops(const Tensor& image, const PositionalField& field, int crop_size,
                       int batch_size, int T, Rng& rng);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step = 0;
    std::vector<Tensor> m, v;

    void init(const ParamRegistry& params);
    void apply(ParamRegistry& params, double lr);
};

struct StepStats {
    double total = 0.0, mse = 0.0, fg = 0.0;
};

class Trainer {
public:
    // image is (3, H, W) in [-1, 1]; mask is (H, W) binary.
    Trainer(TrainConfig cfg, Tensor image, Tensor mask,
            std::shared_ptr<PerceptualExtractor> phi);

    // One optimization step. The step's randomness derives from
    // (seed, "train-step", k) alone, so resumed runs replay bit-exactly.
    StepStats train_step(int64_t k);

    // Runs steps [current, total) and appends one CSV row per step.
    void run(std::ostream* loss_csv,
             const std::function<void(int64_t, const StepStats&)>& on_step = nullptr);

    void save(const std::string& path) const;
    static Trainer resume(const std::string& path, std::shared_ptr<PerceptualExtractor> phi);

    Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    // Extends (or shortens) the step horizon, e.g. when resuming.
    void set_total_steps(int64_t steps) { cfg_.total_steps = steps; }
    const NoiseSchedule& schedule() const { return sched_; }
    int64_t current_step() const { return adam_.step; }
    // Model carrying the EMA parameter values.
    Model ema_model() const;
    const Tensor& image() const { return image_; }
    const Tensor& mask() const { return mask_; }

private:
    Trainer() = default;
    void init_ema();

    TrainConfig cfg_;
    Tensor image_, mask_;
    PositionalField field_;
    NoiseSchedule sched_;
    std::shared_ptr<PerceptualExtractor> phi_;
    Model model_;
    AdamState adam_;
    std::vector<Tensor> ema_;
    int crop_ = 0;
};

// Loads the sampling-ready model (EMA weights), its config, and the training
// image/mask from a checkpoint file.
struct LoadedCheckpoint {
    Model model;  // EMA weights installed
    TrainConfig config;
    Tensor image;
    Tensor mask;
    int64_t step = 0;
};
LoadedCheckpoint load_for_sampling(const std::string& path);

}  // namespace sid
