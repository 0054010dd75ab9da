#include "sid/trainer.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "sid/checkpoint.hpp"

namespace sid {

using nlohmann::json;

int TrainConfig::resolve_crop(int h, int w) const {
    if (crop_size > 0) return crop_size;
    int short_side = std::min(h, w);
    return short_side >= 128 ? 64 : std::max(1, short_side / 2);
}

void TrainConfig::validate(int image_h, int image_w) const {
    arch.validate();
    loss.validate();
    if (batch_size < 1 || total_steps < 1)
        throw std::invalid_argument("TrainConfig: batch_size and total_steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0))
        throw std::invalid_argument("TrainConfig: ema_decay must lie in [0, 1)");
    int c = resolve_crop(image_h, image_w);
    if (c > std::min(image_h, image_w))
        throw std::invalid_argument("TrainConfig: crop size " + std::to_string(c) +
                                    " exceeds image " + std::to_string(image_h) + "x" +
                                    std::to_string(image_w));
    if (c < arch.max_kernel())
        throw std::invalid_argument("TrainConfig: crop size below the largest branch kernel");
}

json TrainConfig::to_json() const {
    return json{{"crop_size", crop_size},
                {"batch_size", batch_size},
                {"total_steps", total_steps},
                {"lr", lr},
                {"ema_decay", ema_decay},
                {"T", T},
                {"beta_start", beta_start},
                {"beta_end", beta_end},
                {"lambda1", loss.lambda1},
                {"lambda2", loss.lambda2},
                {"lambda_fg", loss.lambda_fg},
                {"fg_max_timestep", fg_max_timestep},
                {"seed", seed},
                {"pe_sigma", pe_sigma},
                {"checkpoint_every", checkpoint_every},
                {"arch", arch.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "crop_size") c.crop_size = it->get<int>();
        else if (k == "batch_size") c.batch_size = it->get<int>();
        else if (k == "total_steps") c.total_steps = it->get<int64_t>();
        else if (k == "lr") c.lr = it->get<double>();
        else if (k == "ema_decay") c.ema_decay = it->get<double>();
        else if (k == "T") c.T = it->get<int>();
        else if (k == "beta_start") c.beta_start = it->get<double>();
        else if (k == "beta_end") c.beta_end = it->get<double>();
        else if (k == "lambda1") c.loss.lambda1 = it->get<double>();
        else if (k == "lambda2") c.loss.lambda2 = it->get<double>();
        else if (k == "lambda_fg") c.loss.lambda_fg = it->get<double>();
        else if (k == "fg_max_timestep") c.fg_max_timestep = it->get<int>();
        else if (k == "seed") c.seed = it->get<uint64_t>();
        else if (k == "pe_sigma") c.pe_sigma = it->get<double>();
        else if (k == "checkpoint_every") c.checkpoint_every = it->get<int64_t>();
        else if (k == "arch") c.arch = DenoiserConfig::from_json(*it);
        else throw std::invalid_argument("train config: unknown key '" + k + "'");
    }
    return c;
}

CropBatch sample_crops(const Tensor& image, const PositionalField& field, int crop_size,
                       int batch_size, int T, Rng& rng) {
    const int h = image.dim(1), w = image.dim(2);
    if (crop_size > h || crop_size > w)
        throw std::invalid_argument("sample_crops: crop larger than image");
    if (field.height != h || field.width != w)
        throw std::invalid_argument("sample_crops: field does not match image");

    CropBatch batch;
    for (int b = 0; b < batch_size; ++b) {
        int ox = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(w - crop_size + 1)));
        int oy = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(h - crop_size + 1)));
        int t = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(T)));

        Tensor patch({3, crop_size, crop_size});
        Tensor pe({3, crop_size, crop_size});
        Tensor mask({crop_size, crop_size});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < crop_size; ++y)
                for (int x = 0; x < crop_size; ++x) {
                    patch.at(c, y, x) = image.at(c, oy + y, ox + x);
                    pe.at(c, y, x) = field.raw.at(c, oy + y, ox + x);
                }
        for (int y = 0; y < crop_size; ++y)
            for (int x = 0; x < crop_size; ++x) mask.at(y, x) = field.raw.at(2, oy + y, ox + x);

        Tensor noise = Tensor::randn({3, crop_size, crop_size}, rng);
        batch.patch.push_back(std::move(patch));
        batch.pe_raw.push_back(std::move(pe));
        batch.mask.push_back(std::move(mask));
        batch.t.push_back(t);
        batch.noise.push_back(std::move(noise));
        batch.origin.emplace_back(ox, oy);
    }
    return batch;
}

void AdamState::init(const ParamRegistry& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(p.value->shape());
        v.emplace_back(p.value->shape());
    }
    step = 0;
}

void AdamState::apply(ParamRegistry& params, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t p = 0; p < params.size(); ++p) {
        double* w = params[p].value->data();
        const double* g = params[p].grad->data();
        double* mp = m[p].data();
        double* vp = v[p].data();
        const int64_t n = params[p].value->numel();
        for (int64_t i = 0; i < n; ++i) {
            mp[i] = beta1 * mp[i] + (1.0 - beta1) * g[i];
            vp[i] = beta2 * vp[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = mp[i] / bc1;
            double vhat = vp[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Trainer::Trainer(TrainConfig cfg, Tensor image, Tensor mask,
                 std::shared_ptr<PerceptualExtractor> phi)
    : cfg_(std::move(cfg)), image_(std::move(image)), mask_(std::move(mask)), phi_(std::move(phi)) {
    if (image_.ndim() != 3 || image_.dim(0) != 3)
        throw std::invalid_argument("Trainer: image must be (3,H,W)");
    if (mask_.ndim() != 2 || mask_.dim(0) != image_.dim(1) || mask_.dim(1) != image_.dim(2))
        throw std::invalid_argument("Trainer: mask shape does not match image");
    cfg_.validate(image_.dim(1), image_.dim(2));
    bool needs_phi = cfg_.loss.lambda_fg > 0.0 && cfg_.loss.lambda1 > 0.0;
    if (needs_phi && !phi_)
        throw std::invalid_argument("Trainer: perceptual extractor required by loss weights");

    crop_ = cfg_.resolve_crop(image_.dim(1), image_.dim(2));
    field_ = build_default_field(image_.dim(1), image_.dim(2), mask_);
    sched_ = make_linear_schedule(cfg_.T, cfg_.beta_start, cfg_.beta_end);
    model_ = Model::create(cfg_.arch, cfg_.pe_sigma, cfg_.seed);
    adam_.init(model_.params());
    init_ema();
}

void Trainer::init_ema() {
    ema_.clear();
    ParamRegistry reg = model_.params();
    for (const auto& p : reg) ema_.push_back(*p.value);
}

StepStats Trainer::train_step(int64_t k) {
    Rng rng = Rng::derive(cfg_.seed, "train-step", static_cast<uint64_t>(k));
    CropBatch batch = sample_crops(image_, field_, crop_, cfg_.batch_size, cfg_.T, rng);

    ParamRegistry reg = model_.params();
    zero_grads(reg);

    StepStats stats;
    const double inv_b = 1.0 / cfg_.batch_size;
    for (int b = 0; b < cfg_.batch_size; ++b) {
        Tensor x_t = q_sample(batch.patch[b], batch.t[b], batch.noise[b], sched_);
        Tensor embed = model_.pe.embed_raw(batch.pe_raw[b]);
        Tensor pred = model_.net.forward(x_t, batch.t[b], embed, true);

        LossWeights w = cfg_.loss;
        if (cfg_.fg_max_timestep >= 0 && batch.t[b] > cfg_.fg_max_timestep) w.lambda_fg = 0.0;
        LossBreakdown lb = total_loss_with_grad(pred, batch.patch[b], batch.mask[b], phi_.get(), w);
        if (!std::isfinite(lb.total))
            throw std::runtime_error("train_step " + std::to_string(k) +
                                     ": non-finite loss (mse=" + std::to_string(lb.mse) +
                                     ", fg=" + std::to_string(lb.fg) + ")");
        stats.total += lb.total * inv_b;
        stats.mse += lb.mse * inv_b;
        stats.fg += lb.fg * inv_b;

        lb.d_pred.scale_(inv_b);
        Tensor dembed({cfg_.arch.pe_embed_dim, crop_, crop_});
        model_.net.backward(lb.d_pred, dembed);
        model_.pe.backward(batch.pe_raw[b], dembed);
    }

    adam_.apply(reg, cfg_.lr);

    const double d = cfg_.ema_decay;
    for (size_t p = 0; p < reg.size(); ++p) {
        double* e = ema_[p].data();
        const double* w = reg[p].value->data();
        for (int64_t i = 0, n = ema_[p].numel(); i < n; ++i)
            e[i] = d * e[i] + (1.0 - d) * w[i];
    }
    return stats;
}

void Trainer::run(std::ostream* loss_csv,
                  const std::function<void(int64_t, const StepStats&)>& on_step) {
    if (loss_csv && adam_.step == 0) *loss_csv << "step,total,mse,fg\n";
    for (int64_t k = adam_.step; k < cfg_.total_steps; ++k) {
        StepStats s = train_step(k);
        if (loss_csv) {
            char line[160];
            std::snprintf(line, sizeof(line), "%lld,%.10g,%.10g,%.10g\n",
                          static_cast<long long>(k), s.total, s.mse, s.fg);
            *loss_csv << line;
        }
        if (on_step) on_step(k, s);
    }
}

Model Trainer::ema_model() const {
    Model out = model_;  // deep copy via value semantics
    ParamRegistry reg = out.params();
    for (size_t p = 0; p < reg.size(); ++p) *reg[p].value = ema_[p];
    return out;
}

void Trainer::save(const std::string& path) const {
    Archive a;
    a.meta = json{{"kind", "checkpoint"},
                  {"train_config", cfg_.to_json()},
                  {"step", adam_.step},
                  {"seed", cfg_.seed}};
    Model& m = const_cast<Trainer*>(this)->model_;
    ParamRegistry reg = m.params();
    for (size_t p = 0; p < reg.size(); ++p) {
        a.put("param/" + reg[p].name, *reg[p].value);
        a.put("ema/" + reg[p].name, ema_[p]);
        a.put("adam_m/" + reg[p].name, adam_.m[p]);
        a.put("adam_v/" + reg[p].name, adam_.v[p]);
    }
    a.put("data/image", image_);
    a.put("data/mask", mask_);
    save_archive(path, a);
}

Trainer Trainer::resume(const std::string& path, std::shared_ptr<PerceptualExtractor> phi) {
    Archive a = load_archive(path);
    if (a.meta.value("kind", "") != "checkpoint")
        throw std::runtime_error("'" + path + "' is not a training checkpoint");
    TrainConfig cfg = TrainConfig::from_json(a.meta.at("train_config"));
    Trainer t(cfg, a.require("data/image"), a.require("data/mask"), std::move(phi));
    ParamRegistry reg = t.model_.params();
    for (size_t p = 0; p < reg.size(); ++p) {
        *reg[p].value = a.require("param/" + reg[p].name);
        t.ema_[p] = a.require("ema/" + reg[p].name);
        t.adam_.m[p] = a.require("adam_m/" + reg[p].name);
        t.adam_.v[p] = a.require("adam_v/" + reg[p].name);
    }
    t.adam_.step = a.meta.at("step").get<int64_t>();
    return t;
}

LoadedCheckpoint load_for_sampling(const std::string& path) {
    Archive a = load_archive(path);
    if (a.meta.value("kind", "") != "checkpoint")
        throw std::runtime_error("'" + path + "' is not a training checkpoint");
    LoadedCheckpoint out;
    out.config = TrainConfig::from_json(a.meta.at("train_config"));
    out.model = Model::create(out.config.arch, out.config.pe_sigma, out.config.seed);
    ParamRegistry reg = out.model.params();
    for (auto& p : reg) *p.value = a.require("ema/" + p.name);
    out.image = a.require("data/image");
    out.mask = a.require("data/mask");
    out.step = a.meta.at("step").get<int64_t>();
    return out;
}

}  // namespace sid
