#include "sid/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace sid {

using nlohmann::json;

void DenoiserConfig::validate() const {
    if (num_blocks < 2 || num_blocks % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: num_blocks must be even and >= 2");
    if (channels < 1 || time_embed_dim < 1 || pe_embed_dim < 1 || attn_reduction < 1)
        throw std::invalid_argument("DenoiserConfig: dimensions must be >= 1");
    if (time_embed_dim % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even");
    if (branch_kernels.size() < 2)
        throw std::invalid_argument("DenoiserConfig: need at least 2 branch kernels");
    for (int k : branch_kernels)
        if (k < 3 || k % 2 == 0)
            throw std::invalid_argument("DenoiserConfig: branch kernels must be odd and >= 3");
    if (norm_groups < 1 || channels % norm_groups != 0 || channels / norm_groups < 2)
        throw std::invalid_argument(
            "DenoiserConfig: channels must divide into norm_groups with >= 2 per group");
}

int DenoiserConfig::max_kernel() const {
    int m = 0;
    for (int k : branch_kernels) m = std::max(m, k);
    return m;
}

int DenoiserConfig::receptive_radius() const {
    return 1 + num_blocks * (max_kernel() - 1) / 2;
}

json DenoiserConfig::to_json() const {
    return json{{"num_blocks", num_blocks},
                {"channels", channels},
                {"branch_kernels", branch_kernels},
                {"attn_reduction", attn_reduction},
                {"time_embed_dim", time_embed_dim},
                {"pe_embed_dim", pe_embed_dim},
                {"norm_groups", norm_groups}};
}

DenoiserConfig DenoiserConfig::from_json(const json& j) {
    DenoiserConfig c;
    c.num_blocks = j.at("num_blocks").get<int>();
    c.channels = j.at("channels").get<int>();
    c.branch_kernels = j.at("branch_kernels").get<std::vector<int>>();
    c.attn_reduction = j.at("attn_reduction").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.pe_embed_dim = j.at("pe_embed_dim").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.validate();
    return c;
}

Tensor sinusoidal_time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_time_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Tensor e({dim});
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

ArfFuse::ArfFuse(int channels_, int branches_, int reduction)
    : channels(channels_), branches(branches_) {
    bottleneck = std::max(1, channels_ / reduction);
    squeeze = Linear(channels_, bottleneck);
    logits.reserve(branches_);
    for (int k = 0; k < branches_; ++k) logits.emplace_back(bottleneck, channels_);
}

void ArfFuse::init(Rng& rng) {
    squeeze.init_he(rng);
    for (auto& l : logits) l.init_he(rng);
}

ArfFuse::Result ArfFuse::forward(const std::vector<Tensor>& branch_outputs, bool keep) {
    if (static_cast<int>(branch_outputs.size()) != branches || branches < 2)
        throw std::invalid_argument("ArfFuse: expected " + std::to_string(branches) + " branches");
    for (const auto& b : branch_outputs) check_same_shape(branch_outputs[0], b, "ArfFuse");
    const int h = branch_outputs[0].dim(1), w = branch_outputs[0].dim(2);
    if (branch_outputs[0].dim(0) != channels)
        throw std::invalid_argument("ArfFuse: channel mismatch");
    const int64_t plane = static_cast<int64_t>(h) * w;

    // Pooled descriptor of the branch sum.
    Tensor s({channels});
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (const auto& b : branch_outputs) {
            const double* p = b.data() + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
        }
        s[c] = acc / static_cast<double>(plane);
    }

    Tensor z_pre = squeeze.forward(s, keep);
    Tensor z = silu(z_pre);

    // Per-branch per-channel logits, softmax over the branch axis.
    Tensor weights({branches, channels});
    for (int k = 0; k < branches; ++k) {
        Tensor lg = logits[k].forward(z, keep);
        for (int c = 0; c < channels; ++c) weights.at(k, c) = lg[c];
    }
    for (int c = 0; c < channels; ++c) {
        double mx = weights.at(0, c);
        for (int k = 1; k < branches; ++k) mx = std::max(mx, weights.at(k, c));
        double denom = 0.0;
        for (int k = 0; k < branches; ++k) denom += std::exp(weights.at(k, c) - mx);
        for (int k = 0; k < branches; ++k)
            weights.at(k, c) = std::exp(weights.at(k, c) - mx) / denom;
    }

    Tensor fused({channels, h, w});
    for (int k = 0; k < branches; ++k) {
        for (int c = 0; c < channels; ++c) {
            const double a = weights.at(k, c);
            const double* src = branch_outputs[k].data() + static_cast<int64_t>(c) * plane;
            double* dst = fused.data() + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] += a * src[i];
        }
    }

    if (keep) {
        cached_branches_ = branch_outputs;
        cached_weights_ = weights;
        cached_z_pre_ = std::move(z_pre);
        cached_h_ = h;
        cached_w_ = w;
    }
    return {std::move(fused), std::move(weights)};
}

std::vector<Tensor> ArfFuse::backward(const Tensor& dfused) {
    if (cached_branches_.empty()) throw std::logic_error("ArfFuse::backward without forward");
    const int h = cached_h_, w = cached_w_;
    const int64_t plane = static_cast<int64_t>(h) * w;

    std::vector<Tensor> dbranches(branches, Tensor({channels, h, w}));
    Tensor dweights({branches, channels});

    for (int k = 0; k < branches; ++k) {
        for (int c = 0; c < channels; ++c) {
            const double a = cached_weights_.at(k, c);
            const double* g = dfused.data() + static_cast<int64_t>(c) * plane;
            const double* bsrc = cached_branches_[k].data() + static_cast<int64_t>(c) * plane;
            double* db = dbranches[k].data() + static_cast<int64_t>(c) * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                db[i] = a * g[i];
                acc += g[i] * bsrc[i];
            }
            dweights.at(k, c) = acc;
        }
    }

    // Softmax backward per channel.
    Tensor dlogits({branches, channels});
    for (int c = 0; c < channels; ++c) {
        double dotsum = 0.0;
        for (int k = 0; k < branches; ++k)
            dotsum += cached_weights_.at(k, c) * dweights.at(k, c);
        for (int k = 0; k < branches; ++k)
            dlogits.at(k, c) = cached_weights_.at(k, c) * (dweights.at(k, c) - dotsum);
    }

    Tensor dz({bottleneck});
    for (int k = 0; k < branches; ++k) {
        Tensor dl({channels});
        for (int c = 0; c < channels; ++c) dl[c] = dlogits.at(k, c);
        dz.add_(logits[k].backward(dl));
    }
    Tensor dz_pre = silu_backward(cached_z_pre_, dz);
    Tensor ds = squeeze.backward(dz_pre);

    // Descriptor path: s = mean over space of the branch sum.
    const double inv_plane = 1.0 / static_cast<double>(plane);
    for (int k = 0; k < branches; ++k) {
        for (int c = 0; c < channels; ++c) {
            const double add = ds[c] * inv_plane;
            double* db = dbranches[k].data() + static_cast<int64_t>(c) * plane;
            for (int64_t i = 0; i < plane; ++i) db[i] += add;
        }
    }

    cached_branches_.clear();
    cached_weights_ = Tensor();
    cached_z_pre_ = Tensor();
    return dbranches;
}

void ArfFuse::collect(ParamRegistry& reg, const std::string& prefix) {
    squeeze.collect(reg, prefix + ".squeeze");
    for (size_t k = 0; k < logits.size(); ++k)
        logits[k].collect(reg, prefix + ".logits" + std::to_string(k));
}

ArfBlock::ArfBlock(const DenoiserConfig& cfg)
    : time_proj(cfg.time_embed_dim, cfg.channels),
      pe_proj(cfg.pe_embed_dim, cfg.channels, 1),
      norm(cfg.channels, cfg.norm_groups),
      fuse(cfg.channels, static_cast<int>(cfg.branch_kernels.size()), cfg.attn_reduction) {
    branch_convs.reserve(cfg.branch_kernels.size());
    for (int k : cfg.branch_kernels)
        branch_convs.emplace_back(cfg.channels, cfg.channels, k);
}

void ArfBlock::init(Rng& rng) {
    time_proj.init_he(rng);
    pe_proj.init_he(rng);
    for (auto& c : branch_convs) c.init_he(rng);
    fuse.init(rng);
}

Tensor ArfBlock::forward(const Tensor& x, const Tensor& t_embed, const Tensor& pe_embed,
                         bool keep, Tensor* attn_out) {
    if (pe_embed.dim(1) != x.dim(1) || pe_embed.dim(2) != x.dim(2))
        throw std::invalid_argument("ArfBlock: pe embedding spatial size " +
                                    pe_embed.shape_string() + " does not match input " +
                                    x.shape_string());
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t plane = static_cast<int64_t>(h) * w;

    Tensor hin = x;
    Tensor tb = time_proj.forward(t_embed, keep);
    for (int ci = 0; ci < c; ++ci) {
        double* p = hin.data() + static_cast<int64_t>(ci) * plane;
        const double add = tb[ci];
        for (int64_t i = 0; i < plane; ++i) p[i] += add;
    }
    hin.add_(pe_proj.forward(pe_embed, keep));

    Tensor hn = norm.forward(hin, keep);
    Tensor act = silu(hn);
    if (keep) cached_hn_ = std::move(hn);

    std::vector<Tensor> branch_out;
    branch_out.reserve(branch_convs.size());
    for (auto& conv : branch_convs) branch_out.push_back(conv.forward(act, keep));

    ArfFuse::Result fused = fuse.forward(branch_out, keep);
    if (attn_out) *attn_out = fused.weights;

    Tensor out = x;
    out.add_(fused.fused);
    return out;
}

Tensor ArfBlock::backward(const Tensor& dy, Tensor& dt_embed, Tensor& dpe_embed) {
    std::vector<Tensor> dbranches = fuse.backward(dy);
    Tensor dact;
    for (size_t k = 0; k < branch_convs.size(); ++k) {
        Tensor d = branch_convs[k].backward(dbranches[k]);
        if (k == 0)
            dact = std::move(d);
        else
            dact.add_(d);
    }
    Tensor dhn = silu_backward(cached_hn_, dact);
    cached_hn_ = Tensor();
    Tensor dh = norm.backward(dhn);

    dpe_embed.add_(pe_proj.backward(dh));

    const int c = dh.dim(0);
    const int64_t plane = static_cast<int64_t>(dh.dim(1)) * dh.dim(2);
    Tensor dtb({c});
    for (int ci = 0; ci < c; ++ci) {
        const double* p = dh.data() + static_cast<int64_t>(ci) * plane;
        double acc = 0.0;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        dtb[ci] = acc;
    }
    dt_embed.add_(time_proj.backward(dtb));

    Tensor dx = dy;
    dx.add_(dh);
    return dx;
}

void ArfBlock::collect(ParamRegistry& reg, const std::string& prefix) {
    time_proj.collect(reg, prefix + ".time_proj");
    pe_proj.collect(reg, prefix + ".pe_proj");
    norm.collect(reg, prefix + ".norm");
    for (size_t k = 0; k < branch_convs.size(); ++k)
        branch_convs[k].collect(reg, prefix + ".branch" + std::to_string(k));
    fuse.collect(reg, prefix + ".fuse");
}

Denoiser Denoiser::create(const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    Denoiser d;
    d.cfg = cfg;
    d.stem = Conv2d(3, cfg.channels, 3);
    d.stem.init_he(rng);
    d.blocks.reserve(cfg.num_blocks);
    for (int i = 0; i < cfg.num_blocks; ++i) {
        d.blocks.emplace_back(cfg);
        d.blocks.back().init(rng);
    }
    d.head_norm = GroupNorm(cfg.channels, cfg.norm_groups);
    d.head = Conv2d(cfg.channels, 3, 1);
    // Zero head: the untrained network predicts zero, a neutral x0 estimate.
    d.head.w.zero();
    d.head.b.zero();
    return d;
}

Tensor Denoiser::forward(const Tensor& x_t, int t, const Tensor& pe_embed, bool keep,
                         std::vector<Tensor>* attn_out) {
    if (x_t.ndim() != 3 || x_t.dim(0) != 3)
        throw std::invalid_argument("Denoiser: expected (3,H,W) input, got " + x_t.shape_string());
    const int h = x_t.dim(1), w = x_t.dim(2);
    const int mk = cfg.max_kernel();
    if (h < mk || w < mk)
        throw std::invalid_argument("Denoiser: input " + x_t.shape_string() +
                                    " smaller than the largest branch kernel (" +
                                    std::to_string(mk) + ")");
    if (pe_embed.ndim() != 3 || pe_embed.dim(0) != cfg.pe_embed_dim || pe_embed.dim(1) != h ||
        pe_embed.dim(2) != w)
        throw std::invalid_argument("Denoiser: pe embedding must be (" +
                                    std::to_string(cfg.pe_embed_dim) + "," + std::to_string(h) +
                                    "," + std::to_string(w) + "), got " + pe_embed.shape_string());

    Tensor t_embed = sinusoidal_time_embedding(t, cfg.time_embed_dim);
    if (attn_out) attn_out->clear();

    Tensor hcur = stem.forward(x_t, keep);
    const int half = cfg.num_blocks / 2;
    std::vector<Tensor> first_half(half);
    for (int i = 0; i < cfg.num_blocks; ++i) {
        if (i >= half) hcur.add_(first_half[cfg.num_blocks - 1 - i]);
        Tensor attn;
        hcur = blocks[i].forward(hcur, t_embed, pe_embed, keep, attn_out ? &attn : nullptr);
        if (attn_out) attn_out->push_back(std::move(attn));
        if (i < half) first_half[i] = hcur;
    }
    Tensor hn = head_norm.forward(hcur, keep);
    Tensor act = silu(hn);
    if (keep) cached_head_hn_ = std::move(hn);
    return head.forward(act, keep);
}

Tensor Denoiser::backward(const Tensor& dy, Tensor& dpe_embed) {
    Tensor dact = head.backward(dy);
    Tensor dhn = silu_backward(cached_head_hn_, dact);
    cached_head_hn_ = Tensor();
    Tensor du = head_norm.backward(dhn);

    Tensor dt_embed({cfg.time_embed_dim});
    const int half = cfg.num_blocks / 2;
    std::vector<Tensor> dskip(half);
    for (int i = cfg.num_blocks - 1; i >= 0; --i) {
        du = blocks[i].backward(du, dt_embed, dpe_embed);
        if (i >= half) dskip[cfg.num_blocks - 1 - i] = du;
        if (i >= 1 && i - 1 < half) du.add_(dskip[i - 1]);
    }
    return stem.backward(du);
}

void Denoiser::collect(ParamRegistry& reg, const std::string& prefix) {
    stem.collect(reg, prefix + ".stem");
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(reg, prefix + ".block" + std::to_string(i));
    head_norm.collect(reg, prefix + ".head_norm");
    head.collect(reg, prefix + ".head");
}

Model Model::create(const DenoiserConfig& cfg, double pe_sigma, uint64_t init_seed) {
    Model m;
    m.cfg = cfg;
    Rng rng = Rng::derive(init_seed, "model-init");
    m.pe = FourierEmbedder::init(cfg.pe_embed_dim, pe_sigma, rng);
    m.net = Denoiser::create(cfg, rng);
    return m;
}

ParamRegistry Model::params() {
    ParamRegistry reg;
    reg.push_back({"pe.B", &pe.B, &pe.gB});
    net.collect(reg, "net");
    return reg;
}

Tensor Model::predict_x0(const Tensor& x_t, int t, const Tensor& pe_raw, bool keep) {
    Tensor embed = pe.embed_raw(pe_raw);
    return net.forward(x_t, t, embed, keep);
}

}  // namespace sid
