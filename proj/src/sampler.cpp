#include "sid/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "sid/checkpoint.hpp"
#include "sid/losses.hpp"
#include "sid/nn.hpp"

namespace sid {

const char* sample_mode_name(SampleMode mode) {
    switch (mode) {
        case SampleMode::Unconditional: return "unconditional";
        case SampleMode::Controlled: return "controlled";
        case SampleMode::Text: return "text";
        case SampleMode::Reference: return "reference";
        case SampleMode::Outpaint: return "outpaint";
    }
    return "?";
}

double QuadraticSimilarity::loss_and_grad(const Tensor& image, const std::string&,
                                          Tensor& grad) const {
    check_same_shape(image, target_, "QuadraticSimilarity");
    grad = image - target_;
    return 0.5 * grad.dot(grad);
}

std::shared_ptr<EmbeddingSimilarity> EmbeddingSimilarity::random(int embed_dim, uint64_t seed) {
    auto s = std::shared_ptr<EmbeddingSimilarity>(new EmbeddingSimilarity());
    Rng rng = Rng::derive(seed, "similarity-init");
    s->convs_.emplace_back(3, 16, 3, 2);
    s->convs_.back().init_he(rng);
    s->convs_.emplace_back(16, 32, 3, 2);
    s->convs_.back().init_he(rng);
    s->proj_ = Tensor::randn({embed_dim, 32}, rng, std::sqrt(1.0 / 32));
    s->vocab_ = Tensor::randn({512, embed_dim}, rng, 1.0);
    return s;
}

void EmbeddingSimilarity::save_file(const std::string& path) const {
    Archive a;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& c : convs_)
        layers.push_back({{"in", c.in_ch}, {"out", c.out_ch}, {"k", c.ksize}, {"stride", c.stride}});
    a.meta = {{"kind", "similarity"}, {"layers", layers}};
    for (size_t i = 0; i < convs_.size(); ++i) {
        a.put("conv" + std::to_string(i) + ".w", convs_[i].w);
        a.put("conv" + std::to_string(i) + ".b", convs_[i].b);
    }
    a.put("proj", proj_);
    a.put("vocab", vocab_);
    save_archive(path, a);
}

std::shared_ptr<EmbeddingSimilarity> EmbeddingSimilarity::load_file(const std::string& path) {
    Archive a = load_archive(path);
    if (a.meta.value("kind", "") != "similarity")
        throw std::runtime_error("'" + path + "' is not a similarity weights file");
    auto s = std::shared_ptr<EmbeddingSimilarity>(new EmbeddingSimilarity());
    size_t i = 0;
    for (const auto& l : a.meta.at("layers")) {
        Conv2d conv(l.at("in").get<int>(), l.at("out").get<int>(), l.at("k").get<int>(),
                    l.at("stride").get<int>());
        conv.w = a.require("conv" + std::to_string(i) + ".w");
        conv.b = a.require("conv" + std::to_string(i) + ".b");
        s->convs_.push_back(std::move(conv));
        ++i;
    }
    s->proj_ = a.require("proj");
    s->vocab_ = a.require("vocab");
    return s;
}

Tensor EmbeddingSimilarity::embed_text(const std::string& prompt) const {
    const int dim = proj_.dim(0);
    Tensor e({dim});
    int tokens = 0;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        uint64_t row = fnv1a64(word) % static_cast<uint64_t>(vocab_.dim(0));
        for (int d = 0; d < dim; ++d) e[d] += vocab_.at(static_cast<int>(row), d);
        ++tokens;
        word.clear();
    };
    for (char ch : prompt) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        else
            flush();
    }
    flush();
    if (tokens == 0) throw std::invalid_argument("text prompt has no tokens");
    e.scale_(1.0 / tokens);
    double n = e.l2_norm();
    if (n > 0) e.scale_(1.0 / n);
    return e;
}

double EmbeddingSimilarity::loss_and_grad(const Tensor& image, const std::string& prompt,
                                          Tensor& grad) const {
    Tensor txt = embed_text(prompt);
    const int dim = proj_.dim(0);

    // Forward: conv stack with SiLU, global average pool, linear projection.
    std::vector<Conv2d> local = convs_;
    std::vector<Tensor> pre;
    Tensor x = image;
    for (auto& c : local) {
        Tensor p = c.forward(x, true);
        pre.push_back(p);
        x = silu(p);
    }
    const int fc = x.dim(0);
    const int64_t plane = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    Tensor pooled({fc});
    for (int c = 0; c < fc; ++c) {
        double acc = 0;
        const double* p = x.data() + c * plane;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        pooled[c] = acc / plane;
    }
    Tensor emb({dim});
    for (int d = 0; d < dim; ++d) {
        double acc = 0;
        for (int c = 0; c < fc; ++c) acc += proj_.at(d, c) * pooled[c];
        emb[d] = acc;
    }
    double norm = std::max(emb.l2_norm(), 1e-12);
    double cos = emb.dot(txt) / norm;
    double loss = 1.0 - cos;

    // d(1 - e.t/|e|)/de = -(t - (e.t/|e|^2) e)/|e|
    Tensor demb({dim});
    for (int d = 0; d < dim; ++d)
        demb[d] = -(txt[d] - cos * emb[d] / norm) / norm;
    Tensor dpooled({fc});
    for (int c = 0; c < fc; ++c) {
        double acc = 0;
        for (int d = 0; d < dim; ++d) acc += proj_.at(d, c) * demb[d];
        dpooled[c] = acc;
    }
    Tensor dx({fc, x.dim(1), x.dim(2)});
    for (int c = 0; c < fc; ++c) {
        double g = dpooled[c] / plane;
        double* p = dx.data() + c * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] = g;
    }
    for (int i = static_cast<int>(local.size()) - 1; i >= 0; --i) {
        Tensor dpre = silu_backward(pre[static_cast<size_t>(i)], dx);
        dx = local[static_cast<size_t>(i)].backward(dpre);
    }
    grad = std::move(dx);
    return loss;
}

std::vector<int> leading_steps(int T, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw std::invalid_argument("leading_steps: fraction must lie in [0, 1]");
    // Reverse sampling counts t down from T-1; the leading fraction of the
    // chain is the high-noise end.
    int cutoff = static_cast<int>(std::llround((1.0 - fraction) * T));
    std::vector<int> steps;
    for (int t = T - 1; t >= cutoff; --t) steps.push_back(t);
    return steps;
}

std::vector<int> every_kth_steps(int T, int k) {
    if (k < 1) throw std::invalid_argument("every_kth_steps: k must be >= 1");
    std::vector<int> steps;
    for (int t = T - 1; t >= 0; --t)
        if (t % k == 0) steps.push_back(t);
    return steps;
}

Tensor lowpass(const Tensor& img, int N) {
    if (img.ndim() != 3) throw std::invalid_argument("lowpass: expected (C,H,W)");
    if (N < 1) throw std::invalid_argument("lowpass: N must be >= 1");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h % N != 0 || w % N != 0)
        throw std::invalid_argument("lowpass: N=" + std::to_string(N) + " does not divide " +
                                    std::to_string(h) + "x" + std::to_string(w));
    if (N == 1) return img;
    Tensor out({c, h, w});
    const double inv = 1.0 / (static_cast<double>(N) * N);
    for (int ci = 0; ci < c; ++ci)
        for (int by = 0; by < h; by += N)
            for (int bx = 0; bx < w; bx += N) {
                double acc = 0;
                for (int y = 0; y < N; ++y)
                    for (int x = 0; x < N; ++x) acc += img.at(ci, by + y, bx + x);
                acc *= inv;
                for (int y = 0; y < N; ++y)
                    for (int x = 0; x < N; ++x) out.at(ci, by + y, bx + x) = acc;
            }
    return out;
}

Tensor reference_update(const Tensor& x_t_hat, const Tensor& y, int t, const Tensor& noise,
                        const ReferenceConfig& cfg, const NoiseSchedule& sched) {
    check_same_shape(x_t_hat, y, "reference_update");
    Tensor noised = q_sample(y, t, noise, sched);
    Tensor out = x_t_hat;
    out.axpy_(-1.0, lowpass(x_t_hat, cfg.down_factor));
    out.add_(lowpass(noised, cfg.down_factor));
    return out;
}

Tensor outpaint_inject(const Tensor& x_t_hat, const Tensor& source, const Tensor& m_in, int t,
                       const Tensor& noise, const NoiseSchedule& sched) {
    check_same_shape(x_t_hat, source, "outpaint_inject");
    if (m_in.ndim() != 2 || m_in.dim(0) != x_t_hat.dim(1) || m_in.dim(1) != x_t_hat.dim(2))
        throw std::invalid_argument("outpaint_inject: mask shape does not match state");
    Tensor noised = q_sample(source, t, noise, sched);
    Tensor out = x_t_hat;
    const int64_t plane = static_cast<int64_t>(out.dim(1)) * out.dim(2);
    for (int c = 0; c < out.dim(0); ++c)
        for (int64_t i = 0; i < plane; ++i)
            if (m_in[i] != 0.0) out[c * plane + i] = noised[c * plane + i];
    return out;
}

Tensor clip_guidance_update(const Tensor& x0_hat, const Tensor& x0_hat_prev, const Tensor& grad,
                            const TextGuidanceConfig& cfg) {
    check_same_shape(x0_hat, x0_hat_prev, "clip_guidance_update");
    check_same_shape(x0_hat, grad, "clip_guidance_update grad");
    if (!grad.all_finite()) throw std::invalid_argument("clip_guidance_update: non-finite gradient");
    const int64_t plane = static_cast<int64_t>(x0_hat.dim(1)) * x0_hat.dim(2);
    Tensor mask = cfg.guide_mask;
    if (mask.empty()) mask = Tensor::full({x0_hat.dim(1), x0_hat.dim(2)}, 1.0);
    if (mask.dim(0) != x0_hat.dim(1) || mask.dim(1) != x0_hat.dim(2))
        throw std::invalid_argument("clip_guidance_update: mask shape mismatch");

    // delta = |x0 . m| / |grad . m|; zero when the masked gradient vanishes.
    double nx = 0.0, ng = 0.0;
    for (int c = 0; c < x0_hat.dim(0); ++c)
        for (int64_t i = 0; i < plane; ++i)
            if (mask[i] != 0.0) {
                double xv = x0_hat[c * plane + i];
                double gv = grad[c * plane + i];
                nx += xv * xv;
                ng += gv * gv;
            }
    double delta = ng > 0.0 ? std::sqrt(nx) / std::sqrt(ng) : 0.0;

    Tensor out(x0_hat.shape());
    const double lam = cfg.momentum_lambda;
    for (int c = 0; c < x0_hat.dim(0); ++c)
        for (int64_t i = 0; i < plane; ++i) {
            int64_t idx = c * plane + i;
            if (mask[i] != 0.0)
                out[idx] = x0_hat[idx] - cfg.eta * delta * grad[idx];
            else
                out[idx] = lam * x0_hat[idx] + (1.0 - lam) * x0_hat_prev[idx];
        }
    return out;
}

namespace {

bool in_set(const std::vector<int>& steps, int t) {
    return std::find(steps.begin(), steps.end(), t) != steps.end();
}

}  // namespace

Tensor sample_chain(int h, int w, const NoiseSchedule& sched, const DenoiseFn& denoise, Rng& rng,
                    const SampleHooks& hooks, int stride) {
    if (stride < 1) throw std::invalid_argument("sample_chain: stride must be >= 1");
    std::vector<int> levels;
    for (int t = sched.T - 1; t > 0; t -= stride) levels.push_back(t);
    levels.push_back(0);

    Tensor x = Tensor::randn({3, h, w}, rng);
    Tensor x0_prev;
    for (size_t idx = 0; idx < levels.size(); ++idx) {
        const int t = levels[idx];
        Tensor x0_hat = denoise(x, t);

        if (hooks.text && hooks.text->similarity && in_set(hooks.text->guided_steps, t)) {
            Tensor grad;
            hooks.text->similarity->loss_and_grad(x0_hat, hooks.text->prompt, grad);
            Tensor prev = x0_prev.empty() ? x0_hat : x0_prev;
            x0_hat = clip_guidance_update(x0_hat, prev, grad, *hooks.text);
        }
        x0_prev = x0_hat;

        if (idx + 1 < levels.size()) {
            const int next = levels[idx + 1];
            Tensor noise = Tensor::randn({3, h, w}, rng);
            x = (next == t - 1) ? ddpm_step(x, x0_hat, t, noise, sched)
                                : ddpm_step_between(x, x0_hat, t, next, noise, sched);

            GuidanceTrace trace;
            Tensor ref_noised, out_noised;
            if (hooks.ref && in_set(hooks.ref->guided_steps, next)) {
                Tensor qn = Tensor::randn({3, h, w}, rng);
                x = reference_update(x, hooks.ref->y, next, qn, *hooks.ref, sched);
                if (hooks.observer) {
                    ref_noised = q_sample(hooks.ref->y, next, qn, sched);
                    trace.ref_noised = &ref_noised;
                }
            }
            if (hooks.outpaint && in_set(hooks.outpaint->injected_steps, next)) {
                Tensor qn = Tensor::randn({3, h, w}, rng);
                x = outpaint_inject(x, hooks.outpaint->source, hooks.outpaint->m_in, next, qn,
                                    sched);
                if (hooks.observer) {
                    out_noised = q_sample(hooks.outpaint->source, next, qn, sched);
                    trace.outpaint_noised = &out_noised;
                }
            }
            if (hooks.observer) hooks.observer(next, x, trace);
        } else {
            // Final step at t = 0: deterministic posterior mean.
            Tensor zero({3, h, w});
            x = ddpm_step(x, x0_hat, 0, zero, sched);
            if (hooks.observer) hooks.observer(-1, x, GuidanceTrace{});
        }
    }
    return x;
}

SampleResult run_sample(const SampleRequest& request, Model& model, const NoiseSchedule& sched,
                        const Tensor& train_mask, const SampleHooks& hooks) {
    if (request.height < model.cfg.max_kernel() || request.width < model.cfg.max_kernel())
        throw std::invalid_argument("sample: output size below the network's minimal support");
    if (request.mode == SampleMode::Controlled && !request.control)
        throw std::invalid_argument("sample: controlled mode requires a control spec");

    Tensor mask_out = resize_mask_nearest(train_mask, request.height, request.width);
    PositionalField field = build_default_field(request.height, request.width, mask_out);
    if (request.control) field = apply_control(field, *request.control);
    Tensor embed = model.pe.embed_raw(field.raw);

    Rng rng = Rng::derive(request.seed, "sample");
    DenoiseFn fn = [&](const Tensor& x_t, int t) { return model.net.forward(x_t, t, embed); };
    Tensor raw = sample_chain(request.height, request.width, sched, fn, rng, hooks, request.stride);

    SampleResult res;
    res.image = signed_to_image(raw);
    res.raw = std::move(raw);
    Tensor m({field.height, field.width});
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) m.at(y, x) = field.raw.at(2, y, x);
    res.field_m = std::move(m);
    return res;
}

}  // namespace sid
