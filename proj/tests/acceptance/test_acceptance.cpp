// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line with its runtime. Criterion 7 reuses the model trained in criterion 6.
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "sid/denoiser.hpp"
#include "sid/eval.hpp"
#include "sid/judge.hpp"
#include "sid/losses.hpp"
#include "sid/posenc.hpp"
#include "sid/sampler.hpp"
#include "sid/schedule.hpp"
#include "sid/trainer.hpp"
#include "test_util.hpp"

using namespace sid;
using Clock = std::chrono::steady_clock;

namespace {

struct CriterionTimer {
    const char* name;
    int index;
    double budget_s;
    Clock::time_point start = Clock::now();
    bool pass = true;

    CriterionTimer(int idx, const char* n, double budget) : name(n), index(idx), budget_s(budget) {}

    void expect(bool cond, const char* what) {
        if (!cond) {
            std::printf("[ACCEPT]   criterion %d check failed: %s\n", index, what);
            pass = false;
        }
        CHECK_MESSAGE(cond, what);
    }

    ~CriterionTimer() {
        double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
        bool in_budget = elapsed < budget_s;
        if (!in_budget) pass = false;
        std::printf("[ACCEPT] criterion %d (%s): %s (%.1f s, budget %.0f s)\n", index, name,
                    pass ? "PASS" : "FAIL", elapsed, budget_s);
        std::fflush(stdout);
        CHECK_MESSAGE(in_budget, "runtime budget exceeded");
    }
};

DenoiserConfig small_arch() {
    DenoiserConfig cfg;
    cfg.num_blocks = 2;
    cfg.channels = 8;
    cfg.branch_kernels = {3, 5};
    cfg.attn_reduction = 4;
    cfg.time_embed_dim = 8;
    cfg.pe_embed_dim = 4;
    cfg.norm_groups = 4;
    return cfg;
}

// Desk-scale profile pinned by the criterion: 2 blocks, 32 channels, the
// 4-branch kernel set, 64x64 source, 2000 steps.
DenoiserConfig desk_arch() {
    DenoiserConfig cfg;
    cfg.num_blocks = 2;
    cfg.channels = 32;
    cfg.branch_kernels = {5, 7, 9, 11};
    cfg.attn_reduction = 4;
    cfg.time_embed_dim = 32;
    cfg.pe_embed_dim = 16;
    cfg.norm_groups = 8;
    return cfg;
}

// Textured 64x64 source: smooth striped background plus a bright disc.
Tensor desk_source() {
    Tensor img({3, 64, 64});
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            double g = 0.25 * std::sin(0.55 * x) + 0.2 * std::cos(0.35 * y);
            double dx = x - 24.0, dy = y - 36.0;
            bool fg = dx * dx + dy * dy < 100.0;
            img.at(0, y, x) = fg ? 0.8 : -0.55 + g;
            img.at(1, y, x) = fg ? 0.55 : -0.35 + 0.8 * g;
            img.at(2, y, x) = fg ? 0.0 : -0.6 + 0.5 * g;
        }
    return img;
}

Tensor desk_mask() {
    Tensor m({64, 64});
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            double dx = x - 24.0, dy = y - 36.0;
            m.at(y, x) = dx * dx + dy * dy < 100.0 ? 1.0 : 0.0;
        }
    return m;
}

struct DeskState {
    Model model;  // EMA weights
    NoiseSchedule sched;
    Tensor mask;
    double final_loss = 0;
};
std::optional<DeskState> g_desk;

}  // namespace

TEST_CASE("criterion 1: schedule correctness") {
    CriterionTimer crit(1, "schedule correctness", 10.0);

    // Monte Carlo forward moments within 5% over 1e4 draws.
    NoiseSchedule s = make_linear_schedule(50, 1e-3, 0.3);
    const int t = 5;
    Tensor x0 = Tensor::from_vector({1, 2, 2}, {0.8, -0.6, 1.0, -0.9});
    Rng rng(7);
    Tensor mean(x0.shape()), sq(x0.shape());
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        Tensor noise = Tensor::randn(x0.shape(), rng);
        Tensor out = q_sample(x0, t, noise, s);
        mean.add_(out);
        for (int64_t i = 0; i < sq.numel(); ++i) sq[i] += out[i] * out[i];
    }
    double want_var = 1.0 - s.alpha_bar[t];
    for (int64_t i = 0; i < x0.numel(); ++i) {
        double m = mean[i] / draws;
        double v = sq[i] / draws - m * m;
        double em = std::sqrt(s.alpha_bar[t]) * x0[i];
        crit.expect(std::fabs(m - em) <= 0.05 * std::fabs(em), "MC mean within 5%");
        crit.expect(std::fabs(v - want_var) <= 0.05 * want_var, "MC variance within 5%");
    }

    // Oracle reverse chain reconstructs x0 within 1e-4 for random T <= 10.
    Rng trng(9);
    for (int rep = 0; rep < 6; ++rep) {
        int T = 1 + static_cast<int>(trng.uniform_below(10));
        NoiseSchedule sched = make_linear_schedule(T, 1e-3, 0.25);
        Tensor target = Tensor::randn({3, 6, 6}, trng);
        Tensor x = Tensor::randn(target.shape(), trng);
        for (int tt = T - 1; tt >= 0; --tt) {
            Tensor noise = Tensor::randn(target.shape(), trng);
            x = ddpm_step(x, target, tt, noise, sched);
        }
        double worst = 0;
        for (int64_t i = 0; i < x.numel(); ++i)
            worst = std::max(worst, std::fabs(x[i] - target[i]));
        crit.expect(worst <= 1e-4, "oracle chain reconstructs x0 within 1e-4");
    }
}

TEST_CASE("criterion 2: gradient suite") {
    CriterionTimer crit(2, "gradient suite", 60.0);

    // total_loss through Sobel and the frozen extractor, central differences.
    auto phi = ConvStackExtractor::fixed_test_extractor();
    LossWeights w;
    Tensor pred = test::random_image(3, 8, 8, 11, 0.4);
    Tensor target = test::random_image(3, 8, 8, 12, 0.4);
    Rng mrng(13);
    Tensor mask({8, 8});
    for (int64_t i = 0; i < 64; ++i) mask[i] = mrng.uniform() < 0.6 ? 1.0 : 0.0;
    LossBreakdown lb = total_loss_with_grad(pred, target, mask, phi.get(), w);
    auto loss_fn = [&] { return total_loss(pred, target, mask, *phi, w); };
    Rng pick(14);
    for (int rep = 0; rep < 24; ++rep) {
        int64_t i = static_cast<int64_t>(pick.uniform_below(static_cast<uint64_t>(pred.numel())));
        crit.expect(test::check_gradient(loss_fn, &pred[i], lb.d_pred[i], 1e-3, 1e-6),
                    "total_loss gradient at 1e-3");
    }

    // 2-block ARF denoiser end to end, one sampled slot per parameter tensor.
    Model m = Model::create(small_arch(), 1.0, 77);
    Rng hr(15);
    m.net.head.init_he(hr);
    Tensor x_t = Tensor::randn({3, 8, 8}, hr);
    Tensor tgt = Tensor::randn({3, 8, 8}, hr);
    PositionalField field = build_default_field(8, 8, Tensor({8, 8}));
    auto net_loss = [&] { return mse_loss(m.predict_x0(x_t, 2, field.raw), tgt); };
    ParamRegistry reg = m.params();
    zero_grads(reg);
    Tensor embed = m.pe.embed_raw(field.raw);
    Tensor out = m.net.forward(x_t, 2, embed, true);
    Tensor dout(out.shape());
    for (int64_t i = 0; i < out.numel(); ++i) dout[i] = 2.0 * (out[i] - tgt[i]) / out.numel();
    Tensor dembed({small_arch().pe_embed_dim, 8, 8});
    m.net.backward(dout, dembed);
    m.pe.backward(field.raw, dembed);
    Rng pick2(16);
    for (auto& p : reg) {
        int64_t i = static_cast<int64_t>(pick2.uniform_below(static_cast<uint64_t>(p.value->numel())));
        crit.expect(test::check_gradient(net_loss, &(*p.value)[i], (*p.grad)[i], 1e-3, 1e-6),
                    p.name.c_str());
    }
}

TEST_CASE("criterion 3: ARF contract") {
    CriterionTimer crit(3, "ARF contract", 30.0);

    // Fusion weights on the simplex within 1e-6.
    Rng rng(3);
    ArfFuse fuse(8, 4, 4);
    fuse.init(rng);
    std::vector<Tensor> branches;
    for (int k = 0; k < 4; ++k) branches.push_back(Tensor::randn({8, 6, 5}, rng));
    auto res = fuse.forward(branches);
    for (int c = 0; c < 8; ++c) {
        double sum = 0;
        for (int k = 0; k < 4; ++k) sum += res.weights.at(k, c);
        crit.expect(std::fabs(sum - 1.0) <= 1e-6, "weights sum to 1");
    }

    // Equal logits give the exact branch mean.
    ArfFuse equal(4, 4, 2);
    std::vector<Tensor> eb;
    for (int k = 0; k < 4; ++k) eb.push_back(Tensor::randn({4, 5, 5}, rng));
    auto eres = equal.forward(eb);
    double worst = 0;
    for (int64_t i = 0; i < eres.fused.numel(); ++i) {
        double mean = (eb[0][i] + eb[1][i] + eb[2][i] + eb[3][i]) / 4.0;
        worst = std::max(worst, std::fabs(eres.fused[i] - mean));
    }
    crit.expect(worst <= 1e-12, "equal logits give the exact mean");

    // Shape preservation over 10 random sizes.
    Model m = Model::create(small_arch(), 1.0, 123);
    for (int rep = 0; rep < 10; ++rep) {
        int h = 5 + static_cast<int>(rng.uniform_below(40));
        int wdt = 5 + static_cast<int>(rng.uniform_below(40));
        Tensor x = Tensor::randn({3, h, wdt}, rng);
        Tensor pe = Tensor::randn({small_arch().pe_embed_dim, h, wdt}, rng);
        Tensor y = m.net.forward(x, 1, pe);
        crit.expect(y.dim(1) == h && y.dim(2) == wdt, "output shape equals input shape");
    }

    // Single-pixel perturbation confined to the receptive radius: the local
    // response dominates; the pooled-attention residue dilutes with area.
    Model loc = Model::create(small_arch(), 1.0, 21);
    Rng hr(13);
    loc.net.head.init_he(hr);
    const int radius = small_arch().receptive_radius();
    auto measure = [&](int n, double& inside, double& outside) {
        Tensor pe = Tensor::full({small_arch().pe_embed_dim, n, n}, 0.0);
        Tensor x0 = Tensor::full({3, n, n}, 0.0);
        Tensor x1 = x0;
        x1.at(1, n / 2, n / 2) += 1.0;
        Tensor y0 = loc.net.forward(x0, 1, pe);
        Tensor y1 = loc.net.forward(x1, 1, pe);
        inside = outside = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    double d = std::fabs(y1.at(c, y, x) - y0.at(c, y, x));
                    if (std::max(std::abs(y - n / 2), std::abs(x - n / 2)) <= radius)
                        inside = std::max(inside, d);
                    else
                        outside = std::max(outside, d);
                }
    };
    double in32, out32, in64, out64;
    measure(32, in32, out32);
    measure(64, in64, out64);
    crit.expect(in32 > 0, "perturbation has a local response");
    crit.expect(out32 <= 0.05 * in32, "far field below 5% of local response at 32x32");
    crit.expect(out64 <= 0.05 * in64, "far field below 5% of local response at 64x64");
    crit.expect(out64 <= out32 / 2.0, "far-field residue dilutes with pooled area");
}

TEST_CASE("criterion 4: PE suite") {
    CriterionTimer crit(4, "PE suite", 30.0);

    // Embedding against the scalar oracle, and boundedness.
    Rng rng(21);
    Tensor mask({6, 7});
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    PositionalField field = build_default_field(6, 7, mask);
    FourierEmbedder emb = FourierEmbedder::init(9, 1.4, rng);
    Tensor e = fourier_embed(field, emb);
    double worst = 0;
    bool bounded = true;
    for (int j = 0; j < 9; ++j)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 7; ++x) {
                double dot = emb.B.at(0, j) * field.raw.at(0, y, x) +
                             emb.B.at(1, j) * field.raw.at(1, y, x) +
                             emb.B.at(2, j) * field.raw.at(2, y, x);
                worst = std::max(worst, std::fabs(e.at(j, y, x) - std::sin(dot)));
                bounded &= e.at(j, y, x) >= -1.0 && e.at(j, y, x) <= 1.0;
            }
    crit.expect(worst <= 1e-6, "embedding matches the scalar oracle at 1e-6");
    crit.expect(bounded, "embedding bounded in [-1,1]");

    // Control locality and exact translate round trip.
    Rng mrng(5);
    Tensor bigmask({40, 40});
    for (int64_t i = 0; i < bigmask.numel(); ++i) bigmask[i] = mrng.uniform() < 0.3 ? 1.0 : 0.0;
    PositionalField f = build_default_field(40, 40, bigmask);
    ControlOp op;
    op.kind = ControlOp::Kind::Translate;
    op.region = Region::rect(5, 6, 8, 7);
    op.dx = 11;
    op.dy = 9;
    ControlSpec fwd;
    fwd.ops.push_back(op);
    PositionalField moved = apply_control(f, fwd);
    bool local_ok = true;
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            bool in_src = x >= 5 && x < 13 && y >= 6 && y < 13;
            bool in_dst = x >= 16 && x < 24 && y >= 15 && y < 22;
            if (in_src || in_dst) continue;
            for (int c = 0; c < 3; ++c)
                if (moved.raw.at(c, y, x) != f.raw.at(c, y, x)) local_ok = false;
        }
    crit.expect(local_ok, "pixels outside source and destination are bit-identical");

    op.region = Region::rect(16, 15, 8, 7);
    op.dx = -11;
    op.dy = -9;
    ControlSpec back;
    back.ops.push_back(op);
    PositionalField restored = apply_control(moved, back);
    bool roundtrip = true;
    for (int y = 6; y < 13; ++y)
        for (int x = 5; x < 13; ++x)
            for (int c = 0; c < 3; ++c)
                if (restored.raw.at(c, y, x) != f.raw.at(c, y, x)) roundtrip = false;
    crit.expect(roundtrip, "translate round trip restores raw PE exactly");

    // Empty spec identity, byte for byte.
    PositionalField same = apply_control(f, ControlSpec{});
    crit.expect(std::memcmp(same.raw.data(), f.raw.data(),
                            sizeof(double) * static_cast<size_t>(f.raw.numel())) == 0,
                "empty spec is a byte-identical identity");

    // Controlled sampling with an empty spec equals unconditional, bit for bit.
    Model m = Model::create(small_arch(), 1.0, 5);
    Rng hr(8);
    m.net.head.init_he(hr);
    NoiseSchedule sched = make_linear_schedule(6, 1e-2, 0.2);
    Tensor tmask({10, 10});
    SampleRequest uncond;
    uncond.height = uncond.width = 12;
    uncond.seed = 77;
    SampleRequest ctrl = uncond;
    ctrl.mode = SampleMode::Controlled;
    ctrl.control = ControlSpec{};
    SampleResult a = run_sample(uncond, m, sched, tmask);
    SampleResult b = run_sample(ctrl, m, sched, tmask);
    bool bits_equal = a.image.pixels == b.image.pixels;
    for (int64_t i = 0; i < a.raw.numel(); ++i) bits_equal &= a.raw[i] == b.raw[i];
    crit.expect(bits_equal, "controlled-empty equals unconditional bit-for-bit");
}

TEST_CASE("criterion 5: guidance identities") {
    CriterionTimer crit(5, "guidance identities", 30.0);

    Model m = Model::create(small_arch(), 1.0, 31);
    Rng hr(12);
    m.net.head.init_he(hr);
    NoiseSchedule sched = make_linear_schedule(10, 1e-2, 0.25);
    Tensor pe = Tensor::full({small_arch().pe_embed_dim, 8, 8}, 0.1);
    DenoiseFn fn = [&](const Tensor& x, int t) { return m.net.forward(x, t, pe); };
    Rng rng(13);

    // Low-pass equality after every reference-guided step.
    ReferenceConfig ref;
    ref.y = Tensor::randn({3, 8, 8}, rng);
    ref.down_factor = 2;
    ref.guided_steps = leading_steps(10, 0.8);
    SampleHooks hooks;
    hooks.ref = &ref;
    int ref_steps = 0;
    double ref_worst = 0;
    hooks.observer = [&](int, const Tensor& x, const GuidanceTrace& trace) {
        if (!trace.ref_noised) return;
        Tensor lx = lowpass(x, 2);
        Tensor lq = lowpass(*trace.ref_noised, 2);
        for (int64_t i = 0; i < lx.numel(); ++i)
            ref_worst = std::max(ref_worst, std::fabs(lx[i] - lq[i]));
        ++ref_steps;
    };
    Rng cr(14);
    sample_chain(8, 8, sched, fn, cr, hooks);
    crit.expect(ref_steps >= 7, "every guided step observed");
    crit.expect(ref_worst <= 1e-6, "lowpass(state) equals lowpass(q(y,t)) within 1e-6");

    // Exact inner-region equality after every injected step.
    OutpaintConfig op;
    op.m_in = Tensor({8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) op.m_in.at(y, x) = 1.0;
    op.source = Tensor::randn({3, 8, 8}, rng);
    op.injected_steps = leading_steps(10, 0.8);
    SampleHooks hooks2;
    hooks2.outpaint = &op;
    int op_steps = 0;
    bool inner_exact = true;
    hooks2.observer = [&](int, const Tensor& x, const GuidanceTrace& trace) {
        if (!trace.outpaint_noised) return;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int xx = 0; xx < 4; ++xx)
                    if (x.at(c, y, xx) != trace.outpaint_noised->at(c, y, xx)) inner_exact = false;
        ++op_steps;
    };
    Rng cr2(15);
    sample_chain(8, 8, sched, fn, cr2, hooks2);
    crit.expect(op_steps >= 7, "every injected step observed");
    crit.expect(inner_exact, "inner region equals q(source,t,noise) exactly");

    // Zero gradient with lambda = 1 is an exact no-op.
    Tensor x0 = Tensor::randn({3, 5, 5}, rng);
    Tensor prev = Tensor::randn({3, 5, 5}, rng);
    TextGuidanceConfig text;
    text.eta = 0.9;
    text.momentum_lambda = 1.0;
    Tensor updated = clip_guidance_update(x0, prev, Tensor({3, 5, 5}), text);
    bool noop = true;
    for (int64_t i = 0; i < x0.numel(); ++i) noop &= updated[i] == x0[i];
    crit.expect(noop, "zero-gradient lambda=1 update is an exact no-op");
}

TEST_CASE("criterion 6: desk-scale training") {
    CriterionTimer crit(6, "desk-scale training", 900.0);

    TrainConfig cfg;
    cfg.arch = desk_arch();
    cfg.crop_size = 14;
    cfg.batch_size = 2;
    cfg.total_steps = 2000;
    cfg.lr = 1e-3;
    cfg.ema_decay = 0.995;
    cfg.T = 32;
    cfg.seed = 2024;
    Tensor source = desk_source();
    Tensor mask = desk_mask();
    Trainer trainer(cfg, source, mask, ConvStackExtractor::fixed_test_extractor());

    double initial = 0, final_loss = 0;
    for (int64_t k = 0; k < cfg.total_steps; ++k) {
        StepStats s = trainer.train_step(k);
        if (k < 5) initial += s.total / 5;
        if (k >= cfg.total_steps - 20) final_loss += s.total / 20;
        if ((k + 1) % 500 == 0)
            std::printf("[ACCEPT]   training step %lld/%lld loss %.4f\n",
                        static_cast<long long>(k + 1), static_cast<long long>(cfg.total_steps),
                        s.total);
    }
    std::printf("[ACCEPT]   initial %.4f final %.4f ratio %.3f\n", initial, final_loss,
                final_loss / initial);
    crit.expect(final_loss < 0.4 * initial, "final loss < 0.4 x initial loss");

    DeskState state{trainer.ema_model(), trainer.schedule(), mask, final_loss};

    // SIFID of 8 seed-pinned samples vs the uniform-noise baseline.
    auto phi = ConvStackExtractor::fixed_test_extractor();
    Tensor source_unit = signed_to_unit(source);
    double gen_sifid = 0;
    for (int i = 0; i < 8; ++i) {
        SampleRequest req;
        req.height = req.width = 64;
        req.seed = 9000 + static_cast<uint64_t>(i);
        SampleResult r = run_sample(req, state.model, state.sched, mask);
        gen_sifid += sifid(source_unit, image_to_unit(r.image), *phi) / 8.0;
    }
    Rng nrng(4);
    Tensor uniform({3, 64, 64});
    for (int64_t i = 0; i < uniform.numel(); ++i) uniform[i] = nrng.uniform();
    double noise_sifid = sifid(source_unit, uniform, *phi);
    std::printf("[ACCEPT]   sifid generated %.5f vs uniform noise %.5f (ratio %.1f)\n", gen_sifid,
                noise_sifid, noise_sifid / gen_sifid);
    crit.expect(gen_sifid * 5.0 <= noise_sifid, "generated SIFID at least 5x below noise SIFID");

    g_desk.emplace(std::move(state));
}

TEST_CASE("criterion 7: controllability asymmetry") {
    CriterionTimer crit(7, "controllability asymmetry", 300.0);
    REQUIRE_MESSAGE(g_desk.has_value(), "criterion 6 must have trained the desk model");

    // Translate the foreground disc bounding box to the right.
    const int bx = 14, by = 26, bw = 21, bh = 21, dx = 24;
    ControlSpec spec;
    ControlOp op;
    op.kind = ControlOp::Kind::Translate;
    op.region = Region::rect(bx, by, bw, bh);
    op.dx = dx;
    op.dy = 0;
    spec.ops.push_back(op);

    SampleRequest identity;
    identity.height = identity.width = 64;
    identity.seed = 515;
    identity.mode = SampleMode::Controlled;
    identity.control = ControlSpec{};
    SampleRequest translated = identity;
    translated.control = spec;

    SampleResult a = run_sample(identity, g_desk->model, g_desk->sched, g_desk->mask);
    SampleResult b = run_sample(translated, g_desk->model, g_desk->sched, g_desk->mask);

    double inside = 0, outside = 0;
    int64_t n_in = 0, n_out = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                bool in_src = x >= bx && x < bx + bw && y >= by && y < by + bh;
                bool in_dst = x >= bx + dx && x < bx + dx + bw && y >= by && y < by + bh;
                double d = std::fabs(a.raw.at(c, y, x) - b.raw.at(c, y, x));
                if (in_src || in_dst) {
                    inside += d;
                    ++n_in;
                } else {
                    outside += d;
                    ++n_out;
                }
            }
    inside /= static_cast<double>(n_in);
    outside /= static_cast<double>(n_out);
    std::printf("[ACCEPT]   mean |diff| inside %.4f outside %.4f (ratio %.2f)\n", inside, outside,
                inside / outside);
    crit.expect(inside >= 2.0 * outside, "edited-region difference at least 2x the outside");
}

TEST_CASE("criterion 8: eval oracles") {
    CriterionTimer crit(8, "eval oracles", 10.0);

    // Closed-form Frechet distances at 1e-4.
    FeatureGaussian a, b;
    a.mean = Tensor::from_vector({3}, {0.0, 1.0, -2.0});
    b.mean = Tensor::from_vector({3}, {0.5, 0.0, -1.0});
    a.cov = Tensor({3, 3});
    b.cov = Tensor({3, 3});
    double va[3] = {1.0, 2.0, 0.5}, vb[3] = {2.0, 1.0, 0.25};
    double want = 0.25 + 1.0 + 1.0;
    for (int i = 0; i < 3; ++i) {
        a.cov.at(i, i) = va[i];
        b.cov.at(i, i) = vb[i];
        double d = std::sqrt(va[i]) - std::sqrt(vb[i]);
        want += d * d;
    }
    crit.expect(std::fabs(frechet_gaussian(a, b) - want) <= 1e-4,
                "diagonal-case Frechet matches the closed form");

    Rng rng(7);
    FeatureGaussian c, d;
    const int dim = 4;
    c.mean = Tensor({dim});
    d.mean = Tensor({dim});
    Tensor mfac = Tensor::randn({dim, dim}, rng);
    c.cov = Tensor({dim, dim});
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            double acc = 0;
            for (int k = 0; k < dim; ++k) acc += mfac.at(i, k) * mfac.at(j, k);
            c.cov.at(i, j) = acc;
        }
    d.cov = c.cov * 2.25;
    double tr = 0;
    for (int i = 0; i < dim; ++i) tr += c.cov.at(i, i);
    double scaled_want = (1.0 + 2.25 - 2.0 * 1.5) * tr;
    crit.expect(std::fabs(frechet_gaussian(c, d) - scaled_want) <= 1e-4,
                "scaled-covariance Frechet matches the closed form");

    // Kappa and agreement on three fixed tables, exact.
    ConfusionTable diag = ConfusionTable::from_rows({{30, 0}, {0, 20}});
    crit.expect(agreement_rate(diag) == 1.0 && *cohens_kappa(diag) == 1.0, "diagonal table");
    ConfusionTable chance = ConfusionTable::from_rows({{25, 25}, {25, 25}});
    crit.expect(agreement_rate(chance) == 0.5 && std::fabs(*cohens_kappa(chance)) <= 1e-15,
                "chance-level table");
    ConfusionTable hand = ConfusionTable::from_rows({{40, 10}, {5, 45}});
    crit.expect(std::fabs(agreement_rate(hand) - 0.85) <= 1e-15 &&
                    std::fabs(*cohens_kappa(hand) - 0.7) <= 1e-12,
                "hand-computed kappa 0.7");

    // Prompt/parse round trip over the 10-fixture corpus.
    namespace fs = std::filesystem;
    int parsed = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(fs::path(SID_TEST_FIXTURES) / "siqs" / "corpus"))
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream is(f);
        nlohmann::json doc = nlohmann::json::parse(is);
        SiqsScore s = parse_siqs_response(doc.at("response").get<std::string>());
        crit.expect(s.quality == doc.at("expected_quality").get<int>() &&
                        s.distortion == doc.at("expected_distortion").get<int>() &&
                        s.total == s.quality + s.distortion,
                    "fixture parses to its hand label");
        ++parsed;
    }
    crit.expect(parsed == 10, "all 10 fixtures parsed");

    // gen = src: SSIM 1.0 and SIFID 0.
    auto phi = ConvStackExtractor::fixed_test_extractor();
    Tensor img = test::random_image(3, 16, 16, 21, 0.2);
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = 0.5 + 0.2 * img[i];
    crit.expect(sifid(img, img, *phi) <= 1e-6, "identical images give SIFID 0");
    Tensor ones = Tensor::full({16, 16}, 1.0);
    RegionMetrics r = psnr_ssim_split(img, img, ones);
    crit.expect(r.ssim_fg && std::fabs(*r.ssim_fg - 1.0) <= 1e-9, "identical images give SSIM 1");
    crit.expect(r.psnr_fg && *r.psnr_fg == kPsnrCap, "identical images cap PSNR");
}
