#include "sid/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sid/checkpoint.hpp"
#include "sid/eval.hpp"
#include "sid/image.hpp"
#include "sid/judge.hpp"
#include "sid/losses.hpp"
#include "sid/manifest.hpp"
#include "sid/posenc.hpp"
#include "sid/sampler.hpp"
#include "sid/trainer.hpp"

namespace sid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> argv_vector(int argc, const char* const* argv) {
    std::vector<std::string> v;
    for (int i = 0; i < argc; ++i) v.emplace_back(argv[i]);
    return v;
}

std::shared_ptr<PerceptualExtractor> make_extractor(const std::string& path) {
    if (path.empty()) return ConvStackExtractor::fixed_test_extractor();
    return ConvStackExtractor::load_file(path);
}

json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return json::parse(is);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string image, mask, config, out_dir, extractor, resume;
    int64_t steps = -1;
    int batch = -1, crop = -1, timesteps = -1, blocks = -1, channels = -1, groups = -1;
    double lr = -1, ema = -1, lambda_fg = -1, lambda1 = -1, lambda2 = -1, pe_sigma = -1;
    int64_t seed = -1, checkpoint_every = -1;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
    ImageU8 img = load_image_rgb(a.image);
    Tensor image = image_to_signed(img);

    Tensor mask;
    if (!a.mask.empty()) {
        mask = load_mask_png(a.mask);
        if (mask.dim(0) != img.height || mask.dim(1) != img.width)
            throw std::invalid_argument("mask size " + mask.shape_string() + " does not match image " +
                                        std::to_string(img.height) + "x" + std::to_string(img.width));
    } else {
        mask = Tensor({img.height, img.width});
    }

    TrainConfig cfg;
    if (!a.config.empty()) cfg = TrainConfig::from_json(load_json_file(a.config));
    if (a.steps >= 0) cfg.total_steps = a.steps;
    if (a.batch >= 0) cfg.batch_size = a.batch;
    if (a.crop >= 0) cfg.crop_size = a.crop;
    if (a.timesteps >= 0) cfg.T = a.timesteps;
    if (a.blocks >= 0) cfg.arch.num_blocks = a.blocks;
    if (a.channels >= 0) cfg.arch.channels = a.channels;
    if (a.groups >= 0) cfg.arch.norm_groups = a.groups;
    if (a.lr >= 0) cfg.lr = a.lr;
    if (a.ema >= 0) cfg.ema_decay = a.ema;
    if (a.lambda_fg >= 0) cfg.loss.lambda_fg = a.lambda_fg;
    if (a.lambda1 >= 0) cfg.loss.lambda1 = a.lambda1;
    if (a.lambda2 >= 0) cfg.loss.lambda2 = a.lambda2;
    if (a.pe_sigma >= 0) cfg.pe_sigma = a.pe_sigma;
    if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
    if (a.checkpoint_every >= 0) cfg.checkpoint_every = a.checkpoint_every;

    bool fg_active = cfg.loss.lambda_fg > 0.0 && (cfg.loss.lambda1 > 0.0 || cfg.loss.lambda2 > 0.0);
    if (fg_active && a.mask.empty())
        throw std::invalid_argument(
            "foreground losses are enabled but no --mask was given; pass --mask or disable them "
            "(--lambda-fg 0)");

    fs::create_directories(a.out_dir);
    std::string ckpt_path = (fs::path(a.out_dir) / "checkpoint.sidc").string();
    std::string csv_path = (fs::path(a.out_dir) / "loss.csv").string();

    auto phi = make_extractor(a.extractor);
    std::optional<Trainer> trainer;
    std::ofstream csv;
    if (!a.resume.empty()) {
        trainer.emplace(Trainer::resume(a.resume, phi));
        if (a.steps >= 0) trainer->set_total_steps(a.steps);
        csv.open(csv_path, std::ios::app);
    } else {
        trainer.emplace(cfg, image, mask, phi);
        csv.open(csv_path, std::ios::trunc);
    }
    if (!csv) throw std::runtime_error("cannot open '" + csv_path + "'");

    const TrainConfig& used = trainer->config();
    int64_t every = used.checkpoint_every;
    trainer->run(&csv, [&](int64_t k, const StepStats& s) {
        if (every > 0 && (k + 1) % every == 0) trainer->save(ckpt_path);
        if ((k + 1) % 100 == 0 || k + 1 == used.total_steps)
            std::cerr << "step " << (k + 1) << "/" << used.total_steps << " loss " << s.total
                      << "\n";
    });
    trainer->save(ckpt_path);
    csv.close();

    RunManifest man;
    man.command = "train";
    man.argv = argv;
    man.resolved_config = trainer->config().to_json();
    man.seed = trainer->config().seed;
    man.input_hashes["image"] = sha256_file(a.image);
    if (!a.mask.empty()) man.input_hashes["mask"] = sha256_file(a.mask);
    if (!a.config.empty()) man.input_hashes["config"] = sha256_file(a.config);
    man.checkpoint_hash = sha256_file(ckpt_path);
    man.write((fs::path(a.out_dir) / "manifest.json").string());
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint, out, control, ref, outpaint, outpaint_source, text, sim_weights,
        guide_mask;
    int width = -1, height = -1, stride = 1, down_factor = 8, guide_every = 5;
    int64_t seed = 0;
    double eta = 0.3, momentum = 0.9, guided_frac = 0.8;
};

// Places the training image at the inner-mask bounding box.
Tensor build_outpaint_source(const Tensor& m_in, const Tensor& train_image,
                             const std::string& override_path) {
    int h = m_in.dim(0), w = m_in.dim(1);
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m_in.at(y, x) != 0.0) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw std::invalid_argument("outpaint mask selects no pixels");

    Tensor content = train_image;
    if (!override_path.empty()) content = image_to_signed(load_image_rgb(override_path));
    int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    if (content.dim(1) != bh || content.dim(2) != bw)
        throw std::invalid_argument("outpaint mask bounding box " + std::to_string(bw) + "x" +
                                    std::to_string(bh) + " does not match the source image " +
                                    std::to_string(content.dim(2)) + "x" +
                                    std::to_string(content.dim(1)));
    Tensor canvas({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < bh; ++y)
            for (int x = 0; x < bw; ++x) canvas.at(c, y0 + y, x0 + x) = content.at(c, y, x);
    return canvas;
}

int run_sample(const SampleArgs& a, const std::vector<std::string>& argv) {
    int modes = (!a.control.empty()) + (!a.ref.empty()) + (!a.outpaint.empty()) +
                (!a.text.empty());
    if (modes > 1)
        throw std::invalid_argument("--control, --ref, --outpaint and --text are mutually exclusive");

    LoadedCheckpoint ckpt = load_for_sampling(a.checkpoint);
    NoiseSchedule sched =
        make_linear_schedule(ckpt.config.T, ckpt.config.beta_start, ckpt.config.beta_end);

    SampleRequest req;
    req.height = a.height > 0 ? a.height : ckpt.image.dim(1);
    req.width = a.width > 0 ? a.width : ckpt.image.dim(2);
    req.seed = static_cast<uint64_t>(a.seed);
    req.stride = a.stride;

    json guidance;
    SampleHooks hooks;
    TextGuidanceConfig text_cfg;
    ReferenceConfig ref_cfg;
    OutpaintConfig out_cfg;
    std::shared_ptr<EmbeddingSimilarity> sim;

    if (!a.control.empty()) {
        req.mode = SampleMode::Controlled;
        fs::path spec_dir = fs::path(a.control).parent_path();
        MaskLoader loader = [&](const std::string& rel) {
            return load_mask_png((spec_dir / rel).string());
        };
        req.control = parse_control_spec(load_json_file(a.control), loader);
        guidance["control"] = a.control;
    } else if (!a.ref.empty()) {
        req.mode = SampleMode::Reference;
        if (req.height % a.down_factor != 0 || req.width % a.down_factor != 0)
            throw std::invalid_argument("--N " + std::to_string(a.down_factor) +
                                        " does not divide the output size " +
                                        std::to_string(req.width) + "x" + std::to_string(req.height));
        ref_cfg.y = resize_bilinear(image_to_signed(load_image_rgb(a.ref)), req.height, req.width);
        ref_cfg.down_factor = a.down_factor;
        ref_cfg.guided_steps = leading_steps(ckpt.config.T, a.guided_frac);
        hooks.ref = &ref_cfg;
        guidance["reference"] = {{"image", a.ref}, {"N", a.down_factor},
                                 {"guided_frac", a.guided_frac}};
    } else if (!a.outpaint.empty()) {
        req.mode = SampleMode::Outpaint;
        out_cfg.m_in = load_mask_png(a.outpaint);
        if (out_cfg.m_in.dim(0) != req.height || out_cfg.m_in.dim(1) != req.width)
            throw std::invalid_argument("outpaint mask size does not match the output size");
        out_cfg.source = build_outpaint_source(out_cfg.m_in, ckpt.image, a.outpaint_source);
        out_cfg.injected_steps = leading_steps(ckpt.config.T, a.guided_frac);
        hooks.outpaint = &out_cfg;
        guidance["outpaint"] = {{"mask", a.outpaint}, {"guided_frac", a.guided_frac}};
    } else if (!a.text.empty()) {
        req.mode = SampleMode::Text;
        if (a.sim_weights.empty())
            throw std::invalid_argument("--text requires --sim-weights (similarity model file)");
        sim = EmbeddingSimilarity::load_file(a.sim_weights);
        text_cfg.prompt = a.text;
        text_cfg.eta = a.eta;
        text_cfg.momentum_lambda = a.momentum;
        text_cfg.similarity = sim.get();
        text_cfg.guided_steps = every_kth_steps(ckpt.config.T, a.guide_every);
        if (!a.guide_mask.empty()) {
            text_cfg.guide_mask = load_mask_png(a.guide_mask);
            if (text_cfg.guide_mask.dim(0) != req.height || text_cfg.guide_mask.dim(1) != req.width)
                throw std::invalid_argument("guide mask size does not match the output size");
        }
        hooks.text = &text_cfg;
        guidance["text"] = {{"prompt", a.text}, {"eta", a.eta}, {"momentum", a.momentum},
                            {"guide_every", a.guide_every}};
    }

    SampleResult result = run_sample(req, ckpt.model, sched, ckpt.mask, hooks);
    save_png(a.out, result.image);

    json sidecar{{"command", "sample"},
                 {"mode", sample_mode_name(req.mode)},
                 {"height", req.height},
                 {"width", req.width},
                 {"seed", req.seed},
                 {"stride", req.stride},
                 {"checkpoint", a.checkpoint},
                 {"checkpoint_hash", sha256_file(a.checkpoint)},
                 {"checkpoint_step", ckpt.step},
                 {"guidance", guidance},
                 {"tool_version", kToolVersion}};
    std::ofstream side(a.out + ".json", std::ios::trunc);
    side << sidecar.dump(2) << "\n";

    RunManifest man;
    man.command = "sample";
    man.argv = argv;
    man.resolved_config = sidecar;
    man.seed = req.seed;
    man.input_hashes["checkpoint"] = sidecar.at("checkpoint_hash");
    if (!a.control.empty()) man.input_hashes["control"] = sha256_file(a.control);
    if (!a.ref.empty()) man.input_hashes["reference"] = sha256_file(a.ref);
    if (!a.outpaint.empty()) man.input_hashes["outpaint_mask"] = sha256_file(a.outpaint);
    man.checkpoint_hash = sidecar.at("checkpoint_hash");
    man.write(a.out + ".manifest.json");
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string source, dir, out, mask, extractor;
    bool siqs = false;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
    ImageU8 source_img = load_image_rgb(a.source);
    Tensor source = image_to_unit(source_img);
    auto phi = make_extractor(a.extractor);

    Tensor mask;
    if (!a.mask.empty()) {
        mask = load_mask_png(a.mask);
        if (mask.dim(0) != source.dim(1) || mask.dim(1) != source.dim(2))
            throw std::invalid_argument("mask size does not match the source image");
    }

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::invalid_argument("no images found in '" + a.dir + "'");

    std::unique_ptr<JudgeTransport> transport;
    JudgeConfig judge_cfg = JudgeConfig::from_env();
    if (a.siqs) {
        if (const char* fx = std::getenv("SID_JUDGE_FIXTURES"))
            transport = std::make_unique<FixtureJudgeTransport>(fx);
        else
            transport = std::make_unique<HttpJudgeTransport>(judge_cfg);
    }

    EvalReport report;
    std::vector<Tensor> samples;
    for (const auto& f : files) {
        SampleEval entry;
        entry.name = f.filename().string();
        try {
            ImageU8 gen_img = load_image_rgb(f.string());
            Tensor gen = image_to_unit(gen_img);
            entry.sifid_value = sifid(source, gen, *phi);
            if (!mask.empty() && gen.same_shape(source))
                entry.region = psnr_ssim_split(source, gen, mask);
            samples.push_back(gen);
            if (transport) {
                try {
                    ScoreOutcome sc = score_image(source_img, gen_img, *transport, judge_cfg);
                    entry.siqs_quality = sc.score.quality;
                    entry.siqs_distortion = sc.score.distortion;
                    entry.siqs_total = sc.score.total;
                } catch (const std::exception& e) {
                    entry.error = std::string("siqs: ") + e.what();
                }
            }
        } catch (const std::exception& e) {
            entry.error = e.what();
        }
        report.samples.push_back(std::move(entry));
    }
    if (samples.size() >= 2) report.diversity = perceptual_diversity(samples, *phi);
    report.metadata = {{"source", a.source},
                       {"source_hash", sha256_file(a.source)},
                       {"dir", a.dir},
                       {"tool_version", kToolVersion}};

    std::ofstream os(a.out, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + a.out + "'");
    os << report.to_json().dump(2) << "\n";
    std::string txt_path = a.out;
    if (txt_path.size() > 5 && txt_path.substr(txt_path.size() - 5) == ".json")
        txt_path = txt_path.substr(0, txt_path.size() - 5);
    std::ofstream ts(txt_path + ".txt", std::ios::trunc);
    ts << report.to_text();
    std::cout << report.to_text();

    RunManifest man;
    man.command = "eval";
    man.argv = argv;
    man.resolved_config = report.metadata;
    man.input_hashes["source"] = report.metadata.at("source_hash");
    if (!a.mask.empty()) man.input_hashes["mask"] = sha256_file(a.mask);
    man.write(a.out + ".manifest.json");
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"single-image diffusion toolkit"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a denoiser on one image");
    train->add_option("--image", ta.image, "source image (PNG or JPEG)")->required();
    train->add_option("--mask", ta.mask, "binary foreground mask PNG");
    train->add_option("--config", ta.config, "JSON training config");
    train->add_option("--out", ta.out_dir, "output directory")->required();
    train->add_option("--extractor", ta.extractor, "perceptual extractor weights file");
    train->add_option("--resume", ta.resume,
                      "resume from a checkpoint (config comes from it; --steps may extend)");
    train->add_option("--steps", ta.steps, "total optimization steps");
    train->add_option("--batch", ta.batch, "crops per step");
    train->add_option("--crop", ta.crop, "crop size in pixels");
    train->add_option("--timesteps", ta.timesteps, "diffusion steps T");
    train->add_option("--blocks", ta.blocks, "ARF block count");
    train->add_option("--channels", ta.channels, "feature channels");
    train->add_option("--groups", ta.groups, "norm groups");
    train->add_option("--lr", ta.lr, "learning rate");
    train->add_option("--ema", ta.ema, "EMA decay");
    train->add_option("--lambda-fg", ta.lambda_fg, "foreground loss weight");
    train->add_option("--lambda1", ta.lambda1, "perceptual term weight");
    train->add_option("--lambda2", ta.lambda2, "edge term weight");
    train->add_option("--pe-sigma", ta.pe_sigma, "Fourier embedding init scale");
    train->add_option("--seed", ta.seed, "run seed");
    train->add_option("--checkpoint-every", ta.checkpoint_every, "periodic checkpoint interval");

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "generate images from a checkpoint");
    sample->add_option("--checkpoint", sa.checkpoint, "checkpoint file")->required();
    sample->add_option("--out", sa.out, "output PNG path")->required();
    sample->add_option("--width", sa.width, "output width (default: training image)");
    sample->add_option("--height", sa.height, "output height (default: training image)");
    sample->add_option("--seed", sa.seed, "sampling seed");
    sample->add_option("--stride", sa.stride, "reverse-chain stride");
    sample->add_option("--control", sa.control, "control spec JSON (controlled mode)");
    sample->add_option("--ref", sa.ref, "reference image (reference mode)");
    sample->add_option("--N", sa.down_factor, "low-pass block size for --ref");
    sample->add_option("--outpaint", sa.outpaint, "inner-region mask PNG (outpaint mode)");
    sample->add_option("--outpaint-source", sa.outpaint_source,
                       "override source placed inside the outpaint mask");
    sample->add_option("--text", sa.text, "text prompt (text-guided mode)");
    sample->add_option("--sim-weights", sa.sim_weights, "similarity model weights for --text");
    sample->add_option("--guide-mask", sa.guide_mask, "guided-region mask for --text");
    sample->add_option("--eta", sa.eta, "text guidance strength in [0,1]");
    sample->add_option("--momentum", sa.momentum, "momentum lambda in [0,1]");
    sample->add_option("--guide-every", sa.guide_every, "apply text guidance every k steps");
    sample->add_option("--guided-frac", sa.guided_frac,
                       "leading fraction of steps with reference/outpaint guidance");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "score generated images against the source");
    eval->add_option("--source", ea.source, "source image")->required();
    eval->add_option("--dir", ea.dir, "directory of generated images")->required();
    eval->add_option("--out", ea.out, "report JSON path")->required();
    eval->add_option("--mask", ea.mask, "foreground mask for FG/BG metrics");
    eval->add_option("--extractor", ea.extractor, "perceptual extractor weights file");
    eval->add_flag("--siqs", ea.siqs, "run the LLM judge (fixtures or live endpoint)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        std::vector<std::string> args = argv_vector(argc, argv);
        if (*train) return run_train(ta, args);
        if (*sample) return run_sample(sa, args);
        if (*eval) return run_eval(ea, args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sid
