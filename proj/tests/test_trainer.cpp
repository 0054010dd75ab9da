#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "sid/checkpoint.hpp"
#include "sid/trainer.hpp"
#include "test_util.hpp"

using namespace sid;

namespace {

DenoiserConfig tiny_arch() {
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

TrainConfig smoke_config() {
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.crop_size = 16;
    cfg.batch_size = 4;
    cfg.total_steps = 200;
    cfg.lr = 2e-3;
    cfg.ema_decay = 0.99;
    cfg.T = 50;
    cfg.seed = 11;
    return cfg;
}

// Two-tone synthetic image: dark background, bright square.
Tensor two_tone(int n) {
    Tensor img = Tensor::full({3, n, n}, -0.6);
    for (int c = 0; c < 3; ++c)
        for (int y = n / 4; y < 3 * n / 4; ++y)
            for (int x = n / 4; x < 3 * n / 4; ++x) img.at(c, y, x) = 0.7;
    return img;
}

Tensor center_mask(int n) {
    Tensor m({n, n});
    for (int y = n / 4; y < 3 * n / 4; ++y)
        for (int x = n / 4; x < 3 * n / 4; ++x) m.at(y, x) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("full-image crop is the degenerate window") {
    Tensor img = two_tone(16);
    PositionalField field = build_default_field(16, 16, center_mask(16));
    Rng rng(1);
    CropBatch b = sample_crops(img, field, 16, 3, 10, rng);
    for (int i = 0; i < 3; ++i) {
        CHECK(b.origin[static_cast<size_t>(i)] == std::make_pair(0, 0));
        for (int64_t j = 0; j < img.numel(); ++j) CHECK(b.patch[static_cast<size_t>(i)][j] == img[j]);
        for (int64_t j = 0; j < field.raw.numel(); ++j)
            CHECK(b.pe_raw[static_cast<size_t>(i)][j] == field.raw[j]);
    }
}

TEST_CASE("crop sampling is deterministic under a fixed seed") {
    Tensor img = two_tone(32);
    PositionalField field = build_default_field(32, 32, center_mask(32));
    Rng r1(42), r2(42);
    CropBatch a = sample_crops(img, field, 12, 5, 100, r1);
    CropBatch b = sample_crops(img, field, 12, 5, 100, r2);
    for (int i = 0; i < 5; ++i) {
        CHECK(a.origin[static_cast<size_t>(i)] == b.origin[static_cast<size_t>(i)]);
        CHECK(a.t[static_cast<size_t>(i)] == b.t[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < a.noise[static_cast<size_t>(i)].numel(); ++j)
            CHECK(a.noise[static_cast<size_t>(i)][j] == b.noise[static_cast<size_t>(i)][j]);
    }
}

TEST_CASE("crop windows align across image, PE, and mask") {
    Rng img_rng(7);
    Tensor img = Tensor::randn({3, 40, 28}, img_rng);
    Tensor mask({40, 28});
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = img_rng.uniform() < 0.4 ? 1.0 : 0.0;
    PositionalField field = build_default_field(40, 28, mask);
    Rng rng(3);
    CropBatch b = sample_crops(img, field, 9, 8, 10, rng);
    for (int i = 0; i < 8; ++i) {
        auto [ox, oy] = b.origin[static_cast<size_t>(i)];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 9; ++y)
                for (int x = 0; x < 9; ++x) {
                    CHECK(b.patch[static_cast<size_t>(i)].at(c, y, x) == img.at(c, oy + y, ox + x));
                    CHECK(b.pe_raw[static_cast<size_t>(i)].at(c, y, x) ==
                          field.raw.at(c, oy + y, ox + x));
                }
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 9; ++x)
                CHECK(b.mask[static_cast<size_t>(i)].at(y, x) == mask.at(oy + y, ox + x));
    }
}

TEST_CASE("window origins are uniform (chi-square)") {
    Tensor img = two_tone(64);
    PositionalField field = build_default_field(64, 64, center_mask(64));
    Rng rng(5);
    const int draws = 10000;
    std::vector<int> hist(33 * 33, 0);
    for (int d = 0; d < draws / 10; ++d) {
        CropBatch b = sample_crops(img, field, 32, 10, 10, rng);
        for (auto [ox, oy] : b.origin) ++hist[static_cast<size_t>(oy * 33 + ox)];
    }
    double expected = static_cast<double>(draws) / (33 * 33);
    double chi2 = 0;
    for (int c : hist) {
        double d = c - expected;
        chi2 += d * d / expected;
    }
    // df = 1088, sigma = sqrt(2 df) ~ 46.6; 1300 is ~4.5 sigma above the mean.
    CHECK(chi2 < 1300.0);
    CHECK(chi2 > 880.0);  // suspiciously uniform would also be a bug
}

TEST_CASE("crop larger than the image is rejected") {
    Tensor img = two_tone(16);
    PositionalField field = build_default_field(16, 16, center_mask(16));
    Rng rng(1);
    CHECK_THROWS_AS(sample_crops(img, field, 17, 1, 10, rng), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    TrainConfig cfg = smoke_config();
    cfg.total_steps = 1;
    cfg.lr = 1e-300;  // validate() requires > 0; this is numerically zero
    Trainer t(cfg, two_tone(32), center_mask(32), ConvStackExtractor::fixed_test_extractor());
    ParamRegistry reg = t.model().params();
    std::vector<Tensor> before;
    for (auto& p : reg) before.push_back(*p.value);
    StepStats s = t.train_step(0);
    CHECK(std::isfinite(s.total));
    for (size_t p = 0; p < reg.size(); ++p)
        for (int64_t i = 0; i < before[p].numel(); ++i)
            CHECK(std::fabs((*reg[p].value)[i] - before[p][i]) <= 1e-12);
}

TEST_CASE("EMA with decay zero tracks the live parameters") {
    TrainConfig cfg = smoke_config();
    cfg.ema_decay = 0.0;
    cfg.total_steps = 3;
    Trainer t(cfg, two_tone(32), center_mask(32), ConvStackExtractor::fixed_test_extractor());
    for (int k = 0; k < 3; ++k) t.train_step(k);
    Model ema = t.ema_model();
    ParamRegistry live = t.model().params();
    ParamRegistry shadow = ema.params();
    for (size_t p = 0; p < live.size(); ++p)
        for (int64_t i = 0; i < live[p].value->numel(); ++i)
            CHECK((*shadow[p].value)[i] == (*live[p].value)[i]);
}

TEST_CASE("smoke run halves the loss on a two-tone image") {
    TrainConfig cfg = smoke_config();
    Trainer t(cfg, two_tone(32), center_mask(32), ConvStackExtractor::fixed_test_extractor());
    double first = 0, last = 0;
    for (int64_t k = 0; k < cfg.total_steps; ++k) {
        StepStats s = t.train_step(k);
        if (k < 5) first += s.total / 5;
        if (k >= cfg.total_steps - 10) last += s.total / 10;
    }
    MESSAGE("smoke: first=", first, " last=", last);
    CHECK(last < 0.5 * first);
}

TEST_CASE("checkpoint round trip restores parameters bit-exactly") {
    TrainConfig cfg = smoke_config();
    cfg.total_steps = 5;
    Trainer t(cfg, two_tone(32), center_mask(32), ConvStackExtractor::fixed_test_extractor());
    for (int k = 0; k < 5; ++k) t.train_step(k);
    test::TempDir dir("ckpt");
    t.save(dir.file("c.sidc"));

    Trainer r = Trainer::resume(dir.file("c.sidc"), ConvStackExtractor::fixed_test_extractor());
    CHECK(r.current_step() == 5);
    ParamRegistry ra = t.model().params();
    ParamRegistry rb = r.model().params();
    REQUIRE(ra.size() == rb.size());
    for (size_t p = 0; p < ra.size(); ++p) {
        CHECK(ra[p].name == rb[p].name);
        for (int64_t i = 0; i < ra[p].value->numel(); ++i)
            CHECK((*ra[p].value)[i] == (*rb[p].value)[i]);
    }
}

TEST_CASE("wrong container version and corrupt files are explicit errors") {
    TrainConfig cfg = smoke_config();
    cfg.total_steps = 1;
    Trainer t(cfg, two_tone(32), center_mask(32), ConvStackExtractor::fixed_test_extractor());
    test::TempDir dir("badckpt");
    t.save(dir.file("c.sidc"));

    // Patch the version field (bytes 4..7).
    {
        std::fstream f(dir.file("c.sidc"), std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        uint32_t v = 99;
        f.write(reinterpret_cast<char*>(&v), 4);
    }
    try {
        Trainer::resume(dir.file("c.sidc"), nullptr);
        FAIL("expected a version error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }

    // Truncate.
    t.save(dir.file("c2.sidc"));
    {
        std::ifstream in(dir.file("c2.sidc"), std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(dir.file("c3.sidc"), std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(Trainer::resume(dir.file("c3.sidc"), nullptr), std::runtime_error);
    CHECK_THROWS_AS(load_archive(dir.file("missing.sidc")), std::runtime_error);
}

TEST_CASE("resumed training replays the uninterrupted loss trajectory") {
    TrainConfig cfg = smoke_config();
    cfg.total_steps = 50;
    auto phi = ConvStackExtractor::fixed_test_extractor();

    Trainer full(cfg, two_tone(32), center_mask(32), phi);
    std::vector<double> straight;
    for (int k = 0; k < 50; ++k) straight.push_back(full.train_step(k).total);

    Trainer part(cfg, two_tone(32), center_mask(32), phi);
    std::vector<double> resumed;
    for (int k = 0; k < 30; ++k) resumed.push_back(part.train_step(k).total);
    test::TempDir dir("resume");
    part.save(dir.file("c.sidc"));
    Trainer rest = Trainer::resume(dir.file("c.sidc"), phi);
    for (int k = 30; k < 50; ++k) resumed.push_back(rest.train_step(k).total);

    REQUIRE(straight.size() == resumed.size());
    for (size_t i = 0; i < straight.size(); ++i) CHECK(straight[i] == resumed[i]);
}

TEST_CASE("train config JSON honors defaults and rejects unknown keys") {
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.lr == cfg.lr);
    CHECK(back.arch.channels == cfg.arch.channels);

    TrainConfig sparse = TrainConfig::from_json(nlohmann::json{{"lr", 0.5}});
    CHECK(sparse.lr == 0.5);
    CHECK(sparse.batch_size == 16);  // default preserved
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"lrr", 0.5}}), std::invalid_argument);
}

TEST_CASE("trainer rejects invalid setups") {
    TrainConfig cfg = smoke_config();
    auto phi = ConvStackExtractor::fixed_test_extractor();
    CHECK_THROWS_AS(Trainer(cfg, two_tone(8), center_mask(8), phi), std::invalid_argument);
    TrainConfig bad = smoke_config();
    bad.crop_size = 4;  // below max kernel 5
    CHECK_THROWS_AS(Trainer(bad, two_tone(32), center_mask(32), phi), std::invalid_argument);
    CHECK_THROWS_AS(Trainer(smoke_config(), two_tone(32), center_mask(16), phi),
                    std::invalid_argument);
    // Foreground loss enabled without an extractor.
    CHECK_THROWS_AS(Trainer(smoke_config(), two_tone(32), center_mask(32), nullptr),
                    std::invalid_argument);
}
