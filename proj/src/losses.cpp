#include "sid/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "sid/checkpoint.hpp"

namespace sid {

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(lambda_fg >= 0.0) ||
        !std::isfinite(lambda1) || !std::isfinite(lambda2) || !std::isfinite(lambda_fg))
        throw std::invalid_argument("LossWeights: weights must be finite and nonnegative");
}

ConvStackExtractor::ConvStackExtractor(std::vector<LayerSpec> layers, uint64_t init_seed)
    : specs_(std::move(layers)) {
    if (specs_.empty()) throw std::invalid_argument("ConvStackExtractor: no layers");
    Rng rng = Rng::derive(init_seed, "extractor-init");
    int in_ch = 3;
    for (const auto& s : specs_) {
        convs_.emplace_back(in_ch, s.out_ch, s.ksize, s.stride);
        convs_.back().init_he(rng);
        in_ch = s.out_ch;
    }
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::fixed_test_extractor() {
    static std::shared_ptr<ConvStackExtractor> cached = std::make_shared<ConvStackExtractor>(
        std::vector<LayerSpec>{{8, 3, 1}, {16, 3, 2}}, 0x5EEDull);
    return cached;
}

std::vector<Tensor> ConvStackExtractor::features(const Tensor& img) const {
    std::vector<Tensor> stages;
    stages.reserve(convs_.size());
    Tensor x = img;
    for (const auto& conv : convs_) {
        // keep=false leaves the layer untouched, so shared use stays safe.
        x = silu(const_cast<Conv2d&>(conv).forward(x, false));
        stages.push_back(x);
    }
    return stages;
}

Tensor ConvStackExtractor::features_backward(const Tensor& img,
                                             const std::vector<Tensor>& dstages) const {
    if (dstages.size() != convs_.size())
        throw std::invalid_argument("features_backward: expected one gradient per stage");
    std::vector<Conv2d> local = convs_;
    std::vector<Tensor> pre;
    pre.reserve(local.size());
    Tensor x = img;
    for (auto& conv : local) {
        Tensor p = conv.forward(x, true);
        x = silu(p);
        pre.push_back(std::move(p));
    }
    Tensor dchain;
    for (int i = static_cast<int>(local.size()) - 1; i >= 0; --i) {
        Tensor dact = dstages[static_cast<size_t>(i)];
        if (i + 1 < static_cast<int>(local.size())) dact.add_(dchain);
        Tensor dpre = silu_backward(pre[static_cast<size_t>(i)], dact);
        dchain = local[static_cast<size_t>(i)].backward(dpre);
    }
    return dchain;
}

void ConvStackExtractor::save_file(const std::string& path) const {
    Archive a;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : specs_)
        layers.push_back({{"out_ch", s.out_ch}, {"ksize", s.ksize}, {"stride", s.stride}});
    a.meta = {{"kind", "extractor"}, {"layers", layers}};
    for (size_t i = 0; i < convs_.size(); ++i) {
        a.put("conv" + std::to_string(i) + ".w", convs_[i].w);
        a.put("conv" + std::to_string(i) + ".b", convs_[i].b);
    }
    save_archive(path, a);
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::load_file(const std::string& path) {
    Archive a = load_archive(path);
    if (a.meta.value("kind", "") != "extractor")
        throw std::runtime_error("extractor: '" + path + "' is not an extractor weights file");
    auto ext = std::shared_ptr<ConvStackExtractor>(new ConvStackExtractor());
    int in_ch = 3;
    size_t i = 0;
    for (const auto& l : a.meta.at("layers")) {
        LayerSpec s{l.at("out_ch").get<int>(), l.at("ksize").get<int>(), l.at("stride").get<int>()};
        ext->specs_.push_back(s);
        Conv2d conv(in_ch, s.out_ch, s.ksize, s.stride);
        conv.w = a.require("conv" + std::to_string(i) + ".w");
        conv.b = a.require("conv" + std::to_string(i) + ".b");
        check_same_shape(conv.w, Tensor({s.out_ch, in_ch, s.ksize, s.ksize}), "extractor weights");
        ext->convs_.push_back(std::move(conv));
        in_ch = s.out_ch;
        ++i;
    }
    return ext;
}

double mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    double acc = 0.0;
    for (int64_t i = 0, n = pred.numel(); i < n; ++i) {
        double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

namespace {

const double kSobelX[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
const double kSobelY[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

// Depthwise 3x3 correlation of the reflect-padded image.
void sobel_components(const Tensor& img, Tensor& gx, Tensor& gy) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor pad = pad_reflect(img, 1);
    const int wp = w + 2;
    gx = Tensor({c, h, w});
    gy = Tensor({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        const double* p = pad.data() + static_cast<int64_t>(ci) * (h + 2) * wp;
        double* ox = gx.data() + static_cast<int64_t>(ci) * h * w;
        double* oy = gy.data() + static_cast<int64_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double ax = 0.0, ay = 0.0;
                for (int k = 0; k < 9; ++k) {
                    double v = p[static_cast<int64_t>(y + k / 3) * wp + (x + k % 3)];
                    ax += kSobelX[k] * v;
                    ay += kSobelY[k] * v;
                }
                ox[static_cast<int64_t>(y) * w + x] = ax;
                oy[static_cast<int64_t>(y) * w + x] = ay;
            }
        }
    }
}

// dL/dimg from dL/dmagnitude; zero subgradient where the magnitude vanishes.
Tensor sobel_backward(const Tensor& img, const Tensor& dmag) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor gx, gy;
    sobel_components(img, gx, gy);
    Tensor dpad({c, h + 2, w + 2});
    const int wp = w + 2;
    for (int ci = 0; ci < c; ++ci) {
        double* dp = dpad.data() + static_cast<int64_t>(ci) * (h + 2) * wp;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int64_t idx = (static_cast<int64_t>(ci) * h + y) * w + x;
                double m = std::sqrt(gx[idx] * gx[idx] + gy[idx] * gy[idx]);
                if (m <= 0.0) continue;
                double dgx = dmag[idx] * gx[idx] / m;
                double dgy = dmag[idx] * gy[idx] / m;
                for (int k = 0; k < 9; ++k)
                    dp[static_cast<int64_t>(y + k / 3) * wp + (x + k % 3)] +=
                        kSobelX[k] * dgx + kSobelY[k] * dgy;
            }
        }
    }
    return fold_reflect(dpad, 1, h, w);
}

void check_mask(const Tensor& mask, const Tensor& img, const char* what) {
    if (mask.ndim() != 2 || mask.dim(0) != img.dim(1) || mask.dim(1) != img.dim(2))
        throw std::invalid_argument(std::string(what) + ": mask shape " + mask.shape_string() +
                                    " does not match image " + img.shape_string());
}

}  // namespace

Tensor sobel_edge_map(const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) < 1)
        throw std::invalid_argument("sobel_edge_map: expected (C,H,W) image");
    Tensor gx, gy;
    sobel_components(img, gx, gy);
    Tensor out({img.dim(0), img.dim(1), img.dim(2)});
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    return out;
}

Tensor resize_mask_nearest(const Tensor& mask, int h2, int w2) {
    const int h = mask.dim(0), w = mask.dim(1);
    Tensor out({h2, w2});
    for (int y = 0; y < h2; ++y) {
        int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / h2));
        for (int x = 0; x < w2; ++x) {
            int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / w2));
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

namespace {

// Masked mean-absolute difference plus its gradient w.r.t. `a`. The mask has
// one spatial plane broadcast across channels; scale multiplies the gradient.
double masked_l1(const Tensor& a, const Tensor& b, const Tensor& mask2d, double scale,
                 Tensor* da) {
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const int64_t plane = static_cast<int64_t>(h) * w;
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    double acc = 0.0;
    for (int ci = 0; ci < c; ++ci) {
        const double* pa = a.data() + ci * plane;
        const double* pb = b.data() + ci * plane;
        double* pg = da ? da->data() + ci * plane : nullptr;
        for (int64_t i = 0; i < plane; ++i) {
            double m = mask2d[i];
            double d = (pa[i] - pb[i]) * m;
            acc += std::fabs(d);
            if (pg && d != 0.0) pg[i] += scale * inv_n * (d > 0.0 ? 1.0 : -1.0) * m;
        }
    }
    return acc * inv_n;
}

struct FgResult {
    double value = 0.0;
    Tensor d_pred;  // empty unless requested
};

FgResult fg_loss_impl(const Tensor& pred, const Tensor& target, const Tensor& mask,
                      const PerceptualExtractor* phi, const LossWeights& w, bool want_grad) {
    check_same_shape(pred, target, "fg_loss");
    check_mask(mask, pred, "fg_loss");
    FgResult r;
    if (want_grad) r.d_pred = Tensor(pred.shape());

    if (w.lambda1 > 0.0) {
        if (!phi) throw std::invalid_argument("fg_loss: perceptual extractor required");
        std::vector<Tensor> fp = phi->features(pred);
        std::vector<Tensor> ft = phi->features(target);
        const int stages = static_cast<int>(fp.size());
        std::vector<Tensor> dstages;
        double vgg = 0.0;
        for (int s = 0; s < stages; ++s) {
            Tensor m_s = resize_mask_nearest(mask, fp[s].dim(1), fp[s].dim(2));
            Tensor* ds = nullptr;
            if (want_grad) {
                dstages.emplace_back(fp[s].shape());
                ds = &dstages.back();
            }
            vgg += masked_l1(fp[s], ft[s], m_s, 1.0 / stages, ds);
        }
        vgg /= stages;
        r.value += w.lambda1 * vgg;
        if (want_grad) {
            Tensor dimg = phi->features_backward(pred, dstages);
            r.d_pred.axpy_(w.lambda1, dimg);
        }
    }

    if (w.lambda2 > 0.0) {
        Tensor sp = sobel_edge_map(pred);
        Tensor st = sobel_edge_map(target);
        Tensor dmag;
        Tensor* dm = nullptr;
        if (want_grad) {
            dmag = Tensor(sp.shape());
            dm = &dmag;
        }
        double sob = masked_l1(sp, st, mask, 1.0, dm);
        r.value += w.lambda2 * sob;
        if (want_grad) {
            Tensor dimg = sobel_backward(pred, dmag);
            r.d_pred.axpy_(w.lambda2, dimg);
        }
    }
    return r;
}

}  // namespace

double fg_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
               const PerceptualExtractor& phi, const LossWeights& w) {
    w.validate();
    return fg_loss_impl(pred, target, mask, &phi, w, false).value;
}

double total_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
                  const PerceptualExtractor& phi, const LossWeights& w) {
    w.validate();
    double v = mse_loss(pred, target);
    if (w.lambda_fg > 0.0) v += w.lambda_fg * fg_loss_impl(pred, target, mask, &phi, w, false).value;
    return v;
}

LossBreakdown total_loss_with_grad(const Tensor& pred, const Tensor& target, const Tensor& mask,
                                   const PerceptualExtractor* phi, const LossWeights& w) {
    w.validate();
    check_same_shape(pred, target, "total_loss");
    LossBreakdown out;
    out.mse = mse_loss(pred, target);
    out.d_pred = Tensor(pred.shape());
    const double scale = 2.0 / static_cast<double>(pred.numel());
    for (int64_t i = 0; i < pred.numel(); ++i) out.d_pred[i] = scale * (pred[i] - target[i]);

    if (w.lambda_fg > 0.0 && (w.lambda1 > 0.0 || w.lambda2 > 0.0)) {
        FgResult fg = fg_loss_impl(pred, target, mask, phi, w, true);
        out.fg = fg.value;
        out.d_pred.axpy_(w.lambda_fg, fg.d_pred);
    }
    out.total = out.mse + w.lambda_fg * out.fg;
    return out;
}

}  // namespace sid
