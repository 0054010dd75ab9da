#include "sid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace sid {

FeatureGaussian fit_feature_gaussian(const Tensor& features) {
    if (features.ndim() != 3) throw std::invalid_argument("fit_feature_gaussian: expected (C,H,W)");
    const int d = features.dim(0);
    const int64_t n = static_cast<int64_t>(features.dim(1)) * features.dim(2);
    if (n < 2) throw std::invalid_argument("fit_feature_gaussian: need at least 2 positions");

    FeatureGaussian g;
    g.mean = Tensor({d});
    for (int c = 0; c < d; ++c) {
        const double* p = features.data() + c * n;
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) acc += p[i];
        g.mean[c] = acc / n;
    }
    g.cov = Tensor({d, d});
    for (int a = 0; a < d; ++a) {
        const double* pa = features.data() + a * n;
        for (int b = a; b < d; ++b) {
            const double* pb = features.data() + b * n;
            double acc = 0;
            for (int64_t i = 0; i < n; ++i) acc += (pa[i] - g.mean[a]) * (pb[i] - g.mean[b]);
            double v = acc / (n - 1);
            g.cov.at(a, b) = v;
            g.cov.at(b, a) = v;
        }
    }
    for (int a = 0; a < d; ++a) g.cov.at(a, a) += 1e-6;
    return g;
}

double frechet_gaussian(const FeatureGaussian& a, const FeatureGaussian& b) {
    const int d = a.mean.dim(0);
    if (b.mean.dim(0) != d) throw std::invalid_argument("frechet_gaussian: dimension mismatch");

    using Mat = Eigen::MatrixXd;
    Mat s1(d, d), s2(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            s1(i, j) = a.cov.at(i, j);
            s2(i, j) = b.cov.at(i, j);
        }

    // trace of sqrtm(S1 S2) via the symmetric form sqrt(S1)^T S2 sqrt(S1).
    Eigen::SelfAdjointEigenSolver<Mat> es1(s1);
    Mat root1 = es1.eigenvectors() *
                es1.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                es1.eigenvectors().transpose();
    Mat inner = root1 * s2 * root1;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es2(inner);
    double trace_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double mean_sq = 0;
    for (int i = 0; i < d; ++i) {
        double md = a.mean[i] - b.mean[i];
        mean_sq += md * md;
    }
    double val = mean_sq + s1.trace() + s2.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, val);
}

double sifid(const Tensor& real, const Tensor& fake, const PerceptualExtractor& phi) {
    Tensor freal = phi.features(real)[0];
    Tensor ffake = phi.features(fake)[0];
    return frechet_gaussian(fit_feature_gaussian(freal), fit_feature_gaussian(ffake));
}

namespace {

// Per-position unit normalization along channels.
Tensor unit_normalize(const Tensor& f) {
    const int c = f.dim(0);
    const int64_t plane = static_cast<int64_t>(f.dim(1)) * f.dim(2);
    Tensor out(f.shape());
    for (int64_t i = 0; i < plane; ++i) {
        double n = 0;
        for (int ch = 0; ch < c; ++ch) {
            double v = f[ch * plane + i];
            n += v * v;
        }
        n = std::sqrt(n) + 1e-12;
        for (int ch = 0; ch < c; ++ch) out[ch * plane + i] = f[ch * plane + i] / n;
    }
    return out;
}

double perceptual_pair_distance(const std::vector<Tensor>& fa, const std::vector<Tensor>& fb) {
    double acc = 0;
    for (size_t s = 0; s < fa.size(); ++s) {
        if (!fa[s].same_shape(fb[s]))
            throw std::invalid_argument("perceptual_diversity: samples must share dimensions");
        Tensor na = unit_normalize(fa[s]);
        Tensor nb = unit_normalize(fb[s]);
        const int c = na.dim(0);
        const int64_t plane = static_cast<int64_t>(na.dim(1)) * na.dim(2);
        double stage = 0;
        for (int64_t i = 0; i < plane; ++i) {
            double d2 = 0;
            for (int ch = 0; ch < c; ++ch) {
                double d = na[ch * plane + i] - nb[ch * plane + i];
                d2 += d * d;
            }
            stage += std::sqrt(d2);
        }
        acc += stage / plane;
    }
    return acc / fa.size();
}

}  // namespace

double perceptual_diversity(const std::vector<Tensor>& samples, const PerceptualExtractor& phi) {
    if (samples.size() < 2)
        throw std::invalid_argument("perceptual_diversity: need at least 2 samples");
    std::vector<std::vector<Tensor>> feats;
    feats.reserve(samples.size());
    for (const auto& s : samples) feats.push_back(phi.features(s));
    double acc = 0;
    int pairs = 0;
    for (size_t i = 0; i < samples.size(); ++i)
        for (size_t j = i + 1; j < samples.size(); ++j) {
            acc += perceptual_pair_distance(feats[i], feats[j]);
            ++pairs;
        }
    return acc / pairs;
}

namespace {

double region_mse(const Tensor& a, const Tensor& b, const Tensor& mask, double keep_value,
                  int64_t* count_out) {
    const int c = a.dim(0);
    const int64_t plane = static_cast<int64_t>(a.dim(1)) * a.dim(2);
    double acc = 0;
    int64_t count = 0;
    for (int64_t i = 0; i < plane; ++i) {
        if (mask[i] != keep_value) continue;
        for (int ch = 0; ch < c; ++ch) {
            double d = a[ch * plane + i] - b[ch * plane + i];
            acc += d * d;
        }
        ++count;
    }
    *count_out = count;
    return count > 0 ? acc / (count * c) : 0.0;
}

double psnr_from_mse(double mse) {
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

constexpr int kSsimWindow = 11;

std::vector<double> ssim_kernel() {
    std::vector<double> k(kSsimWindow);
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        double d = i - (kSsimWindow - 1) / 2.0;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// SSIM map over valid window centers, averaged across channels.
// Returns an (H-10, W-10) map; empty when the image is too small.
Tensor ssim_map(const Tensor& a, const Tensor& b) {
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const int r = kSsimWindow / 2;
    if (h < kSsimWindow || w < kSsimWindow) return Tensor();
    static const std::vector<double> kern = ssim_kernel();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    const int oh = h - 2 * r, ow = w - 2 * r;
    Tensor map({oh, ow});
    std::vector<double> rowbuf;
    for (int ch = 0; ch < c; ++ch) {
        const double* pa = a.data() + static_cast<int64_t>(ch) * h * w;
        const double* pb = b.data() + static_cast<int64_t>(ch) * h * w;
        // Separable Gaussian filtering of the five moment images.
        auto filt = [&](auto value) {
            // horizontal then vertical on the fly; small images, direct loops
            Tensor out({oh, ow});
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = 0;
                    for (int ky = 0; ky < kSsimWindow; ++ky) {
                        double rowacc = 0;
                        for (int kx = 0; kx < kSsimWindow; ++kx)
                            rowacc += kern[static_cast<size_t>(kx)] * value(y + ky, x + kx);
                        acc += kern[static_cast<size_t>(ky)] * rowacc;
                    }
                    out.at(y, x) = acc;
                }
            return out;
        };
        auto A = [&](int y, int x) { return pa[static_cast<int64_t>(y) * w + x]; };
        auto B = [&](int y, int x) { return pb[static_cast<int64_t>(y) * w + x]; };
        Tensor mu_a = filt(A);
        Tensor mu_b = filt(B);
        Tensor aa = filt([&](int y, int x) { return A(y, x) * A(y, x); });
        Tensor bb = filt([&](int y, int x) { return B(y, x) * B(y, x); });
        Tensor ab = filt([&](int y, int x) { return A(y, x) * B(y, x); });
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double ma = mu_a.at(y, x), mb = mu_b.at(y, x);
                double va = aa.at(y, x) - ma * ma;
                double vb = bb.at(y, x) - mb * mb;
                double cov = ab.at(y, x) - ma * mb;
                double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                map.at(y, x) += s / c;
            }
    }
    return map;
}

std::optional<double> ssim_region(const Tensor& map, const Tensor& mask, double keep_value) {
    if (map.empty()) return std::nullopt;
    const int r = kSsimWindow / 2;
    double acc = 0;
    int64_t count = 0;
    for (int y = 0; y < map.dim(0); ++y)
        for (int x = 0; x < map.dim(1); ++x) {
            if (mask.at(y + r, x + r) != keep_value) continue;
            acc += map.at(y, x);
            ++count;
        }
    if (count == 0) return std::nullopt;
    return acc / count;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "psnr");
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return psnr_from_mse(acc / a.numel());
}

std::optional<double> ssim(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "ssim");
    Tensor map = ssim_map(a, b);
    if (map.empty()) return std::nullopt;
    return map.sum() / map.numel();
}

RegionMetrics psnr_ssim_split(const Tensor& src, const Tensor& gen, const Tensor& mask) {
    check_same_shape(src, gen, "psnr_ssim_split");
    if (mask.ndim() != 2 || mask.dim(0) != src.dim(1) || mask.dim(1) != src.dim(2))
        throw std::invalid_argument("psnr_ssim_split: mask shape mismatch");
    RegionMetrics r;
    int64_t n_fg = 0, n_bg = 0;
    double mse_fg = region_mse(src, gen, mask, 1.0, &n_fg);
    double mse_bg = region_mse(src, gen, mask, 0.0, &n_bg);
    if (n_fg > 0) r.psnr_fg = psnr_from_mse(mse_fg);
    if (n_bg > 0) r.psnr_bg = psnr_from_mse(mse_bg);
    Tensor map = ssim_map(src, gen);
    r.ssim_fg = ssim_region(map, mask, 1.0);
    r.ssim_bg = ssim_region(map, mask, 0.0);
    return r;
}

ConfusionTable ConfusionTable::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("ConfusionTable: empty");
    const int k = static_cast<int>(rows.size());
    ConfusionTable t;
    t.counts = Tensor({k, k});
    for (int i = 0; i < k; ++i) {
        if (static_cast<int>(rows[static_cast<size_t>(i)].size()) != k)
            throw std::invalid_argument("ConfusionTable: ragged rows");
        for (int j = 0; j < k; ++j) {
            double v = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (v < 0 || v != std::floor(v))
                throw std::invalid_argument("ConfusionTable: counts must be nonnegative integers");
            t.counts.at(i, j) = v;
        }
    }
    if (t.total() <= 0) throw std::invalid_argument("ConfusionTable: all-zero table");
    return t;
}

double ConfusionTable::total() const { return counts.sum(); }

double agreement_rate(const ConfusionTable& table) {
    const int k = table.counts.dim(0);
    double diag = 0;
    for (int i = 0; i < k; ++i) diag += table.counts.at(i, i);
    return diag / table.total();
}

std::optional<double> cohens_kappa(const ConfusionTable& table) {
    const int k = table.counts.dim(0);
    const double n = table.total();
    double po = agreement_rate(table);
    double pe = 0;
    for (int i = 0; i < k; ++i) {
        double row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += table.counts.at(i, j);
            col += table.counts.at(j, i);
        }
        pe += (row / n) * (col / n);
    }
    if (std::fabs(1.0 - pe) < 1e-12) return std::nullopt;
    return (po - pe) / (1.0 - pe);
}

namespace {

void put_optional(nlohmann::json& j, const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    double sifid_sum = 0, q_sum = 0, d_sum = 0, t_sum = 0;
    double pf = 0, pb = 0, sf = 0, sb = 0;
    int n_sifid = 0, n_siqs = 0, n_pf = 0, n_pb = 0, n_sf = 0, n_sb = 0;
    for (const auto& s : samples) {
        nlohmann::json e{{"name", s.name}};
        if (s.sifid_value) {
            e["sifid"] = *s.sifid_value;
            sifid_sum += *s.sifid_value;
            ++n_sifid;
        }
        if (s.region) {
            put_optional(e, "psnr_fg", s.region->psnr_fg);
            put_optional(e, "psnr_bg", s.region->psnr_bg);
            put_optional(e, "ssim_fg", s.region->ssim_fg);
            put_optional(e, "ssim_bg", s.region->ssim_bg);
            if (s.region->psnr_fg) { pf += *s.region->psnr_fg; ++n_pf; }
            if (s.region->psnr_bg) { pb += *s.region->psnr_bg; ++n_pb; }
            if (s.region->ssim_fg) { sf += *s.region->ssim_fg; ++n_sf; }
            if (s.region->ssim_bg) { sb += *s.region->ssim_bg; ++n_sb; }
        }
        if (s.siqs_total) {
            e["siqs"] = {{"quality", *s.siqs_quality},
                         {"distortion", *s.siqs_distortion},
                         {"total", *s.siqs_total}};
            q_sum += *s.siqs_quality;
            d_sum += *s.siqs_distortion;
            t_sum += *s.siqs_total;
            ++n_siqs;
        }
        if (s.error) e["error"] = *s.error;
        per.push_back(std::move(e));
    }
    nlohmann::json agg;
    if (n_sifid) agg["sifid_mean"] = sifid_sum / n_sifid;
    if (n_siqs) {
        agg["siqs_quality_mean"] = q_sum / n_siqs;
        agg["siqs_distortion_mean"] = d_sum / n_siqs;
        agg["siqs_total_mean"] = t_sum / n_siqs;
    }
    if (n_pf) agg["psnr_fg_mean"] = pf / n_pf;
    if (n_pb) agg["psnr_bg_mean"] = pb / n_pb;
    if (n_sf) agg["ssim_fg_mean"] = sf / n_sf;
    if (n_sb) agg["ssim_bg_mean"] = sb / n_sb;
    if (diversity) agg["diversity"] = *diversity;

    return nlohmann::json{{"samples", per}, {"aggregates", agg}, {"metadata", metadata}};
}

std::string EvalReport::to_text() const {
    nlohmann::json j = to_json();
    std::ostringstream os;
    os << "sample                          sifid      siqs   psnr_fg  psnr_bg  ssim_fg  ssim_bg\n";
    for (const auto& e : j.at("samples")) {
        char line[256];
        auto num = [&](const char* key, const char* fmt) {
            static thread_local char buf[32];
            if (e.contains(key))
                std::snprintf(buf, sizeof(buf), fmt, e.at(key).get<double>());
            else
                std::snprintf(buf, sizeof(buf), "%8s", "-");
            return std::string(buf);
        };
        std::string siqs = "-";
        if (e.contains("siqs")) siqs = std::to_string(e.at("siqs").at("total").get<int>());
        std::snprintf(line, sizeof(line), "%-28s %9s %6s %9s %8s %8s %8s\n",
                      e.at("name").get<std::string>().c_str(), num("sifid", "%9.5f").c_str(),
                      siqs.c_str(), num("psnr_fg", "%9.2f").c_str(), num("psnr_bg", "%8.2f").c_str(),
                      num("ssim_fg", "%8.4f").c_str(), num("ssim_bg", "%8.4f").c_str());
        os << line;
        if (e.contains("error"))
            os << "    error: " << e.at("error").get<std::string>() << "\n";
    }
    os << "\naggregates: " << j.at("aggregates").dump() << "\n";
    return os.str();
}

}  // namespace sid
