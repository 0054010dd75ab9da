#include "sid/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "sid/parallel.hpp"

namespace sid {

void zero_grads(ParamRegistry& params) {
    for (auto& p : params) p.grad->zero();
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

Tensor silu(const Tensor& x) {
    Tensor y = x;
    double* d = y.data();
    for (int64_t i = 0, n = y.numel(); i < n; ++i) d[i] = silu(d[i]);
    return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
    check_same_shape(x, dy, "silu_backward");
    Tensor dx = x;
    double* d = dx.data();
    const double* g = dy.data();
    for (int64_t i = 0, n = dx.numel(); i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-d[i]));
        d[i] = g[i] * s * (1.0 + d[i] * (1.0 - s));
    }
    return dx;
}

static int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

Tensor pad_reflect(const Tensor& x, int pad) {
    if (x.ndim() != 3) throw std::invalid_argument("pad_reflect: expected (C,H,W) tensor");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (pad == 0) return x;
    if (pad >= h || pad >= w)
        throw std::invalid_argument("pad_reflect: input " + x.shape_string() +
                                    " too small for reflect pad " + std::to_string(pad));
    Tensor out({c, h + 2 * pad, w + 2 * pad});
    const int wp = w + 2 * pad;
    for (int ci = 0; ci < c; ++ci) {
        const double* src = x.data() + static_cast<int64_t>(ci) * h * w;
        double* dst = out.data() + static_cast<int64_t>(ci) * (h + 2 * pad) * wp;
        for (int y = 0; y < h + 2 * pad; ++y) {
            const double* srow = src + static_cast<int64_t>(reflect_index(y - pad, h)) * w;
            double* drow = dst + static_cast<int64_t>(y) * wp;
            for (int xx = 0; xx < pad; ++xx) drow[xx] = srow[reflect_index(xx - pad, w)];
            for (int xx = 0; xx < w; ++xx) drow[pad + xx] = srow[xx];
            for (int xx = 0; xx < pad; ++xx)
                drow[pad + w + xx] = srow[reflect_index(w + xx, w)];
        }
    }
    return out;
}

Tensor fold_reflect(const Tensor& dpad, int pad, int h, int w) {
    const int c = dpad.dim(0);
    const int hp = dpad.dim(1), wp = dpad.dim(2);
    Tensor dx({c, h, w});
    parallel_for(c, [&](int64_t c0, int64_t c1) {
        for (int64_t ci = c0; ci < c1; ++ci) {
            const double* src = dpad.data() + ci * hp * wp;
            double* dst = dx.data() + ci * h * w;
            for (int y = 0; y < hp; ++y) {
                int ry = reflect_index(y - pad, h);
                const double* srow = src + static_cast<int64_t>(y) * wp;
                double* drow = dst + static_cast<int64_t>(ry) * w;
                for (int xx = 0; xx < wp; ++xx) drow[reflect_index(xx - pad, w)] += srow[xx];
            }
        }
    });
    return dx;
}

Conv2d::Conv2d(int in, int out, int k, int stride_)
    : in_ch(in), out_ch(out), ksize(k), stride(stride_) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("Conv2d: kernel size must be odd");
    if (stride_ < 1) throw std::invalid_argument("Conv2d: stride must be >= 1");
    w = Tensor({out, in, k, k});
    b = Tensor({out});
    gw = Tensor({out, in, k, k});
    gb = Tensor({out});
}

void Conv2d::init_he(Rng& rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
    b.zero();
}

Tensor Conv2d::forward(const Tensor& x, bool keep) {
    if (x.ndim() != 3 || x.dim(0) != in_ch)
        throw std::invalid_argument("Conv2d: expected (" + std::to_string(in_ch) +
                                    ",H,W) input, got " + x.shape_string());
    const int h = x.dim(1), wdt = x.dim(2);
    const int pad = (ksize - 1) / 2;
    Tensor padded = pad_reflect(x, pad);
    const int hp = padded.dim(1), wp = padded.dim(2);
    const int oh = (hp - ksize) / stride + 1;
    const int ow = (wp - ksize) / stride + 1;

    Tensor out({out_ch, oh, ow});
    const double* pd = padded.data();
    parallel_for(out_ch, [&](int64_t co0, int64_t co1) {
        for (int64_t co = co0; co < co1; ++co) {
            double* oplane = out.data() + co * oh * ow;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) oplane[i] = b[co];
            for (int ci = 0; ci < in_ch; ++ci) {
                const double* iplane = pd + static_cast<int64_t>(ci) * hp * wp;
                const double* wk = w.data() + ((co * in_ch + ci) * ksize) * ksize;
                for (int ky = 0; ky < ksize; ++ky) {
                    for (int kx = 0; kx < ksize; ++kx) {
                        const double wv = wk[ky * ksize + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const double* irow =
                                iplane + static_cast<int64_t>(oy * stride + ky) * wp + kx;
                            double* orow = oplane + static_cast<int64_t>(oy) * ow;
                            if (stride == 1) {
                                for (int ox = 0; ox < ow; ++ox) orow[ox] += wv * irow[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox)
                                    orow[ox] += wv * irow[static_cast<int64_t>(ox) * stride];
                            }
                        }
                    }
                }
            }
        }
    });

    if (keep) {
        cached_pad_ = std::move(padded);
        cached_h_ = h;
        cached_w_ = wdt;
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& dy) {
    if (cached_pad_.empty()) throw std::logic_error("Conv2d::backward without cached forward");
    const int pad = (ksize - 1) / 2;
    const int hp = cached_pad_.dim(1), wp = cached_pad_.dim(2);
    const int oh = dy.dim(1), ow = dy.dim(2);
    if (dy.dim(0) != out_ch) throw std::invalid_argument("Conv2d::backward: channel mismatch");

    // Weight and bias gradients, parallel over output channels.
    parallel_for(out_ch, [&](int64_t co0, int64_t co1) {
        for (int64_t co = co0; co < co1; ++co) {
            const double* dplane = dy.data() + co * oh * ow;
            double dbsum = 0.0;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) dbsum += dplane[i];
            gb[co] += dbsum;
            for (int ci = 0; ci < in_ch; ++ci) {
                const double* iplane = cached_pad_.data() + static_cast<int64_t>(ci) * hp * wp;
                double* gwk = gw.data() + ((co * in_ch + ci) * ksize) * ksize;
                for (int ky = 0; ky < ksize; ++ky) {
                    for (int kx = 0; kx < ksize; ++kx) {
                        double acc = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const double* irow =
                                iplane + static_cast<int64_t>(oy * stride + ky) * wp + kx;
                            const double* drow = dplane + static_cast<int64_t>(oy) * ow;
                            if (stride == 1) {
                                for (int ox = 0; ox < ow; ++ox) acc += drow[ox] * irow[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox)
                                    acc += drow[ox] * irow[static_cast<int64_t>(ox) * stride];
                            }
                        }
                        gwk[ky * ksize + kx] += acc;
                    }
                }
            }
        }
    });

    // Input gradient through the padded buffer, parallel over input channels.
    Tensor dpad({in_ch, hp, wp});
    parallel_for(in_ch, [&](int64_t ci0, int64_t ci1) {
        for (int64_t ci = ci0; ci < ci1; ++ci) {
            double* pplane = dpad.data() + ci * hp * wp;
            for (int co = 0; co < out_ch; ++co) {
                const double* dplane = dy.data() + static_cast<int64_t>(co) * oh * ow;
                const double* wk = w.data() + ((static_cast<int64_t>(co) * in_ch + ci) * ksize) * ksize;
                for (int ky = 0; ky < ksize; ++ky) {
                    for (int kx = 0; kx < ksize; ++kx) {
                        const double wv = wk[ky * ksize + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            double* prow = pplane + static_cast<int64_t>(oy * stride + ky) * wp + kx;
                            const double* drow = dplane + static_cast<int64_t>(oy) * ow;
                            if (stride == 1) {
                                for (int ox = 0; ox < ow; ++ox) prow[ox] += wv * drow[ox];
                            } else {
                                for (int ox = 0; ox < ow; ++ox)
                                    prow[static_cast<int64_t>(ox) * stride] += wv * drow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor dx = (pad == 0) ? std::move(dpad) : fold_reflect(dpad, pad, cached_h_, cached_w_);
    cached_pad_ = Tensor();
    return dx;
}

void Conv2d::collect(ParamRegistry& reg, const std::string& prefix) {
    reg.push_back({prefix + ".w", &w, &gw});
    reg.push_back({prefix + ".b", &b, &gb});
}

GroupNorm::GroupNorm(int channels, int groups_) : ch(channels), groups(groups_) {
    if (groups < 1 || channels % groups != 0)
        throw std::invalid_argument("GroupNorm: channels must divide evenly into groups");
    if (channels / groups < 2)
        throw std::invalid_argument("GroupNorm: groups must hold at least 2 channels");
    gamma = Tensor::full({channels}, 1.0);
    beta = Tensor({channels});
    ggamma = Tensor({channels});
    gbeta = Tensor({channels});
}

Tensor GroupNorm::forward(const Tensor& x, bool keep) {
    if (x.ndim() != 3 || x.dim(0) != ch)
        throw std::invalid_argument("GroupNorm: expected (" + std::to_string(ch) + ",H,W) input");
    const int h = x.dim(1), w = x.dim(2);
    const int cpg = ch / groups;
    const int64_t plane = static_cast<int64_t>(h) * w;

    Tensor xhat({ch, h, w});
    std::vector<double> inv_std(static_cast<size_t>(groups) * plane);
    const double* px = x.data();
    for (int g = 0; g < groups; ++g) {
        const int c0 = g * cpg;
        for (int64_t i = 0; i < plane; ++i) {
            double ms = 0.0;
            for (int c = c0; c < c0 + cpg; ++c) {
                double v = px[c * plane + i];
                ms += v * v;
            }
            ms /= cpg;
            double is = 1.0 / std::sqrt(ms + eps);
            inv_std[static_cast<size_t>(g) * plane + i] = is;
            for (int c = c0; c < c0 + cpg; ++c) xhat[c * plane + i] = px[c * plane + i] * is;
        }
    }

    Tensor y({ch, h, w});
    for (int c = 0; c < ch; ++c) {
        const double* xh = xhat.data() + static_cast<int64_t>(c) * plane;
        double* yo = y.data() + static_cast<int64_t>(c) * plane;
        const double gm = gamma[c], bt = beta[c];
        for (int64_t i = 0; i < plane; ++i) yo[i] = gm * xh[i] + bt;
    }

    if (keep) {
        cached_xhat_ = std::move(xhat);
        cached_inv_std_ = std::move(inv_std);
    }
    return y;
}

Tensor GroupNorm::backward(const Tensor& dy) {
    if (cached_xhat_.empty()) throw std::logic_error("GroupNorm::backward without cached forward");
    const int h = dy.dim(1), w = dy.dim(2);
    const int cpg = ch / groups;
    const int64_t plane = static_cast<int64_t>(h) * w;

    for (int c = 0; c < ch; ++c) {
        const double* xh = cached_xhat_.data() + static_cast<int64_t>(c) * plane;
        const double* g = dy.data() + static_cast<int64_t>(c) * plane;
        double sg = 0.0, sb = 0.0;
        for (int64_t i = 0; i < plane; ++i) {
            sg += g[i] * xh[i];
            sb += g[i];
        }
        ggamma[c] += sg;
        gbeta[c] += sb;
    }

    Tensor dx({ch, h, w});
    const double* xh = cached_xhat_.data();
    const double* gd = dy.data();
    for (int g = 0; g < groups; ++g) {
        const int c0 = g * cpg;
        for (int64_t i = 0; i < plane; ++i) {
            double sum_dxhat_xhat = 0.0;
            for (int c = c0; c < c0 + cpg; ++c)
                sum_dxhat_xhat += gd[c * plane + i] * gamma[c] * xh[c * plane + i];
            const double is = cached_inv_std_[static_cast<size_t>(g) * plane + i];
            for (int c = c0; c < c0 + cpg; ++c) {
                double dxh = gd[c * plane + i] * gamma[c];
                dx[c * plane + i] = is * (dxh - xh[c * plane + i] * sum_dxhat_xhat / cpg);
            }
        }
    }
    cached_xhat_ = Tensor();
    return dx;
}

void GroupNorm::collect(ParamRegistry& reg, const std::string& prefix) {
    reg.push_back({prefix + ".gamma", &gamma, &ggamma});
    reg.push_back({prefix + ".beta", &beta, &gbeta});
}

Linear::Linear(int in_, int out_) : in(in_), out(out_) {
    w = Tensor({out, in});
    b = Tensor({out});
    gw = Tensor({out, in});
    gb = Tensor({out});
}

void Linear::init_he(Rng& rng) {
    double std = std::sqrt(2.0 / in);
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal() * std;
    b.zero();
}

Tensor Linear::forward(const Tensor& x, bool keep) {
    if (x.ndim() != 1 || x.dim(0) != in)
        throw std::invalid_argument("Linear: expected (" + std::to_string(in) + ") input, got " +
                                    x.shape_string());
    Tensor y({out});
    for (int o = 0; o < out; ++o) {
        const double* wr = w.data() + static_cast<int64_t>(o) * in;
        double acc = b[o];
        for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[o] = acc;
    }
    if (keep) cached_in_ = x;
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    if (cached_in_.numel() != in)
        throw std::logic_error("Linear::backward without cached forward");
    Tensor dx({in});
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        gb[o] += g;
        double* gwr = gw.data() + static_cast<int64_t>(o) * in;
        const double* wr = w.data() + static_cast<int64_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            gwr[i] += g * cached_in_[i];
            dx[i] += g * wr[i];
        }
    }
    cached_in_ = Tensor();
    return dx;
}

void Linear::collect(ParamRegistry& reg, const std::string& prefix) {
    reg.push_back({prefix + ".w", &w, &gw});
    reg.push_back({prefix + ".b", &b, &gb});
}

}  // namespace sid
