#include "sid/posenc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sid {

using nlohmann::json;

double default_coord(int i, int n) {
    if (n <= 1) return 0.0;
    return 2.0 * static_cast<double>(i) / (n - 1) - 1.0;
}

static void check_binary(const Tensor& mask, const char* what) {
    for (int64_t i = 0; i < mask.numel(); ++i) {
        double v = mask[i];
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument(std::string(what) + ": mask values must be 0 or 1");
    }
}

PositionalField build_default_field(int height, int width, const Tensor& mask) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("build_default_field: dimensions must be >= 1");
    if (mask.ndim() != 2 || mask.dim(0) != height || mask.dim(1) != width)
        throw std::invalid_argument("build_default_field: mask shape " + mask.shape_string() +
                                    " does not match field " + std::to_string(height) + "x" +
                                    std::to_string(width));
    check_binary(mask, "build_default_field");

    PositionalField f;
    f.height = height;
    f.width = width;
    f.raw = Tensor({3, height, width});
    for (int y = 0; y < height; ++y) {
        double yc = default_coord(y, height);
        for (int x = 0; x < width; ++x) {
            f.raw.at(0, y, x) = default_coord(x, width);
            f.raw.at(1, y, x) = yc;
            f.raw.at(2, y, x) = mask.at(y, x);
        }
    }
    return f;
}

FourierEmbedder FourierEmbedder::init(int n, double sigma, Rng& rng) {
    if (n < 1) throw std::invalid_argument("FourierEmbedder: n must be >= 1");
    FourierEmbedder e;
    e.B = Tensor::randn({3, n}, rng, sigma);
    e.gB = Tensor({3, n});
    return e;
}

Tensor FourierEmbedder::embed_raw(const Tensor& raw) const {
    if (raw.ndim() != 3 || raw.dim(0) != 3)
        throw std::invalid_argument("FourierEmbedder: expected (3,H,W) raw field");
    const int n = width();
    const int h = raw.dim(1), w = raw.dim(2);
    const int64_t plane = static_cast<int64_t>(h) * w;
    Tensor out({n, h, w});
    const double* p0 = raw.data();
    const double* p1 = raw.data() + plane;
    const double* p2 = raw.data() + 2 * plane;
    for (int j = 0; j < n; ++j) {
        const double b0 = B.at(0, j), b1 = B.at(1, j), b2 = B.at(2, j);
        double* dst = out.data() + static_cast<int64_t>(j) * plane;
        for (int64_t i = 0; i < plane; ++i)
            dst[i] = std::sin(b0 * p0[i] + b1 * p1[i] + b2 * p2[i]);
    }
    return out;
}

void FourierEmbedder::backward(const Tensor& raw, const Tensor& dembed) {
    const int n = width();
    const int h = raw.dim(1), w = raw.dim(2);
    if (dembed.ndim() != 3 || dembed.dim(0) != n || dembed.dim(1) != h || dembed.dim(2) != w)
        throw std::invalid_argument("FourierEmbedder::backward: gradient shape mismatch");
    const int64_t plane = static_cast<int64_t>(h) * w;
    const double* p0 = raw.data();
    const double* p1 = raw.data() + plane;
    const double* p2 = raw.data() + 2 * plane;
    for (int j = 0; j < n; ++j) {
        const double b0 = B.at(0, j), b1 = B.at(1, j), b2 = B.at(2, j);
        const double* g = dembed.data() + static_cast<int64_t>(j) * plane;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0;
        for (int64_t i = 0; i < plane; ++i) {
            double c = g[i] * std::cos(b0 * p0[i] + b1 * p1[i] + b2 * p2[i]);
            a0 += c * p0[i];
            a1 += c * p1[i];
            a2 += c * p2[i];
        }
        gB.at(0, j) += a0;
        gB.at(1, j) += a1;
        gB.at(2, j) += a2;
    }
}

Tensor fourier_embed(const PositionalField& field, const FourierEmbedder& emb) {
    return emb.embed_raw(field.raw);
}

Region Region::rect(int x, int y, int w, int h) {
    Region r;
    r.is_rect = true;
    r.x = x;
    r.y = y;
    r.w = w;
    r.h = h;
    return r;
}

Region Region::from_mask(Tensor mask) {
    check_binary(mask, "Region");
    Region r;
    r.is_rect = false;
    r.mask = std::move(mask);
    return r;
}

Tensor Region::to_mask(int height, int width) const {
    if (is_rect) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("region: empty rectangle");
        if (x < 0 || y < 0 || x + w > width || y + h > height)
            throw std::invalid_argument("region rectangle out of bounds");
        Tensor m({height, width});
        for (int yy = y; yy < y + h; ++yy)
            for (int xx = x; xx < x + w; ++xx) m.at(yy, xx) = 1.0;
        return m;
    }
    if (mask.ndim() != 2 || mask.dim(0) != height || mask.dim(1) != width)
        throw std::invalid_argument("region mask shape " + mask.shape_string() +
                                    " does not match field");
    return mask;
}

namespace {

struct MaskBounds {
    int x0, y0, x1, y1;  // inclusive bounds
    bool any;
};

MaskBounds mask_bounds(const Tensor& m) {
    MaskBounds b{0, 0, -1, -1, false};
    const int h = m.dim(0), w = m.dim(1);
    b.x0 = w;
    b.y0 = h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m.at(y, x) != 0.0) {
                b.any = true;
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x);
                b.y1 = std::max(b.y1, y);
            }
    return b;
}

void fill_default_background(PositionalField& f, int y, int x) {
    f.raw.at(0, y, x) = default_coord(x, f.width);
    f.raw.at(1, y, x) = default_coord(y, f.height);
    f.raw.at(2, y, x) = 0.0;
}

void apply_translate(PositionalField& f, const ControlOp& op) {
    const int h = f.height, w = f.width;
    Tensor src = op.region.to_mask(h, w);
    Tensor snapshot = f.raw;
    Tensor dest({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (src.at(y, x) == 0.0) continue;
            int qx = x + op.dx, qy = y + op.dy;
            if (qx < 0 || qy < 0 || qx >= w || qy >= h)
                throw std::invalid_argument("translate: destination outside image");
            dest.at(qy, qx) = 1.0;
            for (int c = 0; c < 3; ++c) f.raw.at(c, qy, qx) = snapshot.at(c, y, x);
        }
    }
    // Vacated area keeps default background coordinates with m = 0.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (src.at(y, x) != 0.0 && dest.at(y, x) == 0.0) fill_default_background(f, y, x);
}

void apply_scale(PositionalField& f, const ControlOp& op) {
    if (!(op.factor > 0.0)) throw std::invalid_argument("scale: factor must be > 0");
    const int h = f.height, w = f.width;
    Tensor src = op.region.to_mask(h, w);
    MaskBounds bb = mask_bounds(src);
    if (!bb.any) throw std::invalid_argument("scale: empty region");

    double ax, ay;
    if (op.anchor) {
        ax = op.anchor->first;
        ay = op.anchor->second;
    } else {
        ax = 0.5 * (bb.x0 + bb.x1);
        ay = 0.5 * (bb.y0 + bb.y1);
    }

    // The forward-mapped region must stay on the canvas.
    for (double cy : {static_cast<double>(bb.y0), static_cast<double>(bb.y1)})
        for (double cx : {static_cast<double>(bb.x0), static_cast<double>(bb.x1)}) {
            double fx = ax + (cx - ax) * op.factor;
            double fy = ay + (cy - ay) * op.factor;
            if (fx < -0.5 || fy < -0.5 || fx > w - 0.5 || fy > h - 0.5)
                throw std::invalid_argument("scale: destination outside image");
        }

    Tensor snapshot = f.raw;
    Tensor dest({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Nearest-pixel inverse map keeps the m plane binary.
            int sx = static_cast<int>(std::lround(ax + (x - ax) / op.factor));
            int sy = static_cast<int>(std::lround(ay + (y - ay) / op.factor));
            if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
            if (src.at(sy, sx) == 0.0) continue;
            dest.at(y, x) = 1.0;
            for (int c = 0; c < 3; ++c) f.raw.at(c, y, x) = snapshot.at(c, sy, sx);
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (src.at(y, x) != 0.0 && dest.at(y, x) == 0.0) fill_default_background(f, y, x);
}

void apply_mask_edit(PositionalField& f, const ControlOp& op) {
    if (op.mask_value != 0 && op.mask_value != 1)
        throw std::invalid_argument("mask_edit: m must be 0 or 1");
    Tensor sel = op.region.to_mask(f.height, f.width);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            if (sel.at(y, x) != 0.0) f.raw.at(2, y, x) = static_cast<double>(op.mask_value);
}

}  // namespace

PositionalField apply_control(const PositionalField& field, const ControlSpec& spec) {
    PositionalField out = field;
    for (const auto& op : spec.ops) {
        switch (op.kind) {
            case ControlOp::Kind::Translate: apply_translate(out, op); break;
            case ControlOp::Kind::Scale: apply_scale(out, op); break;
            case ControlOp::Kind::MaskEdit: apply_mask_edit(out, op); break;
        }
    }
    return out;
}

static Region parse_region(const json& j, const MaskLoader& load_mask) {
    if (!j.is_object()) throw std::invalid_argument("region must be an object");
    if (j.contains("mask")) {
        if (!load_mask) throw std::invalid_argument("mask regions are not available here");
        return Region::from_mask(load_mask(j.at("mask").get<std::string>()));
    }
    for (const char* k : {"x", "y", "w", "h"})
        if (!j.contains(k))
            throw std::invalid_argument(std::string("region missing field '") + k + "'");
    return Region::rect(j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
                        j.at("h").get<int>());
}

ControlSpec parse_control_spec(const json& doc, const MaskLoader& load_mask) {
    if (!doc.is_object() || !doc.contains("ops") || !doc.at("ops").is_array())
        throw std::invalid_argument("control spec: expected {\"ops\": [...]} document");
    ControlSpec spec;
    const json& ops = doc.at("ops");
    for (size_t i = 0; i < ops.size(); ++i) {
        try {
            const json& jop = ops.at(i);
            ControlOp op;
            std::string type = jop.at("type").get<std::string>();
            op.region = parse_region(jop.at("region"), load_mask);
            if (type == "translate") {
                op.kind = ControlOp::Kind::Translate;
                op.dx = jop.at("dx").get<int>();
                op.dy = jop.at("dy").get<int>();
            } else if (type == "scale") {
                op.kind = ControlOp::Kind::Scale;
                op.factor = jop.at("factor").get<double>();
                if (!(op.factor > 0.0)) throw std::invalid_argument("factor must be > 0");
                if (jop.contains("anchor")) {
                    auto a = jop.at("anchor");
                    op.anchor = std::make_pair(a.at(0).get<double>(), a.at(1).get<double>());
                }
            } else if (type == "mask_edit") {
                op.kind = ControlOp::Kind::MaskEdit;
                op.mask_value = jop.at("m").get<int>();
                if (op.mask_value != 0 && op.mask_value != 1)
                    throw std::invalid_argument("m must be 0 or 1");
            } else {
                throw std::invalid_argument("unknown op type '" + type + "'");
            }
            spec.ops.push_back(std::move(op));
        } catch (const std::exception& e) {
            throw std::invalid_argument("control spec op " + std::to_string(i) + ": " + e.what());
        }
    }
    return spec;
}

json control_spec_to_json(const ControlSpec& spec) {
    json ops = json::array();
    for (const auto& op : spec.ops) {
        json jop;
        if (op.region.is_rect) {
            jop["region"] = {{"x", op.region.x}, {"y", op.region.y}, {"w", op.region.w},
                             {"h", op.region.h}};
        } else {
            jop["region"] = {{"mask", "<inline>"}};
        }
        switch (op.kind) {
            case ControlOp::Kind::Translate:
                jop["type"] = "translate";
                jop["dx"] = op.dx;
                jop["dy"] = op.dy;
                break;
            case ControlOp::Kind::Scale:
                jop["type"] = "scale";
                jop["factor"] = op.factor;
                if (op.anchor) jop["anchor"] = {op.anchor->first, op.anchor->second};
                break;
            case ControlOp::Kind::MaskEdit:
                jop["type"] = "mask_edit";
                jop["m"] = op.mask_value;
                break;
        }
        ops.push_back(std::move(jop));
    }
    return json{{"ops", std::move(ops)}};
}

}  // namespace sid
