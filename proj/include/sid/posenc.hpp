#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sid/rng.hpp"
#include "sid/tensor.hpp"

namespace sid {

// Per-pixel spatial prior: plane 0 holds x' in [-1,1], plane 1 holds y' in
// [-1,1], plane 2 holds the binary foreground mask m. Coordinates are always
// in the global frame of the source image, so crops stay location-aware.
struct PositionalField {
    int height = 0, width = 0;
    Tensor raw;  // (3, H, W)
};

// Normalized coordinate for index i of an axis with n samples.
double default_coord(int i, int n);

// Builds the default field from a binary (H, W) mask. Throws on non-binary
// mask values.
PositionalField build_default_field(int height, int width, const Tensor& mask);

// Learnable sine embedding of the raw (x', y', m) vector.
struct FourierEmbedder {
    Tensor B;   // (3, n)
    Tensor gB;  // gradient accumulator

    static FourierEmbedder init(int n, double sigma, Rng& rng);

    int width() const { return B.empty() ? 0 : B.dim(1); }

    // (n, H, W) embedding of a (3, H, W) raw field; every value in [-1, 1].
    Tensor embed_raw(const Tensor& raw) const;

    // Accumulates dL/dB given the raw field and the upstream embedding grad.
    void backward(const Tensor& raw, const Tensor& dembed);
};

Tensor fourier_embed(const PositionalField& field, const FourierEmbedder& emb);

// Region selector: a rectangle or an arbitrary binary mask at field size.
struct Region {
    bool is_rect = true;
    int x = 0, y = 0, w = 0, h = 0;
    Tensor mask;  // (H, W) binary when !is_rect

    static Region rect(int x, int y, int w, int h);
    static Region from_mask(Tensor mask);

    // Materializes the selector as a binary (H, W) mask; throws when the
    // region does not fit the field.
    Tensor to_mask(int height, int width) const;
};

struct ControlOp {
    enum class Kind { Translate, Scale, MaskEdit };
    Kind kind = Kind::Translate;
    Region region;
    int dx = 0, dy = 0;                    // translate
    double factor = 1.0;                   // scale
    std::optional<std::pair<double, double>> anchor;  // scale anchor (x, y) in pixels
    int mask_value = 0;                    // mask_edit
};

struct ControlSpec {
    std::vector<ControlOp> ops;
    bool empty() const { return ops.empty(); }
};

// Applies the edit list in order and returns the edited field. Pixels outside
// every source and destination region are bit-identical to the input.
PositionalField apply_control(const PositionalField& field, const ControlSpec& spec);

// JSON wire format, documented in docs/formats.md. `load_mask` resolves
// {"mask": "path"} region entries; pass nullptr to reject mask regions.
using MaskLoader = std::function<Tensor(const std::string&)>;
ControlSpec parse_control_spec(const nlohmann::json& doc, const MaskLoader& load_mask = nullptr);
nlohmann::json control_spec_to_json(const ControlSpec& spec);

}  // namespace sid
