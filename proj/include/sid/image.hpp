#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sid/tensor.hpp"

namespace sid {

// Packed 8-bit image, HWC interleaved; channels is 1 or 3.
struct ImageU8 {
    int height = 0, width = 0, channels = 0;
    std::vector<uint8_t> pixels;

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

// Decodes PNG or JPEG (dispatched on the file signature) to 8-bit RGB.
ImageU8 load_image_rgb(const std::string& path);

void save_png(const std::string& path, const ImageU8& img);
std::vector<uint8_t> encode_png(const ImageU8& img);

// Bilinear resample of a (C, H, W) tensor. Used to fit reference images to
// the output size.
Tensor resize_bilinear(const Tensor& img, int h2, int w2);

// Single-channel 8-bit PNG; values >= 128 map to m = 1. Returns (H, W) 0/1.
Tensor load_mask_png(const std::string& path);
void save_mask_png(const std::string& path, const Tensor& mask);

// (3, H, W) in [-1, 1] <-> 8-bit RGB. Encoding clamps, then rounds.
Tensor image_to_signed(const ImageU8& img);
ImageU8 signed_to_image(const Tensor& t);

// (3, H, W) in [0, 1], used by the metrics.
Tensor image_to_unit(const ImageU8& img);

// [-1,1] tensor -> [0,1] tensor through the same clamp the encoder applies.
Tensor signed_to_unit(const Tensor& t);

}  // namespace sid
