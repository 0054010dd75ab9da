#include "sid/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include <jpeglib.h>
#include <png.h>

namespace sid {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    return f;
}

ImageU8 load_png(const std::string& path, bool gray) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png: allocation failed");
    }
    std::vector<uint8_t> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: failed to decode '" + path + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    int color = png_get_color_type(png, info);
    if (gray) {
        if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    } else {
        if (!(color & PNG_COLOR_MASK_COLOR)) png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    ImageU8 img;
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.channels = gray ? 1 : 3;
    pixels.resize(static_cast<size_t>(img.height) * img.width * img.channels);
    rows.resize(static_cast<size_t>(img.height));
    size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) rows[static_cast<size_t>(y)] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    img.pixels = std::move(pixels);
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

ImageU8 load_jpeg(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<uint8_t> pixels;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("jpeg: failed to decode '" + path + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 img;
    img.height = static_cast<int>(cinfo.output_height);
    img.width = static_cast<int>(cinfo.output_width);
    img.channels = 3;
    pixels.resize(static_cast<size_t>(img.height) * img.width * 3);
    size_t stride = static_cast<size_t>(img.width) * 3;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() + cinfo.output_scanline * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    img.pixels = std::move(pixels);
    return img;
}

bool has_png_signature(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    uint8_t sig[8] = {0};
    size_t got = std::fread(sig, 1, 8, f.get());
    return got == 8 && !png_sig_cmp(sig, 0, 8);
}

bool has_jpeg_signature(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    uint8_t sig[3] = {0};
    size_t got = std::fread(sig, 1, 3, f.get());
    return got == 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF;
}

}  // namespace

ImageU8 load_image_rgb(const std::string& path) {
    if (has_png_signature(path)) return load_png(path, false);
    if (has_jpeg_signature(path)) return load_jpeg(path);
    throw std::runtime_error("'" + path + "' is neither PNG nor JPEG");
}

void save_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("save_png: channels must be 1 or 3");
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: allocation failed");
    }
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: failed to write '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> encode_png(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("encode_png: channels must be 1 or 3");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: allocation failed");
    }
    std::vector<uint8_t> out;
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: in-memory encode failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(p));
            buf->insert(buf->end(), data, data + len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    size_t stride = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Tensor resize_bilinear(const Tensor& img, int h2, int w2) {
    if (img.ndim() != 3) throw std::invalid_argument("resize_bilinear: expected (C,H,W)");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, h2, w2});
    for (int y = 0; y < h2; ++y) {
        double sy = h2 == 1 ? 0.0 : (y + 0.5) * h / h2 - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(h - 1, y0 + 1);
        double fy = sy - y0;
        for (int x = 0; x < w2; ++x) {
            double sx = w2 == 1 ? 0.0 : (x + 0.5) * w / w2 - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(w - 1, x0 + 1);
            double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                double top = img.at(ch, y0, x0) * (1 - fx) + img.at(ch, y0, x1) * fx;
                double bot = img.at(ch, y1, x0) * (1 - fx) + img.at(ch, y1, x1) * fx;
                out.at(ch, y, x) = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

Tensor load_mask_png(const std::string& path) {
    if (!has_png_signature(path)) throw std::runtime_error("mask '" + path + "' must be a PNG");
    ImageU8 img = load_png(path, true);
    Tensor mask({img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mask.at(y, x) = img.at(y, x, 0) >= 128 ? 1.0 : 0.0;
    return mask;
}

void save_mask_png(const std::string& path, const Tensor& mask) {
    if (mask.ndim() != 2) throw std::invalid_argument("save_mask_png: expected (H,W) mask");
    ImageU8 img;
    img.height = mask.dim(0);
    img.width = mask.dim(1);
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) img.at(y, x, 0) = mask.at(y, x) != 0.0 ? 255 : 0;
    save_png(path, img);
}

Tensor image_to_signed(const ImageU8& img) {
    if (img.channels != 3) throw std::invalid_argument("image_to_signed: expected RGB image");
    Tensor t({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at(c, y, x) = static_cast<double>(img.at(y, x, c)) / 255.0 * 2.0 - 1.0;
    return t;
}

ImageU8 signed_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3)
        throw std::invalid_argument("signed_to_image: expected (3,H,W) tensor");
    ImageU8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(img.height) * img.width * 3);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = std::clamp(t.at(c, y, x), -1.0, 1.0);
                img.at(y, x, c) = static_cast<uint8_t>(std::lround((v + 1.0) * 0.5 * 255.0));
            }
    return img;
}

Tensor image_to_unit(const ImageU8& img) {
    if (img.channels != 3) throw std::invalid_argument("image_to_unit: expected RGB image");
    Tensor t({3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at(c, y, x) = static_cast<double>(img.at(y, x, c)) / 255.0;
    return t;
}

Tensor signed_to_unit(const Tensor& t) {
    Tensor u = t;
    for (int64_t i = 0; i < u.numel(); ++i) u[i] = (std::clamp(u[i], -1.0, 1.0) + 1.0) * 0.5;
    return u;
}

}  // namespace sid
