#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "nascell/errors.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

/// Dense image, row-major [H][W][channel], values in [0,1] for decoded
/// files (dynamic images hold unbounded intermediates in the same layout).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> pix;

    Image() = default;
    Image(int h, int w, int ch, double fill = 0.0)
        : height(h), width(w), channels(ch),
          pix(static_cast<std::size_t>(h) * w * ch, fill) {}

    double& at(int y, int x, int c) {
        return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

namespace detail {

inline int next_pnm_int(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comment lines per the PNM header grammar.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw DataError("truncated PNM header in " + path);
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw DataError("malformed PNM header in " + path);
    return value;
}

} // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255. Pixel values
/// are mapped to [0,1] by division by 255.
inline Image read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw DataError("unsupported image format in " + path + " (need binary PGM/PPM, P5 or P6)");
    const int channels = magic[1] == '5' ? 1 : 3;
    const int width = detail::next_pnm_int(in, path);
    const int height = detail::next_pnm_int(in, path);
    const int maxval = detail::next_pnm_int(in, path);
    if (maxval != 255) throw DataError("unsupported PNM maxval " + std::to_string(maxval) + " in " + path);
    if (width < 1 || height < 1) throw DataError("degenerate image dimensions in " + path);

    Image img(height, width, channels);
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw DataError("truncated pixel data in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] / 255.0;
    return img;
}

/// Writes a binary PGM (1 channel) or PPM (3 channels), maxval 255. Values
/// are clamped to [0,1] and quantized by rounding.
inline void write_image(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_image: only 1- or 3-channel images supported, got " +
                        std::to_string(img.channels));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image file " + path);
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pix.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, img.pix[i]));
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw DataError("failed writing pixel data to " + path);
}

/// [H][W][ch] image -> [ch,H,W] tensor (no gradient tracking).
inline Tensor image_to_tensor(const Image& img) {
    std::vector<double> data(img.pix.size());
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                data[c * plane + static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, c);
    return Tensor(Shape{img.channels, img.height, img.width}, std::move(data));
}

} // namespace nascell
