#pragma once

#include <string>
#include <vector>

#include "nascell/errors.hpp"
#include "nascell/image.hpp"

namespace nascell {

/// An ordered micro-expression clip: frames V_1..V_q plus identity metadata.
struct FrameSequence {
    std::vector<Image> frames;
    std::string subject;
    int label = -1;

    int q() const { return static_cast<int>(frames.size()); }
};

/// Rank-pooled collapse of a frame sequence: a per-pixel linear combination
/// of the frames with fixed weights, before any display normalization.
struct DynamicImage {
    Image pixels;   // unbounded sign/magnitude
    int source_q = 0;
};

/// Frame weights F(p) = sum_{l=p}^{q} (2l - q) / l for p = 1..q.
/// The weights telescope so that sum_p F(p) == q.
inline std::vector<double> rank_weights(int q) {
    if (q < 1) throw std::invalid_argument("rank_weights: q must be >= 1");
    std::vector<double> weights(static_cast<std::size_t>(q));
    double suffix = 0.0;
    for (int l = q; l >= 1; --l) {
        suffix += (2.0 * l - q) / l;
        weights[static_cast<std::size_t>(l - 1)] = suffix;
    }
    return weights;
}

/// d* = sum_p F(p) * V_p, computed per pixel.
inline DynamicImage dynamic_image(const FrameSequence& seq) {
    if (seq.frames.empty()) throw DataError("dynamic_image: sequence has no frames");
    const Image& first = seq.frames.front();
    for (const Image& f : seq.frames) {
        if (!f.same_shape(first))
            throw DataError("dynamic_image: heterogeneous frame shapes (" +
                            std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                            std::to_string(f.channels) + " vs " + std::to_string(first.height) +
                            "x" + std::to_string(first.width) + "x" + std::to_string(first.channels) +
                            ")");
    }
    const int q = seq.q();
    const std::vector<double> weights = rank_weights(q);
    DynamicImage out;
    out.source_q = q;
    out.pixels = Image(first.height, first.width, first.channels);
    for (int p = 0; p < q; ++p) {
        const double w = weights[static_cast<std::size_t>(p)];
        const auto& src = seq.frames[static_cast<std::size_t>(p)].pix;
        for (std::size_t i = 0; i < src.size(); ++i) out.pixels.pix[i] += w * src[i];
    }
    return out;
}

/// Affine min-max rescale of the whole image to [0,1]; a constant image maps
/// to all 0.5.
inline Image normalize_for_display(const DynamicImage& d) {
    Image out = d.pixels;
    if (out.pix.empty()) return out;
    double lo = out.pix[0], hi = out.pix[0];
    for (double v : out.pix) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        std::fill(out.pix.begin(), out.pix.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (auto& v : out.pix) v = (v - lo) * inv;
    return out;
}

} // namespace nascell
