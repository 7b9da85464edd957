#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nascell/rng.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

namespace detail {

inline int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int div_ceil(int a, int b) { return a > 0 ? (a + b - 1) / b : -((-a) / b); }

struct ConvGeom {
    int batch, c_in, h_in, w_in;
    int c_out, kh, kw;
    int stride, padding, dilation, groups;
    int h_out, w_out;
    int cin_g, cout_g; // channels per group
};

inline ConvGeom conv_geometry(const Shape& x, const Shape& k, int stride, int padding,
                              int dilation, int groups) {
    if (x.size() != 4) throw std::invalid_argument("conv2d: input must be [B,C,H,W], got " + shape_str(x));
    if (k.size() != 4) throw std::invalid_argument("conv2d: kernel must be [Cout,Cin/groups,kh,kw], got " + shape_str(k));
    if (stride < 1 || dilation < 1 || groups < 1 || padding < 0)
        throw std::invalid_argument("conv2d: bad stride/padding/dilation/groups");
    ConvGeom g;
    g.batch = x[0]; g.c_in = x[1]; g.h_in = x[2]; g.w_in = x[3];
    g.c_out = k[0]; g.kh = k[2]; g.kw = k[3];
    g.stride = stride; g.padding = padding; g.dilation = dilation; g.groups = groups;
    if (g.c_in % groups != 0 || g.c_out % groups != 0)
        throw std::invalid_argument("conv2d: channels " + std::to_string(g.c_in) + "->" +
                                    std::to_string(g.c_out) + " not divisible by groups " +
                                    std::to_string(groups));
    g.cin_g = g.c_in / groups;
    g.cout_g = g.c_out / groups;
    if (k[1] != g.cin_g)
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(k[1]) +
                                    " input channels per group, input has " + std::to_string(g.cin_g));
    const int eff_h = (g.kh - 1) * dilation + 1;
    const int eff_w = (g.kw - 1) * dilation + 1;
    g.h_out = (g.h_in + 2 * padding - eff_h) / stride + 1;
    g.w_out = (g.w_in + 2 * padding - eff_w) / stride + 1;
    if (g.h_out < 1 || g.w_out < 1)
        throw std::invalid_argument("conv2d: kernel " + shape_str(k) + " larger than padded input " +
                                    shape_str(x));
    return g;
}

} // namespace detail

/// 2-D cross-correlation over [B,C,H,W] with stride/padding/dilation/groups,
/// bias-free. Kernel layout [Cout, Cin/groups, kh, kw].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding, int dilation,
                     int groups) {
    const auto g = detail::conv_geometry(x.shape(), kernel.shape(), stride, padding, dilation, groups);
    const double* X = x.data().data();
    const double* K = kernel.data().data();
    std::vector<double> out(static_cast<std::size_t>(g.batch) * g.c_out * g.h_out * g.w_out, 0.0);

    const std::size_t x_plane = static_cast<std::size_t>(g.h_in) * g.w_in;
    const std::size_t o_plane = static_cast<std::size_t>(g.h_out) * g.w_out;
    for (int b = 0; b < g.batch; ++b) {
        for (int gi = 0; gi < g.groups; ++gi) {
            for (int oc = 0; oc < g.cout_g; ++oc) {
                const int ocg = gi * g.cout_g + oc;
                double* O = out.data() + (static_cast<std::size_t>(b) * g.c_out + ocg) * o_plane;
                for (int ic = 0; ic < g.cin_g; ++ic) {
                    const int icg = gi * g.cin_g + ic;
                    const double* Xp = X + (static_cast<std::size_t>(b) * g.c_in + icg) * x_plane;
                    const double* Kp = K + ((static_cast<std::size_t>(ocg) * g.cin_g + ic) * g.kh) * g.kw;
                    for (int kh = 0; kh < g.kh; ++kh) {
                        const int off_h = kh * g.dilation - g.padding;
                        const int oh_lo = std::max(0, detail::div_ceil(-off_h, g.stride));
                        const int oh_hi = std::min(g.h_out, detail::div_floor(g.h_in - 1 - off_h, g.stride) + 1);
                        for (int kw = 0; kw < g.kw; ++kw) {
                            const double w = Kp[kh * g.kw + kw];
                            if (w == 0.0) continue;
                            const int off_w = kw * g.dilation - g.padding;
                            const int ow_lo = std::max(0, detail::div_ceil(-off_w, g.stride));
                            const int ow_hi = std::min(g.w_out, detail::div_floor(g.w_in - 1 - off_w, g.stride) + 1);
                            for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                const double* xrow = Xp + (oh * g.stride + off_h) * g.w_in + off_w;
                                double* orow = O + static_cast<std::size_t>(oh) * g.w_out;
                                if (g.stride == 1) {
                                    for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += w * xrow[ow];
                                } else {
                                    for (int ow = ow_lo; ow < ow_hi; ++ow)
                                        orow[ow] += w * xrow[ow * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Tensor result(Shape{g.batch, g.c_out, g.h_out, g.w_out}, std::move(out));
    if (grad_enabled() && detail::any_requires_grad({&x, &kernel})) {
        auto xn = x.node_shared();
        auto kn = kernel.node_shared();
        auto* rn = result.node();
        result.record({xn, kn}, [xn, kn, rn, g, x_plane, o_plane]() {
            const auto& go = rn->grad;
            const bool need_x = xn->requires_grad;
            const bool need_k = kn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_k) kn->ensure_grad();
            for (int b = 0; b < g.batch; ++b) {
                for (int gi = 0; gi < g.groups; ++gi) {
                    for (int oc = 0; oc < g.cout_g; ++oc) {
                        const int ocg = gi * g.cout_g + oc;
                        const double* G = go.data() + (static_cast<std::size_t>(b) * g.c_out + ocg) * o_plane;
                        for (int ic = 0; ic < g.cin_g; ++ic) {
                            const int icg = gi * g.cin_g + ic;
                            const std::size_t xoff = (static_cast<std::size_t>(b) * g.c_in + icg) * x_plane;
                            const std::size_t koff = (static_cast<std::size_t>(ocg) * g.cin_g + ic) *
                                                     static_cast<std::size_t>(g.kh) * g.kw;
                            for (int kh = 0; kh < g.kh; ++kh) {
                                const int off_h = kh * g.dilation - g.padding;
                                const int oh_lo = std::max(0, detail::div_ceil(-off_h, g.stride));
                                const int oh_hi = std::min(g.h_out, detail::div_floor(g.h_in - 1 - off_h, g.stride) + 1);
                                for (int kw = 0; kw < g.kw; ++kw) {
                                    const int off_w = kw * g.dilation - g.padding;
                                    const int ow_lo = std::max(0, detail::div_ceil(-off_w, g.stride));
                                    const int ow_hi = std::min(g.w_out, detail::div_floor(g.w_in - 1 - off_w, g.stride) + 1);
                                    const double w = kn->data[koff + kh * g.kw + kw];
                                    double kacc = 0.0;
                                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                        const std::size_t xrow = xoff + (oh * g.stride + off_h) * g.w_in + off_w;
                                        const double* grow = G + static_cast<std::size_t>(oh) * g.w_out;
                                        for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                            const std::size_t xi = xrow + ow * g.stride;
                                            if (need_x) xn->grad[xi] += w * grow[ow];
                                            if (need_k) kacc += grow[ow] * xn->data[xi];
                                        }
                                    }
                                    if (need_k) kn->grad[koff + kh * g.kw + kw] += kacc;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

/// Max pooling; out-of-bounds taps are ignored (equivalent to -inf padding).
/// Ties break toward the first tap in (kh, kw) scan order.
inline Tensor maxpool2d(const Tensor& x, int kernel, int stride, int padding) {
    if (x.ndim() != 4) throw std::invalid_argument("maxpool2d: input must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + 2 * padding - kernel) / stride + 1;
    const int Wo = (W + 2 * padding - kernel) / stride + 1;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("maxpool2d: window larger than padded input");

    const auto& xd = x.data();
    std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    std::size_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t plane = (static_cast<std::size_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = 0;
                    for (int kh = 0; kh < kernel; ++kh) {
                        const int ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int iw = ow * stride - padding + kw;
                            if (iw < 0 || iw >= W) continue;
                            const std::size_t xi = plane + static_cast<std::size_t>(ih) * W + iw;
                            if (xd[xi] > best) {
                                best = xd[xi];
                                best_i = xi;
                            }
                        }
                    }
                    out[oi] = best;
                    (*argmax)[oi] = best_i;
                }
        }

    Tensor result(Shape{B, C, Ho, Wo}, std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn, argmax]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
                xn->grad[(*argmax)[i]] += rn->grad[i];
        });
    }
    return result;
}

/// Average pooling with count-include-pad semantics: the divisor is always
/// kernel*kernel, with padded positions contributing zero.
inline Tensor avgpool2d(const Tensor& x, int kernel, int stride, int padding) {
    if (x.ndim() != 4) throw std::invalid_argument("avgpool2d: input must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + 2 * padding - kernel) / stride + 1;
    const int Wo = (W + 2 * padding - kernel) / stride + 1;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("avgpool2d: window larger than padded input");
    const double inv = 1.0 / (static_cast<double>(kernel) * kernel);

    const auto& xd = x.data();
    std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo);
    std::size_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t plane = (static_cast<std::size_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++oi) {
                    double acc = 0.0;
                    for (int kh = 0; kh < kernel; ++kh) {
                        const int ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int iw = ow * stride - padding + kw;
                            if (iw < 0 || iw >= W) continue;
                            acc += xd[plane + static_cast<std::size_t>(ih) * W + iw];
                        }
                    }
                    out[oi] = acc * inv;
                }
        }

    Tensor result(Shape{B, C, Ho, Wo}, std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn, B, C, H, W, Ho, Wo, kernel, stride, padding, inv]() {
            xn->ensure_grad();
            const auto& g = rn->grad;
            std::size_t oi = 0;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t plane = (static_cast<std::size_t>(b) * C + c) * H * W;
                    for (int oh = 0; oh < Ho; ++oh)
                        for (int ow = 0; ow < Wo; ++ow, ++oi) {
                            const double gv = g[oi] * inv;
                            for (int kh = 0; kh < kernel; ++kh) {
                                const int ih = oh * stride - padding + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < kernel; ++kw) {
                                    const int iw = ow * stride - padding + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    xn->grad[plane + static_cast<std::size_t>(ih) * W + iw] += gv;
                                }
                            }
                        }
                }
        });
    }
    return result;
}

/// Spatial mean: [B,C,H,W] -> [B,C].
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: input must be [B,C,H,W]");
    return mean_axes(x, {2, 3}, false);
}

// ---------------------------------------------------------------------------
// Batch normalization over (B,H,W) per channel, fused forward/backward.
// ---------------------------------------------------------------------------

namespace detail {

inline thread_local bool bn_stats_frozen = false;

} // namespace detail

/// Suppresses running-stat updates for the enclosed scope while keeping
/// batch-statistic normalization; used for loss probes that must not mutate
/// the model.
class BnStatsFreezeGuard {
public:
    BnStatsFreezeGuard() : prev_(detail::bn_stats_frozen) { detail::bn_stats_frozen = true; }
    ~BnStatsFreezeGuard() { detail::bn_stats_frozen = prev_; }
    BnStatsFreezeGuard(const BnStatsFreezeGuard&) = delete;
    BnStatsFreezeGuard& operator=(const BnStatsFreezeGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

inline Tensor batch_norm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              std::vector<double>& running_mean, std::vector<double>& running_var,
                              bool training, bool update_stats, double eps, double momentum) {
    if (x.ndim() != 4) throw std::invalid_argument("batch_norm: input must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != static_cast<std::size_t>(C) || beta.numel() != static_cast<std::size_t>(C))
        throw std::invalid_argument("batch_norm: scale/shift size mismatch");
    const std::size_t m = static_cast<std::size_t>(B) * H * W;
    if (training && m < 2)
        throw std::invalid_argument("batch_norm: training mode needs B*H*W >= 2");

    auto mean = std::make_shared<std::vector<double>>(C, 0.0);
    auto invstd = std::make_shared<std::vector<double>>(C, 0.0);
    const auto& xd = x.data();
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* p = xd.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            (*mean)[c] = s / static_cast<double>(m);
        }
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const double mu = (*mean)[c];
            for (int b = 0; b < B; ++b) {
                const double* p = xd.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    s += d * d;
                }
            }
            const double var = s / static_cast<double>(m);
            (*invstd)[c] = 1.0 / std::sqrt(var + eps);
            if (update_stats) {
                running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
                running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
            }
        }
    } else {
        for (int c = 0; c < C; ++c) {
            (*mean)[c] = running_mean[c];
            (*invstd)[c] = 1.0 / std::sqrt(running_var[c] + eps);
        }
    }

    std::vector<double> out(xd.size());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            const double mu = (*mean)[c], is = (*invstd)[c];
            const double ga = gamma.data()[c], be = beta.data()[c];
            for (std::size_t i = 0; i < plane; ++i)
                out[off + i] = ga * (xd[off + i] - mu) * is + be;
        }

    Tensor result(x.shape(), std::move(out));
    if (grad_enabled() && detail::any_requires_grad({&x, &gamma, &beta})) {
        auto xn = x.node_shared();
        auto gn = gamma.node_shared();
        auto bn = beta.node_shared();
        auto* rn = result.node();
        result.record({xn, gn, bn}, [xn, gn, bn, rn, mean, invstd, training, B, C, plane, m]() {
            const auto& g = rn->grad;
            // Per-channel sums of g and g*xhat.
            std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
                    const double mu = (*mean)[c], is = (*invstd)[c];
                    double sg = 0.0, sgx = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double xhat = (xn->data[off + i] - mu) * is;
                        sg += g[off + i];
                        sgx += g[off + i] * xhat;
                    }
                    sum_g[c] += sg;
                    sum_gx[c] += sgx;
                }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int c = 0; c < C; ++c) gn->grad[c] += sum_gx[c];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int c = 0; c < C; ++c) bn->grad[c] += sum_g[c];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                const double inv_m = 1.0 / static_cast<double>(m);
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
                        const double mu = (*mean)[c], is = (*invstd)[c];
                        const double ga = gn->data[c];
                        if (training) {
                            for (std::size_t i = 0; i < plane; ++i) {
                                const double xhat = (xn->data[off + i] - mu) * is;
                                xn->grad[off + i] +=
                                    ga * is * (g[off + i] - inv_m * sum_g[c] - xhat * inv_m * sum_gx[c]);
                            }
                        } else {
                            for (std::size_t i = 0; i < plane; ++i)
                                xn->grad[off + i] += ga * is * g[off + i];
                        }
                    }
            }
        });
    }
    return result;
}

} // namespace detail

/// Learnable per-channel normalization with running statistics. Training mode
/// normalizes with batch statistics (biased variance) and updates running
/// stats; eval mode normalizes with the running stats (initialized to
/// mean 0 / var 1, so eval before any training step is well defined).
class BatchNorm2d {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;

    explicit BatchNorm2d(int channels)
        : gamma_(Tensor::full({channels}, 1.0, true)),
          beta_(Tensor::zeros({channels}, true)),
          running_mean_(channels, 0.0),
          running_var_(channels, 1.0) {}

    Tensor forward(const Tensor& x, bool training, bool update_stats = true) {
        return detail::batch_norm_impl(x, gamma_, beta_, running_mean_, running_var_, training,
                                       training && update_stats && !detail::bn_stats_frozen, kEps,
                                       kMomentum);
    }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }
    std::vector<double>& running_mean() { return running_mean_; }
    std::vector<double>& running_var() { return running_var_; }
    int channels() const { return static_cast<int>(running_mean_.size()); }
    std::int64_t param_count() const { return 2 * channels(); }

    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(gamma_);
        out.push_back(beta_);
    }

private:
    Tensor gamma_, beta_;
    std::vector<double> running_mean_, running_var_;
};

/// Functional form of the batch-norm primitive.
inline Tensor batch_norm(const Tensor& x, BatchNorm2d& state, bool training,
                         bool update_stats = true) {
    return state.forward(x, training, update_stats);
}

// ---------------------------------------------------------------------------
// Weight initialization and composed building blocks.
// ---------------------------------------------------------------------------

namespace init {

/// He-normal conv kernel [c_out, c_in_per_group, k, k].
inline Tensor conv_kernel(int c_out, int c_in_per_group, int kh, int kw, Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(c_out) * c_in_per_group * kh * kw;
    const double stddev = std::sqrt(2.0 / (static_cast<double>(c_in_per_group) * kh * kw));
    std::vector<double> w(n);
    for (auto& v : w) v = rng.normal(0.0, stddev);
    return Tensor(Shape{c_out, c_in_per_group, kh, kw}, std::move(w), true);
}

inline Tensor linear_weight(int in_features, int out_features, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(in_features) * out_features);
    const double stddev = std::sqrt(1.0 / in_features);
    for (auto& v : w) v = rng.normal(0.0, stddev);
    return Tensor(Shape{in_features, out_features}, std::move(w), true);
}

} // namespace init

/// ReLU -> full conv (bias-free) -> norm. Used for the stem-adjacent 1x1
/// channel adapters between cells.
struct ReluConvBn {
    Tensor kernel;
    BatchNorm2d bn;
    int stride = 1, padding = 0;

    ReluConvBn() = default;
    ReluConvBn(int c_in, int c_out, int k, int stride_, int padding_, Rng& rng)
        : kernel(init::conv_kernel(c_out, c_in, k, k, rng)), bn(c_out), stride(stride_), padding(padding_) {}

    Tensor forward(const Tensor& x, bool training) {
        return bn.forward(conv2d(relu(x), kernel, stride, padding, 1, 1), training);
    }
    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(kernel);
        bn.collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) { out.push_back(&bn); }
    std::int64_t param_count() const {
        return static_cast<std::int64_t>(kernel.numel()) + bn.param_count();
    }
};

/// ReLU -> depthwise kxk -> pointwise 1x1 -> norm; the separable unit both
/// separable and dilated candidate convolutions are built from.
struct SepBlock {
    Tensor dw, pw;
    BatchNorm2d bn;
    int k = 3, stride = 1, dilation = 1;

    SepBlock() = default;
    SepBlock(int channels, int k_, int stride_, int dilation_, Rng& rng)
        : dw(init::conv_kernel(channels, 1, k_, k_, rng)),
          pw(init::conv_kernel(channels, channels, 1, 1, rng)),
          bn(channels),
          k(k_), stride(stride_), dilation(dilation_) {}

    Tensor forward(const Tensor& x, bool training) {
        const int pad = (k - 1) * dilation / 2;
        const int channels = x.dim(1);
        Tensor h = conv2d(relu(x), dw, stride, pad, dilation, channels);
        h = conv2d(h, pw, 1, 0, 1, 1);
        return bn.forward(h, training);
    }
    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(dw);
        out.push_back(pw);
        bn.collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) { out.push_back(&bn); }
    std::int64_t param_count() const {
        return static_cast<std::int64_t>(dw.numel()) + static_cast<std::int64_t>(pw.numel()) +
               bn.param_count();
    }
};

/// Stride-2 channel-preserving projection: ReLU, then two offset 1x1 stride-2
/// convolutions concatenated, then norm. The second path sees the input
/// shifted by one pixel (zero filled), so odd spatial sizes map to
/// ceil(H/2) like every other candidate op.
struct FactorizedReduce {
    Tensor k1, k2;
    BatchNorm2d bn;
    int c_out = 0;

    FactorizedReduce() = default;
    FactorizedReduce(int c_in, int c_out_, Rng& rng) : c_out(c_out_) {
        const int c1 = (c_out_ + 1) / 2;
        const int c2 = c_out_ - c1;
        k1 = init::conv_kernel(c1, c_in, 1, 1, rng);
        if (c2 > 0) k2 = init::conv_kernel(c2, c_in, 1, 1, rng);
        bn = BatchNorm2d(c_out_);
    }

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = relu(x);
        Tensor p1 = conv2d(h, k1, 2, 0, 1, 1);
        Tensor cat = p1;
        if (k2.defined()) {
            Tensor p2 = conv2d(shift2d(h, 1, 1), k2, 2, 0, 1, 1);
            cat = concat({p1, p2}, 1);
        }
        return bn.forward(cat, training);
    }
    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(k1);
        if (k2.defined()) out.push_back(k2);
        bn.collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) { out.push_back(&bn); }
    std::int64_t param_count() const {
        std::int64_t n = static_cast<std::int64_t>(k1.numel()) + bn.param_count();
        if (k2.defined()) n += static_cast<std::int64_t>(k2.numel());
        return n;
    }
};

// ---------------------------------------------------------------------------
// The candidate operation set (|kappa| = 7).
// ---------------------------------------------------------------------------

enum class CandidateOpKind {
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    Identity,
};

constexpr int kNumCandidateOps = 7;

constexpr std::array<CandidateOpKind, kNumCandidateOps> kAllCandidateOps = {
    CandidateOpKind::SepConv3x3, CandidateOpKind::SepConv5x5, CandidateOpKind::DilConv3x3,
    CandidateOpKind::DilConv5x5, CandidateOpKind::MaxPool3x3, CandidateOpKind::AvgPool3x3,
    CandidateOpKind::Identity,
};

inline const char* op_kind_name(CandidateOpKind kind) {
    switch (kind) {
        case CandidateOpKind::SepConv3x3: return "sep3";
        case CandidateOpKind::SepConv5x5: return "sep5";
        case CandidateOpKind::DilConv3x3: return "dil3";
        case CandidateOpKind::DilConv5x5: return "dil5";
        case CandidateOpKind::MaxPool3x3: return "max3";
        case CandidateOpKind::AvgPool3x3: return "avg3";
        case CandidateOpKind::Identity: return "id";
    }
    throw std::invalid_argument("unknown op kind");
}

inline std::optional<CandidateOpKind> op_kind_from_name(const std::string& name) {
    for (CandidateOpKind k : kAllCandidateOps)
        if (name == op_kind_name(k)) return k;
    return std::nullopt;
}

/// One instantiated candidate operation at a fixed (channels, stride). All
/// candidates map HxW to ceil(H/s) x ceil(W/s) and preserve the channel
/// count.
class OpInstance {
public:
    OpInstance(CandidateOpKind kind, int in_channels, int out_channels, int stride)
        : kind_(kind), in_channels_(in_channels), out_channels_(out_channels), stride_(stride) {}
    virtual ~OpInstance() = default;

    CandidateOpKind kind() const { return kind_; }
    int in_channels() const { return in_channels_; }
    int out_channels() const { return out_channels_; }
    int stride() const { return stride_; }

    Tensor forward(const Tensor& x, bool training) {
        if (x.ndim() != 4 || x.dim(1) != in_channels_)
            throw std::invalid_argument(std::string("op ") + op_kind_name(kind_) + " expects " +
                                        std::to_string(in_channels_) + " channels, got input " +
                                        shape_str(x.shape()));
        return apply(x, training);
    }

    virtual void collect_params(std::vector<Tensor>& out) const { (void)out; }
    virtual void collect_norms(std::vector<BatchNorm2d*>& out) { (void)out; }
    virtual std::int64_t param_count() const { return 0; }

protected:
    virtual Tensor apply(const Tensor& x, bool training) = 0;

private:
    CandidateOpKind kind_;
    int in_channels_, out_channels_, stride_;
};

/// Exact count of learnable scalars in an op.
inline std::int64_t count_params(const OpInstance& op) { return op.param_count(); }

namespace detail {

class SepConvOp final : public OpInstance {
public:
    SepConvOp(CandidateOpKind kind, int channels, int k, int stride, Rng& rng)
        : OpInstance(kind, channels, channels, stride),
          b1_(channels, k, stride, 1, rng),
          b2_(channels, k, 1, 1, rng) {}

    void collect_params(std::vector<Tensor>& out) const override {
        b1_.collect_params(out);
        b2_.collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) override {
        b1_.collect_norms(out);
        b2_.collect_norms(out);
    }
    std::int64_t param_count() const override { return b1_.param_count() + b2_.param_count(); }

protected:
    Tensor apply(const Tensor& x, bool training) override {
        return b2_.forward(b1_.forward(x, training), training);
    }

private:
    SepBlock b1_, b2_;
};

class DilConvOp final : public OpInstance {
public:
    DilConvOp(CandidateOpKind kind, int channels, int k, int stride, Rng& rng)
        : OpInstance(kind, channels, channels, stride), b_(channels, k, stride, 2, rng) {}

    void collect_params(std::vector<Tensor>& out) const override { b_.collect_params(out); }
    void collect_norms(std::vector<BatchNorm2d*>& out) override { b_.collect_norms(out); }
    std::int64_t param_count() const override { return b_.param_count(); }

protected:
    Tensor apply(const Tensor& x, bool training) override { return b_.forward(x, training); }

private:
    SepBlock b_;
};

// 3x3 pooling; followed by a norm only in the strided (reduction) position.
class PoolOp final : public OpInstance {
public:
    PoolOp(CandidateOpKind kind, int channels, int stride)
        : OpInstance(kind, channels, channels, stride) {
        if (stride == 2) bn_.emplace(channels);
    }

    void collect_params(std::vector<Tensor>& out) const override {
        if (bn_) bn_->collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) override {
        if (bn_) out.push_back(&*bn_);
    }
    std::int64_t param_count() const override { return bn_ ? bn_->param_count() : 0; }

protected:
    Tensor apply(const Tensor& x, bool training) override {
        Tensor h = (kind() == CandidateOpKind::MaxPool3x3) ? maxpool2d(x, 3, stride(), 1)
                                                           : avgpool2d(x, 3, stride(), 1);
        if (bn_) h = bn_->forward(h, training);
        return h;
    }

private:
    std::optional<BatchNorm2d> bn_;
};

class IdentityOp final : public OpInstance {
public:
    explicit IdentityOp(int channels) : OpInstance(CandidateOpKind::Identity, channels, channels, 1) {}

protected:
    Tensor apply(const Tensor& x, bool) override { return x; }
};

class FactorizedReduceOp final : public OpInstance {
public:
    FactorizedReduceOp(int channels, Rng& rng)
        : OpInstance(CandidateOpKind::Identity, channels, channels, 2), fr_(channels, channels, rng) {}

    void collect_params(std::vector<Tensor>& out) const override { fr_.collect_params(out); }
    void collect_norms(std::vector<BatchNorm2d*>& out) override { fr_.collect_norms(out); }
    std::int64_t param_count() const override { return fr_.param_count(); }

protected:
    Tensor apply(const Tensor& x, bool training) override { return fr_.forward(x, training); }

private:
    FactorizedReduce fr_;
};

} // namespace detail

/// Builds a candidate operation at the given width and stride. The strided
/// identity is the factorized-reduce projection, never a bare slice.
inline std::unique_ptr<OpInstance> make_op(CandidateOpKind kind, int channels, int stride, Rng& rng) {
    if (channels < 1) throw std::invalid_argument("make_op: channels must be positive");
    if (stride != 1 && stride != 2) throw std::invalid_argument("make_op: stride must be 1 or 2");
    switch (kind) {
        case CandidateOpKind::SepConv3x3:
            return std::make_unique<detail::SepConvOp>(kind, channels, 3, stride, rng);
        case CandidateOpKind::SepConv5x5:
            return std::make_unique<detail::SepConvOp>(kind, channels, 5, stride, rng);
        case CandidateOpKind::DilConv3x3:
            return std::make_unique<detail::DilConvOp>(kind, channels, 3, stride, rng);
        case CandidateOpKind::DilConv5x5:
            return std::make_unique<detail::DilConvOp>(kind, channels, 5, stride, rng);
        case CandidateOpKind::MaxPool3x3:
        case CandidateOpKind::AvgPool3x3:
            return std::make_unique<detail::PoolOp>(kind, channels, stride);
        case CandidateOpKind::Identity:
            if (stride == 1) return std::make_unique<detail::IdentityOp>(channels);
            return std::make_unique<detail::FactorizedReduceOp>(channels, rng);
    }
    throw std::invalid_argument("make_op: unknown kind");
}

/// Network entry: 3x3 conv -> norm at the configured width.
struct Stem {
    Tensor kernel;
    BatchNorm2d bn;

    Stem() = default;
    Stem(int c_in, int c_out, Rng& rng) : kernel(init::conv_kernel(c_out, c_in, 3, 3, rng)), bn(c_out) {}

    Tensor forward(const Tensor& x, bool training) {
        return bn.forward(conv2d(x, kernel, 1, 1, 1, 1), training);
    }
    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(kernel);
        bn.collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) { out.push_back(&bn); }
    std::int64_t param_count() const {
        return static_cast<std::int64_t>(kernel.numel()) + bn.param_count();
    }
};

/// Linear classification head on pooled features.
struct Classifier {
    Tensor weight; // [features, classes]
    Tensor bias;   // [1, classes]

    Classifier() = default;
    Classifier(int features, int classes, Rng& rng)
        : weight(init::linear_weight(features, classes, rng)), bias(Tensor::zeros({1, classes}, true)) {}

    Tensor forward(const Tensor& features) { return add(matmul(features, weight), bias); }
    void collect_params(std::vector<Tensor>& out) const {
        out.push_back(weight);
        out.push_back(bias);
    }
    std::int64_t param_count() const {
        return static_cast<std::int64_t>(weight.numel()) + static_cast<std::int64_t>(bias.numel());
    }
};

} // namespace nascell
