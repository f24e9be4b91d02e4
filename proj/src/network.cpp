#include "daobs/network.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "daobs/errors.hpp"

namespace daobs {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

int conv_out(int n, int stride) { return (n - 1) / stride + 1; }

// col[(c*k + ky)*k + kx][oy*wo + ox] = x[c][oy*s + ky - p][ox*s + kx - p], zero outside.
template <typename T>
void im2col(const T* x, const Shape& in, int k, int s, T* col) {
    const int p = (k - 1) / 2;
    const int ho = conv_out(in.height, s);
    const int wo = conv_out(in.width, s);
    const std::size_t plane = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
    for (int c = 0; c < in.channels; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * in.height * in.width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s + ky - p;
                    T* out = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= in.height) {
                        std::fill(out, out + wo, T(0));
                        continue;
                    }
                    const T* xr = xc + static_cast<std::size_t>(iy) * in.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s + kx - p;
                        out[ox] = (ix >= 0 && ix < in.width) ? xr[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, const Shape& in, int k, int s, T* dx) {
    const int p = (k - 1) / 2;
    const int ho = conv_out(in.height, s);
    const int wo = conv_out(in.width, s);
    const std::size_t plane = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
    std::fill(dx, dx + in.size(), T(0));
    for (int c = 0; c < in.channels; ++c) {
        T* dc = dx + static_cast<std::size_t>(c) * in.height * in.width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s + ky - p;
                    if (iy < 0 || iy >= in.height) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * wo;
                    T* dr = dc + static_cast<std::size_t>(iy) * in.width;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s + kx - p;
                        if (ix >= 0 && ix < in.width) dr[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Stride-1 "same" convolution computed directly on a zero-padded copy of the
// input. With padded row length Wp every kernel tap is a constant shift of the
// whole plane; columns ox >= W of the extended output are junk.

struct PadGeometry {
    int p, H, W, Wp;
    std::size_t padded;  // per channel, with slack for the last taps
    std::size_t ext;     // H * Wp

    PadGeometry(const Shape& in, int k)
        : p((k - 1) / 2), H(in.height), W(in.width), Wp(in.width + k - 1),
          padded(static_cast<std::size_t>(in.height + k - 1) * (in.width + k - 1) + k + 2 * 64),
          ext(static_cast<std::size_t>(in.height) * (in.width + k - 1)) {}
};

template <typename T>
void pad_input(const T* x, int channels, const PadGeometry& g, std::vector<T>& xp) {
    xp.assign(g.padded * channels, T(0));
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < g.H; ++y)
            std::copy_n(x + (static_cast<std::size_t>(c) * g.H + y) * g.W, g.W,
                        xp.data() + c * g.padded + static_cast<std::size_t>(y + g.p) * g.Wp + g.p);
}

// Register-blocked kernels. Output channels go in blocks of kOutBlock and
// positions in tiles of kVecs SIMD vectors; the accumulators of one block and
// tile fit in the vector register file.
constexpr int kOutBlock = 8;
constexpr int kVecs = 2;

template <typename T>
struct Simd {
    using V [[gnu::vector_size(64)]] = T;
    static constexpr int lanes = 64 / sizeof(T);
    static constexpr int tile = lanes * kVecs;

    static V load(const T* p) {
        V v;
        std::memcpy(&v, p, sizeof(V));
        return v;
    }
    static void store(T* p, V v) { std::memcpy(p, &v, sizeof(V)); }
    static T sum(V v) {
        T s = 0;
        for (int i = 0; i < lanes; ++i) s += v[i];
        return s;
    }
};

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

// y[o] = b[o] + sum_c sum_tap w[(o*cin + c)*k*k + tap] * shifted xp[c] over the
// extended output; valid columns are copied into y (cout x H x W).
template <typename T>
void padded_conv(int cin, int cout, int k, const PadGeometry& g, const T* xp, const T* w, const T* b, T* y) {
    using S = Simd<T>;
    using V = typename S::V;
    const int kk = k * k;
    const int taps = cin * kk;
    const int nblocks = (cout + kOutBlock - 1) / kOutBlock;
    // weights regrouped as [block][tap][kOutBlock], zero past cout
    thread_local std::vector<T> wb, yext;
    thread_local std::vector<std::ptrdiff_t> offs;
    wb.assign(static_cast<std::size_t>(nblocks) * taps * kOutBlock, T(0));
    for (int o = 0; o < cout; ++o)
        for (int q = 0; q < taps; ++q)
            wb[(static_cast<std::size_t>(o / kOutBlock) * taps + q) * kOutBlock + o % kOutBlock] =
                w[static_cast<std::size_t>(o) * taps + q];
    offs.resize(static_cast<std::size_t>(taps));
    for (int c = 0; c < cin; ++c)
        for (int tap = 0; tap < kk; ++tap)
            offs[c * kk + tap] = static_cast<std::ptrdiff_t>(c * g.padded) + (tap / k) * g.Wp + tap % k;

    const std::size_t ext = round_up(g.ext, S::tile);
    yext.resize(ext * kOutBlock);
    for (int blk = 0; blk < nblocks; ++blk) {
        const int o0 = blk * kOutBlock;
        const int ob = std::min(kOutBlock, cout - o0);
        const T* wq = wb.data() + static_cast<std::size_t>(blk) * taps * kOutBlock;
        for (std::size_t j = 0; j < ext; j += S::tile) {
            V acc[kOutBlock][kVecs];
#pragma GCC unroll 8
            for (int o = 0; o < kOutBlock; ++o) {
                const T init = (b != nullptr && o < ob) ? b[o0 + o] : T(0);
#pragma GCC unroll 4
                for (int u = 0; u < kVecs; ++u) acc[o][u] = V{} + init;
            }
            for (int q = 0; q < taps; ++q) {
                const T* xs = xp + offs[q] + j;
                const T* wv = wq + static_cast<std::size_t>(q) * kOutBlock;
                V xv[kVecs];
#pragma GCC unroll 4
                for (int u = 0; u < kVecs; ++u) xv[u] = S::load(xs + u * S::lanes);
#pragma GCC unroll 8
                for (int o = 0; o < kOutBlock; ++o)
#pragma GCC unroll 4
                    for (int u = 0; u < kVecs; ++u) acc[o][u] += wv[o] * xv[u];
            }
#pragma GCC unroll 8
            for (int o = 0; o < kOutBlock; ++o)
#pragma GCC unroll 4
                for (int u = 0; u < kVecs; ++u) S::store(yext.data() + o * ext + j + u * S::lanes, acc[o][u]);
        }
        for (int o = 0; o < ob; ++o)
            for (int oy = 0; oy < g.H; ++oy)
                std::copy_n(yext.data() + o * ext + static_cast<std::size_t>(oy) * g.Wp, g.W,
                            y + (static_cast<std::size_t>(o0 + o) * g.H + oy) * g.W);
    }
}

// dw[(o*cin + c)*k*k + tap] += sum_j gext[o][j] * xp[c][j + off(tap)], where gext
// holds dy on the extended grid with junk columns and the tail zeroed.
template <typename T>
void padded_weight_grad(int cin, int cout, int k, const PadGeometry& g, const T* xp, const T* gext, std::size_t ext,
                        T* dw) {
    using S = Simd<T>;
    using V = typename S::V;
    const int kk = k * k;
    for (int o0 = 0; o0 < cout; o0 += kOutBlock) {
        const int ob = std::min(kOutBlock, cout - o0);
        const T* g0 = gext + static_cast<std::size_t>(o0) * ext;
        for (int c = 0; c < cin; ++c) {
            for (int tap = 0; tap < kk; ++tap) {
                const T* xs = xp + c * g.padded + (tap / k) * g.Wp + tap % k;
                V acc[kOutBlock][kVecs];
#pragma GCC unroll 8
                for (int o = 0; o < kOutBlock; ++o)
#pragma GCC unroll 4
                    for (int u = 0; u < kVecs; ++u) acc[o][u] = V{};
                for (std::size_t j = 0; j < ext; j += S::tile) {
                    V xv[kVecs];
#pragma GCC unroll 4
                    for (int u = 0; u < kVecs; ++u) xv[u] = S::load(xs + j + u * S::lanes);
#pragma GCC unroll 8
                    for (int o = 0; o < kOutBlock; ++o)
#pragma GCC unroll 4
                        for (int u = 0; u < kVecs; ++u) acc[o][u] += S::load(g0 + o * ext + j + u * S::lanes) * xv[u];
                }
                T sums[kOutBlock];
#pragma GCC unroll 8
                for (int o = 0; o < kOutBlock; ++o) {
                    V v = acc[o][0];
#pragma GCC unroll 4
                    for (int u = 1; u < kVecs; ++u) v += acc[o][u];
                    sums[o] = S::sum(v);
                }
                for (int o = 0; o < ob; ++o) dw[(static_cast<std::size_t>(o0 + o) * cin + c) * kk + tap] += sums[o];
            }
        }
    }
}

template <typename T>
void direct_forward(const LayerSpec& l, const Shape& in, const T* w, const T* b, const T* x, T* y,
                    std::vector<T>& scratch) {
    const PadGeometry g(in, l.kernel);
    pad_input(x, l.in_channels, g, scratch);
    padded_conv(l.in_channels, l.out_channels, l.kernel, g, scratch.data(), w, b, y);
}

template <typename T>
void direct_backward(const LayerSpec& l, const Shape& in, const T* w, const T* x, const T* dy, T* dw, T* db, T* dx,
                     std::vector<T>& scratch) {
    const int k = l.kernel;
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    const PadGeometry g(in, k);

    // Input gradient: a "same" convolution of dy with the flipped, channel-transposed kernel.
    if (dx != nullptr) {
        thread_local std::vector<T> wt;
        wt.resize(static_cast<std::size_t>(l.in_channels) * l.out_channels * kk);
        for (int o = 0; o < l.out_channels; ++o)
            for (int c = 0; c < l.in_channels; ++c)
                for (std::size_t tap = 0; tap < kk; ++tap)
                    wt[(static_cast<std::size_t>(c) * l.out_channels + o) * kk + (kk - 1 - tap)] =
                        w[(static_cast<std::size_t>(o) * l.in_channels + c) * kk + tap];
        pad_input(dy, l.out_channels, g, scratch);
        padded_conv(l.out_channels, l.in_channels, k, g, scratch.data(), wt.data(), static_cast<const T*>(nullptr),
                    dx);
    }

    const std::size_t ext = round_up(g.ext, Simd<T>::tile);
    const std::size_t rows = round_up(static_cast<std::size_t>(l.out_channels), kOutBlock);
    thread_local std::vector<T> gext;
    gext.assign(ext * rows, T(0));
    for (int o = 0; o < l.out_channels; ++o) {
        T acc = 0;
        for (int oy = 0; oy < g.H; ++oy) {
            const T* src = dy + (static_cast<std::size_t>(o) * g.H + oy) * g.W;
            std::copy_n(src, g.W, gext.data() + o * ext + static_cast<std::size_t>(oy) * g.Wp);
            for (int ox = 0; ox < g.W; ++ox) acc += src[ox];
        }
        db[o] += acc;
    }
    pad_input(x, l.in_channels, g, scratch);
    padded_weight_grad(l.in_channels, l.out_channels, k, g, scratch.data(), gext.data(), ext, dw);
}

template <typename T>
void conv_forward(const LayerSpec& l, const Shape& in, const T* w, const T* b, const T* x, T* y,
                  std::vector<T>& scratch) {
    if (l.stride == 1) return direct_forward(l, in, w, b, x, y, scratch);
    const int kk = l.in_channels * l.kernel * l.kernel;
    const int ho = conv_out(in.height, l.stride);
    const int wo = conv_out(in.width, l.stride);
    const int plane = ho * wo;
    scratch.resize(static_cast<std::size_t>(kk) * plane);
    im2col(x, in, l.kernel, l.stride, scratch.data());
    ConstMapMat<T> wm(w, l.out_channels, kk);
    ConstMapMat<T> col(scratch.data(), kk, plane);
    MapMat<T> ym(y, l.out_channels, plane);
    ym.noalias() = wm * col;
    for (int o = 0; o < l.out_channels; ++o) ym.row(o).array() += b[o];
}

template <typename T>
void conv_backward(const LayerSpec& l, const Shape& in, const T* w, const T* x, const T* dy, T* dw, T* db, T* dx,
                   std::vector<T>& scratch) {
    if (l.stride == 1) return direct_backward(l, in, w, x, dy, dw, db, dx, scratch);
    const int kk = l.in_channels * l.kernel * l.kernel;
    const int ho = conv_out(in.height, l.stride);
    const int wo = conv_out(in.width, l.stride);
    const int plane = ho * wo;
    scratch.resize(static_cast<std::size_t>(kk) * plane);
    im2col(x, in, l.kernel, l.stride, scratch.data());
    ConstMapMat<T> col(scratch.data(), kk, plane);
    ConstMapMat<T> dym(dy, l.out_channels, plane);
    MapMat<T> dwm(dw, l.out_channels, kk);
    dwm.noalias() += dym * col.transpose();
    for (int o = 0; o < l.out_channels; ++o) db[o] += dym.row(o).sum();
    if (dx != nullptr) {
        ConstMapMat<T> wm(w, l.out_channels, kk);
        RowMat<T> dcol = wm.transpose() * dym;
        col2im(dcol.data(), in, l.kernel, l.stride, dx);
    }
}

template <typename T>
T sigmoid(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::LeakyRelu: return "leaky_relu";
        case LayerKind::MaxPool: return "max_pool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Sigmoid: return "sigmoid";
    }
    return "unknown";
}

std::string to_string(Role role) {
    switch (role) {
        case Role::ENN: return "ENN";
        case Role::ONN: return "ONN";
        case Role::DAM: return "DAM";
        case Role::DCM: return "DCM";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (LayerKind k : {LayerKind::Conv, LayerKind::LeakyRelu, LayerKind::MaxPool, LayerKind::Dense, LayerKind::Sigmoid})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown layer kind '" + name + "'");
}

Role role_from_string(const std::string& name) {
    for (Role r : {Role::ENN, Role::ONN, Role::DAM, Role::DCM})
        if (to_string(r) == name) return r;
    throw ConfigError("unknown network role '" + name + "'");
}

Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
    switch (l.kind) {
        case LayerKind::Conv:
            return {l.out_channels, conv_out(in.height, l.stride), conv_out(in.width, l.stride)};
        case LayerKind::MaxPool:
            return {in.channels, in.height / l.window, in.width / l.window};
        case LayerKind::Dense:
            return {1, 1, l.out_features};
        case LayerKind::LeakyRelu:
        case LayerKind::Sigmoid:
            return in;
    }
    return in;
}

std::size_t layer_param_count(const LayerSpec& l) {
    switch (l.kind) {
        case LayerKind::Conv:
            return static_cast<std::size_t>(l.out_channels) *
                       (static_cast<std::size_t>(l.in_channels) * l.kernel * l.kernel) +
                   static_cast<std::size_t>(l.out_channels);
        case LayerKind::Dense:
            return static_cast<std::size_t>(l.out_features) * static_cast<std::size_t>(l.in_features) +
                   static_cast<std::size_t>(l.out_features);
        default:
            return 0;
    }
}

void ArchitectureSpec::validate() const {
    if (input.size() == 0) throw ConfigError("architecture input shape is empty");
    Shape s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        switch (l.kind) {
            case LayerKind::Conv:
                if (l.in_channels != s.channels) throw ConfigError(where + ": input channel mismatch");
                if (l.out_channels < 1 || l.kernel < 1 || l.kernel % 2 == 0 || l.stride < 1)
                    throw ConfigError(where + ": needs positive channels, odd kernel, positive stride");
                break;
            case LayerKind::MaxPool:
                if (l.window < 1 || s.height % l.window != 0 || s.width % l.window != 0)
                    throw ConfigError(where + ": window must divide the feature map");
                break;
            case LayerKind::Dense:
                if (static_cast<std::size_t>(l.in_features) != s.size())
                    throw ConfigError(where + ": expects " + std::to_string(l.in_features) + " inputs, receives " +
                                      std::to_string(s.size()));
                if (l.out_features < 1) throw ConfigError(where + ": needs positive width");
                break;
            case LayerKind::LeakyRelu:
                if (!(l.slope >= 0.0 && l.slope < 1.0)) throw ConfigError(where + ": slope must lie in [0, 1)");
                break;
            case LayerKind::Sigmoid:
                break;
        }
        s = layer_output_shape(l, s);
    }
}

Shape ArchitectureSpec::output_shape() const {
    Shape s = input;
    for (const LayerSpec& l : layers) s = layer_output_shape(l, s);
    return s;
}

std::size_t ArchitectureSpec::param_count() const { return param_offsets().back(); }

std::vector<std::size_t> ArchitectureSpec::param_offsets() const {
    std::vector<std::size_t> off(layers.size() + 1, 0);
    for (std::size_t i = 0; i < layers.size(); ++i) off[i + 1] = off[i] + layer_param_count(layers[i]);
    return off;
}

std::size_t ArchitectureSpec::logit_depth() const {
    return (!layers.empty() && layers.back().kind == LayerKind::Sigmoid) ? layers.size() - 1 : layers.size();
}

template <typename T>
std::vector<T> forward(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> input,
                       BasicTape<T>* tape, std::size_t depth) {
    if (input.size() != arch.input.size())
        throw InputError("network input has " + std::to_string(input.size()) + " values, expected " +
                         std::to_string(arch.input.size()));
    if (params.size() != arch.param_count()) throw InputError("parameter store does not match architecture");
    depth = std::min(depth, arch.layers.size());
    const auto offsets = arch.param_offsets();

    std::vector<T> cur(input.begin(), input.end());
    std::vector<T> next;
    thread_local std::vector<T> scratch;
    Shape shape = arch.input;
    if (tape != nullptr) {
        tape->inputs.assign(depth, {});
        tape->argmax.assign(depth, {});
        tape->depth = depth;
    }

    for (std::size_t i = 0; i < depth; ++i) {
        const LayerSpec& l = arch.layers[i];
        const T* p = params.data() + offsets[i];
        const Shape out = layer_output_shape(l, shape);
        next.assign(out.size(), T(0));
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::size_t nw = static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
                conv_forward(l, shape, p, p + nw, cur.data(), next.data(), scratch);
                break;
            }
            case LayerKind::LeakyRelu: {
                const T slope = static_cast<T>(l.slope);
                const T* __restrict xv = cur.data();
                T* __restrict yv = next.data();
                const std::size_t n = cur.size();
                // max(x, a x) equals the leaky rectifier for 0 <= a < 1 and is branch-free
                for (std::size_t j = 0; j < n; ++j) yv[j] = std::max(xv[j], slope * xv[j]);
                break;
            }
            case LayerKind::MaxPool: {
                std::vector<std::int32_t> winners(out.size());
                const int win = l.window;
                for (int c = 0; c < out.channels; ++c) {
                    for (int oy = 0; oy < out.height; ++oy) {
                        for (int ox = 0; ox < out.width; ++ox) {
                            // first maximum in row-major window order
                            auto best = static_cast<std::int32_t>((c * shape.height + oy * win) * shape.width + ox * win);
                            T best_v = cur[static_cast<std::size_t>(best)];
                            for (int dy = 0; dy < win; ++dy) {
                                for (int dx = 0; dx < win; ++dx) {
                                    const auto idx = static_cast<std::int32_t>(
                                        (c * shape.height + oy * win + dy) * shape.width + ox * win + dx);
                                    const T v = cur[static_cast<std::size_t>(idx)];
                                    const bool gt = v > best_v;
                                    best = gt ? idx : best;
                                    best_v = gt ? v : best_v;
                                }
                            }
                            const std::size_t o = (static_cast<std::size_t>(c) * out.height + oy) * out.width + ox;
                            next[o] = best_v;
                            winners[o] = best;
                        }
                    }
                }
                if (tape != nullptr) tape->argmax[i] = std::move(winners);
                break;
            }
            case LayerKind::Dense: {
                ConstMapMat<T> w(p, l.out_features, l.in_features);
                Eigen::Map<const Vec<T>> b(p + static_cast<std::size_t>(l.out_features) * l.in_features,
                                           l.out_features);
                Eigen::Map<const Vec<T>> x(cur.data(), l.in_features);
                Eigen::Map<Vec<T>> y(next.data(), l.out_features);
                y.noalias() = w * x + b;
                break;
            }
            case LayerKind::Sigmoid:
                for (std::size_t j = 0; j < cur.size(); ++j) next[j] = sigmoid(cur[j]);
                break;
        }
        if (tape != nullptr)
            tape->inputs[i] = std::move(cur);
        cur.swap(next);
        shape = out;
    }
    return cur;
}

template <typename T>
void backward(const ArchitectureSpec& arch, std::span<const T> params, const BasicTape<T>& tape,
              std::span<const T> grad_output, std::span<T> grad_params, std::vector<T>* grad_input) {
    if (grad_params.size() != arch.param_count()) throw InputError("gradient store does not match architecture");
    const auto offsets = arch.param_offsets();

    std::vector<Shape> shapes(tape.depth + 1);
    shapes[0] = arch.input;
    for (std::size_t i = 0; i < tape.depth; ++i) shapes[i + 1] = layer_output_shape(arch.layers[i], shapes[i]);
    if (grad_output.size() != shapes[tape.depth].size()) throw InputError("output gradient has the wrong size");

    std::vector<T> g(grad_output.begin(), grad_output.end());
    std::vector<T> gin;
    thread_local std::vector<T> scratch;
    for (std::size_t ii = tape.depth; ii-- > 0;) {
        const LayerSpec& l = arch.layers[ii];
        const Shape& in = shapes[ii];
        const std::vector<T>& x = tape.inputs[ii];
        const T* p = params.data() + offsets[ii];
        T* dp = grad_params.data() + offsets[ii];
        const bool need_input_grad = ii > 0 || grad_input != nullptr;
        gin.assign(in.size(), T(0));
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::size_t nw = static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
                conv_backward(l, in, p, x.data(), g.data(), dp, dp + nw, need_input_grad ? gin.data() : nullptr,
                              scratch);
                break;
            }
            case LayerKind::LeakyRelu: {
                const T slope = static_cast<T>(l.slope);
                const T* __restrict xv = x.data();
                const T* __restrict gv = g.data();
                T* __restrict out = gin.data();
                const std::size_t n = x.size();
                for (std::size_t j = 0; j < n; ++j) {
                    const T on = static_cast<T>(xv[j] > T(0));
                    out[j] = gv[j] * (slope + (T(1) - slope) * on);
                }
                break;
            }
            case LayerKind::MaxPool: {
                const auto& winners = tape.argmax[ii];
                for (std::size_t o = 0; o < winners.size(); ++o) gin[static_cast<std::size_t>(winners[o])] += g[o];
                break;
            }
            case LayerKind::Dense: {
                ConstMapMat<T> w(p, l.out_features, l.in_features);
                MapMat<T> dw(dp, l.out_features, l.in_features);
                Eigen::Map<Vec<T>> db(dp + static_cast<std::size_t>(l.out_features) * l.in_features, l.out_features);
                Eigen::Map<const Vec<T>> gy(g.data(), l.out_features);
                Eigen::Map<const Vec<T>> xv(x.data(), l.in_features);
                dw.noalias() += gy * xv.transpose();
                db += gy;
                if (need_input_grad) Eigen::Map<Vec<T>>(gin.data(), l.in_features).noalias() = w.transpose() * gy;
                break;
            }
            case LayerKind::Sigmoid:
                for (std::size_t j = 0; j < x.size(); ++j) {
                    const T sg = sigmoid(x[j]);
                    gin[j] = g[j] * sg * (T(1) - sg);
                }
                break;
        }
        g.swap(gin);
    }
    if (grad_input != nullptr) *grad_input = std::move(g);
}

void require_scalar_mlp(const ArchitectureSpec& arch) {
    for (const LayerSpec& l : arch.layers)
        if (l.kind != LayerKind::Dense && l.kind != LayerKind::LeakyRelu)
            throw ConfigError("critic must consist of dense and leaky-rectifier layers only");
    if (arch.layers.empty() || arch.layers.back().kind != LayerKind::Dense || arch.layers.back().out_features != 1)
        throw ConfigError("critic must end in a dense layer with one output");
}

namespace {

// Forward pass of a scalar MLP, recording the activation slope of every
// LeakyRelu unit (the local Jacobian of the piecewise-linear activation).
template <typename T>
T mlp_forward_slopes(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> x,
                     std::vector<std::vector<T>>& slopes) {
    const auto offsets = arch.param_offsets();
    slopes.assign(arch.layers.size(), {});
    std::vector<T> cur(x.begin(), x.end());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        if (l.kind == LayerKind::Dense) {
            const T* p = params.data() + offsets[i];
            ConstMapMat<T> w(p, l.out_features, l.in_features);
            Eigen::Map<const Vec<T>> b(p + static_cast<std::size_t>(l.out_features) * l.in_features, l.out_features);
            Vec<T> y = w * Eigen::Map<const Vec<T>>(cur.data(), l.in_features) + b;
            cur.assign(y.data(), y.data() + y.size());
        } else {
            const T slope = static_cast<T>(l.slope);
            slopes[i].resize(cur.size());
            for (std::size_t j = 0; j < cur.size(); ++j) {
                slopes[i][j] = cur[j] > T(0) ? T(1) : slope;
                cur[j] *= slopes[i][j];
            }
        }
    }
    return cur[0];
}

}  // namespace

template <typename T>
InputGradient<T> mlp_input_gradient(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> x) {
    require_scalar_mlp(arch);
    if (x.size() != arch.input.size()) throw InputError("critic input has the wrong dimension");
    std::vector<std::vector<T>> slopes;
    InputGradient<T> out;
    out.value = mlp_forward_slopes(arch, params, x, slopes);
    const auto offsets = arch.param_offsets();
    Vec<T> v = Vec<T>::Ones(1);
    for (std::size_t ii = arch.layers.size(); ii-- > 0;) {
        const LayerSpec& l = arch.layers[ii];
        if (l.kind == LayerKind::Dense) {
            ConstMapMat<T> w(params.data() + offsets[ii], l.out_features, l.in_features);
            v = (w.transpose() * v).eval();
        } else {
            v = v.cwiseProduct(Eigen::Map<const Vec<T>>(slopes[ii].data(), static_cast<Eigen::Index>(slopes[ii].size())));
        }
    }
    out.gradient.assign(v.data(), v.data() + v.size());
    return out;
}

template <typename T>
T gradient_penalty_accumulate(const ArchitectureSpec& arch, std::span<const T> params, std::span<const T> x, T coeff,
                              std::span<T> grad_params) {
    require_scalar_mlp(arch);
    if (x.size() != arch.input.size()) throw InputError("critic input has the wrong dimension");
    if (grad_params.size() != arch.param_count()) throw InputError("gradient store does not match architecture");
    std::vector<std::vector<T>> slopes;
    mlp_forward_slopes(arch, params, x, slopes);
    const auto offsets = arch.param_offsets();
    const std::size_t n = arch.layers.size();

    // Input gradient g = W_1^T D_1 W_2^T D_2 ... w_L, keeping the vector that
    // enters each dense layer from the output side.
    std::vector<Vec<T>> upstream(n);
    Vec<T> v = Vec<T>::Ones(1);
    for (std::size_t ii = n; ii-- > 0;) {
        const LayerSpec& l = arch.layers[ii];
        if (l.kind == LayerKind::Dense) {
            upstream[ii] = v;
            ConstMapMat<T> w(params.data() + offsets[ii], l.out_features, l.in_features);
            v = (w.transpose() * v).eval();
        } else {
            v = v.cwiseProduct(Eigen::Map<const Vec<T>>(slopes[ii].data(), static_cast<Eigen::Index>(slopes[ii].size())));
        }
    }
    const T norm = v.norm();
    const T penalty = coeff * (norm - T(1)) * (norm - T(1));
    if (norm == T(0)) return penalty;

    // Sweep forward with u = dP/d(vector on the input side of each factor).
    Vec<T> u = v * (T(2) * coeff * (norm - T(1)) / norm);
    for (std::size_t i = 0; i < n; ++i) {
        const LayerSpec& l = arch.layers[i];
        if (l.kind == LayerKind::Dense) {
            ConstMapMat<T> w(params.data() + offsets[i], l.out_features, l.in_features);
            MapMat<T> dw(grad_params.data() + offsets[i], l.out_features, l.in_features);
            dw.noalias() += upstream[i] * u.transpose();
            u = (w * u).eval();
        } else {
            u = u.cwiseProduct(Eigen::Map<const Vec<T>>(slopes[i].data(), static_cast<Eigen::Index>(slopes[i].size())));
        }
    }
    return penalty;
}

#define DAOBS_INSTANTIATE(T)                                                                                      \
    template std::vector<T> forward<T>(const ArchitectureSpec&, std::span<const T>, std::span<const T>,            \
                                       BasicTape<T>*, std::size_t);                                                \
    template void backward<T>(const ArchitectureSpec&, std::span<const T>, const BasicTape<T>&, std::span<const T>, \
                              std::span<T>, std::vector<T>*);                                                      \
    template InputGradient<T> mlp_input_gradient<T>(const ArchitectureSpec&, std::span<const T>,                   \
                                                    std::span<const T>);                                           \
    template T gradient_penalty_accumulate<T>(const ArchitectureSpec&, std::span<const T>, std::span<const T>, T,  \
                                              std::span<T>);

DAOBS_INSTANTIATE(float)
DAOBS_INSTANTIATE(double)

#undef DAOBS_INSTANTIATE

}  // namespace daobs
