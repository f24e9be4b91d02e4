#include "daobs/observers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "daobs/errors.hpp"
#include "daobs/hashing.hpp"
#include "daobs/random.hpp"

namespace daobs {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;  // "init"

void check_dim(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw InputError(std::string(what) + ": dimension " + std::to_string(got) + ", expected " +
                         std::to_string(want));
}

}  // namespace

ArchitectureSpec encoder_spec(Role role, const GridSpec& grid, const EncoderOptions& opt) {
    if (role != Role::ENN && role != Role::DAM) throw ConfigError("encoder role must be ENN or DAM");
    if (opt.blocks < 1) throw ConfigError("encoder needs at least one convolution block");
    ArchitectureSpec a;
    a.role = role;
    a.input = {1, grid.height, grid.width};
    int channels = 1;
    for (int b = 0; b < opt.blocks; ++b) {
        LayerSpec conv;
        conv.kind = LayerKind::Conv;
        conv.in_channels = channels;
        conv.out_channels = opt.channels;
        conv.kernel = opt.kernel;
        conv.stride = opt.stride;
        a.layers.push_back(conv);
        LayerSpec act;
        act.kind = LayerKind::LeakyRelu;
        act.slope = opt.slope;
        a.layers.push_back(act);
        channels = opt.channels;
    }
    LayerSpec pool;
    pool.kind = LayerKind::MaxPool;
    pool.window = opt.pool;
    a.layers.push_back(pool);
    a.validate();
    return a;
}

namespace {

LayerSpec dense(int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in_features = in;
    l.out_features = out;
    return l;
}

LayerSpec leaky(double slope) {
    LayerSpec l;
    l.kind = LayerKind::LeakyRelu;
    l.slope = slope;
    return l;
}

}  // namespace

ArchitectureSpec onn_spec(int features, const HeadOptions& opt) {
    ArchitectureSpec a;
    a.role = Role::ONN;
    a.input = {1, 1, features};
    a.layers = {dense(features, opt.onn_hidden), leaky(opt.slope), dense(opt.onn_hidden, 1)};
    LayerSpec sig;
    sig.kind = LayerKind::Sigmoid;
    a.layers.push_back(sig);
    a.validate();
    return a;
}

ArchitectureSpec dcm_spec(int features, const HeadOptions& opt) {
    ArchitectureSpec a;
    a.role = Role::DCM;
    a.input = {1, 1, features};
    int width = features;
    for (int h : opt.critic_hidden) {
        a.layers.push_back(dense(width, h));
        a.layers.push_back(leaky(opt.slope));
        width = h;
    }
    a.layers.push_back(dense(width, 1));
    a.validate();
    require_scalar_mlp(a);
    return a;
}

InputTransform fit_standardization(std::span<const ImageSample> samples) {
    if (samples.empty()) throw InputError("cannot fit standardization on an empty set");
    double sum = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (const ImageSample& s : samples) {
        for (float v : s.pixels) {
            sum += v;
            sq += static_cast<double>(v) * v;
        }
        n += s.pixels.size();
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    return {static_cast<float>(mean), static_cast<float>(1.0 / sd)};
}

ObserverParams init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
    arch.validate();
    ObserverParams p;
    p.arch = arch;
    p.weights.assign(arch.param_count(), 0.0F);
    p.lineage = "init:" + std::to_string(seed);
    const auto offsets = arch.param_offsets();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& l = arch.layers[i];
        std::size_t fan_in = 0;
        std::size_t count = 0;
        if (l.kind == LayerKind::Conv) {
            fan_in = static_cast<std::size_t>(l.in_channels) * l.kernel * l.kernel;
            count = fan_in * static_cast<std::size_t>(l.out_channels);
        } else if (l.kind == LayerKind::Dense) {
            fan_in = static_cast<std::size_t>(l.in_features);
            count = fan_in * static_cast<std::size_t>(l.out_features);
        } else {
            continue;
        }
        // He gain for a following leaky rectifier, unit gain otherwise.
        double gain = 1.0;
        if (i + 1 < arch.layers.size() && arch.layers[i + 1].kind == LayerKind::LeakyRelu) {
            const double a = arch.layers[i + 1].slope;
            gain = 2.0 / (1.0 + a * a);
        }
        Rng rng = make_rng(seed, {kInitStream, static_cast<std::uint64_t>(i)});
        std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
        for (std::size_t k = 0; k < count; ++k) p.weights[offsets[i] + k] = static_cast<float>(normal(rng));
    }
    return p;
}

ObserverParams clone_as(const ObserverParams& p, Role role) {
    ObserverParams out = p;
    out.arch.role = role;
    out.lineage = p.lineage + ">as:" + to_string(role);
    return out;
}

std::vector<float> standardize(const ObserverParams& enc, std::span<const float> pixels) {
    std::vector<float> x(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) x[i] = (pixels[i] - enc.input.offset) * enc.input.scale;
    return x;
}

FeatureVector encode(const ObserverParams& enc, std::span<const float> pixels) {
    if (enc.role() != Role::ENN && enc.role() != Role::DAM) throw InputError("encode needs an ENN or DAM");
    check_dim(pixels.size(), enc.arch.input.size(), "encoder input");
    const std::vector<float> x = standardize(enc, pixels);
    return forward<float>(enc.arch, enc.weights, x);
}

FeatureVector encode(const ObserverParams& enc, const ImageSample& img) { return encode(enc, img.pixels); }

TestStatistic classify(const ObserverParams& onn, std::span<const float> features) {
    if (onn.role() != Role::ONN) throw InputError("classify needs an ONN");
    check_dim(features.size(), onn.arch.input.size(), "observation network input");
    const auto logit = forward<float>(onn.arch, onn.weights, features, nullptr, onn.arch.logit_depth());
    TestStatistic t;
    t.logit = logit[0];
    // Open interval even where the logistic saturates in double precision.
    constexpr double kEdge = 1e-15;
    t.t = std::clamp(1.0 / (1.0 + std::exp(-t.logit)), kEdge, 1.0 - kEdge);
    return t;
}

TestStatistic observer_forward(const ObserverParams& enc, const ObserverParams& onn, const ImageSample& img) {
    return classify(onn, encode(enc, img));
}

double critic_score(const ObserverParams& dcm, std::span<const float> features) {
    if (dcm.role() != Role::DCM) throw InputError("critic_score needs a DCM");
    check_dim(features.size(), dcm.arch.input.size(), "critic input");
    return forward<float>(dcm.arch, dcm.weights, features)[0];
}

void check_compatible(const ObserverParams& enc, const ObserverParams& onn) {
    if (enc.arch.output_shape().size() != onn.arch.input.size())
        throw ConfigError("encoder emits " + std::to_string(enc.arch.output_shape().size()) +
                          " features but the observation network expects " +
                          std::to_string(onn.arch.input.size()));
}

void check_critic_compatible(const ObserverParams& enc, const ObserverParams& dcm) {
    if (enc.arch.output_shape().size() != dcm.arch.input.size())
        throw ConfigError("encoder emits " + std::to_string(enc.arch.output_shape().size()) +
                          " features but the critic expects " + std::to_string(dcm.arch.input.size()));
}

std::uint64_t weights_hash(const ObserverParams& p) {
    Fnv1a64 h;
    h.update(to_string(p.arch.role));
    for (const LayerSpec& l : p.arch.layers) {
        h.update(to_string(l.kind));
        const int dims[] = {l.in_channels, l.out_channels, l.kernel, l.stride, l.window, l.in_features, l.out_features};
        h.update_values(std::span<const int>(dims));
    }
    const float t[] = {p.input.offset, p.input.scale};
    h.update_values(std::span<const float>(t));
    h.update_values(std::span<const float>(p.weights));
    return h.digest();
}

}  // namespace daobs
