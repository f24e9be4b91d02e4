#pragma once

// The four network roles: encoder (ENN), observation network (ONN), domain
// adaptation model (DAM, an encoder with the ENN architecture) and domain
// critic (DCM). An observer is an encoder followed by the ONN.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "daobs/imaging.hpp"
#include "daobs/network.hpp"

namespace daobs {

struct EncoderOptions {
    int blocks = 7;
    int channels = 8;
    int kernel = 3;
    int stride = 1;
    double slope = 0.2;
    int pool = 4;
    friend bool operator==(const EncoderOptions&, const EncoderOptions&) = default;
};

struct HeadOptions {
    int onn_hidden = 64;
    std::vector<int> critic_hidden{64, 64};
    double slope = 0.2;
    friend bool operator==(const HeadOptions&, const HeadOptions&) = default;
};

/// `blocks` x (conv + leaky rectifier), then one max-pool. `role` is ENN or DAM.
ArchitectureSpec encoder_spec(Role role, const GridSpec& grid, const EncoderOptions& opt);
/// Dense + leaky rectifier, dense to one logit, sigmoid.
ArchitectureSpec onn_spec(int features, const HeadOptions& opt);
/// Dense/leaky-rectifier stack ending in one unbounded output.
ArchitectureSpec dcm_spec(int features, const HeadOptions& opt);

/// Affine standardization applied to raw pixels before the first encoder layer.
struct InputTransform {
    float offset = 0.0F;
    float scale = 1.0F;
    friend bool operator==(const InputTransform&, const InputTransform&) = default;
};

/// Global mean / standard deviation over every pixel of the given samples.
InputTransform fit_standardization(std::span<const ImageSample> samples);

struct ObserverParams {
    ArchitectureSpec arch;
    std::vector<float> weights;
    InputTransform input;
    /// Provenance string carried into checkpoints, e.g. "init:1234>train-source".
    std::string lineage;

    [[nodiscard]] std::span<const float> view() const { return weights; }
    [[nodiscard]] Role role() const { return arch.role; }
};

/// Fan-in scaled normal initialization; biases start at zero.
ObserverParams init_params(const ArchitectureSpec& arch, std::uint64_t seed);

/// Same weights reinterpreted under another role (ENN -> DAM warm start).
ObserverParams clone_as(const ObserverParams& p, Role role);

using FeatureVector = std::vector<float>;

struct TestStatistic {
    double logit = 0.0;
    /// p(H1 | g), sigmoid(logit).
    double t = 0.5;
};

/// Pixels after the encoder's input standardization.
std::vector<float> standardize(const ObserverParams& enc, std::span<const float> pixels);

FeatureVector encode(const ObserverParams& enc, std::span<const float> pixels);
FeatureVector encode(const ObserverParams& enc, const ImageSample& img);
TestStatistic classify(const ObserverParams& onn, std::span<const float> features);
TestStatistic observer_forward(const ObserverParams& enc, const ObserverParams& onn, const ImageSample& img);
double critic_score(const ObserverParams& dcm, std::span<const float> features);

/// Throws ConfigError unless encoder output, ONN input and critic input dimensions agree.
void check_compatible(const ObserverParams& enc, const ObserverParams& onn);
void check_critic_compatible(const ObserverParams& enc, const ObserverParams& dcm);

/// Stable 64-bit content hash of architecture, transform and weights.
std::uint64_t weights_hash(const ObserverParams& p);

}  // namespace daobs
