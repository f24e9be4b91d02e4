#pragma once

// Unsupervised adversarial adaptation: a domain adaptation model (DAM, an
// encoder) is trained so that a Wasserstein critic (DCM) cannot tell its
// target-image features from the frozen source encoder's source-image features.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daobs/imaging.hpp"
#include "daobs/observers.hpp"
#include "daobs/optimizer.hpp"
#include "daobs/random.hpp"

namespace daobs {

enum class LipschitzMode { GradientPenalty, WeightClipping };
std::string to_string(LipschitzMode m);
LipschitzMode lipschitz_mode_from_string(const std::string& name);

struct AdaptConfig {
    int n_critic = 5;
    LipschitzMode mode = LipschitzMode::GradientPenalty;
    double penalty_weight = 10.0;
    double clip = 0.01;
    AdamOptions dam_adam{1e-5, 0.5, 0.9, 1e-8};
    AdamOptions dcm_adam{1e-4, 0.5, 0.9, 1e-8};
    int batch_size = 64;
    int iterations = 1000;
    int validation_period = 100;
    std::uint64_t seed = 1;
    /// Start the DAM from the trained ENN weights (otherwise from a fresh initialization).
    bool warm_start = true;
    HeadOptions heads;
    /// Called with one line per validation; not part of the configuration.
    std::function<void(const std::string&)> progress;
};

void validate(const AdaptConfig& cfg);

/// Pixel views with no label attached; the adversarial loop only ever sees these.
using ImageView = std::span<const float>;
std::vector<ImageView> unlabeled_view(std::span<const ImageSample> samples);

/// A network together with its optimizer state.
struct TrainableNet {
    ObserverParams params;
    Adam optimizer;

    TrainableNet(ObserverParams p, const AdamOptions& opt) : params(std::move(p)), optimizer(params.weights.size(), opt) {}
};

/// mean critic(src_features) - mean critic(tgt_features).
double wasserstein_estimate(const ObserverParams& dcm, std::span<const FeatureVector> src,
                            std::span<const FeatureVector> tgt);

/// Same, encoding source images with `enn` and target images with `dam`.
double wasserstein_estimate(const ObserverParams& dcm, const ObserverParams& enn, const ObserverParams& dam,
                            std::span<const ImageView> src, std::span<const ImageView> tgt);

/// lambda * mean over samples of (||grad_x critic(x_i)|| - 1)^2 at x_i = e_i src_i + (1 - e_i) tgt_i.
/// Adds its parameter gradient into `grad` when non-empty.
double gradient_penalty(const ObserverParams& dcm, std::span<const FeatureVector> src,
                        std::span<const FeatureVector> tgt, std::span<const double> mix, double lambda,
                        std::span<float> grad = {});

struct CriticStepStats {
    double wasserstein = 0.0;
    double penalty = 0.0;
};

/// One ascent step of the critic on the Wasserstein estimate (minimizing
/// -estimate + penalty), or one step followed by weight clipping.
CriticStepStats critic_step(TrainableNet& dcm, std::span<const FeatureVector> src, std::span<const FeatureVector> tgt,
                            const AdaptConfig& cfg, Rng& rng);

/// Image-level variant: encodes `src` with `enn` and `tgt` with `dam` first.
CriticStepStats critic_step(TrainableNet& dcm, const ObserverParams& enn, const ObserverParams& dam,
                            std::span<const ImageView> src, std::span<const ImageView> tgt, const AdaptConfig& cfg,
                            Rng& rng);

/// DAM objective on a target batch: -mean critic(encode(dam, tgt)).
double generator_objective(const ObserverParams& dam, const ObserverParams& dcm, std::span<const ImageView> tgt);

/// One descent step of the DAM on the generator objective; the critic is untouched.
/// Returns the objective before the step.
double dam_step(TrainableNet& dam, const ObserverParams& dcm, std::span<const ImageView> tgt);

struct AdaptLog {
    int iteration = 0;
    double wasserstein = 0.0;
    std::optional<double> val_auc;
};

struct AdaptReport {
    std::vector<AdaptLog> iterations;
    /// Generator iteration whose DAM was kept (0 = initialization).
    int selected_iteration = 0;
    double selected_val_auc = 0.0;

    /// One JSON object per line: {"iteration", "wasserstein_estimate", "val_auc"}.
    [[nodiscard]] std::string to_json_lines() const;
};

struct AdaptResult {
    ObserverParams dam;
    ObserverParams dcm;
    AdaptReport report;
};

/// Alternates n_critic critic steps with one DAM step. Labels of `tgt_val` are
/// used only to score the composed observer (DAM, ONN) for checkpoint selection.
AdaptResult train_dam(std::span<const ImageView> src, std::span<const ImageView> tgt, const ObserverParams& enn,
                      const ObserverParams& onn, std::span<const ImageSample> tgt_val, const AdaptConfig& cfg);

}  // namespace daobs
