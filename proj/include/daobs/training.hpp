#pragma once

// Supervised training of an encoder + observation network by cross-entropy,
// with validation-AUC model selection. Used for the source observer and for
// the reference observer trained on labeled target data with on-the-fly noise.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daobs/imaging.hpp"
#include "daobs/observers.hpp"
#include "daobs/optimizer.hpp"

namespace daobs {

inline constexpr double kProbabilityClamp = 1e-7;

struct TrainConfig {
    int batch_size = 64;
    AdamOptions adam{1e-3, 0.9, 0.999, 1e-8};
    int max_epochs = 8;
    /// Validate (and consider the weights for selection) every this many epochs.
    int validation_period = 1;
    std::uint64_t seed = 1;
    EncoderOptions encoder;
    HeadOptions heads;
    /// Called with one line per validated epoch; not part of the configuration.
    std::function<void(const std::string&)> progress;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> val_auc;
};

struct TrainReport {
    std::vector<EpochLog> epochs;
    /// Epoch whose weights were kept (argmax validation AUC; 0 = initialization).
    int selected_epoch = 0;
    double selected_val_auc = 0.0;

    /// One JSON object per line: {"epoch", "loss", "val_auc"}.
    [[nodiscard]] std::string to_json_lines() const;
};

struct TrainedObserver {
    ObserverParams enn;
    ObserverParams onn;
    TrainReport report;
};

/// Mean binary cross-entropy over p clamped to [eps, 1 - eps]. Throws InputError on non-binary labels.
double bce_from_probabilities(std::span<const double> p, std::span<const std::uint8_t> labels,
                              double eps = kProbabilityClamp);

/// Cross-entropy of observer (enc, onn) over a labeled batch.
double bce_loss(const ObserverParams& enc, const ObserverParams& onn, std::span<const ImageSample> batch);

/// Loss and analytic gradients for already-standardized inputs. Gradients are
/// accumulated into grad_enc / grad_onn. Instantiated for float and double.
template <typename T>
T bce_loss_and_gradient(const ArchitectureSpec& enc_arch, std::span<const T> enc_params,
                        const ArchitectureSpec& onn_arch, std::span<const T> onn_params,
                        const std::vector<std::vector<T>>& inputs, std::span<const std::uint8_t> labels,
                        std::span<T> grad_enc, std::span<T> grad_onn, double eps = kProbabilityClamp);

/// Fills `images`/`labels` with batch `index` of `epoch`.
using BatchFn = std::function<void(int epoch, std::size_t index, std::vector<std::vector<float>>& images,
                                   std::vector<std::uint8_t>& labels)>;

/// Generic loop shared by both training modes. `val` selects the kept weights.
TrainedObserver train_observer(ObserverParams enn, ObserverParams onn, const BatchFn& next_batch,
                               std::size_t batches_per_epoch, std::span<const ImageSample> val,
                               const TrainConfig& cfg);

/// Source observer on a fixed labeled dataset; input standardization is fitted on `train`.
TrainedObserver train_source_observer(const Dataset& train, const Dataset& val, const TrainConfig& cfg);

/// Reference observer trained on target data: every minibatch takes background
/// indices from `backgrounds` and draws fresh noise for an H0 and an H1 image of each.
TrainedObserver train_target_observer_semi_online(const std::vector<Image>& backgrounds, const Image& signal,
                                                  const NoiseParams& noise, const Dataset& val,
                                                  const TrainConfig& cfg);

/// The images the semi-online loop uses for batch `index` of `epoch`; exposed for tests.
void semi_online_batch(const std::vector<Image>& backgrounds, const Image& signal, const NoiseParams& noise,
                       std::uint64_t seed, int epoch, std::size_t index, int batch_size,
                       std::vector<std::vector<float>>& images, std::vector<std::uint8_t>& labels);

}  // namespace daobs
