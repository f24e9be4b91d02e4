#include "daobs/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "daobs/errors.hpp"
#include "daobs/evaluation.hpp"
#include "daobs/random.hpp"

namespace daobs {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;   // "shuf"
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;     // "nois"
constexpr std::uint64_t kInitEncStream = 0x656e6331;   // "enc1"
constexpr std::uint64_t kInitOnnStream = 0x6f6e6e31;   // "onn1"
constexpr std::uint64_t kFitStream = 0x66697431;       // "fit1"

void check_label(std::uint8_t y) {
    if (y > 1) throw InputError("label " + std::to_string(y) + " is not binary");
}

template <typename T>
T logistic(T z) {
    return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(cfg.adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (cfg.validation_period < 1) throw ConfigError("validation period must be at least 1");
}

}  // namespace

std::string TrainReport::to_json_lines() const {
    std::ostringstream out;
    for (const EpochLog& e : epochs) {
        nlohmann::json j{{"epoch", e.epoch}, {"loss", e.loss}};
        j["val_auc"] = e.val_auc ? nlohmann::json(*e.val_auc) : nlohmann::json(nullptr);
        out << j.dump() << '\n';
    }
    out << nlohmann::json{{"selected_epoch", selected_epoch}, {"selected_val_auc", selected_val_auc}}.dump() << '\n';
    return out.str();
}

double bce_from_probabilities(std::span<const double> p, std::span<const std::uint8_t> labels, double eps) {
    if (p.size() != labels.size() || p.empty()) throw InputError("probabilities and labels must be nonempty and aligned");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        check_label(labels[i]);
        const double q = std::clamp(p[i], eps, 1.0 - eps);
        sum += labels[i] == 1 ? -std::log(q) : -std::log(1.0 - q);
    }
    return sum / static_cast<double>(p.size());
}

double bce_loss(const ObserverParams& enc, const ObserverParams& onn, std::span<const ImageSample> batch) {
    std::vector<double> p;
    std::vector<std::uint8_t> y;
    for (const ImageSample& s : batch) {
        check_label(s.label);
        p.push_back(observer_forward(enc, onn, s).t);
        y.push_back(s.label);
    }
    return bce_from_probabilities(p, y);
}

template <typename T>
T bce_loss_and_gradient(const ArchitectureSpec& enc_arch, std::span<const T> enc_params,
                        const ArchitectureSpec& onn_arch, std::span<const T> onn_params,
                        const std::vector<std::vector<T>>& inputs, std::span<const std::uint8_t> labels,
                        std::span<T> grad_enc, std::span<T> grad_onn, double eps) {
    if (inputs.size() != labels.size() || inputs.empty()) throw InputError("batch inputs and labels must align");
    const T inv_n = T(1) / static_cast<T>(inputs.size());
    BasicTape<T> enc_tape;
    BasicTape<T> onn_tape;
    std::vector<T> grad_features;
    T loss = T(0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        check_label(labels[i]);
        const std::vector<T> features = forward<T>(enc_arch, enc_params, inputs[i], &enc_tape);
        const std::vector<T> logit = forward<T>(onn_arch, onn_params, features, &onn_tape, onn_arch.logit_depth());
        const T p = logistic(logit[0]);
        const T lo = static_cast<T>(eps);
        const T hi = T(1) - static_cast<T>(eps);
        const T q = std::clamp(p, lo, hi);
        const bool y = labels[i] == 1;
        loss -= (y ? std::log(q) : std::log(T(1) - q)) * inv_n;
        // d/dz of the clamped loss; zero where the clamp is active.
        const T dz = (p > lo && p < hi) ? (p - (y ? T(1) : T(0))) * inv_n : T(0);
        const T g[1] = {dz};
        backward<T>(onn_arch, onn_params, onn_tape, g, grad_onn, &grad_features);
        backward<T>(enc_arch, enc_params, enc_tape, grad_features, grad_enc, nullptr);
    }
    return loss;
}

template float bce_loss_and_gradient<float>(const ArchitectureSpec&, std::span<const float>, const ArchitectureSpec&,
                                            std::span<const float>, const std::vector<std::vector<float>>&,
                                            std::span<const std::uint8_t>, std::span<float>, std::span<float>, double);
template double bce_loss_and_gradient<double>(const ArchitectureSpec&, std::span<const double>,
                                              const ArchitectureSpec&, std::span<const double>,
                                              const std::vector<std::vector<double>>&, std::span<const std::uint8_t>,
                                              std::span<double>, std::span<double>, double);

TrainedObserver train_observer(ObserverParams enn, ObserverParams onn, const BatchFn& next_batch,
                               std::size_t batches_per_epoch, std::span<const ImageSample> val,
                               const TrainConfig& cfg) {
    validate(cfg);
    check_compatible(enn, onn);
    if (val.empty()) throw InputError("validation set is empty");

    Adam enn_opt(enn.weights.size(), cfg.adam);
    Adam onn_opt(onn.weights.size(), cfg.adam);
    std::vector<float> grad_enn(enn.weights.size());
    std::vector<float> grad_onn(onn.weights.size());
    std::vector<std::vector<float>> images;
    std::vector<std::uint8_t> labels;

    TrainedObserver best{enn, onn, {}};
    best.report.selected_val_auc = empirical_auc(score_set(enn, onn, val));
    best.report.epochs.push_back({0, std::nan(""), best.report.selected_val_auc});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            next_batch(epoch, b, images, labels);
            for (auto& img : images) img = standardize(enn, img);
            std::fill(grad_enn.begin(), grad_enn.end(), 0.0F);
            std::fill(grad_onn.begin(), grad_onn.end(), 0.0F);
            const float loss = bce_loss_and_gradient<float>(enn.arch, enn.weights, onn.arch, onn.weights, images,
                                                            labels, grad_enn, grad_onn);
            if (!std::isfinite(loss))
                throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(b));
            enn_opt.step(enn.weights, grad_enn);
            onn_opt.step(onn.weights, grad_onn);
            loss_sum += loss;
        }
        EpochLog log{epoch, loss_sum / static_cast<double>(batches_per_epoch), std::nullopt};
        if (epoch % cfg.validation_period == 0 || epoch == cfg.max_epochs) {
            const double auc = empirical_auc(score_set(enn, onn, val));
            log.val_auc = auc;
            if (auc > best.report.selected_val_auc) {
                best.enn = enn;
                best.onn = onn;
                best.report.selected_val_auc = auc;
                best.report.selected_epoch = epoch;
            }
            if (cfg.progress) {
                char line[128];
                std::snprintf(line, sizeof line, "epoch %d loss %.4f val_auc %.4f", epoch, log.loss, auc);
                cfg.progress(line);
            }
        }
        best.report.epochs.push_back(log);
    }
    const std::string tag = ">epoch:" + std::to_string(best.report.selected_epoch);
    best.enn.lineage += tag;
    best.onn.lineage += tag;
    return best;
}

namespace {

std::pair<ObserverParams, ObserverParams> fresh_observer(const GridSpec& grid, const TrainConfig& cfg) {
    ObserverParams enn = init_params(encoder_spec(Role::ENN, grid, cfg.encoder), derive_seed(cfg.seed, {kInitEncStream}));
    const auto features = static_cast<int>(enn.arch.output_shape().size());
    ObserverParams onn = init_params(onn_spec(features, cfg.heads), derive_seed(cfg.seed, {kInitOnnStream}));
    return {std::move(enn), std::move(onn)};
}

}  // namespace

TrainedObserver train_source_observer(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
    validate(cfg);
    if (train.samples.empty()) throw InputError("training set is empty");
    if (!(train.meta.config.grid == val.meta.config.grid)) throw InputError("training and validation grids differ");
    auto [enn, onn] = fresh_observer(train.meta.config.grid, cfg);
    enn.input = fit_standardization(train.samples);

    const std::size_t n = train.samples.size();
    const auto bsz = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t batches = (n + bsz - 1) / bsz;
    std::vector<std::size_t> order(n);
    int order_epoch = -1;
    BatchFn next = [&](int epoch, std::size_t index, std::vector<std::vector<float>>& images,
                       std::vector<std::uint8_t>& labels) {
        if (epoch != order_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng = make_rng(cfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
            std::shuffle(order.begin(), order.end(), rng);
            order_epoch = epoch;
        }
        images.clear();
        labels.clear();
        for (std::size_t k = index * bsz; k < std::min(n, (index + 1) * bsz); ++k) {
            images.push_back(train.samples[order[k]].pixels);
            labels.push_back(train.samples[order[k]].label);
        }
    };
    TrainedObserver out = train_observer(std::move(enn), std::move(onn), next, batches, val.samples, cfg);
    out.enn.lineage += ">source:" + train.meta.config.domain_tag;
    return out;
}

void semi_online_batch(const std::vector<Image>& backgrounds, const Image& signal, const NoiseParams& noise,
                       std::uint64_t seed, int epoch, std::size_t index, int batch_size,
                       std::vector<std::vector<float>>& images, std::vector<std::uint8_t>& labels) {
    const std::size_t n = backgrounds.size();
    const std::size_t per_batch = std::max<std::size_t>(1, static_cast<std::size_t>(batch_size) / 2);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Rng noise_rng = make_rng(seed, {kNoiseStream, static_cast<std::uint64_t>(epoch), index});
    images.clear();
    labels.clear();
    for (std::size_t k = index * per_batch; k < std::min(n, (index + 1) * per_batch); ++k) {
        const Image& b = backgrounds[order[k]];
        images.push_back(add_noise(b, noise, noise_rng));
        labels.push_back(0);
        Image with_signal = b;
        for (std::size_t m = 0; m < with_signal.size(); ++m) with_signal[m] += signal[m];
        images.push_back(add_noise(with_signal, noise, noise_rng));
        labels.push_back(1);
    }
}

TrainedObserver train_target_observer_semi_online(const std::vector<Image>& backgrounds, const Image& signal,
                                                  const NoiseParams& noise, const Dataset& val,
                                                  const TrainConfig& cfg) {
    validate(cfg);
    if (backgrounds.empty()) throw InputError("background ensemble is empty");
    if (signal.size() != backgrounds.front().size()) throw InputError("signal and background sizes differ");
    auto [enn, onn] = fresh_observer(val.meta.config.grid, cfg);

    // Standardization from one noisy realization per background, alternating hypotheses.
    {
        Rng rng = make_rng(cfg.seed, {kFitStream});
        std::vector<ImageSample> sample(backgrounds.size());
        for (std::size_t i = 0; i < backgrounds.size(); ++i) {
            Image x = backgrounds[i];
            if (i % 2 == 1)
                for (std::size_t m = 0; m < x.size(); ++m) x[m] += signal[m];
            sample[i].pixels = add_noise(x, noise, rng);
        }
        enn.input = fit_standardization(sample);
    }

    const std::size_t per_batch = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size) / 2);
    const std::size_t batches = (backgrounds.size() + per_batch - 1) / per_batch;
    BatchFn next = [&](int epoch, std::size_t index, std::vector<std::vector<float>>& images,
                       std::vector<std::uint8_t>& labels) {
        semi_online_batch(backgrounds, signal, noise, cfg.seed, epoch, index, cfg.batch_size, images, labels);
    };
    TrainedObserver out = train_observer(std::move(enn), std::move(onn), next, batches, val.samples, cfg);
    out.enn.lineage += ">semi-online:" + val.meta.config.domain_tag;
    return out;
}

}  // namespace daobs
