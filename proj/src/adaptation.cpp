#include "daobs/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "daobs/errors.hpp"
#include "daobs/evaluation.hpp"

namespace daobs {

namespace {

constexpr std::uint64_t kIterStream = 0x69746572;    // "iter"
constexpr std::uint64_t kDcmInitStream = 0x64636d31; // "dcm1"
constexpr std::uint64_t kDamInitStream = 0x64616d31; // "dam1"

void require_batches(std::size_t src, std::size_t tgt) {
    if (src == 0 || tgt == 0) throw InputError("source and target batches must be nonempty");
}

double mean_critic(const ObserverParams& dcm, std::span<const FeatureVector> f) {
    double sum = 0.0;
    for (const FeatureVector& x : f) sum += critic_score(dcm, x);
    return sum / static_cast<double>(f.size());
}

std::vector<FeatureVector> encode_all(const ObserverParams& enc, std::span<const ImageView> images) {
    std::vector<FeatureVector> out;
    out.reserve(images.size());
    for (ImageView v : images) out.push_back(encode(enc, v));
    return out;
}

std::size_t draw_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

}  // namespace

std::string to_string(LipschitzMode m) {
    return m == LipschitzMode::GradientPenalty ? "gradient_penalty" : "weight_clipping";
}

LipschitzMode lipschitz_mode_from_string(const std::string& name) {
    if (name == "gradient_penalty") return LipschitzMode::GradientPenalty;
    if (name == "weight_clipping") return LipschitzMode::WeightClipping;
    throw ConfigError("unknown Lipschitz mode '" + name + "'");
}

void validate(const AdaptConfig& cfg) {
    if (cfg.n_critic < 1) throw ConfigError("n_critic must be at least 1");
    if (cfg.mode == LipschitzMode::GradientPenalty && !(cfg.penalty_weight > 0.0))
        throw ConfigError("gradient penalty weight must be positive");
    if (cfg.mode == LipschitzMode::WeightClipping && !(cfg.clip > 0.0))
        throw ConfigError("clipping bound must be positive");
    if (cfg.batch_size < 1) throw ConfigError("adaptation batch size must be at least 1");
    if (cfg.iterations < 0) throw ConfigError("iteration count must be nonnegative");
    if (cfg.validation_period < 1) throw ConfigError("validation period must be at least 1");
    if (!(cfg.dam_adam.learning_rate >= 0.0) || !(cfg.dcm_adam.learning_rate >= 0.0))
        throw ConfigError("learning rates must be nonnegative");
}

std::vector<ImageView> unlabeled_view(std::span<const ImageSample> samples) {
    std::vector<ImageView> out;
    out.reserve(samples.size());
    for (const ImageSample& s : samples) out.emplace_back(s.pixels);
    return out;
}

double wasserstein_estimate(const ObserverParams& dcm, std::span<const FeatureVector> src,
                            std::span<const FeatureVector> tgt) {
    require_batches(src.size(), tgt.size());
    return mean_critic(dcm, src) - mean_critic(dcm, tgt);
}

double wasserstein_estimate(const ObserverParams& dcm, const ObserverParams& enn, const ObserverParams& dam,
                            std::span<const ImageView> src, std::span<const ImageView> tgt) {
    require_batches(src.size(), tgt.size());
    check_critic_compatible(enn, dcm);
    check_critic_compatible(dam, dcm);
    const auto fs = encode_all(enn, src);
    const auto ft = encode_all(dam, tgt);
    return wasserstein_estimate(dcm, fs, ft);
}

double gradient_penalty(const ObserverParams& dcm, std::span<const FeatureVector> src,
                        std::span<const FeatureVector> tgt, std::span<const double> mix, double lambda,
                        std::span<float> grad) {
    if (src.size() != tgt.size() || src.size() != mix.size() || src.empty())
        throw InputError("gradient penalty needs aligned, nonempty source/target/mix batches");
    std::vector<float> scratch;
    if (grad.empty()) {
        scratch.assign(dcm.weights.size(), 0.0F);
        grad = scratch;
    }
    const auto coeff = static_cast<float>(lambda / static_cast<double>(src.size()));
    double total = 0.0;
    std::vector<float> x;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].size() != tgt[i].size()) throw InputError("feature dimensions differ");
        x.resize(src[i].size());
        const double e = mix[i];
        for (std::size_t k = 0; k < x.size(); ++k)
            x[k] = static_cast<float>(e * src[i][k] + (1.0 - e) * tgt[i][k]);
        total += gradient_penalty_accumulate<float>(dcm.arch, dcm.weights, x, coeff, grad);
    }
    return total;
}

CriticStepStats critic_step(TrainableNet& dcm, std::span<const FeatureVector> src, std::span<const FeatureVector> tgt,
                            const AdaptConfig& cfg, Rng& rng) {
    require_batches(src.size(), tgt.size());
    if (src.size() != tgt.size()) throw InputError("critic step needs equal source and target batch sizes");
    const ObserverParams& p = dcm.params;
    std::vector<float> grad(p.weights.size(), 0.0F);
    const float inv_n = 1.0F / static_cast<float>(src.size());
    Tape tape;
    CriticStepStats stats;
    double sum_src = 0.0;
    double sum_tgt = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        sum_src += forward<float>(p.arch, p.weights, src[i], &tape)[0];
        const float gs[1] = {-inv_n};
        backward<float>(p.arch, p.weights, tape, gs, grad);
        sum_tgt += forward<float>(p.arch, p.weights, tgt[i], &tape)[0];
        const float gt[1] = {inv_n};
        backward<float>(p.arch, p.weights, tape, gt, grad);
    }
    stats.wasserstein = (sum_src - sum_tgt) / static_cast<double>(src.size());
    if (cfg.mode == LipschitzMode::GradientPenalty) {
        std::vector<double> mix(src.size());
        for (double& e : mix) e = uniform01(rng);
        stats.penalty = gradient_penalty(p, src, tgt, mix, cfg.penalty_weight, grad);
    }
    if (!std::isfinite(stats.wasserstein) || !std::isfinite(stats.penalty))
        throw TrainingError("critic objective became non-finite");
    dcm.optimizer.step(dcm.params.weights, grad);
    if (cfg.mode == LipschitzMode::WeightClipping) {
        const auto c = static_cast<float>(cfg.clip);
        for (float& w : dcm.params.weights) w = std::clamp(w, -c, c);
    }
    return stats;
}

CriticStepStats critic_step(TrainableNet& dcm, const ObserverParams& enn, const ObserverParams& dam,
                            std::span<const ImageView> src, std::span<const ImageView> tgt, const AdaptConfig& cfg,
                            Rng& rng) {
    check_critic_compatible(enn, dcm.params);
    check_critic_compatible(dam, dcm.params);
    const auto fs = encode_all(enn, src);
    const auto ft = encode_all(dam, tgt);
    return critic_step(dcm, fs, ft, cfg, rng);
}

double generator_objective(const ObserverParams& dam, const ObserverParams& dcm, std::span<const ImageView> tgt) {
    if (tgt.empty()) throw InputError("target batch is empty");
    check_critic_compatible(dam, dcm);
    return -mean_critic(dcm, encode_all(dam, tgt));
}

double dam_step(TrainableNet& dam, const ObserverParams& dcm, std::span<const ImageView> tgt) {
    if (tgt.empty()) throw InputError("target batch is empty");
    check_critic_compatible(dam.params, dcm);
    const ObserverParams& p = dam.params;
    std::vector<float> grad(p.weights.size(), 0.0F);
    const float inv_n = 1.0F / static_cast<float>(tgt.size());
    Tape tape;
    std::vector<float> grad_features;
    double objective = 0.0;
    for (ImageView img : tgt) {
        if (img.size() != p.arch.input.size()) throw InputError("target image does not match the DAM input");
        const std::vector<float> x = standardize(p, img);
        const std::vector<float> f = forward<float>(p.arch, p.weights, x, &tape);
        const InputGradient<float> cg = mlp_input_gradient<float>(dcm.arch, dcm.weights, f);
        objective -= cg.value;
        grad_features.resize(cg.gradient.size());
        for (std::size_t k = 0; k < grad_features.size(); ++k) grad_features[k] = -inv_n * cg.gradient[k];
        backward<float>(p.arch, p.weights, tape, grad_features, grad);
    }
    objective /= static_cast<double>(tgt.size());
    if (!std::isfinite(objective)) throw TrainingError("generator objective became non-finite");
    dam.optimizer.step(dam.params.weights, grad);
    return objective;
}

std::string AdaptReport::to_json_lines() const {
    std::ostringstream out;
    for (const AdaptLog& l : iterations) {
        nlohmann::json j{{"iteration", l.iteration}, {"wasserstein_estimate", l.wasserstein}};
        j["val_auc"] = l.val_auc ? nlohmann::json(*l.val_auc) : nlohmann::json(nullptr);
        out << j.dump() << '\n';
    }
    out << nlohmann::json{{"selected_iteration", selected_iteration}, {"selected_val_auc", selected_val_auc}}.dump()
        << '\n';
    return out.str();
}

AdaptResult train_dam(std::span<const ImageView> src, std::span<const ImageView> tgt, const ObserverParams& enn,
                      const ObserverParams& onn, std::span<const ImageSample> tgt_val, const AdaptConfig& cfg) {
    validate(cfg);
    require_batches(src.size(), tgt.size());
    if (tgt_val.empty()) throw InputError("labeled target validation set is empty");
    if (enn.role() != Role::ENN) throw InputError("train_dam needs the trained ENN");
    check_compatible(enn, onn);

    // The ENN is frozen, so source features are computed once.
    const std::vector<FeatureVector> src_features = encode_all(enn, src);
    const auto features = static_cast<int>(enn.arch.output_shape().size());

    ObserverParams dam_init;
    if (cfg.warm_start) {
        dam_init = clone_as(enn, Role::DAM);
    } else {
        ArchitectureSpec arch = enn.arch;
        arch.role = Role::DAM;
        dam_init = init_params(arch, derive_seed(cfg.seed, {kDamInitStream}));
        dam_init.input = enn.input;
    }
    TrainableNet dam(std::move(dam_init), cfg.dam_adam);
    TrainableNet dcm(init_params(dcm_spec(features, cfg.heads), derive_seed(cfg.seed, {kDcmInitStream})),
                     cfg.dcm_adam);

    AdaptResult best{dam.params, dcm.params, {}};
    best.report.selected_val_auc = empirical_auc(score_set(dam.params, onn, tgt_val));
    {
        // Iteration-0 estimate with the freshly initialized critic.
        Rng rng = make_rng(cfg.seed, {kIterStream, 0});
        const auto b = static_cast<std::size_t>(cfg.batch_size);
        std::vector<FeatureVector> fs(b);
        std::vector<ImageView> ti(b);
        for (std::size_t i = 0; i < b; ++i) {
            fs[i] = src_features[draw_index(rng, src_features.size())];
            ti[i] = tgt[draw_index(rng, tgt.size())];
        }
        const auto ft = encode_all(dam.params, ti);
        best.report.iterations.push_back({0, wasserstein_estimate(dcm.params, fs, ft), best.report.selected_val_auc});
    }

    const auto b = static_cast<std::size_t>(cfg.batch_size);
    std::vector<FeatureVector> fs(b);
    std::vector<ImageView> ti(b);
    for (int it = 1; it <= cfg.iterations; ++it) {
        Rng rng = make_rng(cfg.seed, {kIterStream, static_cast<std::uint64_t>(it)});
        CriticStepStats stats;
        for (int k = 0; k < cfg.n_critic; ++k) {
            for (std::size_t i = 0; i < b; ++i) {
                fs[i] = src_features[draw_index(rng, src_features.size())];
                ti[i] = tgt[draw_index(rng, tgt.size())];
            }
            const auto ft = encode_all(dam.params, ti);
            stats = critic_step(dcm, fs, ft, cfg, rng);
        }
        for (std::size_t i = 0; i < b; ++i) ti[i] = tgt[draw_index(rng, tgt.size())];
        dam_step(dam, dcm.params, ti);

        AdaptLog log{it, stats.wasserstein, std::nullopt};
        if (it % cfg.validation_period == 0 || it == cfg.iterations) {
            const double auc = empirical_auc(score_set(dam.params, onn, tgt_val));
            log.val_auc = auc;
            if (auc > best.report.selected_val_auc) {
                best.dam = dam.params;
                best.dcm = dcm.params;
                best.report.selected_val_auc = auc;
                best.report.selected_iteration = it;
            }
            if (cfg.progress) {
                char line[128];
                std::snprintf(line, sizeof line, "iteration %d wasserstein %.4f val_auc %.4f", it, log.wasserstein, auc);
                cfg.progress(line);
            }
        }
        best.report.iterations.push_back(log);
    }
    best.dam.lineage += ">adapt:" + std::to_string(best.report.selected_iteration);
    return best;
}

}  // namespace daobs
