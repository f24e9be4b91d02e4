#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "daobs/adaptation.hpp"
#include "daobs/errors.hpp"
#include "oracles.hpp"

using namespace daobs;

namespace {

std::vector<FeatureVector> cloud(std::size_t n, int dim, double shift, std::mt19937_64& rng) {
    std::normal_distribution<float> normal(0.0F, 1.0F);
    std::vector<FeatureVector> out(n, FeatureVector(static_cast<std::size_t>(dim)));
    for (auto& f : out) {
        for (float& v : f) v = normal(rng);
        f[0] += static_cast<float>(shift);
    }
    return out;
}

const GridSpec kGrid{8, 8};
const EncoderOptions kEnc{2, 4, 3, 1, 0.2, 2};

ObserverParams small_encoder(std::uint64_t seed) {
    ObserverParams p = init_params(encoder_spec(Role::ENN, kGrid, kEnc), seed);
    p.input = {10.0F, 0.1F};
    return p;
}

std::vector<ImageSample> small_images(std::size_t pairs, double blur, std::uint64_t seed) {
    GenerationConfig c;
    c.grid = kGrid;
    c.signal = {0.5, {4, 4}, 1.5};
    c.lumpy.lump_width = 2.0;
    c.system = {50.0, blur};
    return generate_dataset(c, static_cast<std::int64_t>(pairs), seed).samples;
}

}  // namespace

TEST_CASE("estimate vanishes for identical encoders and batches") {
    const ObserverParams enn = small_encoder(1);
    const ObserverParams dam = clone_as(enn, Role::DAM);
    const auto feats = static_cast<int>(enn.arch.output_shape().size());
    const ObserverParams dcm = init_params(dcm_spec(feats, {}), 2);
    const auto imgs = small_images(16, 2.0, 3);
    const auto view = unlabeled_view(imgs);
    CHECK(wasserstein_estimate(dcm, enn, dam, view, view) == 0.0);

    ObserverParams zero = dcm;
    std::fill(zero.weights.begin(), zero.weights.end(), 0.0F);
    const auto other = small_images(16, 5.0, 4);
    CHECK(wasserstein_estimate(zero, enn, dam, view, unlabeled_view(other)) == 0.0);
}

TEST_CASE("gradient penalty matches a directly coded critic") {
    std::mt19937_64 rng(5);
    HeadOptions h;
    h.critic_hidden = {6};
    const ObserverParams dcm = init_params(dcm_spec(4, h), 6);
    oracle::TinyCritic t;
    t.in = 4;
    t.hidden = 6;
    t.slope = h.slope;
    t.W.assign(dcm.weights.begin(), dcm.weights.begin() + 24);
    t.b.assign(dcm.weights.begin() + 24, dcm.weights.begin() + 30);
    t.v.assign(dcm.weights.begin() + 30, dcm.weights.begin() + 36);
    t.c = dcm.weights[36];
    REQUIRE(dcm.weights.size() == 37u);

    const auto src = cloud(32, 4, 2.0, rng);
    const auto tgt = cloud(32, 4, 0.0, rng);
    std::vector<double> mix(32);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& e : mix) e = u(rng);

    double want = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        std::vector<double> x(4);
        for (std::size_t k = 0; k < 4; ++k)
            x[k] = static_cast<float>(mix[i] * src[i][k] + (1.0 - mix[i]) * tgt[i][k]);
        const auto g = t.input_gradient(x);
        double n2 = 0.0;
        for (double v : g) n2 += v * v;
        want += (std::sqrt(n2) - 1.0) * (std::sqrt(n2) - 1.0);
    }
    want = 10.0 * want / 32.0;
    CHECK(gradient_penalty(dcm, src, tgt, mix, 10.0) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("critic steps ascend the estimate") {
    AdaptConfig cfg;
    int increases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(100 + static_cast<std::uint64_t>(trial));
        const auto src = cloud(64, 8, 0.0, rng);
        const auto tgt = cloud(64, 8, 2.0, rng);
        TrainableNet dcm(init_params(dcm_spec(8, {}), static_cast<std::uint64_t>(trial)), cfg.dcm_adam);
        const double before = wasserstein_estimate(dcm.params, src, tgt);
        Rng mix_rng(static_cast<std::uint64_t>(trial));
        (void)critic_step(dcm, src, tgt, cfg, mix_rng);
        increases += wasserstein_estimate(dcm.params, src, tgt) > before ? 1 : 0;
    }
    CHECK(increases >= 95);
}

TEST_CASE("weight clipping bounds the critic") {
    AdaptConfig cfg;
    cfg.mode = LipschitzMode::WeightClipping;
    cfg.clip = 0.01;
    std::mt19937_64 rng(7);
    const auto src = cloud(32, 8, 0.0, rng);
    const auto tgt = cloud(32, 8, 1.0, rng);
    TrainableNet dcm(init_params(dcm_spec(8, {}), 1), cfg.dcm_adam);
    Rng r(1);
    (void)critic_step(dcm, src, tgt, cfg, r);
    CHECK(std::all_of(dcm.params.weights.begin(), dcm.params.weights.end(),
                      [](float w) { return w >= -0.01F && w <= 0.01F; }));
}

TEST_CASE("trained critic approaches the shift between Gaussian clouds") {
    AdaptConfig cfg;
    cfg.dcm_adam.learning_rate = 1e-3;
    std::mt19937_64 rng(8);
    TrainableNet dcm(init_params(dcm_spec(8, {}), 3), cfg.dcm_adam);
    Rng r(2);
    for (int it = 0; it < 1500; ++it) {
        const auto src = cloud(64, 8, 2.0, rng);
        const auto tgt = cloud(64, 8, 0.0, rng);
        (void)critic_step(dcm, src, tgt, cfg, r);
    }
    const auto src = cloud(5000, 8, 2.0, rng);
    const auto tgt = cloud(5000, 8, 0.0, rng);
    const double w = wasserstein_estimate(dcm.params, src, tgt);
    CHECK(w > 0.0);
    CHECK(std::abs(w - 2.0) <= 0.3);
}

TEST_CASE("DAM step") {
    const ObserverParams enn = small_encoder(1);
    const auto feats = static_cast<int>(enn.arch.output_shape().size());
    const auto imgs = small_images(32, 4.0, 9);
    const auto view = unlabeled_view(imgs);

    AdamOptions frozen{0.0, 0.5, 0.9, 1e-8};
    TrainableNet still(clone_as(enn, Role::DAM), frozen);
    const ObserverParams dcm0 = init_params(dcm_spec(feats, {}), 4);
    (void)dam_step(still, dcm0, view);
    CHECK(still.params.weights == enn.weights);

    int decreases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const ObserverParams dcm = init_params(dcm_spec(feats, {}), 1000 + static_cast<std::uint64_t>(trial));
        const std::vector<float> before_dcm = dcm.weights;
        TrainableNet dam(clone_as(enn, Role::DAM), AdamOptions{1e-4, 0.5, 0.9, 1e-8});
        const double before = dam_step(dam, dcm, view);
        CHECK(before == doctest::Approx(generator_objective(clone_as(enn, Role::DAM), dcm, view)).epsilon(1e-9));
        decreases += generator_objective(dam.params, dcm, view) < before ? 1 : 0;
        REQUIRE(dcm.weights == before_dcm);
    }
    CHECK(decreases >= 90);
}

TEST_CASE("adaptation freezes the source observer and never reads target labels") {
    const auto src = small_images(40, 0.5, 10);
    const auto tgt = small_images(40, 4.0, 11);
    const auto val = small_images(20, 4.0, 12);
    const ObserverParams enn = small_encoder(2);
    const ObserverParams onn = init_params(onn_spec(static_cast<int>(enn.arch.output_shape().size()), {}), 3);
    const std::uint64_t enn_hash = weights_hash(enn);
    const std::uint64_t onn_hash = weights_hash(onn);

    AdaptConfig cfg;
    cfg.iterations = 12;
    cfg.validation_period = 4;
    cfg.batch_size = 8;
    const AdaptResult a = train_dam(unlabeled_view(src), unlabeled_view(tgt), enn, onn, val, cfg);
    CHECK(weights_hash(enn) == enn_hash);
    CHECK(weights_hash(onn) == onn_hash);
    CHECK(a.dam.role() == Role::DAM);
    CHECK(a.report.iterations.size() == 13u);
    CHECK(a.report.iterations[0].val_auc.has_value());
    CHECK(a.report.iterations[4].val_auc.has_value());
    CHECK_FALSE(a.report.iterations[5].val_auc.has_value());

    auto poisoned = tgt;
    std::mt19937_64 rng(1);
    for (auto& s : poisoned) s.label = static_cast<std::uint8_t>(rng() % 2);
    const AdaptResult b = train_dam(unlabeled_view(src), unlabeled_view(poisoned), enn, onn, val, cfg);
    CHECK(b.dam.weights == a.dam.weights);
    CHECK(b.report.selected_iteration == a.report.selected_iteration);

    // The last iteration is validated even off the period.
    cfg.validation_period = 100;
    const AdaptResult last = train_dam(unlabeled_view(src), unlabeled_view(tgt), enn, onn, val, cfg);
    CHECK(last.report.iterations.back().val_auc.has_value());
}

TEST_CASE("adaptation config validation") {
    AdaptConfig cfg;
    cfg.n_critic = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.penalty_weight = 0.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = {};
    cfg.validation_period = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    CHECK(lipschitz_mode_from_string(to_string(LipschitzMode::WeightClipping)) == LipschitzMode::WeightClipping);
    CHECK_THROWS_AS(lipschitz_mode_from_string("none"), ConfigError);
}
