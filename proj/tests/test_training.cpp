#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "daobs/errors.hpp"
#include "daobs/evaluation.hpp"
#include "daobs/training.hpp"
#include "oracles.hpp"

using namespace daobs;

namespace {

// Two-pixel images: H1 is shifted by +1 along both axes.
std::vector<ImageSample> toy_set(std::size_t pairs, std::uint64_t seed, bool shuffle_labels) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0F, 0.6F);
    std::vector<ImageSample> out;
    for (std::size_t i = 0; i < pairs; ++i) {
        for (std::uint8_t y : {0, 1}) {
            ImageSample s;
            const float mu = y == 1 ? 1.0F : -1.0F;
            s.pixels = {mu + normal(rng), mu + normal(rng)};
            s.label = y;
            s.pair_id = static_cast<std::int64_t>(i);
            out.push_back(std::move(s));
        }
    }
    if (shuffle_labels) {
        std::vector<std::uint8_t> labels;
        for (const auto& s : out) labels.push_back(s.label);
        std::shuffle(labels.begin(), labels.end(), rng);
        for (std::size_t i = 0; i < out.size(); ++i) out[i].label = labels[i];
    }
    return out;
}

TrainConfig toy_config() {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 10;
    cfg.encoder = {1, 4, 1, 1, 0.2, 1};
    cfg.heads.onn_hidden = 8;
    cfg.seed = 3;
    return cfg;
}

TrainedObserver train_toy(const std::vector<ImageSample>& train, const std::vector<ImageSample>& val,
                          const TrainConfig& cfg) {
    const GridSpec grid{2, 1};
    ObserverParams enn = init_params(encoder_spec(Role::ENN, grid, cfg.encoder), cfg.seed);
    ObserverParams onn = init_params(onn_spec(static_cast<int>(enn.arch.output_shape().size()), cfg.heads), cfg.seed + 1);
    const auto bsz = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t batches = bsz == 0 ? 1 : train.size() / bsz;
    BatchFn next = [&](int epoch, std::size_t index, std::vector<std::vector<float>>& images,
                       std::vector<std::uint8_t>& labels) {
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), std::mt19937_64(static_cast<std::uint64_t>(epoch)));
        images.clear();
        labels.clear();
        for (std::size_t k = index * bsz; k < (index + 1) * bsz; ++k) {
            images.push_back(train[order[k]].pixels);
            labels.push_back(train[order[k]].label);
        }
    };
    return train_observer(enn, onn, next, batches, val, cfg);
}

}  // namespace

TEST_CASE("cross entropy of probabilities") {
    const std::vector<std::uint8_t> y{0, 1, 1, 0, 1};
    const std::vector<double> exact{0.0, 1.0, 1.0, 0.0, 1.0};
    CHECK(bce_from_probabilities(exact, y) <= 2 * kProbabilityClamp);
    const std::vector<double> half(5, 0.5);
    CHECK(bce_from_probabilities(half, y) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(64);
        std::vector<std::uint8_t> labels(64);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = u(rng);
            labels[i] = u(rng) < 0.5 ? 0 : 1;
        }
        CHECK(std::abs(bce_from_probabilities(p, labels) - oracle::cross_entropy(p, labels, kProbabilityClamp)) < 1e-6);
    }
    const std::vector<std::uint8_t> bad{0, 2};
    const std::vector<double> two{0.5, 0.5};
    CHECK_THROWS_AS(bce_from_probabilities(two, bad), InputError);
}

TEST_CASE("cross entropy gradients match central differences") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal(0.0, 1.0);
    const EncoderOptions eo{2, 3, 3, 1, 0.2, 2};
    const ArchitectureSpec enc = encoder_spec(Role::ENN, {6, 6}, eo);
    HeadOptions ho;
    ho.onn_hidden = 4;
    const ArchitectureSpec onn = onn_spec(static_cast<int>(enc.output_shape().size()), ho);
    std::vector<double> pe(enc.param_count());
    std::vector<double> po(onn.param_count());
    for (double& v : pe) v = 0.5 * normal(rng);
    for (double& v : po) v = 0.5 * normal(rng);
    std::vector<std::vector<double>> x(6, std::vector<double>(36));
    for (auto& img : x)
        for (double& v : img) v = normal(rng);
    const std::vector<std::uint8_t> y{0, 1, 1, 0, 1, 0};

    std::vector<double> ge(pe.size(), 0.0);
    std::vector<double> go(po.size(), 0.0);
    (void)bce_loss_and_gradient<double>(enc, pe, onn, po, x, y, ge, go);
    auto loss = [&](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> se(a.size()), so(b.size());
        return bce_loss_and_gradient<double>(enc, a, onn, b, x, y, se, so);
    };
    const double h = 1e-6;
    double worst = 0.0;
    auto check = [&](std::vector<double>& params, const std::vector<double>& grad, bool is_enc) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double up = is_enc ? loss(params, po) : loss(pe, params);
            params[i] = keep - h;
            const double dn = is_enc ? loss(params, po) : loss(pe, params);
            params[i] = keep;
            const double fd = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-4, std::abs(fd) + std::abs(grad[i])));
        }
    };
    check(pe, ge, true);
    check(po, go, false);
    CHECK(worst < 1e-3);
}

TEST_CASE("separable toy problem is learned") {
    const auto train = toy_set(512, 1, false);
    const auto val = toy_set(200, 2, false);
    const TrainedObserver t = train_toy(train, val, toy_config());
    CHECK(t.report.selected_val_auc >= 0.99);
    CHECK(t.report.epochs.size() == 11u);
}

TEST_CASE("shuffled labels carry nothing to learn") {
    const auto train = toy_set(512, 3, true);
    const auto val = toy_set(200, 4, true);
    const auto test = toy_set(1000, 5, true);
    const TrainedObserver t = train_toy(train, val, toy_config());
    CHECK(std::abs(empirical_auc(score_set(t.enn, t.onn, test)) - 0.5) <= 0.05);
}

TEST_CASE("selection keeps the best validated epoch") {
    const auto train = toy_set(256, 6, false);
    const auto val = toy_set(100, 7, false);
    TrainConfig cfg = toy_config();
    cfg.max_epochs = 6;
    cfg.adam.learning_rate = 3e-2;
    const TrainedObserver t = train_toy(train, val, cfg);
    double best = -1.0;
    int best_epoch = -1;
    for (const EpochLog& e : t.report.epochs) {
        REQUIRE(e.val_auc.has_value());
        if (*e.val_auc > best) {
            best = *e.val_auc;
            best_epoch = e.epoch;
        }
    }
    CHECK(t.report.selected_val_auc == best);
    CHECK(t.report.selected_epoch == best_epoch);
    CHECK(empirical_auc(score_set(t.enn, t.onn, val)) == best);

    const TrainedObserver again = train_toy(train, val, cfg);
    CHECK(again.enn.weights == t.enn.weights);
    CHECK(again.onn.weights == t.onn.weights);
}

TEST_CASE("source training is deterministic per seed") {
    GenerationConfig c;
    c.grid = {16, 16};
    c.signal.center = {8, 8};
    c.system = {40.0, 0.5};
    const Dataset train = generate_dataset(c, 64, 1);
    const Dataset val = generate_dataset(c, 20, 2);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.encoder.blocks = 2;
    const TrainedObserver a = train_source_observer(train, val, cfg);
    const TrainedObserver b = train_source_observer(train, val, cfg);
    CHECK(a.enn.weights == b.enn.weights);
    CHECK(a.onn.weights == b.onn.weights);
    cfg.seed = 2;
    const TrainedObserver d = train_source_observer(train, val, cfg);
    CHECK(d.enn.weights != a.enn.weights);
}

TEST_CASE("semi-online batches draw fresh noise") {
    GenerationConfig c;
    c.grid = {8, 8};
    c.signal.center = {4, 4};
    const auto bgs = generate_backgrounds(c, 16, 3);
    const Image sig = render_signal(c.signal, c.system, c.grid);
    std::vector<std::vector<float>> a, b, a2;
    std::vector<std::uint8_t> la, lb;
    semi_online_batch(bgs, sig, c.noise, 9, 1, 0, 32, a, la);
    semi_online_batch(bgs, sig, c.noise, 9, 1, 0, 32, a2, lb);
    CHECK(a == a2);
    semi_online_batch(bgs, sig, c.noise, 9, 2, 0, 32, b, lb);
    REQUIRE(a.size() == 32u);
    REQUIRE(b.size() == 32u);
    // Epoch 1 and epoch 2 see every background, each with its own noise.
    auto sorted_h0 = [](const std::vector<std::vector<float>>& imgs) {
        std::vector<std::vector<float>> out;
        for (std::size_t i = 0; i < imgs.size(); i += 2) out.push_back(imgs[i]);
        std::sort(out.begin(), out.end());
        return out;
    };
    const auto sa = sorted_h0(a);
    const auto sb = sorted_h0(b);
    for (const auto& img : sa) CHECK(std::find(sb.begin(), sb.end(), img) == sb.end());
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == i % 2);

    // Without noise every batch is drawn from the fixed set {b, b + s}.
    const NoiseParams none{0.0};
    semi_online_batch(bgs, sig, none, 9, 3, 0, 32, a, la);
    std::vector<std::vector<float>> fixed;
    for (const Image& g : bgs) {
        fixed.push_back(g);
        Image s = g;
        for (std::size_t m = 0; m < s.size(); ++m) s[m] += sig[m];
        fixed.push_back(s);
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto it = std::find(fixed.begin(), fixed.end(), a[i]);
        REQUIRE(it != fixed.end());
        CHECK(static_cast<std::size_t>(it - fixed.begin()) % 2 == la[i]);
    }
}

TEST_CASE("invalid training configs are rejected") {
    const auto train = toy_set(32, 1, false);
    TrainConfig cfg = toy_config();
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train_toy(train, train, cfg), ConfigError);
    cfg = toy_config();
    cfg.adam.learning_rate = 0.0;
    CHECK_THROWS_AS(train_toy(train, train, cfg), ConfigError);
}
