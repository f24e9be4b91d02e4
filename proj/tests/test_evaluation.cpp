#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "daobs/errors.hpp"
#include "daobs/evaluation.hpp"
#include "oracles.hpp"

using namespace daobs;
namespace fs = std::filesystem;

namespace {

// Scores on a coarse lattice so that ties are common.
ScoreSet random_scores(std::mt19937_64& rng, bool coarse) {
    std::uniform_int_distribution<int> size(1, 60);
    std::normal_distribution<double> normal(0.0, 1.0);
    ScoreSet s;
    s.pos.resize(static_cast<std::size_t>(size(rng)));
    s.neg.resize(static_cast<std::size_t>(size(rng)));
    for (double& v : s.pos) v = normal(rng) + 0.7;
    for (double& v : s.neg) v = normal(rng);
    if (coarse) {
        for (double& v : s.pos) v = std::round(v * 2.0);
        for (double& v : s.neg) v = std::round(v * 2.0);
    }
    return s;
}

}  // namespace

TEST_CASE("AUC of small score sets") {
    CHECK(empirical_auc({{0.9, 0.8}, {0.1, 0.2}}) == 1.0);
    CHECK(empirical_auc({{0.6, 0.4}, {0.5, 0.3}}) == 0.75);
    CHECK(empirical_auc({{0.1, 0.5, 0.5, 0.9}, {0.9, 0.5, 0.1, 0.5}}) == 0.5);
    CHECK_THROWS_AS(empirical_auc({{0.5}, {}}), InputError);
}

TEST_CASE("AUC equals pair counting and the ROC trapezoid") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const ScoreSet s = random_scores(rng, trial % 2 == 0);
        const double auc = empirical_auc(s);
        REQUIRE(auc == oracle::pair_count_auc(s.pos, s.neg));
        REQUIRE(std::abs(roc_points(s).auc - auc) <= 1e-12);
    }
}

TEST_CASE("AUC is rank based") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const ScoreSet s = random_scores(rng, trial % 2 == 0);
        ScoreSet t = s;
        for (double& v : t.pos) v = std::exp(3.0 * v) + 1.0;
        for (double& v : t.neg) v = std::exp(3.0 * v) + 1.0;
        CHECK(empirical_auc(t) == empirical_auc(s));
        const ScoreSet swapped{s.neg, s.pos};
        CHECK(empirical_auc(swapped) == doctest::Approx(1.0 - empirical_auc(s)).epsilon(1e-12));
    }
}

TEST_CASE("ROC curve shape") {
    const RocResult one = roc_points({{1.0}, {0.0}});
    REQUIRE(one.points.size() == 3u);
    CHECK(one.points[0].fpr == 0.0);
    CHECK(one.points[0].tpr == 0.0);
    CHECK(one.points[1].fpr == 0.0);
    CHECK(one.points[1].tpr == 1.0);
    CHECK(one.points[2].fpr == 1.0);
    CHECK(one.points[2].tpr == 1.0);

    const RocResult perfect = roc_points({{0.9, 0.8, 0.7}, {0.1, 0.2}});
    bool corner = false;
    for (const RocPoint& p : perfect.points) corner = corner || (p.fpr == 0.0 && p.tpr == 1.0);
    CHECK(corner);
    CHECK(perfect.auc == 1.0);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    ScoreSet s;
    for (int i = 0; i < 50; ++i) {
        s.pos.push_back(normal(rng));
        s.neg.push_back(normal(rng));
    }
    const RocResult r = roc_points(s);
    CHECK(std::abs(r.auc - oracle::pair_count_auc(s.pos, s.neg)) <= 1e-12);
    for (std::size_t i = 1; i < r.points.size(); ++i) {
        CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
        CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
    }
    CHECK(r.points.back().fpr == 1.0);
    CHECK(r.points.back().tpr == 1.0);
}

TEST_CASE("bootstrap standard error") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    ScoreSet s;
    for (int i = 0; i < 200; ++i) {
        s.pos.push_back(normal(rng) + 1.0);
        s.neg.push_back(normal(rng));
    }
    const double se = bootstrap_auc_se(s, 1000, 1);
    CHECK(se == bootstrap_auc_se(s, 1000, 1));
    // Hanley-McNeil approximation for comparison.
    const double a = empirical_auc(s);
    const double q1 = a / (2 - a);
    const double q2 = 2 * a * a / (1 + a);
    const double hm = std::sqrt((a * (1 - a) + 199 * (q1 - a * a) + 199 * (q2 - a * a)) / (200.0 * 200.0));
    CHECK(se == doctest::Approx(hm).epsilon(0.25));
    CHECK(bootstrap_auc_se({{1.0, 2.0}, {0.0, -1.0}}, 100, 1) == 0.0);
}

TEST_CASE("scores from zero-weight observers") {
    ObserverParams enc = init_params(encoder_spec(Role::ENN, {8, 8}, {2, 4, 3, 1, 0.2, 2}), 1);
    ObserverParams onn = init_params(onn_spec(static_cast<int>(enc.arch.output_shape().size()), {}), 2);
    std::fill(onn.weights.begin(), onn.weights.end(), 0.0F);
    GenerationConfig c;
    c.grid = {8, 8};
    c.signal.center = {4, 4};
    const Dataset test = generate_dataset(c, 200, 1);
    const ScoreSet s = score_set(enc, onn, test.samples);
    CHECK(s.pos.size() == 200u);
    CHECK(s.neg.size() == 200u);
    for (const ImageSample& img : test.samples) CHECK(observer_forward(enc, onn, img).t == 0.5);
    CHECK(empirical_auc(s) == 0.5);
    const ObserverParams onn2 = init_params(onn.arch, 3);
    CHECK(score_set(enc, onn2, test.samples).pos == score_set(enc, onn2, test.samples).pos);
}

TEST_CASE("comparison table") {
    ObserverParams enc = init_params(encoder_spec(Role::ENN, {8, 8}, {2, 4, 3, 1, 0.2, 2}), 1);
    enc.input = {10.0F, 0.1F};
    const ObserverParams onn = init_params(onn_spec(static_cast<int>(enc.arch.output_shape().size()), {}), 2);
    GenerationConfig c;
    c.grid = {8, 8};
    c.signal.center = {4, 4};
    std::vector<Dataset> sets;
    for (double w : {2.0, 4.0}) {
        c.system.blur = w;
        sets.push_back(generate_dataset(c, 50, 1));
    }
    std::vector<DomainEvaluation> doms;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        DomainEvaluation d{i == 0 ? "T2.0" : "T4.0", i == 0 ? 2.0 : 4.0, sets[i].samples, {}};
        for (Method m : {Method::SO, Method::SODA, Method::TO}) d.observers.emplace(m, Observer{enc, onn});
        doms.push_back(std::move(d));
    }
    const ComparisonTable t = build_comparison({"T2.0", "T4.0"}, doms, 50, 1);
    for (Method m : {Method::SO, Method::SODA, Method::TO}) {
        REQUIRE(t.rows.at(m).size() == 2u);
        for (const TableCell& cell : t.rows.at(m)) {
            CHECK(cell.auc >= 0.0);
            CHECK(cell.auc <= 1.0);
        }
    }
    CHECK(t.rows.at(Method::SO)[1].auc == t.rows.at(Method::TO)[1].auc);
    const std::string text = format_table(t);
    CHECK(text.find("SODA") != std::string::npos);
    CHECK(text.find("T4.0") != std::string::npos);
    CHECK(table_to_json(t).dump() == table_to_json(build_comparison({"T2.0", "T4.0"}, doms, 50, 1)).dump());

    CHECK_THROWS_AS(build_comparison({"T2.0", "T6.0"}, doms, 50, 1), InputError);
    doms[0].observers.erase(Method::TO);
    CHECK_THROWS_AS(build_comparison({"T2.0", "T4.0"}, doms, 50, 1), InputError);

    const fs::path dir = fs::temp_directory_path() / "daobs_test_roc";
    fs::create_directories(dir);
    write_roc_csv(t.curves.at(Method::SO)[0], dir / "roc.csv");
    std::ifstream in(dir / "roc.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "threshold,fpr,tpr");
    write_roc_svg({{Method::SO, t.curves.at(Method::SO)[0]}}, "T2.0", dir / "roc.svg");
    CHECK(fs::file_size(dir / "roc.svg") > 0u);
}
