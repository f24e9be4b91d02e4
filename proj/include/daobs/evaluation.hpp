#pragma once

// Test statistics, empirical ROC curves, Mann-Whitney AUC and the
// method-by-domain comparison table.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "daobs/imaging.hpp"
#include "daobs/observers.hpp"

namespace daobs {

/// Scores partitioned by the true label. Scores are ONN logits; AUC is invariant
/// to the monotone sigmoid, and logits do not saturate into ties.
struct ScoreSet {
    std::vector<double> pos;
    std::vector<double> neg;
};

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points;
    double auc = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

ScoreSet score_set(const ObserverParams& enc, const ObserverParams& onn, std::span<const ImageSample> test);

/// (1 / (n_pos n_neg)) * sum over pairs of [1(p > n) + 0.5 * 1(p == n)], in O(n log n).
double empirical_auc(const ScoreSet& s);

/// Threshold sweep over the unique scores, from (0,0) to (1,1); `auc` is the trapezoidal area.
RocResult roc_points(const ScoreSet& s);

/// Standard error of the AUC over stratified bootstrap resamples.
double bootstrap_auc_se(const ScoreSet& s, int resamples, std::uint64_t seed);

enum class Method { SO, SODA, TO };
std::string to_string(Method m);

struct Observer {
    ObserverParams encoder;
    ObserverParams onn;
};

/// Everything needed to score one target domain.
struct DomainEvaluation {
    std::string tag;
    double blur = 0.0;
    std::span<const ImageSample> test;
    std::map<Method, Observer> observers;
};

struct TableCell {
    double auc = 0.0;
    double se = 0.0;
};

struct ComparisonTable {
    std::vector<std::string> domains;
    std::vector<double> blurs;
    std::map<Method, std::vector<TableCell>> rows;
    /// ROC curves by method and domain index.
    std::map<Method, std::vector<RocResult>> curves;
};

/// Scores every method on every domain in `expected_tags` order. Throws InputError
/// when a domain or one of SO/SODA/TO is missing.
ComparisonTable build_comparison(const std::vector<std::string>& expected_tags,
                                 const std::vector<DomainEvaluation>& domains, int bootstrap_resamples,
                                 std::uint64_t seed);

/// Plain-text table, "auc ± se" per cell.
std::string format_table(const ComparisonTable& t);
nlohmann::json table_to_json(const ComparisonTable& t);

/// CSV with header "threshold,fpr,tpr".
void write_roc_csv(const RocResult& roc, const std::filesystem::path& file);
/// SVG plot of one ROC curve per method.
void write_roc_svg(const std::map<Method, RocResult>& curves, const std::string& title,
                   const std::filesystem::path& file);

}  // namespace daobs
