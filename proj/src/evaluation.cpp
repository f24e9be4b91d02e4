#include "daobs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "daobs/errors.hpp"
#include "daobs/random.hpp"

namespace daobs {

namespace {

void require_both_classes(const ScoreSet& s) {
    if (s.pos.empty() || s.neg.empty()) throw InputError("AUC needs at least one score in each class");
}

}  // namespace

ScoreSet score_set(const ObserverParams& enc, const ObserverParams& onn, std::span<const ImageSample> test) {
    check_compatible(enc, onn);
    ScoreSet s;
    for (const ImageSample& img : test) {
        if (img.label > 1) throw InputError("test sample carries no binary label");
        const double score = observer_forward(enc, onn, img).logit;
        (img.label == 1 ? s.pos : s.neg).push_back(score);
    }
    return s;
}

double empirical_auc(const ScoreSet& s) {
    require_both_classes(s);
    // Mann-Whitney U from mid-ranks of the pooled sample.
    struct Entry {
        double score;
        bool pos;
    };
    std::vector<Entry> all;
    all.reserve(s.pos.size() + s.neg.size());
    for (double v : s.pos) all.push_back({v, true});
    for (double v : s.neg) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::size_t pos_in_tie = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            pos_in_tie += all[j].pos ? 1 : 0;
            ++j;
        }
        // Ranks i+1..j share the mid-rank (i + 1 + j) / 2.
        pos_rank_sum += static_cast<double>(pos_in_tie) * (static_cast<double>(i + 1 + j) / 2.0);
        i = j;
    }
    const auto np = static_cast<double>(s.pos.size());
    const auto nn = static_cast<double>(s.neg.size());
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

RocResult roc_points(const ScoreSet& s) {
    require_both_classes(s);
    std::vector<double> pos = s.pos;
    std::vector<double> neg = s.neg;
    std::sort(pos.begin(), pos.end(), std::greater<>());
    std::sort(neg.begin(), neg.end(), std::greater<>());
    std::vector<double> thresholds(pos);
    thresholds.insert(thresholds.end(), neg.begin(), neg.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    RocResult r;
    r.n_pos = pos.size();
    r.n_neg = neg.size();
    r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    double area = 0.0;
    for (double t : thresholds) {
        while (tp < pos.size() && pos[tp] >= t) ++tp;
        while (fp < neg.size() && neg[fp] >= t) ++fp;
        const RocPoint p{t, static_cast<double>(fp) / static_cast<double>(r.n_neg),
                         static_cast<double>(tp) / static_cast<double>(r.n_pos)};
        const RocPoint& prev = r.points.back();
        area += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        r.points.push_back(p);
    }
    r.auc = area;
    return r;
}

double bootstrap_auc_se(const ScoreSet& s, int resamples, std::uint64_t seed) {
    require_both_classes(s);
    if (resamples < 2) throw ConfigError("bootstrap needs at least two resamples");
    Rng rng = make_rng(seed, {0x626f6f74});  // "boot"
    std::vector<double> aucs;
    aucs.reserve(static_cast<std::size_t>(resamples));
    ScoreSet b;
    b.pos.resize(s.pos.size());
    b.neg.resize(s.neg.size());
    for (int r = 0; r < resamples; ++r) {
        for (double& v : b.pos) v = s.pos[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(s.pos.size()))];
        for (double& v : b.neg) v = s.neg[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(s.neg.size()))];
        aucs.push_back(empirical_auc(b));
    }
    const double mean = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(aucs.size());
    double ss = 0.0;
    for (double a : aucs) ss += (a - mean) * (a - mean);
    return std::sqrt(ss / static_cast<double>(aucs.size() - 1));
}

std::string to_string(Method m) {
    switch (m) {
        case Method::SO: return "SO";
        case Method::SODA: return "SODA";
        case Method::TO: return "TO";
    }
    return "unknown";
}

ComparisonTable build_comparison(const std::vector<std::string>& expected_tags,
                                 const std::vector<DomainEvaluation>& domains, int bootstrap_resamples,
                                 std::uint64_t seed) {
    ComparisonTable table;
    for (std::size_t d = 0; d < expected_tags.size(); ++d) {
        const std::string& tag = expected_tags[d];
        auto it = std::find_if(domains.begin(), domains.end(), [&](const DomainEvaluation& e) { return e.tag == tag; });
        if (it == domains.end()) throw InputError("no evaluation data for domain '" + tag + "'");
        if (it->test.empty()) throw InputError("empty test set for domain '" + tag + "'");
        table.domains.push_back(tag);
        table.blurs.push_back(it->blur);
        for (Method m : {Method::SO, Method::SODA, Method::TO}) {
            auto obs = it->observers.find(m);
            if (obs == it->observers.end())
                throw InputError("missing " + to_string(m) + " observer for domain '" + tag + "'");
            const ScoreSet scores = score_set(obs->second.encoder, obs->second.onn, it->test);
            RocResult roc = roc_points(scores);
            const double se = bootstrap_auc_se(scores, bootstrap_resamples,
                                               derive_seed(seed, {d, static_cast<std::uint64_t>(m)}));
            table.rows[m].push_back({empirical_auc(scores), se});
            table.curves[m].push_back(std::move(roc));
        }
    }
    return table;
}

std::string format_table(const ComparisonTable& t) {
    std::ostringstream out;
    out << std::left << std::setw(8) << "method";
    for (const auto& tag : t.domains) out << std::setw(18) << tag;
    out << '\n';
    out << std::fixed << std::setprecision(4);
    for (Method m : {Method::SO, Method::SODA, Method::TO}) {
        auto row = t.rows.find(m);
        if (row == t.rows.end()) continue;
        out << std::setw(8) << to_string(m);
        for (const TableCell& c : row->second) {
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(4) << c.auc << " ± " << c.se;
            // "±" is two bytes in UTF-8; pad by display width.
            out << cell.str() << std::string(cell.str().size() < 19 ? 19 - cell.str().size() : 1, ' ');
        }
        out << '\n';
    }
    return out.str();
}

nlohmann::json table_to_json(const ComparisonTable& t) {
    nlohmann::json j;
    j["domains"] = t.domains;
    j["blurs"] = t.blurs;
    for (const auto& [m, cells] : t.rows) {
        nlohmann::json row = nlohmann::json::array();
        for (const TableCell& c : cells) row.push_back({{"auc", c.auc}, {"se", c.se}});
        j["rows"][to_string(m)] = row;
    }
    return j;
}

void write_roc_csv(const RocResult& roc, const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << "threshold,fpr,tpr\n" << std::setprecision(17);
    for (const RocPoint& p : roc.points) {
        if (std::isinf(p.threshold))
            out << "inf";
        else
            out << p.threshold;
        out << ',' << p.fpr << ',' << p.tpr << '\n';
    }
}

void write_roc_svg(const std::map<Method, RocResult>& curves, const std::string& title,
                   const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    constexpr double kSize = 360.0;
    constexpr double kMargin = 50.0;
    auto px = [&](double fpr) { return kMargin + fpr * kSize; };
    auto py = [&](double tpr) { return kMargin + (1.0 - tpr) * kSize; };
    const std::map<Method, const char*> colors{{Method::SO, "#d62728"}, {Method::SODA, "#1f77b4"},
                                               {Method::TO, "#2ca02c"}};
    out << std::fixed << std::setprecision(2);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kMargin + 120 << "\" height=\""
        << kSize + 2 * kMargin << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kMargin << "\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">" << title
        << "</text>\n";
    out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
        << "\" stroke=\"#aaaaaa\" stroke-dasharray=\"4 4\"/>\n";
    out << "<text x=\"" << kMargin + kSize / 2 - 10 << "\" y=\"" << kSize + kMargin + 35
        << "\" font-family=\"sans-serif\" font-size=\"12\">FPR</text>\n";
    out << "<text x=\"10\" y=\"" << kMargin + kSize / 2 << "\" font-family=\"sans-serif\" font-size=\"12\">TPR</text>\n";
    int legend = 0;
    for (const auto& [m, roc] : curves) {
        out << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colors.at(m) << "\" points=\"";
        for (const RocPoint& p : roc.points) out << px(p.fpr) << ',' << py(p.tpr) << ' ';
        out << "\"/>\n";
        const double ly = kMargin + 20.0 + 20.0 * legend++;
        out << "<text x=\"" << kMargin + kSize + 10 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" "
            << "font-size=\"12\" fill=\"" << colors.at(m) << "\">" << to_string(m) << " " << std::setprecision(4)
            << roc.auc << std::setprecision(2) << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace daobs
