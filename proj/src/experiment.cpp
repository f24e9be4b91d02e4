#include "daobs/experiment.hpp"

#include <chrono>
#include <fstream>
#include <set>

#include "daobs/checkpoint.hpp"
#include "daobs/dataset_io.hpp"
#include "daobs/errors.hpp"
#include "daobs/hashing.hpp"
#include "daobs/random.hpp"
#include "daobs/serialization.hpp"

namespace daobs {

namespace fs = std::filesystem;

namespace {

// Substream ids below the master seed.
enum : std::uint64_t {
    kGenerateStream = 1,
    kTrainSourceStream = 2,
    kAdaptStream = 3,
    kTargetTrainStream = 4,
    kTargetBackgroundStream = 5,
    kEvaluateStream = 6,
};

enum : std::uint64_t { kSplitTrain = 0, kSplitVal = 1, kSplitUnlabeled = 2, kSplitTest = 3 };

constexpr const char* kManifestFile = "manifest.json";

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    out << text;
}

std::string blur_tag(double w) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "T%.1f", w);
    return buf;
}

GenerationConfig base_domain() {
    GenerationConfig c;
    c.grid = {64, 64};
    c.signal = {0.2, {32.0, 32.0}, 3.0};
    c.lumpy = {5.0, 1.0, 7.0};
    c.noise = {10.0};
    return c;
}

void validate_sizes(const DatasetSizes& s, const char* which) {
    for (std::int64_t v : {s.source_train_pairs, s.source_val_pairs, s.target_unlabeled_pairs, s.target_val_pairs,
                           s.target_test_pairs, s.target_backgrounds})
        if (v < 1) throw ConfigError(std::string(which) + ": every dataset size must be at least 1");
}

}  // namespace

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSizes, source_train_pairs, source_val_pairs,
                                                target_unlabeled_pairs, target_val_pairs, target_test_pairs,
                                                target_backgrounds)

const GenerationConfig& ExperimentConfig::target(const std::string& tag) const {
    for (const auto& t : targets)
        if (t.domain_tag == tag) return t;
    throw ConfigError("unknown target domain '" + tag + "'");
}

ExperimentConfig reference_config() {
    ExperimentConfig cfg;
    cfg.source = base_domain();
    cfg.source.domain_tag = "source";
    cfg.source.system = {40.0, 0.5};
    for (double w : {2.0, 3.0, 4.0, 5.0, 6.0}) {
        GenerationConfig t = base_domain();
        t.domain_tag = blur_tag(w);
        t.system = {50.0, w};
        cfg.targets.push_back(t);
    }
    cfg.target_train = cfg.train;
    return cfg;
}

void validate(const ExperimentConfig& cfg) {
    validate(cfg.source);
    if (cfg.targets.empty()) throw ConfigError("at least one target domain is required");
    std::set<std::string> tags{cfg.source.domain_tag};
    for (const auto& t : cfg.targets) {
        validate(t);
        if (!tags.insert(t.domain_tag).second) throw ConfigError("duplicate domain tag '" + t.domain_tag + "'");
        if (!(t.grid == cfg.source.grid)) throw ConfigError("target grid differs from the source grid");
    }
    validate_sizes(cfg.sizes, "sizes");
    validate_sizes(cfg.desk_sizes, "desk_sizes");
    validate(cfg.adapt);
    for (const TrainConfig* t : {&cfg.train, &cfg.target_train}) {
        if (t->batch_size < 1 || t->max_epochs < 1 || t->validation_period < 1 || !(t->adam.learning_rate > 0.0))
            throw ConfigError("training config needs positive batch size, epochs, validation period and learning rate");
    }
    if (cfg.bootstrap_resamples < 2) throw ConfigError("bootstrap_resamples must be at least 2");
    if (cfg.threads < 1) throw ConfigError("threads must be at least 1");
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["source"] = cfg.source;
    j["targets"] = cfg.targets;
    j["sizes"] = cfg.sizes;
    j["desk_sizes"] = cfg.desk_sizes;
    j["desk_scale"] = cfg.desk_scale;
    j["train"] = cfg.train;
    j["target_train"] = cfg.target_train;
    j["adapt"] = cfg.adapt;
    j["bootstrap_resamples"] = cfg.bootstrap_resamples;
    j["threads"] = cfg.threads;
    j["master_seed"] = cfg.master_seed;
    j["output_dir"] = cfg.output_dir.string();
    return j;
}

namespace {

// `base` with the keys present in `patch` overridden, recursively for objects.
template <typename T>
T patched(const T& base, const nlohmann::json& patch) {
    nlohmann::json j = base;
    j.merge_patch(patch);
    return j.get<T>();
}

}  // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg = reference_config();
    try {
        if (j.contains("source")) cfg.source = patched(cfg.source, j.at("source"));
        if (j.contains("targets")) cfg.targets = j.at("targets").get<std::vector<GenerationConfig>>();
        if (j.contains("sizes")) cfg.sizes = patched(cfg.sizes, j.at("sizes"));
        if (j.contains("desk_sizes")) cfg.desk_sizes = patched(cfg.desk_sizes, j.at("desk_sizes"));
        cfg.desk_scale = j.value("desk_scale", cfg.desk_scale);
        if (j.contains("train")) cfg.train = patched(cfg.train, j.at("train"));
        cfg.target_train = j.contains("target_train") ? patched(cfg.train, j.at("target_train")) : cfg.train;
        if (j.contains("adapt")) cfg.adapt = patched(cfg.adapt, j.at("adapt"));
        cfg.bootstrap_resamples = j.value("bootstrap_resamples", cfg.bootstrap_resamples);
        cfg.threads = j.value("threads", cfg.threads);
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
        cfg.output_dir = j.value("output_dir", cfg.output_dir.string());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    return experiment_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
    nlohmann::json j = to_json(cfg);
    j.erase("output_dir");
    Fnv1a64 h;
    h.update(j.dump());
    return to_hex(h.digest());
}

// ---------------------------------------------------------------------------

RunManifest::RunManifest(fs::path root, std::string hash) : root_(std::move(root)) {
    data_ = {{"config_hash", std::move(hash)}, {"stages", nlohmann::json::object()}};
}

RunManifest RunManifest::open(const fs::path& root, const std::string& hash) {
    RunManifest m(root, hash);
    std::ifstream in(root / kManifestFile);
    if (!in) return m;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        return m;
    }
    if (j.value("config_hash", "") == hash && j.contains("stages")) m.data_ = std::move(j);
    return m;
}

void RunManifest::save() const { write_text(root_ / kManifestFile, data_.dump(2) + "\n"); }

bool RunManifest::completed(const std::string& stage) const {
    return data_["stages"].contains(stage) && data_["stages"][stage].value("completed", false);
}

void RunManifest::require(const std::string& stage) const {
    if (!completed(stage)) throw StageError("prerequisite stage '" + stage + "' has not completed");
    for (const auto& [rel, hash] : data_["stages"][stage]["artifacts"].items()) {
        const fs::path p = root_ / rel;
        if (!fs::exists(p)) throw StageError("artifact " + rel + " of stage '" + stage + "' is missing");
        if (to_hex(hash_path(p)) != hash.get<std::string>())
            throw StageError("artifact " + rel + " of stage '" + stage + "' changed since it was written");
    }
}

void RunManifest::complete(const std::string& stage, const std::vector<fs::path>& artifacts) {
    nlohmann::json entry;
    entry["completed"] = true;
    entry["timestamp"] = now_iso8601();
    entry["artifacts"] = nlohmann::json::object();
    for (const fs::path& a : artifacts) {
        const fs::path rel = a.lexically_normal().lexically_relative(root_.lexically_normal());
        entry["artifacts"][rel.generic_string()] = to_hex(hash_path(root_ / rel));
    }
    data_["stages"][stage] = entry;
    save();
}

// ---------------------------------------------------------------------------

fs::path RunLayout::dataset(const std::string& domain, const std::string& split) const {
    return root / "data" / domain / split;
}
fs::path RunLayout::checkpoint(const std::string& name) const { return root / "checkpoints" / (name + ".ckpt"); }
fs::path RunLayout::report(const std::string& name) const { return root / "reports" / name; }

std::string generate_stage(const std::string& domain) { return "generate:" + domain; }
std::string adapt_stage(const std::string& domain) { return "adapt:" + domain; }
std::string train_target_stage(const std::string& domain) { return "train-target:" + domain; }

Experiment::Experiment(ExperimentConfig cfg)
    : cfg_(std::move(cfg)),
      layout_{cfg_.output_dir},
      manifest_(RunManifest::open(cfg_.output_dir, config_hash(cfg_))) {
    validate(cfg_);
}

std::function<void(const std::string&)> Experiment::progress_for(const std::string& stage) const {
    if (!progress_) return {};
    return [sink = progress_, stage](const std::string& line) { sink(stage + ": " + line); };
}

std::vector<std::string> Experiment::domains(const std::optional<std::string>& only) const {
    if (only) return {cfg_.target(*only).domain_tag};
    std::vector<std::string> out;
    for (const auto& t : cfg_.targets) out.push_back(t.domain_tag);
    return out;
}

namespace {

std::uint64_t domain_index(const ExperimentConfig& cfg, const std::string& tag) {
    for (std::size_t i = 0; i < cfg.targets.size(); ++i)
        if (cfg.targets[i].domain_tag == tag) return i + 1;
    return 0;
}

void save_split(const GenerationConfig& gc, std::int64_t pairs, std::uint64_t seed, const std::string& note,
                unsigned threads, const fs::path& dir, std::vector<fs::path>& artifacts) {
    Dataset ds = generate_dataset(gc, pairs, seed, threads);
    ds.meta.note = note;
    fs::remove_all(dir);
    save_dataset(ds, dir);
    artifacts.push_back(dir);
}

}  // namespace

void Experiment::generate(const std::optional<std::string>& only) {
    const DatasetSizes& sz = cfg_.active_sizes();
    const std::string note = cfg_.desk_scale ? "desk-scale sizes" : "full-scale sizes";
    const std::uint64_t m = cfg_.master_seed;
    fs::create_directories(layout_.root);

    if (!only || !manifest_.completed(generate_stage(cfg_.source.domain_tag))) {
        std::vector<fs::path> artifacts;
        const std::string tag = cfg_.source.domain_tag;
        save_split(cfg_.source, sz.source_train_pairs, derive_seed(m, {kGenerateStream, 0, kSplitTrain}), note,
                   cfg_.threads, layout_.dataset(tag, "train"), artifacts);
        save_split(cfg_.source, sz.source_val_pairs, derive_seed(m, {kGenerateStream, 0, kSplitVal}), note,
                   cfg_.threads, layout_.dataset(tag, "val"), artifacts);
        manifest_.complete(generate_stage(tag), artifacts);
    }
    for (const std::string& tag : domains(only)) {
        const GenerationConfig& gc = cfg_.target(tag);
        const std::uint64_t d = domain_index(cfg_, tag);
        std::vector<fs::path> artifacts;
        save_split(gc, sz.target_unlabeled_pairs, derive_seed(m, {kGenerateStream, d, kSplitUnlabeled}), note,
                   cfg_.threads, layout_.dataset(tag, "unlabeled"), artifacts);
        save_split(gc, sz.target_val_pairs, derive_seed(m, {kGenerateStream, d, kSplitVal}), note, cfg_.threads,
                   layout_.dataset(tag, "val"), artifacts);
        save_split(gc, sz.target_test_pairs, derive_seed(m, {kGenerateStream, d, kSplitTest}), note, cfg_.threads,
                   layout_.dataset(tag, "test"), artifacts);
        manifest_.complete(generate_stage(tag), artifacts);
    }
}

TrainReport Experiment::train_source() {
    const std::string src = cfg_.source.domain_tag;
    manifest_.require(generate_stage(src));
    const Dataset train = load_dataset(layout_.dataset(src, "train"));
    const Dataset val = load_dataset(layout_.dataset(src, "val"));
    TrainConfig tc = cfg_.train;
    tc.seed = derive_seed(cfg_.master_seed, {kTrainSourceStream});
    tc.progress = progress_for(kTrainSourceStage);
    TrainedObserver so = train_source_observer(train, val, tc);

    const fs::path enn = layout_.checkpoint("source_enn");
    const fs::path onn = layout_.checkpoint("source_onn");
    const fs::path rep = layout_.report("train_source.jsonl");
    save_checkpoint(so.enn, enn);
    save_checkpoint(so.onn, onn);
    write_text(rep, so.report.to_json_lines());
    manifest_.complete(kTrainSourceStage, {enn, onn, rep});
    return so.report;
}

std::vector<AdaptReport> Experiment::adapt(const std::optional<std::string>& only) {
    const std::string src = cfg_.source.domain_tag;
    if (!manifest_.completed(kTrainSourceStage))
        throw StageError("prerequisite stage 'train-source' has not completed (no ENN checkpoint " +
                         layout_.checkpoint("source_enn").string() + ")");
    manifest_.require(kTrainSourceStage);
    manifest_.require(generate_stage(src));
    const std::vector<std::string> tags = domains(only);
    for (const auto& tag : tags) manifest_.require(generate_stage(tag));

    const ObserverParams enn = load_checkpoint(layout_.checkpoint("source_enn"));
    const ObserverParams onn = load_checkpoint(layout_.checkpoint("source_onn"));
    const Dataset source = load_dataset(layout_.dataset(src, "train"));
    const std::vector<ImageView> src_view = unlabeled_view(source.samples);

    std::vector<AdaptReport> reports;
    for (const auto& tag : tags) {
        const Dataset unlabeled = load_dataset(layout_.dataset(tag, "unlabeled"));
        const Dataset val = load_dataset(layout_.dataset(tag, "val"));
        AdaptConfig ac = cfg_.adapt;
        ac.seed = derive_seed(cfg_.master_seed, {kAdaptStream, domain_index(cfg_, tag)});
        ac.progress = progress_for(adapt_stage(tag));
        AdaptResult r = train_dam(src_view, unlabeled_view(unlabeled.samples), enn, onn, val.samples, ac);

        const fs::path dam = layout_.checkpoint("dam_" + tag);
        const fs::path dcm = layout_.checkpoint("dcm_" + tag);
        const fs::path rep = layout_.report("adapt_" + tag + ".jsonl");
        save_checkpoint(r.dam, dam);
        save_checkpoint(r.dcm, dcm);
        write_text(rep, r.report.to_json_lines());
        manifest_.complete(adapt_stage(tag), {dam, dcm, rep});
        reports.push_back(std::move(r.report));
    }
    return reports;
}

std::vector<TrainReport> Experiment::train_target(const std::optional<std::string>& only) {
    std::vector<TrainReport> reports;
    for (const auto& tag : domains(only)) {
        manifest_.require(generate_stage(tag));
        const GenerationConfig& gc = cfg_.target(tag);
        const std::uint64_t d = domain_index(cfg_, tag);
        const std::vector<Image> backgrounds =
            generate_backgrounds(gc, cfg_.active_sizes().target_backgrounds,
                                 derive_seed(cfg_.master_seed, {kTargetBackgroundStream, d}), cfg_.threads);
        const Image signal = render_signal(gc.signal, gc.system, gc.grid);
        const Dataset val = load_dataset(layout_.dataset(tag, "val"));
        TrainConfig tc = cfg_.target_train;
        tc.seed = derive_seed(cfg_.master_seed, {kTargetTrainStream, d});
        tc.progress = progress_for(train_target_stage(tag));
        TrainedObserver to = train_target_observer_semi_online(backgrounds, signal, gc.noise, val, tc);

        const fs::path enn = layout_.checkpoint("to_" + tag + "_enn");
        const fs::path onn = layout_.checkpoint("to_" + tag + "_onn");
        const fs::path rep = layout_.report("train_target_" + tag + ".jsonl");
        save_checkpoint(to.enn, enn);
        save_checkpoint(to.onn, onn);
        write_text(rep, to.report.to_json_lines());
        manifest_.complete(train_target_stage(tag), {enn, onn, rep});
        reports.push_back(std::move(to.report));
    }
    return reports;
}

ComparisonTable Experiment::evaluate(const std::optional<std::string>& only) {
    const std::vector<std::string> tags = domains(only);
    manifest_.require(kTrainSourceStage);
    for (const auto& tag : tags) {
        manifest_.require(generate_stage(tag));
        manifest_.require(adapt_stage(tag));
        manifest_.require(train_target_stage(tag));
    }
    const ObserverParams enn = load_checkpoint(layout_.checkpoint("source_enn"));
    const ObserverParams onn = load_checkpoint(layout_.checkpoint("source_onn"));

    std::vector<Dataset> tests;
    tests.reserve(tags.size());
    std::vector<DomainEvaluation> evals;
    for (const auto& tag : tags) {
        tests.push_back(load_dataset(layout_.dataset(tag, "test")));
        DomainEvaluation e;
        e.tag = tag;
        e.blur = cfg_.target(tag).system.blur;
        e.observers.emplace(Method::SO, Observer{enn, onn});
        e.observers.emplace(Method::SODA, Observer{load_checkpoint(layout_.checkpoint("dam_" + tag)), onn});
        e.observers.emplace(Method::TO, Observer{load_checkpoint(layout_.checkpoint("to_" + tag + "_enn")),
                                                 load_checkpoint(layout_.checkpoint("to_" + tag + "_onn"))});
        evals.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < evals.size(); ++i) evals[i].test = tests[i].samples;

    ComparisonTable table = build_comparison(tags, evals, cfg_.bootstrap_resamples,
                                             derive_seed(cfg_.master_seed, {kEvaluateStream}));

    std::vector<fs::path> artifacts;
    const fs::path txt = layout_.report("comparison.txt");
    const fs::path js = layout_.report("comparison.json");
    write_text(txt, format_table(table));
    write_text(js, table_to_json(table).dump(2) + "\n");
    artifacts.push_back(txt);
    artifacts.push_back(js);
    for (std::size_t d = 0; d < tags.size(); ++d) {
        std::map<Method, RocResult> curves;
        for (Method m : {Method::SO, Method::SODA, Method::TO}) {
            const fs::path csv = layout_.report("roc/" + tags[d] + "_" + to_string(m) + ".csv");
            write_roc_csv(table.curves.at(m)[d], csv);
            artifacts.push_back(csv);
            curves.emplace(m, table.curves.at(m)[d]);
        }
        const fs::path svg = layout_.report("plots/roc_" + tags[d] + ".svg");
        write_roc_svg(curves, "ROC, target domain " + tags[d], svg);
        artifacts.push_back(svg);
    }
    manifest_.complete(kEvaluateStage, artifacts);
    return table;
}

ComparisonTable Experiment::run_all() {
    generate();
    train_source();
    adapt();
    train_target();
    return evaluate();
}

nlohmann::json Experiment::stored_report() const {
    manifest_.require(kEvaluateStage);
    std::ifstream in(layout_.report("comparison.json"));
    nlohmann::json j;
    in >> j;
    return j;
}

}  // namespace daobs
