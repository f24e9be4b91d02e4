#pragma once

// Config-driven orchestration of the full study: dataset generation, source
// observer training, per-domain adaptation, reference observer training and
// the SO / SODA / TO comparison. Every stage reads its inputs from, and writes
// its outputs to, the run directory, and records them in a manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "daobs/adaptation.hpp"
#include "daobs/evaluation.hpp"
#include "daobs/imaging.hpp"
#include "daobs/training.hpp"

namespace daobs {

struct DatasetSizes {
    std::int64_t source_train_pairs = 100000;
    std::int64_t source_val_pairs = 200;
    std::int64_t target_unlabeled_pairs = 5000;
    std::int64_t target_val_pairs = 200;
    std::int64_t target_test_pairs = 200;
    /// Background ensemble for the reference observer's semi-online training.
    std::int64_t target_backgrounds = 100000;
    friend bool operator==(const DatasetSizes&, const DatasetSizes&) = default;
};

struct ExperimentConfig {
    GenerationConfig source;
    std::vector<GenerationConfig> targets;
    DatasetSizes sizes;
    /// Sizes used instead of `sizes` when desk_scale is set.
    DatasetSizes desk_sizes{10000, 200, 2000, 200, 200, 10000};
    bool desk_scale = false;
    TrainConfig train;
    TrainConfig target_train;
    AdaptConfig adapt;
    int bootstrap_resamples = 1000;
    unsigned threads = 1;
    std::uint64_t master_seed = 1;
    std::filesystem::path output_dir = "runs/default";

    [[nodiscard]] const DatasetSizes& active_sizes() const { return desk_scale ? desk_sizes : sizes; }
    [[nodiscard]] const GenerationConfig& target(const std::string& tag) const;
};

/// Source h=40, w=0.5; targets h=50, w in {2, 3, 4, 5, 6}; A=0.2, r_c=(32,32), w_s=3,
/// mean lump count 5, a=1, lump width 7, noise sigma 10.
ExperimentConfig reference_config();

/// Throws ConfigError on any invalid or inconsistent entry.
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

/// Hash of the canonical JSON form (output_dir excluded).
std::string config_hash(const ExperimentConfig& cfg);

/// Stage bookkeeping persisted as manifest.json in the run directory.
class RunManifest {
public:
    RunManifest(std::filesystem::path root, std::string config_hash);

    /// Loads an existing manifest; a missing file yields an empty one. A manifest
    /// written for a different configuration is discarded.
    static RunManifest open(const std::filesystem::path& root, const std::string& config_hash);

    void save() const;
    [[nodiscard]] bool completed(const std::string& stage) const;
    /// Throws a StageError naming `stage` unless it completed and its artifacts still match their hashes.
    void require(const std::string& stage) const;
    /// Records a completed stage with the content hash of every artifact (paths relative to the root).
    void complete(const std::string& stage, const std::vector<std::filesystem::path>& artifacts);
    [[nodiscard]] const nlohmann::json& json() const { return data_; }

private:
    std::filesystem::path root_;
    nlohmann::json data_;
};

/// A stage ran out of order or its inputs changed.
class StageError : public std::runtime_error {
public:
    explicit StageError(const std::string& what) : std::runtime_error(what) {}
};

/// Paths inside a run directory.
struct RunLayout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path dataset(const std::string& domain, const std::string& split) const;
    [[nodiscard]] std::filesystem::path checkpoint(const std::string& name) const;
    [[nodiscard]] std::filesystem::path report(const std::string& name) const;
};

/// Stage names as recorded in the manifest.
std::string generate_stage(const std::string& domain);
std::string adapt_stage(const std::string& domain);
std::string train_target_stage(const std::string& domain);
inline const std::string kTrainSourceStage = "train-source";
inline const std::string kEvaluateStage = "evaluate";

class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg);

    [[nodiscard]] const ExperimentConfig& config() const { return cfg_; }
    [[nodiscard]] const RunLayout& layout() const { return layout_; }

    /// Target tags to process: all of them, or just `only` (ConfigError if unknown).
    [[nodiscard]] std::vector<std::string> domains(const std::optional<std::string>& only) const;

    void generate(const std::optional<std::string>& only = std::nullopt);
    TrainReport train_source();
    std::vector<AdaptReport> adapt(const std::optional<std::string>& only = std::nullopt);
    std::vector<TrainReport> train_target(const std::optional<std::string>& only = std::nullopt);
    ComparisonTable evaluate(const std::optional<std::string>& only = std::nullopt);

    /// All stages in order.
    ComparisonTable run_all();

    /// Stored comparison table (evaluate must have run).
    [[nodiscard]] nlohmann::json stored_report() const;

    /// Receives progress lines prefixed with the stage name.
    void set_progress(std::function<void(const std::string&)> sink) { progress_ = std::move(sink); }

private:
    [[nodiscard]] std::function<void(const std::string&)> progress_for(const std::string& stage) const;

    ExperimentConfig cfg_;
    RunLayout layout_;
    RunManifest manifest_;
    std::function<void(const std::string&)> progress_;
};

}  // namespace daobs
