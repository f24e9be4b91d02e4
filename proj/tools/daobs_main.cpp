// daobs command line: one subcommand per pipeline stage.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "daobs/errors.hpp"
#include "daobs/experiment.hpp"
#include "daobs/platform.hpp"

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> domain;
    bool desk_scale = false;
};

void add_common(CLI::App* cmd, Options& o, bool with_domain) {
    cmd->add_option("--config", o.config, "experiment config (JSON); defaults to the reference setup");
    cmd->add_option("--out", o.out, "run directory");
    cmd->add_option("--seed", o.seed, "master seed");
    if (with_domain) cmd->add_option("--domain", o.domain, "restrict to one target domain tag");
    cmd->add_flag("--desk-scale", o.desk_scale, "use the reduced dataset sizes");
}

daobs::ExperimentConfig resolve(const Options& o) {
    daobs::ExperimentConfig cfg =
        o.config.empty() ? daobs::reference_config() : daobs::load_experiment_config(o.config);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.desk_scale) cfg.desk_scale = true;
    daobs::validate(cfg);
    return cfg;
}

void print_report(const daobs::Experiment& ex) {
    (void)ex.stored_report();  // checks the evaluate stage and its artifacts
    std::ifstream in(ex.layout().report("comparison.txt"));
    std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
    daobs::keep_heap_resident();
    CLI::App app{"Domain-adapted CNN observers for signal-known-exactly detection in lumpy backgrounds"};
    app.require_subcommand(1);
    Options o;
    auto* gen = app.add_subcommand("generate", "simulate source and target datasets");
    auto* src = app.add_subcommand("train-source", "train the source observer (ENN + ONN)");
    auto* ada = app.add_subcommand("adapt", "adversarial adaptation of the encoder to target domains");
    auto* tgt = app.add_subcommand("train-target", "train the reference target observers");
    auto* eva = app.add_subcommand("evaluate", "score SO, SODA and TO on the target test sets");
    auto* rep = app.add_subcommand("report", "print the stored comparison table");
    add_common(gen, o, true);
    add_common(src, o, false);
    add_common(ada, o, true);
    add_common(tgt, o, true);
    add_common(eva, o, true);
    add_common(rep, o, false);

    CLI11_PARSE(app, argc, argv);

    std::string stage = app.get_subcommands().front()->get_name();
    try {
        daobs::Experiment ex(resolve(o));
        ex.set_progress([](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
        if (*gen) {
            ex.generate(o.domain);
        } else if (*src) {
            const auto r = ex.train_source();
            std::printf("selected epoch %d, validation AUC %.4f\n", r.selected_epoch, r.selected_val_auc);
        } else if (*ada) {
            const auto tags = ex.domains(o.domain);
            const auto rs = ex.adapt(o.domain);
            for (std::size_t i = 0; i < rs.size(); ++i)
                std::printf("%s: selected iteration %d, validation AUC %.4f\n", tags[i].c_str(),
                            rs[i].selected_iteration, rs[i].selected_val_auc);
        } else if (*tgt) {
            const auto tags = ex.domains(o.domain);
            const auto rs = ex.train_target(o.domain);
            for (std::size_t i = 0; i < rs.size(); ++i)
                std::printf("%s: selected epoch %d, validation AUC %.4f\n", tags[i].c_str(), rs[i].selected_epoch,
                            rs[i].selected_val_auc);
        } else if (*eva) {
            std::cout << daobs::format_table(ex.evaluate(o.domain));
        } else if (*rep) {
            print_report(ex);
        }
    } catch (const daobs::ConfigError& e) {
        std::fprintf(stderr, "error: %s: config: %s\n", stage.c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s: %s\n", stage.c_str(), e.what());
        return 1;
    }
    return 0;
}
