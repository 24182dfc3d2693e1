// Command-line front end: run, compare, gen-data.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "otafl/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Over-the-air federated learning simulator with one-shot and iterative magnitude pruning"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "Run one experiment and write metrics.csv / summary.json");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (overrides output_dir in the config)");

    std::string sparsities = "0.3,0.5,0.7,0.9";
    auto* compare = app.add_subcommand("compare", "Run the OSP/IMP x sparsity x FP/PP matrix and write compare.csv");
    compare->add_option("--config", config_path, "Base experiment config (JSON)")->required();
    compare->add_option("--sparsities", sparsities, "Comma-separated target sparsities")->capture_default_str();
    compare->add_option("--out", out_dir, "Output directory");

    otafl::SyntheticSpec spec;
    std::string kind = "blobs";
    std::string data_out;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
    gen->add_option("--kind", kind, "blobs or spirals")->check(CLI::IsMember({"blobs", "spirals"}))->capture_default_str();
    gen->add_option("--classes", spec.num_classes, "Number of classes")->capture_default_str();
    gen->add_option("--per-class", spec.samples_per_class, "Samples per class")->capture_default_str();
    gen->add_option("--dim", spec.feature_dim, "Feature dimension (blobs; spirals are 2-D)");
    gen->add_option("--noise", spec.noise_level, "Angular noise (spirals)")->capture_default_str();
    gen->add_option("--seed", spec.seed, "Seed")->capture_default_str();
    gen->add_option("--out", data_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? otafl::exit_ok : otafl::exit_usage;
    }

    const unsigned threads = otafl::thread_budget();
    if (*run) return otafl::cmd_run(config_path, out_dir, threads, std::cout, std::cerr);
    if (*compare) return otafl::cmd_compare(config_path, sparsities, out_dir, threads, std::cout, std::cerr);
    if (*gen) {
        spec.kind = kind == "spirals" ? otafl::SyntheticKind::spirals : otafl::SyntheticKind::blobs;
        if (spec.kind == otafl::SyntheticKind::spirals && gen->count("--dim") == 0) spec.feature_dim = 2;
        return otafl::cmd_gen_data(spec, data_out, std::cout, std::cerr);
    }
    return otafl::exit_usage;
}
