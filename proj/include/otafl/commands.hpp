#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "otafl/data.hpp"
#include "otafl/errors.hpp"
#include "otafl/experiment.hpp"
#include "otafl/fed.hpp"

namespace otafl {

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_usage = 2 };

/// Worker cap from OTAFL_THREADS, else the hardware concurrency.
inline unsigned thread_budget() {
    if (const char* env = std::getenv("OTAFL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
    return parse_config(read_text_file(path), path.parent_path());
}

struct RunSummary {
    std::size_t round_count = 0;
    std::optional<double> final_accuracy;
    std::optional<double> best_accuracy;
    double final_sparsity = 0.0;
    SparsityReport size;
};

inline RunSummary summarize(const std::vector<RoundResult>& rounds, const Experiment& exp) {
    RunSummary s;
    s.round_count = rounds.size();
    for (const auto& r : rounds)
        if (!s.best_accuracy || r.metrics.test_accuracy > *s.best_accuracy) s.best_accuracy = r.metrics.test_accuracy;
    if (!rounds.empty()) s.final_accuracy = rounds.back().metrics.test_accuracy;
    s.size = sparsity_report(exp.server().mask);
    s.final_sparsity = s.size.sparsity;
    return s;
}

namespace detail {

inline nlohmann::json summary_json(const RunSummary& s, const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["complete"] = true;
    j["round_count"] = s.round_count;
    j["final_accuracy"] = s.final_accuracy ? nlohmann::json(*s.final_accuracy) : nlohmann::json(nullptr);
    j["best_accuracy"] = s.best_accuracy ? nlohmann::json(*s.best_accuracy) : nlohmann::json(nullptr);
    j["final_sparsity"] = s.final_sparsity;
    j["total_params"] = s.size.total_params;
    j["prunable_params"] = s.size.prunable_params;
    j["size_bytes_dense"] = s.size.size_bytes_dense;
    j["size_bytes_sparse"] = s.size.size_bytes_sparse;
    j["size_bytes_values"] = s.size.size_bytes_values;
    j["seed"] = cfg.seed;
    j["pruning_mode"] = to_string(cfg.pruning.mode);
    j["target_sparsity"] = cfg.pruning.target_sparsity;
    j["participation_fraction"] = cfg.fraction;
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

}  // namespace detail

/// Runs one experiment into `out_dir`: metrics.csv, summary.json and
/// checkpoints/. An INCOMPLETE marker exists until the run succeeds; on
/// failure summary.json records the error with "complete": false.
inline int run_to_directory(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, unsigned threads,
                            std::ostream& log) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto marker = out_dir / "INCOMPLETE";
    detail::write_text(marker, "run in progress or failed\n");
    try {
        Experiment exp(cfg, threads);
        std::ofstream metrics(out_dir / "metrics.csv", std::ios::binary);
        if (!metrics) throw IoError("cannot write metrics.csv");
        metrics << kMetricsHeader << '\n';
        std::vector<RoundResult> rounds;
        while (!exp.finished()) {
            rounds.push_back(exp.step());
            metrics << metrics_row(rounds.back().metrics) << '\n';
            if (cfg.checkpoint_interval > 0 && exp.server().round % cfg.checkpoint_interval == 0)
                write_checkpoint(out_dir / "checkpoints", exp.server(), cfg.seed);
        }
        metrics.close();
        if (!metrics) throw IoError("metrics.csv write failed");
        const auto summary = summarize(rounds, exp);
        detail::write_text(out_dir / "summary.json", detail::summary_json(summary, cfg).dump(2) + "\n");
        fs::remove(marker);
        log << "rounds " << summary.round_count << ", final accuracy "
            << (summary.final_accuracy ? format_double(*summary.final_accuracy) : std::string("n/a")) << ", sparsity "
            << format_double(summary.final_sparsity) << '\n';
        return exit_ok;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        nlohmann::json j{{"complete", false}, {"error", e.what()}};
        try {
            detail::write_text(out_dir / "summary.json", j.dump(2) + "\n");
        } catch (...) {
        }
        throw;
    }
}

/// `run --config <path> --out <dir>`
inline int cmd_run(const std::filesystem::path& config_path, std::string out_dir, unsigned threads, std::ostream& out,
                   std::ostream& err) {
    try {
        const auto cfg = load_config_file(config_path);
        if (out_dir.empty()) out_dir = cfg.output_dir;
        if (out_dir.empty()) {
            err << "error: no output directory (pass --out or set output_dir)\n";
            return exit_usage;
        }
        return run_to_directory(cfg, out_dir, threads, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

struct CompareCell {
    PruningMode mode = PruningMode::none;
    double sparsity = 0.0;
    double fraction = 1.0;
    RunSummary summary;

    std::string mode_label() const { return mode == PruningMode::iterative ? "IMP" : "OSP"; }
    std::string participation_label() const { return fraction >= 1.0 ? "FP" : "PP"; }
};

/// Config for one cell of the OSP/IMP x sparsity x participation matrix.
/// Sparsity 0 disables pruning, so both modes share the unpruned run.
inline ExperimentConfig compare_cell_config(ExperimentConfig base, PruningMode mode, double sparsity, double fraction) {
    base.fraction = fraction;
    base.pruning.target_sparsity = sparsity;
    base.pruning.mode = sparsity > 0.0 ? mode : PruningMode::none;
    return base;
}

inline constexpr double kPartialFraction = 0.5;

inline std::vector<CompareCell> run_compare(const ExperimentConfig& base, const std::vector<double>& sparsities, unsigned threads) {
    std::vector<CompareCell> cells;
    for (double s : sparsities)
        for (auto mode : {PruningMode::one_shot, PruningMode::iterative})
            for (double f : {1.0, kPartialFraction}) cells.push_back({mode, s, f, {}});
    detail::parallel_for(cells.size(), threads, [&](std::size_t i) {
        auto& c = cells[i];
        Experiment exp(compare_cell_config(base, c.mode, c.sparsity, c.fraction));
        std::vector<RoundResult> rounds;
        while (!exp.finished()) rounds.push_back(exp.step());
        c.summary = summarize(rounds, exp);
    });
    return cells;
}

inline std::string compare_csv(const std::vector<CompareCell>& cells) {
    std::ostringstream out;
    out << "mode,sparsity,participation,fraction,final_accuracy,best_accuracy,final_sparsity,size_bytes_dense,size_bytes_sparse\n";
    for (const auto& c : cells) {
        const auto& s = c.summary;
        out << c.mode_label() << ',' << format_double(c.sparsity) << ',' << c.participation_label() << ','
            << format_double(c.fraction) << ',' << (s.final_accuracy ? format_double(*s.final_accuracy) : "") << ','
            << (s.best_accuracy ? format_double(*s.best_accuracy) : "") << ',' << format_double(s.final_sparsity) << ','
            << s.size.size_bytes_dense << ',' << s.size.size_bytes_sparse << '\n';
    }
    return out.str();
}

inline void print_compare_table(std::ostream& out, const std::vector<CompareCell>& cells) {
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("   n/a");
        char buf[16];
        std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * *v);
        return std::string(buf);
    };
    out << "mode  sparsity  part  final%   best%   sparse_bytes\n";
    for (const auto& c : cells) {
        char line[128];
        std::snprintf(line, sizeof line, "%-4s  %8.3f  %-4s  %s  %s  %12zu\n", c.mode_label().c_str(), c.sparsity,
                      c.participation_label().c_str(), pct(c.summary.final_accuracy).c_str(),
                      pct(c.summary.best_accuracy).c_str(), c.summary.size.size_bytes_sparse);
        out << line;
    }
}

/// Parses "0.3,0.5,0.7" into sparsities in [0, 1).
inline std::vector<double> parse_sparsity_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto cell = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        double v;
        if (!detail::parse_double(cell, v) || !(v >= 0.0 && v < 1.0))
            throw ConfigError("--sparsities", "expected comma-separated values in [0, 1), got \"" + cell + "\"");
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

/// `compare --config <path> --sparsities a,b,c --out <dir>`
inline int cmd_compare(const std::filesystem::path& config_path, const std::string& sparsities, std::string out_dir,
                       unsigned threads, std::ostream& out, std::ostream& err) {
    try {
        const auto base = load_config_file(config_path);
        const auto list = parse_sparsity_list(sparsities);
        if (out_dir.empty()) out_dir = base.output_dir;
        if (out_dir.empty()) {
            err << "error: no output directory (pass --out or set output_dir)\n";
            return exit_usage;
        }
        std::filesystem::create_directories(out_dir);
        const auto cells = run_compare(base, list, threads);
        detail::write_text(std::filesystem::path(out_dir) / "compare.csv", compare_csv(cells));
        print_compare_table(out, cells);
        return exit_ok;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

/// `gen-data --kind blobs --classes C --per-class N --dim d --seed S --out <path>`
inline int cmd_gen_data(const SyntheticSpec& spec, const std::filesystem::path& out_path, std::ostream& out, std::ostream& err) {
    if (spec.kind == SyntheticKind::spirals && spec.feature_dim != 2) {
        err << "usage error: spirals are 2-dimensional (--dim must be 2)\n";
        return exit_usage;
    }
    if (spec.num_classes < 2 || spec.samples_per_class < 1 || spec.feature_dim < 1 || !(spec.noise_level >= 0.0)) {
        err << "usage error: need --classes >= 2, --per-class >= 1, --dim >= 1, --noise >= 0\n";
        return exit_usage;
    }
    try {
        const auto data = generate_samples(spec);
        if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
        save_csv(out_path.string(), data);
        out << "N=" << data.size() << " d=" << data.dim() << " C=" << data.num_classes() << '\n';
        return exit_ok;
    } catch (const DomainError& e) {
        err << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

}  // namespace otafl
