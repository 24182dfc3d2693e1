#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "otafl/channel.hpp"
#include "otafl/data.hpp"
#include "otafl/errors.hpp"
#include "otafl/fed.hpp"
#include "otafl/nn.hpp"
#include "otafl/pruning.hpp"

namespace otafl {

enum class DatasetSource { synthetic, csv };

struct DatasetConfig {
    DatasetSource source = DatasetSource::synthetic;
    SyntheticSpec synthetic;
    std::string train_path;
    std::string test_path;
    int num_classes = 10;  // csv only; synthetic uses synthetic.num_classes
    bool normalize = false;
};

struct PruningConfig {
    PruningMode mode = PruningMode::none;
    double target_sparsity = 0.0;
    int cycles = 5;
    /// One-shot event round; defaults to rounds / 2.
    std::optional<int> prune_round;
};

/// A fully validated experiment. Defaults follow the reference case study:
/// 100 clients, full participation, 1000 rounds, batch 64, lr 0.001, 10 dB SNR.
struct ExperimentConfig {
    std::vector<std::size_t> layer_sizes;
    DatasetConfig dataset;
    std::size_t num_clients = 100;
    double fraction = 1.0;
    int rounds = 1000;
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    std::size_t local_steps = 0;
    std::optional<double> early_stop_accuracy;
    PruningConfig pruning;
    ChannelConfig channel;
    std::uint64_t seed = 0;
    std::string output_dir;
    int checkpoint_interval = 0;

    PruningPlan plan() const {
        switch (pruning.mode) {
            case PruningMode::none: return PruningPlan::none();
            case PruningMode::one_shot: return PruningPlan::one_shot(pruning.target_sparsity, pruning.prune_round.value_or(rounds / 2));
            case PruningMode::iterative: return PruningPlan::iterative(pruning.target_sparsity, pruning.cycles, rounds);
        }
        return PruningPlan::none();
    }

    Hyperparams hyperparams() const { return {learning_rate, batch_size, local_steps}; }
    ParticipationPolicy policy() const { return {num_clients, fraction}; }
};

namespace detail {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be rejected as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return nullptr;
        return &*it;
    }

    std::optional<double> number(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) throw ConfigError(field(key), "expected a number");
        return v->get<double>();
    }

    std::optional<long long> integer(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (v->is_number_float()) {
            const double d = v->get<double>();
            if (std::floor(d) != d) throw ConfigError(field(key), "expected an integer");
            return static_cast<long long>(d);
        }
        if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if (v->is_number_unsigned() && v->get<unsigned long long>() > static_cast<unsigned long long>(std::numeric_limits<long long>::max()))
            throw ConfigError(field(key), "integer out of range");
        return v->get<long long>();
    }

    std::optional<bool> boolean(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
        return v->get<bool>();
    }

    std::optional<std::string> string(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) throw ConfigError(field(key), "expected a string");
        return v->get<std::string>();
    }

    std::optional<ObjectReader> object(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        return ObjectReader(*v, field(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline long long require_min(const ObjectReader& r, const std::string& key, long long v, long long lo) {
    if (v < lo) throw ConfigError(r.field(key), "must be >= " + std::to_string(lo));
    return v;
}

}  // namespace detail

/// Parses and validates a JSON experiment config. Unknown keys are errors;
/// relative CSV paths are resolved against `base_dir`.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("syntax error: ") + e.what());
    }
    ExperimentConfig cfg;
    detail::ObjectReader top(root, "");

    {
        auto model = top.object("model");
        if (!model) throw ConfigError("model", "required");
        const auto* sizes = model->find("layer_sizes");
        if (!sizes) throw ConfigError("model.layer_sizes", "required");
        if (!sizes->is_array() || sizes->size() < 2) throw ConfigError("model.layer_sizes", "expected an array of at least 2 sizes");
        for (std::size_t i = 0; i < sizes->size(); ++i) {
            const auto& s = (*sizes)[i];
            if (!s.is_number_integer() || s.get<long long>() < 1)
                throw ConfigError("model.layer_sizes[" + std::to_string(i) + "]", "expected a positive integer");
            cfg.layer_sizes.push_back(s.get<std::size_t>());
        }
        if (auto act = model->string("activation"); act && *act != "relu")
            throw ConfigError("model.activation", "only \"relu\" is supported");
        model->finish();
    }

    {
        auto ds = top.object("dataset");
        if (!ds) throw ConfigError("dataset", "required");
        auto& d = cfg.dataset;
        const auto kind = ds->string("kind").value_or("blobs");
        if (kind == "blobs" || kind == "spirals") {
            d.source = DatasetSource::synthetic;
            d.synthetic.kind = kind == "blobs" ? SyntheticKind::blobs : SyntheticKind::spirals;
            d.synthetic.num_classes = static_cast<int>(detail::require_min(*ds, "classes", ds->integer("classes").value_or(10), 2));
            d.synthetic.samples_per_class = static_cast<std::size_t>(detail::require_min(*ds, "per_class", ds->integer("per_class").value_or(200), 1));
            d.synthetic.feature_dim = static_cast<std::size_t>(detail::require_min(*ds, "dim", ds->integer("dim").value_or(kind == "blobs" ? 20 : 2), 1));
            if (kind == "spirals" && d.synthetic.feature_dim != 2) throw ConfigError(ds->field("dim"), "spirals are 2-dimensional");
            if (kind == "blobs" && d.synthetic.feature_dim + 1 < static_cast<std::size_t>(d.synthetic.num_classes))
                throw ConfigError(ds->field("dim"), "blobs need dim >= classes - 1");
            d.synthetic.noise_level = ds->number("noise").value_or(0.2);
            if (!(d.synthetic.noise_level >= 0.0)) throw ConfigError(ds->field("noise"), "must be >= 0");
            if (auto s = ds->integer("seed")) d.synthetic.seed = static_cast<std::uint64_t>(detail::require_min(*ds, "seed", *s, 0));
            else d.synthetic.seed = std::numeric_limits<std::uint64_t>::max();  // resolved to the master seed below
        } else if (kind == "csv") {
            d.source = DatasetSource::csv;
            auto train = ds->string("train_path");
            auto test = ds->string("test_path");
            if (!train) throw ConfigError(ds->field("train_path"), "required for csv datasets");
            if (!test) throw ConfigError(ds->field("test_path"), "required for csv datasets");
            auto resolve = [&](const std::string& p) {
                std::filesystem::path path(p);
                return (path.is_relative() && !base_dir.empty() ? base_dir / path : path).string();
            };
            d.train_path = resolve(*train);
            d.test_path = resolve(*test);
            auto classes = ds->integer("classes");
            if (!classes) throw ConfigError(ds->field("classes"), "required for csv datasets");
            d.num_classes = static_cast<int>(detail::require_min(*ds, "classes", *classes, 1));
        } else {
            throw ConfigError(ds->field("kind"), "expected \"blobs\", \"spirals\" or \"csv\"");
        }
        d.normalize = ds->boolean("normalize").value_or(false);
        ds->finish();
    }

    if (auto fed = top.object("federation")) {
        if (auto v = fed->integer("clients")) cfg.num_clients = static_cast<std::size_t>(detail::require_min(*fed, "clients", *v, 1));
        if (auto v = fed->integer("rounds")) cfg.rounds = static_cast<int>(detail::require_min(*fed, "rounds", *v, 0));
        if (auto v = fed->integer("batch_size")) cfg.batch_size = static_cast<std::size_t>(detail::require_min(*fed, "batch_size", *v, 1));
        if (auto v = fed->number("learning_rate")) {
            if (!(*v > 0.0) || !std::isfinite(*v)) throw ConfigError(fed->field("learning_rate"), "must be > 0");
            cfg.learning_rate = *v;
        }
        if (auto v = fed->integer("local_steps")) cfg.local_steps = static_cast<std::size_t>(detail::require_min(*fed, "local_steps", *v, 0));
        if (auto v = fed->number("early_stop_accuracy")) {
            if (!(*v > 0.0 && *v <= 1.0)) throw ConfigError(fed->field("early_stop_accuracy"), "must lie in (0, 1]");
            cfg.early_stop_accuracy = *v;
        }
        fed->finish();
    }

    if (auto part = top.object("participation")) {
        if (auto v = part->number("fraction")) {
            if (!(*v > 0.0 && *v <= 1.0)) throw ConfigError(part->field("fraction"), "must lie in (0, 1]");
            cfg.fraction = *v;
        }
        part->finish();
    }

    if (auto pr = top.object("pruning")) {
        if (auto mode = pr->string("mode")) {
            if (*mode == "none") cfg.pruning.mode = PruningMode::none;
            else if (*mode == "one_shot") cfg.pruning.mode = PruningMode::one_shot;
            else if (*mode == "iterative") cfg.pruning.mode = PruningMode::iterative;
            else throw ConfigError(pr->field("mode"), "expected \"none\", \"one_shot\" or \"iterative\"");
        }
        if (auto v = pr->number("target_sparsity")) {
            if (!(*v >= 0.0 && *v < 1.0)) throw ConfigError(pr->field("target_sparsity"), "must lie in [0, 1)");
            cfg.pruning.target_sparsity = *v;
        }
        if (auto v = pr->integer("cycles")) cfg.pruning.cycles = static_cast<int>(detail::require_min(*pr, "cycles", *v, 1));
        if (auto v = pr->integer("prune_round")) cfg.pruning.prune_round = static_cast<int>(detail::require_min(*pr, "prune_round", *v, 0));
        pr->finish();
    }

    if (auto ch = top.object("channel")) {
        if (auto v = ch->number("snr_db")) {
            if (!std::isfinite(*v)) throw ConfigError(ch->field("snr_db"), "must be finite");
            cfg.channel.snr_db = *v;
        }
        if (auto v = ch->boolean("noise_enabled")) cfg.channel.noise_enabled = *v;
        ch->finish();
    }

    if (auto v = top.integer("seed")) cfg.seed = static_cast<std::uint64_t>(detail::require_min(top, "seed", *v, 0));
    if (cfg.dataset.source == DatasetSource::synthetic && cfg.dataset.synthetic.seed == std::numeric_limits<std::uint64_t>::max())
        cfg.dataset.synthetic.seed = cfg.seed;
    if (auto v = top.string("output_dir")) cfg.output_dir = *v;
    if (auto v = top.integer("checkpoint_interval")) cfg.checkpoint_interval = static_cast<int>(detail::require_min(top, "checkpoint_interval", *v, 0));
    top.finish();
    return cfg;
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

inline LoadedData load_datasets(const DatasetConfig& d) {
    LoadedData out;
    if (d.source == DatasetSource::synthetic) {
        auto split = gen_synthetic(d.synthetic);
        out = {std::move(split.train), std::move(split.test)};
    } else {
        out.train = load_csv(d.train_path, d.num_classes);
        out.test = load_csv(d.test_path, d.num_classes);
        if (out.train.dim() != out.test.dim()) throw ConfigError("dataset.test_path", "feature width differs from the training set");
    }
    if (d.normalize) {
        const auto stats = FeatureStats::fit(out.train);
        out.train = stats.apply(out.train);
        out.test = stats.apply(out.test);
    }
    return out;
}

/// A ready-to-step simulation built from a config.
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg, unsigned threads = 1)
        : cfg_(std::move(cfg)), spec_(cfg_.layer_sizes), threads_(threads) {
        auto data = load_datasets(cfg_.dataset);
        train_ = std::move(data.train);
        test_ = std::move(data.test);
        if (spec_.input_dim() != train_.dim())
            throw ConfigError("model.layer_sizes", "input size " + std::to_string(spec_.input_dim()) +
                                                       " does not match dataset width " + std::to_string(train_.dim()));
        if (spec_.num_classes() != static_cast<std::size_t>(train_.num_classes()))
            throw ConfigError("model.layer_sizes", "output size " + std::to_string(spec_.num_classes()) +
                                                       " does not match class count " + std::to_string(train_.num_classes()));
        if (cfg_.num_clients > train_.size())
            throw ConfigError("federation.clients", "more clients than training samples (" + std::to_string(train_.size()) + ")");
        const auto smallest_shard = train_.size() / cfg_.num_clients;
        if (cfg_.batch_size > smallest_shard)
            throw ConfigError("federation.batch_size", "exceeds the smallest client shard (" + std::to_string(smallest_shard) + " samples)");
        clients_ = make_clients(train_, cfg_.num_clients, cfg_.seed);
        server_ = ServerState::initial(spec_, cfg_.seed, cfg_.plan());
    }

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const ModelSpec& spec() const noexcept { return spec_; }
    const ServerState& server() const noexcept { return server_; }
    const Dataset& train() const noexcept { return train_; }
    const Dataset& test() const noexcept { return test_; }
    std::span<const ClientState> clients() const noexcept { return clients_; }

    bool finished() const noexcept { return server_.round >= cfg_.rounds || stopped_; }

    RoundResult step() {
        RoundContext ctx{spec_, clients_, cfg_.policy(), cfg_.channel, cfg_.hyperparams(), cfg_.seed, &test_, threads_};
        auto r = run_round(server_, ctx);
        if (cfg_.early_stop_accuracy && r.metrics.test_accuracy >= *cfg_.early_stop_accuracy) stopped_ = true;
        return r;
    }

private:
    ExperimentConfig cfg_;
    ModelSpec spec_;
    unsigned threads_;
    Dataset train_;
    Dataset test_;
    std::vector<ClientState> clients_;
    ServerState server_;
    bool stopped_ = false;
};

struct RunHooks {
    /// Called after every round with the post-round server state.
    std::function<void(const ServerState&, const RoundResult&)> on_round;
    std::optional<std::filesystem::path> checkpoint_dir;
};

/// Runs a config to completion (or early stop), one RoundResult per round.
inline std::vector<RoundResult> run_experiment(const ExperimentConfig& cfg, unsigned threads = 1, const RunHooks& hooks = {}) {
    Experiment exp(cfg, threads);
    std::vector<RoundResult> results;
    results.reserve(static_cast<std::size_t>(cfg.rounds));
    while (!exp.finished()) {
        results.push_back(exp.step());
        if (hooks.on_round) hooks.on_round(exp.server(), results.back());
        if (hooks.checkpoint_dir && cfg.checkpoint_interval > 0 && exp.server().round % cfg.checkpoint_interval == 0)
            write_checkpoint(*hooks.checkpoint_dir, exp.server(), cfg.seed);
    }
    return results;
}

inline constexpr const char* kMetricsHeader =
    "round,test_accuracy,test_loss,train_loss,sparsity,size_bytes_dense,size_bytes_sparse,participants_count";

inline std::string metrics_row(const MetricsRecord& m) {
    return std::to_string(m.round) + ',' + format_double(m.test_accuracy) + ',' + format_double(m.test_loss) + ',' +
           format_double(m.train_loss) + ',' + format_double(m.sparsity) + ',' + std::to_string(m.size_bytes_dense) + ',' +
           std::to_string(m.size_bytes_sparse) + ',' + std::to_string(m.participants_count);
}

}  // namespace otafl
