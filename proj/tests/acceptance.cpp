// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "otafl/channel.hpp"
#include "otafl/commands.hpp"
#include "otafl/experiment.hpp"
#include "otafl/pruning.hpp"

using namespace otafl;
using namespace otafl::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. Analytic gradients against central differences of an independent forward pass.
Outcome gradient_oracle() {
    Rng rng(2024);
    const int instances = 25;
    double worst = 0.0;
    std::size_t largest = 0;
    for (int t = 0; t < instances; ++t) {
        const auto spec = random_spec(rng, 500);
        largest = std::max(largest, spec.parameter_count());
        const auto batch = random_batch(rng, spec, 1 + rng.uniform_index(8));
        const auto p = random_params(rng, spec, 0.7);
        const auto analytic = loss_and_grad(p, spec, batch).grad;
        const auto inputs = rows_of(batch.features);
        const auto numeric = oracle::central_differences(
            [&](const std::vector<double>& w) { return oracle::naive_mean_ce(w, spec.layer_sizes(), inputs, batch.labels); },
            p.values, 1e-5);
        for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
    }
    return {worst < 1e-4, fmt("%d instances (<= %zu params), max rel err %.3g < 1e-4", instances, largest, worst)};
}

// 2. ideal_aggregate vs a two-pass mean; noise-off OTA vs ideal, bit for bit.
Outcome aggregation_oracle() {
    Rng rng(7);
    double worst = 0.0;
    bool identical = true;
    for (int t = 0; t < 50; ++t) {
        const auto m = 1 + rng.uniform_index(20);
        const auto d = 1 + rng.uniform_index(500);
        const auto layout = flat_layout(d);
        std::vector<std::vector<double>> rows(m, std::vector<double>(d));
        std::vector<GradientVector> gvs;
        for (auto& r : rows) {
            for (auto& v : r) v = rng.normal(0.0, 1.0 + 10.0 * rng.uniform());
            gvs.emplace_back(r, layout);
        }
        const auto ideal = ideal_aggregate(gvs);
        const auto expected = oracle::two_pass_mean(rows);
        for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(ideal[j] - expected[j]));
        Rng noise(t);
        identical = identical && ota_aggregate(gvs, {10.0, false}, noise).values == ideal.values;
    }
    return {worst <= 1e-12 && identical,
            fmt("max |ideal - mean| %.3g <= 1e-12, noise-off bit-identical: %s", worst, identical ? "yes" : "no")};
}

// 3. Empirical receiver-noise variance against P / 10^(snr/10).
Outcome awgn_calibration() {
    const std::size_t d = 100000;
    Rng rng(31);
    const auto layout = flat_layout(d);
    std::vector<GradientVector> gvs;
    for (int e = 0; e < 3; ++e) {
        std::vector<double> v(d);
        for (auto& x : v) x = rng.normal(0.5, 2.0);
        gvs.emplace_back(std::move(v), layout);
    }
    // Independent superposition and power, then recover the noise from the output.
    std::vector<double> sum(d, 0.0);
    for (const auto& g : gvs)
        for (std::size_t i = 0; i < d; ++i) sum[i] += g[i];
    double power = 0.0;
    for (double v : sum) power += v * v;
    power /= static_cast<double>(d);
    const double expected = power / 10.0;
    Rng noise(77);
    const auto y = ota_aggregate(gvs, {10.0, true}, noise);
    double mean = 0.0;
    std::vector<double> n(d);
    for (std::size_t i = 0; i < d; ++i) mean += (n[i] = 3.0 * y[i] - sum[i]);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : n) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d - 1);
    const double rel = std::abs(var / expected - 1.0);
    return {rel < 0.05, fmt("d=1e5 at 10 dB: empirical var %.6g vs %.6g (rel dev %.4f < 0.05)", var, expected, rel)};
}

// Independent reference for a fresh (no prior) magnitude mask: full stable
// sort of weight indices by |w|, first floor(pN) dropped.
std::set<std::size_t> reference_drops(const ParameterVector& p, const ModelSpec& spec, double target) {
    std::vector<std::size_t> weights;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto s = spec.weight_segment(l);
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) weights.push_back(i);
    }
    std::stable_sort(weights.begin(), weights.end(), [&](auto a, auto b) { return std::abs(p[a]) < std::abs(p[b]); });
    const auto k = static_cast<std::size_t>(std::floor(target * static_cast<double>(weights.size()) + 1e-9));
    return {weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(k)};
}

// 4. Mask properties on randomized cases.
Outcome mask_properties() {
    Rng rng(404);
    const int cases = 120;
    int exact = 0, nested = 0, threshold = 0, bias = 0, consistent = 0;
    for (int t = 0; t < cases; ++t) {
        const auto spec = random_spec(rng, 500);
        auto p = random_params(rng, spec);
        if (t % 4 == 0)  // force magnitude ties
            for (auto& v : p.values) v = std::round(v * 2.0) / 2.0;
        const double target = 0.95 * rng.uniform();
        const auto mask = compute_magnitude_mask(p, target);
        const auto n = static_cast<double>(spec.layout()->weight_count());

        const auto ref = reference_drops(p, spec, target);
        bool same = mask.dropped() == ref.size();
        for (auto i : ref) same = same && !mask.keep(i);
        exact += same && std::abs(sparsity(mask) - target) <= 1.0 / n;

        double max_dropped = 0.0, min_kept = INFINITY;
        bool biases_kept = true;
        for (std::size_t l = 0; l < spec.num_layers(); ++l) {
            const auto w = spec.weight_segment(l);
            for (std::size_t i = w.offset; i < w.offset + w.length; ++i) {
                if (mask.keep(i)) min_kept = std::min(min_kept, std::abs(p[i]));
                else max_dropped = std::max(max_dropped, std::abs(p[i]));
            }
            const auto b = spec.bias_segment(l);
            for (std::size_t i = b.offset; i < b.offset + b.length; ++i) biases_kept = biases_kept && mask.keep(i);
        }
        threshold += max_dropped <= min_kept;
        bias += biases_kept;

        // IMP chain with retraining-like drift between cycles.
        const auto schedule = imp_fraction_schedule(0.5 + 0.45 * rng.uniform(), 1 + static_cast<int>(rng.uniform_index(6)));
        PruneMask prev(spec.layout());
        auto q = p;
        bool chain_ok = true;
        for (double s : schedule) {
            for (auto& v : q.values) v += 0.3 * rng.normal();
            q = apply_mask(q, prev);
            const auto next = compute_magnitude_mask(q, s, prev);
            for (std::size_t i = 0; i < next.size(); ++i) chain_ok = chain_ok && (prev.keep(i) || !next.keep(i));
            chain_ok = chain_ok && std::abs(sparsity(next) - s) <= 1.0 / n;
            prev = next;
        }
        nested += chain_ok;
    }

    // Global-model consistency over real federated runs.
    const int runs = 100;
    for (int t = 0; t < runs; ++t) {
        ExperimentConfig cfg;
        cfg.layer_sizes = {4, 3 + rng.uniform_index(6), 3};
        cfg.dataset.synthetic = {SyntheticKind::blobs, 3, 20, 4, 0.0, rng.next_u64()};
        cfg.num_clients = 2 + rng.uniform_index(3);
        cfg.fraction = rng.uniform() < 0.5 ? 1.0 : 0.5;
        cfg.rounds = 6;
        cfg.batch_size = 8;
        cfg.learning_rate = 0.05;
        cfg.local_steps = 1 + rng.uniform_index(2);
        cfg.pruning.mode = t % 2 ? PruningMode::iterative : PruningMode::one_shot;
        cfg.pruning.target_sparsity = 0.3 + 0.6 * rng.uniform();
        cfg.pruning.cycles = 1 + static_cast<int>(rng.uniform_index(3));
        cfg.pruning.prune_round = static_cast<int>(rng.uniform_index(4));
        cfg.channel.noise_enabled = t % 3 != 0;
        cfg.seed = rng.next_u64();
        bool ok = true;
        double last = 0.0;
        RunHooks hooks;
        hooks.on_round = [&](const ServerState& s, const RoundResult& r) {
            for (std::size_t i = 0; i < s.global.size(); ++i) ok = ok && (s.mask.keep(i) || s.global[i] == 0.0);
            ok = ok && r.metrics.sparsity >= last && r.metrics.sparsity == sparsity(s.mask);
            last = r.metrics.sparsity;
        };
        run_experiment(cfg, 1, hooks);
        const auto weights = static_cast<double>(ModelSpec(cfg.layer_sizes).layout()->weight_count());
        consistent += ok && std::abs(last - cfg.pruning.target_sparsity) <= 1.0 / weights;
    }
    const bool pass = exact == cases && nested == cases && threshold == cases && bias == cases && consistent == runs;
    return {pass, fmt("exactness %d/%d, nesting %d/%d, threshold %d/%d, bias immunity %d/%d, global consistency %d/%d", exact,
                      cases, nested, cases, threshold, cases, bias, cases, consistent, runs)};
}

// 5. Geometric schedule closed form.
Outcome imp_schedule() {
    const auto s = imp_fraction_schedule(0.9, 5);
    double worst = 0.0;
    for (int k = 1; k <= 5; ++k) worst = std::max(worst, std::abs(s[static_cast<std::size_t>(k - 1)] - (1.0 - std::pow(0.1, k / 5.0))));
    const bool pass = s.size() == 5 && worst <= 1e-12 && s.back() == 0.9;
    return {pass, fmt("max |s_k - (1 - 0.1^(k/5))| %.3g <= 1e-12, last == 0.9: %s", worst, s.back() == 0.9 ? "yes" : "no")};
}

// 6. One client, noise off, no pruning: the federated run is plain SGD.
Outcome centralized_equivalence() {
    ExperimentConfig cfg;
    cfg.layer_sizes = {6, 16, 4};
    cfg.dataset.synthetic = {SyntheticKind::blobs, 4, 50, 6, 0.0, 12};
    cfg.num_clients = 1;
    cfg.rounds = 50;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    cfg.local_steps = 1;
    cfg.channel.noise_enabled = false;
    cfg.seed = 3;
    Experiment exp(cfg);
    const auto& client = exp.clients()[0];
    const auto hp = cfg.hyperparams();
    auto central = init_model(exp.spec(), cfg.seed);
    int identical = 0;
    for (int r = 0; r < cfg.rounds; ++r) {
        exp.step();
        for (const auto& rows : draw_local_batches(client, r, hp))
            central = sgd_step(central, loss_and_grad(central, exp.spec(), Batch::from(client.shard.subset(rows))).grad,
                               cfg.learning_rate);
        identical += exp.server().global.values == central.values;
    }
    return {identical == cfg.rounds, fmt("%d/%d rounds bit-identical to single-node SGD", identical, cfg.rounds)};
}

// 7. Storage ratios at 90% sparsity bracket the reference 4.78 / 44.65.
Outcome size_accounting() {
    const std::size_t total = 11'162'500;  // 44.65 MB at 4 bytes per value
    const auto r = model_size_bytes(total, total * 9 / 10);
    const double values = r.values_ratio(), sparse = r.sparse_ratio(), observed = 4.78 / 44.65;
    const bool pass = std::abs(values - 0.100) < 5e-4 && std::abs(sparse - 0.131) < 5e-4 && values < observed && observed < sparse;
    return {pass, fmt("values-only %.5f, values+bitmap %.5f, observed %.5f in between", values, sparse, observed)};
}

// 8. Scaled-down ordering study.
struct StudyCell {
    PruningMode mode;
    double sparsity;
    double fraction;
};

ExperimentConfig study_config(std::uint64_t seed, double lr, const StudyCell& c) {
    ExperimentConfig cfg;
    cfg.layer_sizes = {20, 64, 64, 10};
    cfg.dataset.synthetic = {SyntheticKind::blobs, 10, 200, 20, 0.2, seed};
    cfg.num_clients = 20;
    cfg.rounds = 150;
    cfg.batch_size = 64;
    cfg.learning_rate = lr;
    cfg.channel = {10.0, true};
    cfg.seed = seed;
    return compare_cell_config(cfg, c.mode, c.sparsity, c.fraction);
}

std::vector<double> run_cells(std::uint64_t seed, double lr, const std::vector<StudyCell>& cells) {
    std::vector<double> acc(cells.size());
    detail::parallel_for(cells.size(), thread_budget(), [&](std::size_t i) {
        acc[i] = run_experiment(study_config(seed, lr, cells[i])).back().metrics.test_accuracy;
    });
    return acc;
}

Outcome ordering_study() {
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    const std::vector<double> grid{0.0, 0.3, 0.5, 0.7, 0.9};
    std::vector<StudyCell> cells;
    for (double s : grid) cells.push_back({PruningMode::one_shot, s, 1.0});  // 0..4
    cells.push_back({PruningMode::iterative, 0.7, 1.0});                     // 5
    cells.push_back({PruningMode::iterative, 0.9, 1.0});                     // 6
    cells.push_back({PruningMode::none, 0.0, kPartialFraction});            // 7

    double lr = 0.001;
    std::vector<double> baseline;
    for (auto s : seeds) baseline.push_back(run_cells(s, lr, {cells[0]})[0]);
    if (*std::max_element(baseline.begin(), baseline.end()) <= 0.60) lr = 0.01;
    std::printf("  lr 0.001 unpruned baselines: %.4f %.4f %.4f -> using lr %g\n", baseline[0], baseline[1], baseline[2], lr);

    int votes_a = 0, votes_b = 0, votes_c = 0;
    for (auto s : seeds) {
        const auto acc = run_cells(s, lr, cells);
        bool mono = true;
        for (std::size_t i = 1; i < grid.size(); ++i) mono = mono && acc[i] <= acc[i - 1];
        const bool a = mono && acc[0] - acc[4] >= 0.02;
        const bool b = acc[5] >= acc[3] && acc[6] >= acc[4] && acc[6] - acc[4] >= 0.03;
        const bool c = acc[0] >= acc[7];
        votes_a += a, votes_b += b, votes_c += c;
        std::printf("  seed %llu: OSP %.4f %.4f %.4f %.4f %.4f | IMP .7 %.4f .9 %.4f | PP %.4f  [a:%s b:%s c:%s]\n",
                    static_cast<unsigned long long>(s), acc[0], acc[1], acc[2], acc[3], acc[4], acc[5], acc[6], acc[7],
                    a ? "y" : "n", b ? "y" : "n", c ? "y" : "n");
    }
    const int need = static_cast<int>(seeds.size()) / 2 + 1;
    const bool pass = votes_a >= need && votes_b >= need && votes_c >= need;
    return {pass, fmt("lr %g; seeds agreeing: (a) OSP ordering %d/3, (b) IMP >= OSP %d/3, (c) FP >= PP %d/3", lr, votes_a,
                      votes_b, votes_c)};
}

// 9. cmd_run twice, byte-identical metrics.csv.
Outcome end_to_end_determinism() {
    const auto dir = fs::temp_directory_path() / "otafl_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto config = dir / "config.json";
    std::ofstream(config) << R"({
  "model": {"layer_sizes": [8, 16, 4]},
  "dataset": {"kind": "blobs", "classes": 4, "per_class": 60, "dim": 8},
  "federation": {"clients": 6, "rounds": 20, "batch_size": 8, "learning_rate": 0.05},
  "participation": {"fraction": 0.5},
  "pruning": {"mode": "iterative", "target_sparsity": 0.8, "cycles": 3},
  "channel": {"snr_db": 10},
  "seed": 17
})";
    std::ostringstream log, err;
    const int a = cmd_run(config, (dir / "a").string(), 1, log, err);
    const int b = cmd_run(config, (dir / "b").string(), thread_budget(), log, err);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        return s.str();
    };
    const auto ma = slurp(dir / "a" / "metrics.csv");
    const auto mb = slurp(dir / "b" / "metrics.csv");
    fs::remove_all(dir);
    const bool pass = a == exit_ok && b == exit_ok && !ma.empty() && ma == mb;
    return {pass, fmt("exit codes %d/%d, %zu bytes, identical: %s", a, b, ma.size(), ma == mb ? "yes" : "no")};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "gradient oracle", 10.0, gradient_oracle},
        {2, "aggregation oracle", 1.0, aggregation_oracle},
        {3, "AWGN calibration", 5.0, awgn_calibration},
        {4, "mask properties", 30.0, mask_properties},
        {5, "IMP schedule closed form", 0.0, imp_schedule},
        {6, "centralized equivalence", 0.0, centralized_equivalence},
        {7, "size accounting", 0.0, size_accounting},
        {8, "ordering study", 900.0, ordering_study},
        {9, "end-to-end determinism", 0.0, end_to_end_determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s == 0.0 || secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("[%s] %d %s: %s (%.2f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    in_time ? "" : fmt(", over %.0f s budget", c.budget_s).c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
