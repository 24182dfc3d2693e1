#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/data.hpp"
#include "otafl/errors.hpp"
#include "otafl/layout.hpp"
#include "otafl/nn.hpp"
#include "otafl/pruning.hpp"
#include "otafl/random.hpp"

namespace otafl {

/// Seeded shuffle of [0, N) dealt into E contiguous shards. The first N mod E
/// shards get one extra index.
inline std::vector<std::vector<std::size_t>> partition_iid(std::size_t dataset_size, std::size_t num_clients,
                                                           std::uint64_t seed) {
    if (num_clients == 0) throw PartitionError("need at least one client");
    if (num_clients > dataset_size)
        throw PartitionError("cannot split " + std::to_string(dataset_size) + " samples across " +
                             std::to_string(num_clients) + " clients");
    std::vector<std::size_t> order(dataset_size);
    for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
    Rng rng(derive_seed(seed, StreamTag::partition));
    rng.shuffle(std::span(order));
    const auto base = dataset_size / num_clients;
    const auto extra = dataset_size % num_clients;
    std::vector<std::vector<std::size_t>> shards(num_clients);
    std::size_t cursor = 0;
    for (std::size_t e = 0; e < num_clients; ++e) {
        const auto len = base + (e < extra ? 1 : 0);
        shards[e].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                         order.begin() + static_cast<std::ptrdiff_t>(cursor + len));
        cursor += len;
    }
    return shards;
}

inline std::vector<std::vector<std::size_t>> partition_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
    return partition_iid(data.size(), num_clients, seed);
}

struct ParticipationPolicy {
    std::size_t num_clients = 100;
    double fraction = 1.0;

    void validate() const {
        if (num_clients < 1) throw DomainError("need at least one client");
        if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("participation fraction must lie in (0, 1]");
    }

    /// ceil(fraction * E), guarded against float noise just above an integer.
    std::size_t per_round() const {
        const double raw = fraction * static_cast<double>(num_clients);
        auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
        return std::clamp<std::size_t>(n, 1, num_clients);
    }
};

/// Sorted distinct client ids for one round, drawn from a (seed, round) stream.
inline std::vector<std::size_t> select_participants(const ParticipationPolicy& policy, int round, std::uint64_t seed) {
    policy.validate();
    const auto e = policy.num_clients;
    const auto m = policy.per_round();
    std::vector<std::size_t> ids(e);
    for (std::size_t i = 0; i < e; ++i) ids[i] = i;
    if (m == e) return ids;
    // Partial Fisher-Yates: the first m slots become a uniform sample without replacement.
    Rng rng(derive_seed(seed, StreamTag::participation, {static_cast<std::uint64_t>(round)}));
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_index(e - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

/// One PIU: its private shard and the seed of its mini-batch stream.
struct ClientState {
    std::size_t client_id = 0;
    Dataset shard;
    std::uint64_t stream_seed = 0;
};

inline std::vector<ClientState> make_clients(const Dataset& train, std::size_t num_clients, std::uint64_t seed) {
    auto shards = partition_iid(train, num_clients, seed);
    std::vector<ClientState> clients;
    clients.reserve(num_clients);
    for (std::size_t e = 0; e < num_clients; ++e)
        clients.push_back({e, train.subset(shards[e]),
                           derive_seed(seed, StreamTag::client_batches, {static_cast<std::uint64_t>(e)})});
    return clients;
}

struct Hyperparams {
    double learning_rate = 0.001;
    std::size_t batch_size = 64;
    /// Mini-batch SGD steps per round; 0 means one pass over the shard.
    std::size_t local_steps = 0;
};

inline std::size_t effective_local_steps(std::size_t shard_size, const Hyperparams& hp) {
    if (hp.local_steps > 0) return hp.local_steps;
    return (shard_size + hp.batch_size - 1) / hp.batch_size;
}

/// Row indices of each local mini-batch a client uses in `round`. Each epoch
/// is a fresh permutation cut into chunks of batch_size; an epoch's last
/// chunk holds the remainder.
inline std::vector<std::vector<std::size_t>> draw_local_batches(const ClientState& client, int round, const Hyperparams& hp) {
    const auto n = client.shard.size();
    if (n == 0) throw NoDataError("client " + std::to_string(client.client_id) + " has no data");
    if (hp.batch_size < 1 || hp.batch_size > n)
        throw DomainError("batch size " + std::to_string(hp.batch_size) + " must lie in [1, shard size " +
                          std::to_string(n) + "]");
    const auto steps = effective_local_steps(n, hp);
    Rng rng(derive_seed(client.stream_seed, {static_cast<std::uint64_t>(round)}));
    std::vector<std::size_t> perm(n);
    std::size_t cursor = n;
    std::vector<std::vector<std::size_t>> batches;
    batches.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        if (cursor >= n) {
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            rng.shuffle(std::span(perm));
            cursor = 0;
        }
        const auto len = std::min(hp.batch_size, n - cursor);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(cursor),
                             perm.begin() + static_cast<std::ptrdiff_t>(cursor + len));
        cursor += len;
    }
    return batches;
}

struct LocalUpdate {
    /// Pseudo-gradient (global - local) / lr, zero at dropped indices.
    GradientVector gradient;
    /// Mean mini-batch loss seen during local training.
    double train_loss = 0.0;
};

/// Mask-enforced local SGD from the broadcast model.
///
/// The pseudo-gradient is accumulated as the sum of the masked step
/// gradients, which equals (global - local) / lr exactly in real arithmetic
/// and reproduces the true batch gradient bit-for-bit after a single step.
inline LocalUpdate local_update(const ClientState& client, const ParameterVector& global, const PruneMask& mask,
                                const ModelSpec& spec, const Hyperparams& hp, int round) {
    require_learning_rate(hp.learning_rate);
    require_same_layout(global, mask);
    const auto batches = draw_local_batches(client, round, hp);
    ParameterVector local = global;
    auto accumulated = GradientVector::zeros(global.layout);
    double loss_sum = 0.0;
    for (const auto& rows : batches) {
        const auto batch = client.shard.subset(rows);
        auto [loss, grad] = detail::loss_and_grad_rows(local, spec, batch.features(), batch.labels());
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!mask.keep(i)) grad[i] = 0.0;
        for (std::size_t i = 0; i < grad.size(); ++i) accumulated[i] += grad[i];
        local = sgd_step(local, grad, hp.learning_rate, mask);
        loss_sum += loss;
    }
    return {std::move(accumulated), loss_sum / static_cast<double>(batches.size())};
}

struct MetricsRecord {
    int round = 0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    double train_loss = 0.0;
    double sparsity = 0.0;
    std::size_t size_bytes_dense = 0;
    std::size_t size_bytes_sparse = 0;
    std::size_t participants_count = 0;
};

struct RoundResult {
    int round = 0;
    std::vector<std::size_t> participants;
    MetricsRecord metrics;
};

struct ServerState {
    ParameterVector global;
    PruneMask mask;
    int round = 0;
    PruningPlan plan;

    static ServerState initial(const ModelSpec& spec, std::uint64_t seed, PruningPlan plan) {
        ServerState s;
        s.global = init_model(spec, seed);
        s.mask = PruneMask(spec.layout());
        s.plan = std::move(plan);
        return s;
    }
};

/// Everything a round needs besides the evolving server state.
struct RoundContext {
    const ModelSpec& spec;
    std::span<const ClientState> clients;
    ParticipationPolicy policy;
    ChannelConfig channel;
    Hyperparams hyper;
    std::uint64_t seed = 0;
    const Dataset* test = nullptr;
    unsigned threads = 1;
};

namespace detail {

// Runs body(i) for i in [0, n) on up to `threads` workers. The first
// exception thrown by any worker is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
    const auto workers = static_cast<std::size_t>(std::max(1u, threads));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, n); ++w)
            pool.emplace_back([&] {
                for (auto i = next.fetch_add(1); i < n && !failed; i = next.fetch_add(1)) {
                    try {
                        body(i);
                    } catch (...) {
                        if (!failed.exchange(true)) failure = std::current_exception();
                    }
                }
            });
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Applies a scheduled prune event, if one falls on server.round.
inline void apply_prune_event(ServerState& server) {
    if (auto k = server.plan.event_at(server.round)) {
        server.mask = compute_magnitude_mask(server.global, server.plan.sparsities[*k], server.mask);
        server.global = apply_mask(server.global, server.mask);
    }
}

/// One federated round: prune event, selection, local training, OTA
/// aggregation, masked server step, evaluation.
inline RoundResult run_round(ServerState& server, const RoundContext& ctx) {
    ctx.policy.validate();
    if (ctx.clients.size() != ctx.policy.num_clients)
        throw DomainError("client count does not match the participation policy");
    apply_prune_event(server);

    const auto participants = select_participants(ctx.policy, server.round, ctx.seed);
    std::vector<LocalUpdate> updates(participants.size());
    detail::parallel_for(participants.size(), ctx.threads, [&](std::size_t i) {
        updates[i] = local_update(ctx.clients[participants[i]], server.global, server.mask, ctx.spec, ctx.hyper, server.round);
    });

    std::vector<GradientVector> gvs;
    gvs.reserve(updates.size());
    double train_loss = 0.0;
    for (auto& u : updates) {
        train_loss += u.train_loss;
        gvs.push_back(std::move(u.gradient));
    }
    Rng noise(derive_seed(ctx.seed, StreamTag::channel_noise, {static_cast<std::uint64_t>(server.round)}));
    const auto aggregate = ota_aggregate(gvs, ctx.channel, noise);
    server.global = sgd_step(server.global, aggregate, ctx.hyper.learning_rate, server.mask);

    RoundResult result;
    result.round = server.round;
    result.participants = participants;
    auto& m = result.metrics;
    m.round = server.round;
    if (ctx.test) {
        const auto eval = evaluate(server.global, ctx.spec, *ctx.test);
        m.test_accuracy = eval.accuracy;
        m.test_loss = eval.mean_loss;
    }
    m.train_loss = train_loss / static_cast<double>(updates.size());
    const auto report = sparsity_report(server.mask);
    m.sparsity = report.sparsity;
    m.size_bytes_dense = report.size_bytes_dense;
    m.size_bytes_sparse = report.size_bytes_sparse;
    m.participants_count = participants.size();
    ++server.round;
    return result;
}

// Parameter file: u64 LE count, then that many IEEE-754 doubles, little-endian.

inline void write_params(std::ostream& out, const ParameterVector& params) {
    detail::write_u64_le(out, params.size());
    for (auto v : params.values) detail::write_u64_le(out, std::bit_cast<std::uint64_t>(v));
    if (!out) throw IoError("parameter write failed");
}

inline ParameterVector read_params(std::istream& in, LayoutPtr layout) {
    const auto n = detail::read_u64_le(in);
    if (n != layout->size())
        throw LayoutError("parameter file holds " + std::to_string(n) + " values, layout has " + std::to_string(layout->size()));
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(detail::read_u64_le(in));
    return ParameterVector(std::move(values), std::move(layout));
}

/// Writes round_<r>.params, round_<r>.mask and round_<r>.meta into `dir`.
inline void write_checkpoint(const std::filesystem::path& dir, const ServerState& server, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    const auto stem = dir / ("round_" + std::to_string(server.round));
    {
        std::ofstream out(stem.string() + ".params", std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint in " + dir.string());
        write_params(out, server.global);
    }
    {
        std::ofstream out(stem.string() + ".mask", std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint in " + dir.string());
        write_mask(out, server.mask);
    }
    std::ofstream meta(stem.string() + ".meta", std::ios::binary);
    if (!meta) throw IoError("cannot write checkpoint in " + dir.string());
    meta << "round=" << server.round << '\n'
         << "sparsity=" << format_double(server.mask.prunable() ? sparsity(server.mask) : 0.0) << '\n'
         << "seed=" << seed << '\n';
}

}  // namespace otafl
