#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "otafl/errors.hpp"
#include "otafl/layout.hpp"

namespace otafl {

/// Fraction of prunable (weight) entries dropped by the mask.
inline double sparsity(const PruneMask& mask) {
    const auto prunable = mask.prunable();
    if (prunable == 0) throw DomainError("sparsity is undefined without prunable parameters");
    return static_cast<double>(mask.dropped()) / static_cast<double>(prunable);
}

inline void require_sparsity_range(double target) {
    if (!(target >= 0.0 && target < 1.0)) throw DomainError("target sparsity must lie in [0, 1)");
}

/// Global magnitude pruning over all weight segments (biases never pruned).
///
/// Drops the floor(target * N) smallest-|w| weights, N being the number of
/// weights. Ties go to the lowest flat index. Indices dropped by `prior`
/// stay dropped and count toward the budget, so `target` may not fall below
/// the prior mask's sparsity.
inline PruneMask compute_magnitude_mask(const ParameterVector& params, double target,
                                        const PruneMask* prior = nullptr) {
    require_sparsity_range(target);
    if (!params.layout) throw LayoutError("parameter vector has no layout");
    const auto& layout = *params.layout;
    std::size_t prior_dropped = 0;
    if (prior) {
        require_same_layout(params, *prior);
        prior_dropped = prior->dropped();
        if (layout.weight_count() > 0 && target + 1e-12 < sparsity(*prior))
            throw MonotonicityError("target sparsity " + std::to_string(target) + " is below the prior mask's " +
                                    std::to_string(sparsity(*prior)));
    }
    const auto n = layout.weight_count();
    auto drops = static_cast<std::size_t>(std::floor(target * static_cast<double>(n) + 1e-9));
    drops = std::min(std::max(drops, prior_dropped), n);

    std::vector<std::size_t> candidates;
    candidates.reserve(n);
    for (const auto& seg : layout.segments())
        if (seg.kind == SegmentKind::weight)
            for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) candidates.push_back(i);

    // Strict total order: prior drops first, then magnitude, then index.
    auto less = [&](std::size_t a, std::size_t b) {
        const bool pa = prior && !prior->keep(a);
        const bool pb = prior && !prior->keep(b);
        if (pa != pb) return pa;
        const double ma = std::abs(params[a]);
        const double mb = std::abs(params[b]);
        if (ma != mb) return ma < mb;
        return a < b;
    };
    if (drops > 0 && drops < n)
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(drops), candidates.end(), less);

    std::vector<std::uint8_t> keep(layout.size(), 1);
    for (std::size_t k = 0; k < drops; ++k) keep[candidates[k]] = 0;
    return PruneMask(params.layout, std::move(keep));
}

inline PruneMask compute_magnitude_mask(const ParameterVector& params, double target, const PruneMask& prior) {
    return compute_magnitude_mask(params, target, &prior);
}

/// Cumulative sparsity after each of K cycles when every cycle removes the
/// same fraction of the remaining weights: 1 - (1 - p)^(k/K).
inline std::vector<double> imp_fraction_schedule(double target, int cycles) {
    if (cycles < 1) throw DomainError("IMP needs at least one cycle");
    if (!(target > 0.0 && target < 1.0)) throw DomainError("IMP target sparsity must lie in (0, 1)");
    std::vector<double> out(static_cast<std::size_t>(cycles));
    const double remaining = 1.0 - target;
    for (int k = 1; k <= cycles; ++k)
        out[static_cast<std::size_t>(k - 1)] = 1.0 - std::pow(remaining, static_cast<double>(k) / cycles);
    out.back() = target;
    return out;
}

/// Fraction of remaining weights removed per IMP cycle.
inline double imp_per_cycle_fraction(double target, int cycles) {
    return 1.0 - std::pow(1.0 - target, 1.0 / cycles);
}

template <typename Tag>
FlatVector<Tag> apply_mask(const FlatVector<Tag>& v, const PruneMask& mask) {
    require_same_layout(v, mask);
    FlatVector<Tag> out = v;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!mask.keep(i)) out[i] = 0.0;
    return out;
}

/// Storage accounting under a 32-bit-per-value convention.
struct SparsityReport {
    std::size_t total_params = 0;
    std::size_t prunable_params = 0;
    std::size_t zeros = 0;
    double sparsity = 0.0;
    std::size_t size_bytes_dense = 0;
    /// Surviving values plus a 1-bit occupancy map over every parameter.
    std::size_t size_bytes_sparse = 0;
    /// Surviving values only, no index overhead.
    std::size_t size_bytes_values = 0;

    double sparse_ratio() const { return static_cast<double>(size_bytes_sparse) / static_cast<double>(size_bytes_dense); }
    double values_ratio() const { return static_cast<double>(size_bytes_values) / static_cast<double>(size_bytes_dense); }
};

inline SparsityReport model_size_bytes(std::size_t total_params, std::size_t prunable_params, std::size_t zeros) {
    if (zeros > prunable_params || prunable_params > total_params)
        throw DomainError("size accounting needs zeros <= prunable <= total");
    SparsityReport r;
    r.total_params = total_params;
    r.prunable_params = prunable_params;
    r.zeros = zeros;
    r.sparsity = prunable_params == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(prunable_params);
    r.size_bytes_dense = 4 * total_params;
    r.size_bytes_values = 4 * (total_params - zeros);
    r.size_bytes_sparse = r.size_bytes_values + (total_params + 7) / 8;
    return r;
}

/// Everything prunable counts (no layout known).
inline SparsityReport model_size_bytes(std::size_t total_params, std::size_t zeros) {
    return model_size_bytes(total_params, total_params, zeros);
}

inline SparsityReport sparsity_report(const PruneMask& mask) {
    return model_size_bytes(mask.size(), mask.prunable(), mask.dropped());
}

enum class PruningMode { none, one_shot, iterative };

inline std::string to_string(PruningMode m) {
    switch (m) {
        case PruningMode::none: return "none";
        case PruningMode::one_shot: return "one_shot";
        case PruningMode::iterative: return "iterative";
    }
    return "?";
}

/// When and how far to prune over a federated run.
struct PruningPlan {
    PruningMode mode = PruningMode::none;
    double target_sparsity = 0.0;
    int cycles = 1;
    std::vector<int> prune_rounds;
    /// Cumulative sparsity reached at each entry of prune_rounds.
    std::vector<double> sparsities;

    static PruningPlan none() { return {}; }

    /// A single prune event at `round`.
    static PruningPlan one_shot(double target, int round) {
        require_sparsity_range(target);
        if (round < 0) throw DomainError("prune round must be >= 0");
        PruningPlan p;
        p.mode = PruningMode::one_shot;
        p.target_sparsity = target;
        p.prune_rounds = {round};
        p.sparsities = {target};
        return p;
    }

    /// K events spread evenly over the first half of the round budget, the
    /// last one landing at total_rounds / 2. Falls back to rounds 0..K-1 when
    /// the budget is too short to space them out.
    static PruningPlan iterative(double target, int cycles, int total_rounds) {
        require_sparsity_range(target);
        if (cycles < 1) throw DomainError("IMP needs at least one cycle");
        if (total_rounds < 0) throw DomainError("round budget must be >= 0");
        PruningPlan p;
        p.mode = PruningMode::iterative;
        p.target_sparsity = target;
        p.cycles = cycles;
        p.sparsities = target > 0.0 ? imp_fraction_schedule(target, cycles) : std::vector<double>(static_cast<std::size_t>(cycles), 0.0);
        const int half = total_rounds / 2;
        for (int k = 1; k <= cycles; ++k)
            p.prune_rounds.push_back(half >= cycles ? static_cast<int>(static_cast<long long>(k) * half / cycles) : k - 1);
        return p;
    }

    /// Index into prune_rounds for a round, if a prune event fires then.
    std::optional<std::size_t> event_at(int round) const {
        auto it = std::find(prune_rounds.begin(), prune_rounds.end(), round);
        if (it == prune_rounds.end()) return std::nullopt;
        return static_cast<std::size_t>(it - prune_rounds.begin());
    }
};

// Mask file: u64 LE count N, then ceil(N/8) bytes, bit i in byte i/8 (LSB first), 1 = keep.

namespace detail {

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw IoError("truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_mask(std::ostream& out, const PruneMask& mask) {
    const auto n = mask.size();
    detail::write_u64_le(out, n);
    std::vector<char> bytes((n + 7) / 8, 0);
    for (std::size_t i = 0; i < n; ++i)
        if (mask.keep(i)) bytes[i / 8] = static_cast<char>(static_cast<unsigned char>(bytes[i / 8]) | (1u << (i % 8)));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("mask write failed");
}

inline PruneMask read_mask(std::istream& in, LayoutPtr layout) {
    const auto n = detail::read_u64_le(in);
    if (n != layout->size()) throw LayoutError("mask file holds " + std::to_string(n) + " entries, layout has " +
                                               std::to_string(layout->size()));
    std::vector<char> bytes((n + 7) / 8);
    if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw IoError("truncated mask file");
    std::vector<std::uint8_t> keep(n);
    for (std::size_t i = 0; i < n; ++i) keep[i] = (static_cast<unsigned char>(bytes[i / 8]) >> (i % 8)) & 1u;
    return PruneMask(std::move(layout), std::move(keep));
}

}  // namespace otafl
