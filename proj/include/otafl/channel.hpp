#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "otafl/errors.hpp"
#include "otafl/layout.hpp"
#include "otafl/random.hpp"

namespace otafl {

struct ChannelConfig {
    double snr_db = 10.0;
    bool noise_enabled = true;

    void validate() const {
        if (!std::isfinite(snr_db)) throw DomainError("snr_db must be finite");
    }
};

namespace detail {

// Coordinate-wise sum in list order. The caller passes GVs sorted by client id.
inline std::vector<double> superpose(std::span<const GradientVector> gvs) {
    if (gvs.empty()) throw NoParticipantsError("aggregation needs at least one participant");
    for (const auto& g : gvs) require_same_layout(gvs.front(), g);
    std::vector<double> sum(gvs.front().size(), 0.0);
    for (const auto& g : gvs)
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
    return sum;
}

}  // namespace detail

/// Noiseless superposition: the coordinate-wise mean.
inline GradientVector ideal_aggregate(std::span<const GradientVector> gvs) {
    auto sum = detail::superpose(gvs);
    const auto m = static_cast<double>(gvs.size());
    for (auto& v : sum) v /= m;
    return GradientVector(std::move(sum), gvs.front().layout);
}

/// Noise standard deviation for a per-dimension signal power at the given SNR.
inline double noise_sigma(double signal_power_per_dim, double snr_db) {
    if (!(signal_power_per_dim > 0.0) || !std::isfinite(signal_power_per_dim))
        throw DomainError("signal power must be positive");
    if (!std::isfinite(snr_db)) throw DomainError("snr_db must be finite");
    return std::sqrt(signal_power_per_dim / std::pow(10.0, snr_db / 10.0));
}

/// Over-the-air aggregation: y = (sum_e g_e + n) / M with n ~ N(0, sigma^2 I).
///
/// The SNR is measured against the per-dimension power of the superposed
/// signal, ||sum_e g_e||^2 / d. An all-zero superposition has no power to
/// reference, so no noise is drawn (sigma = 0). With noise disabled the
/// result is bit-identical to ideal_aggregate.
inline GradientVector ota_aggregate(std::span<const GradientVector> gvs, const ChannelConfig& cfg, Rng& noise) {
    cfg.validate();
    if (!cfg.noise_enabled) return ideal_aggregate(gvs);
    auto sum = detail::superpose(gvs);
    double power = 0.0;
    for (auto v : sum) power += v * v;
    power /= static_cast<double>(sum.size());
    const double m = static_cast<double>(gvs.size());
    if (power > 0.0) {
        const double sigma = noise_sigma(power, cfg.snr_db);
        for (auto& v : sum) v = (v + sigma * noise.normal()) / m;
    } else {
        for (auto& v : sum) v /= m;
    }
    return GradientVector(std::move(sum), gvs.front().layout);
}

/// Expected squared distance between the OTA and ideal aggregates: sigma^2 d / M^2.
inline double expected_ota_error(double signal_power_per_dim, double snr_db, std::size_t dims, std::size_t participants) {
    const double s = noise_sigma(signal_power_per_dim, snr_db);
    const double m = static_cast<double>(participants);
    return s * s * static_cast<double>(dims) / (m * m);
}

}  // namespace otafl
