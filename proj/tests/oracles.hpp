#pragma once

// Reference computations used only by tests. They deliberately avoid the
// library's internals (layout helpers, forward_sample, superpose) so that a
// bug on the implementation path cannot hide in the oracle too.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "otafl/nn.hpp"

namespace otafl::oracle {

/// Plain triple-loop MLP forward. Weights of layer l are read as W[o][i] at
/// running offset, followed by the layer's bias.
inline std::vector<std::vector<double>> naive_forward(const std::vector<double>& flat, const std::vector<std::size_t>& sizes,
                                                      const std::vector<std::vector<double>>& inputs) {
    std::vector<std::vector<double>> out;
    for (const auto& x : inputs) {
        std::vector<double> h = x;
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const auto in = sizes[l], o_n = sizes[l + 1];
            std::vector<double> next(o_n, 0.0);
            for (std::size_t o = 0; o < o_n; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < in; ++i) acc += flat[off + o * in + i] * h[i];
                next[o] = acc + flat[off + in * o_n + o];
            }
            off += in * o_n + o_n;
            if (l + 2 < sizes.size())
                for (auto& v : next) v = v > 0.0 ? v : 0.0;
            h = std::move(next);
        }
        out.push_back(h);
    }
    return out;
}

inline double naive_mean_ce(const std::vector<double>& flat, const std::vector<std::size_t>& sizes,
                            const std::vector<std::vector<double>>& inputs, const std::vector<int>& labels) {
    const auto logits = naive_forward(flat, sizes, inputs);
    long double total = 0.0L;
    for (std::size_t r = 0; r < logits.size(); ++r) {
        long double s = 0.0L;
        for (double z : logits[r]) s += std::exp(static_cast<long double>(z));
        total += std::log(s) - logits[r][static_cast<std::size_t>(labels[r])];
    }
    return static_cast<double>(total / logits.size());
}

/// Central finite differences of f at x, step eps, every coordinate.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> x, double eps) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = f(x);
        x[i] = orig - eps;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// Two-pass mean: first estimate, then a correction from the residuals.
inline std::vector<double> two_pass_mean(const std::vector<std::vector<double>>& rows) {
    const auto d = rows.front().size();
    const auto n = static_cast<double>(rows.size());
    std::vector<double> m(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t r = rows.size(); r-- > 0;) m[j] += rows[r][j];
        m[j] /= n;
        double corr = 0.0;
        for (const auto& row : rows) corr += row[j] - m[j];
        m[j] += corr / n;
    }
    return m;
}

/// Relative error with a floor on the denominator so that near-zero
/// coordinates are judged by absolute error.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace otafl::oracle
