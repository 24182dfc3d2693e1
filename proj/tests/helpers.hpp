#pragma once

#include <cstdint>
#include <vector>

#include "otafl/layout.hpp"
#include "otafl/nn.hpp"
#include "otafl/random.hpp"

namespace otafl::testing {

/// Single weight segment of length n; handy for flat-vector arithmetic tests.
inline LayoutPtr flat_layout(std::size_t n) {
    return std::make_shared<const Layout>(std::vector<Segment>{{0, SegmentKind::weight, 0, n}});
}

inline ParameterVector params_of(std::vector<double> v) {
    auto l = flat_layout(v.size());
    return ParameterVector(std::move(v), l);
}

inline GradientVector grad_like(const ParameterVector& p, std::vector<double> v) {
    return GradientVector(std::move(v), p.layout);
}

/// Random MLP spec with at most `max_params` parameters.
inline ModelSpec random_spec(Rng& rng, std::size_t max_params) {
    while (true) {
        std::vector<std::size_t> sizes;
        const auto layers = 2 + rng.uniform_index(3);
        for (std::size_t l = 0; l < layers; ++l) sizes.push_back(1 + rng.uniform_index(8));
        if (sizes.back() < 2) sizes.back() = 2;
        ModelSpec spec(sizes);
        if (spec.parameter_count() <= max_params) return spec;
    }
}

inline Batch random_batch(Rng& rng, const ModelSpec& spec, std::size_t rows) {
    std::vector<double> x(rows * spec.input_dim());
    for (auto& v : x) v = rng.normal();
    std::vector<int> y(rows);
    for (auto& v : y) v = static_cast<int>(rng.uniform_index(spec.num_classes()));
    return Batch(Tensor({rows, spec.input_dim()}, std::move(x)), std::move(y));
}

/// Random parameters including nonzero biases (init_model leaves biases at 0).
inline ParameterVector random_params(Rng& rng, const ModelSpec& spec, double scale = 1.0) {
    auto p = ParameterVector::zeros(spec.layout());
    for (auto& v : p.values) v = scale * rng.normal();
    return p;
}

inline std::vector<std::vector<double>> rows_of(const Tensor& t) {
    std::vector<std::vector<double>> out;
    for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.row(r).begin(), t.row(r).end());
    return out;
}

}  // namespace otafl::testing
