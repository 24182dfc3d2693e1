#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "otafl/errors.hpp"

namespace otafl {

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dimensions must be positive");
        if (element_count(shape_) != values_.size())
            throw ShapeError("tensor shape holds " + std::to_string(element_count(shape_)) +
                             " elements but " + std::to_string(values_.size()) + " values were given");
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        const auto n = element_count(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    std::size_t rows() const { return require_2d(), shape_[0]; }
    std::size_t cols() const { return require_2d(), shape_[1]; }

    double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * cols(), cols());
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        if (shape.empty()) return 0;
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }

    void require_2d() const {
        if (shape_.size() != 2) throw ShapeError("expected a rank-2 tensor");
    }

    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

}  // namespace otafl
