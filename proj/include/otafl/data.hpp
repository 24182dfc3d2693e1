#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "otafl/errors.hpp"
#include "otafl/random.hpp"
#include "otafl/tensor.hpp"

namespace otafl {

/// Labeled samples: features [N, d], labels in [0, C).
class Dataset {
public:
    Dataset() = default;

    Dataset(Tensor features, std::vector<int> labels, int num_classes)
        : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
        if (num_classes_ < 1) throw LabelError("dataset needs at least one class");
        if (features_.shape().size() != 2) throw ShapeError("dataset features must be rank 2");
        if (features_.rows() != labels_.size())
            throw ShapeError("feature rows (" + std::to_string(features_.rows()) + ") != label count (" +
                             std::to_string(labels_.size()) + ")");
        for (auto y : labels_)
            if (y < 0 || y >= num_classes_) throw LabelError("label " + std::to_string(y) + " outside [0, C)");
    }

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::size_t dim() const { return empty() ? 0 : features_.cols(); }
    int num_classes() const noexcept { return num_classes_; }
    const Tensor& features() const noexcept { return features_; }
    std::span<const int> labels() const noexcept { return labels_; }

    /// Rows picked by index, in the given order.
    Dataset subset(std::span<const std::size_t> indices) const {
        if (indices.empty()) throw EmptyInputError("empty subset");
        const auto d = dim();
        std::vector<double> values;
        values.reserve(indices.size() * d);
        std::vector<int> labels;
        labels.reserve(indices.size());
        for (auto i : indices) {
            auto r = features_.row(i);
            values.insert(values.end(), r.begin(), r.end());
            labels.push_back(labels_[i]);
        }
        return Dataset(Tensor({indices.size(), d}, std::move(values)), std::move(labels), num_classes_);
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    Tensor features_;
    std::vector<int> labels_;
    int num_classes_ = 0;
};

enum class SyntheticKind { blobs, spirals };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::blobs;
    int num_classes = 10;
    std::size_t samples_per_class = 200;
    std::size_t feature_dim = 20;  // blobs only; spirals are 2-D
    double noise_level = 0.2;      // spirals only; blobs use unit noise
    std::uint64_t seed = 0;
};

namespace detail {

// Vertices of a regular simplex with unit circumradius, embedded in `dim`
// coordinates. When dim >= C the vertices are the centered-and-normalized
// basis vectors e_c; otherwise they are expressed in an orthonormal basis of
// the (C-1)-dimensional hyperplane they span, which needs dim >= C - 1.
inline std::vector<std::vector<double>> simplex_vertices(int classes, std::size_t dim) {
    const auto c = static_cast<std::size_t>(classes);
    if (dim + 1 < c)
        throw DomainError("blobs need feature_dim >= classes - 1 (got dim " + std::to_string(dim) + ", " +
                          std::to_string(classes) + " classes)");
    std::vector<std::vector<double>> verts(c, std::vector<double>(dim, 0.0));
    if (dim >= c) {
        for (std::size_t k = 0; k < c; ++k) verts[k][k] = 1.0;
        return verts;
    }
    // Centered basis vectors in R^C, then Gram-Schmidt onto an orthonormal basis.
    std::vector<std::vector<double>> centered(c, std::vector<double>(c, -1.0 / static_cast<double>(c)));
    for (std::size_t k = 0; k < c; ++k) centered[k][k] += 1.0;
    const double radius = std::sqrt(1.0 - 1.0 / static_cast<double>(c));
    std::vector<std::vector<double>> basis;
    for (std::size_t k = 0; k < c && basis.size() < c - 1; ++k) {
        auto v = centered[k];
        for (const auto& b : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += v[j] * b[j];
            for (std::size_t j = 0; j < c; ++j) v[j] -= dot * b[j];
        }
        double norm = 0.0;
        for (auto x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;
        for (auto& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t a = 0; a < basis.size(); ++a) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += centered[k][j] * basis[a][j];
            verts[k][a] = dot / radius;
        }
    return verts;
}

}  // namespace detail

/// All samples of a synthetic task, class-major order (no split).
inline Dataset generate_samples(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw DomainError("synthetic data needs at least 2 classes");
    if (spec.samples_per_class < 1) throw DomainError("samples_per_class must be >= 1");
    Rng rng(derive_seed(spec.seed, StreamTag::dataset));
    const auto classes = static_cast<std::size_t>(spec.num_classes);
    const auto n = classes * spec.samples_per_class;
    std::vector<int> labels;
    labels.reserve(n);
    std::vector<double> values;

    if (spec.kind == SyntheticKind::blobs) {
        if (spec.feature_dim < 1) throw DomainError("feature_dim must be >= 1");
        constexpr double separation = 3.0;
        const auto centers = detail::simplex_vertices(spec.num_classes, spec.feature_dim);
        values.reserve(n * spec.feature_dim);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                for (std::size_t j = 0; j < spec.feature_dim; ++j) values.push_back(separation * centers[c][j] + rng.normal());
                labels.push_back(static_cast<int>(c));
            }
        return Dataset(Tensor({n, spec.feature_dim}, std::move(values)), std::move(labels), spec.num_classes);
    }

    if (!(spec.noise_level >= 0.0) || !std::isfinite(spec.noise_level)) throw DomainError("noise_level must be >= 0");
    // Two arms per class: 2C arms evenly spaced in angle, class c owns arms c and c + C.
    constexpr double turns = 1.75;
    const double arm_spacing = std::numbers::pi / static_cast<double>(classes);
    values.reserve(n * 2);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            const std::size_t arm = c + (s % 2) * classes;
            const double t = (static_cast<double>(s / 2) + 1.0) / (static_cast<double>((spec.samples_per_class + 1) / 2) + 1.0);
            const double theta = arm_spacing * static_cast<double>(arm) + turns * std::numbers::pi * t +
                                 spec.noise_level * rng.normal();
            values.push_back(t * std::cos(theta));
            values.push_back(t * std::sin(theta));
            labels.push_back(static_cast<int>(c));
        }
    return Dataset(Tensor({n, 2}, std::move(values)), std::move(labels), spec.num_classes);
}

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

/// 80/20 split, stratified: each class is shuffled and 80% (rounded down) of
/// it goes to training, so both sides stay class-balanced. Each side is then
/// shuffled.
inline TrainTestSplit gen_synthetic(const SyntheticSpec& spec) {
    auto all = generate_samples(spec);
    const auto per_class = spec.samples_per_class;
    const auto n_train_per_class = per_class * 4 / 5;
    if (n_train_per_class == 0 || n_train_per_class == per_class)
        throw DomainError("too few samples per class for an 80/20 split");
    Rng rng(derive_seed(spec.seed, StreamTag::dataset, {1}));
    std::vector<std::size_t> train, test;
    std::vector<std::size_t> idx(per_class);
    for (std::size_t c = 0; c < static_cast<std::size_t>(spec.num_classes); ++c) {
        for (std::size_t s = 0; s < per_class; ++s) idx[s] = c * per_class + s;
        rng.shuffle(std::span(idx));
        train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train_per_class));
        test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train_per_class), idx.end());
    }
    rng.shuffle(std::span(train));
    rng.shuffle(std::span(test));
    return {all.subset(train), all.subset(test)};
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view cell, double& out) {
    cell = trim(cell);
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc{} && ptr == cell.data() + cell.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view cell, long long& out) {
    cell = trim(cell);
    if (cell.empty()) return false;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc{} && ptr == cell.data() + cell.size();
}

}  // namespace detail

/// Parses `f_1,...,f_d,label` rows. The first row fixes d.
inline Dataset parse_csv(std::istream& in, int num_classes) {
    if (num_classes < 1) throw DomainError("num_classes must be >= 1");
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto row = detail::trim(line);
        if (row.empty()) throw ParseError(lineno, "empty row");
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = row.find(',', start);
            cells.push_back(row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cells.size() < 2) throw ParseError(lineno, "expected at least one feature and a label");
        if (dim == 0) dim = cells.size() - 1;
        if (cells.size() - 1 != dim)
            throw ParseError(lineno, "expected " + std::to_string(dim) + " features, found " + std::to_string(cells.size() - 1));
        for (std::size_t j = 0; j < dim; ++j) {
            double v;
            if (!detail::parse_double(cells[j], v))
                throw ParseError(lineno, "non-numeric feature in column " + std::to_string(j + 1));
            values.push_back(v);
        }
        long long y;
        if (!detail::parse_int(cells.back(), y)) throw ParseError(lineno, "label is not an integer");
        if (y < 0 || y >= num_classes)
            throw ParseError(lineno, "label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
        labels.push_back(static_cast<int>(y));
    }
    if (labels.empty()) throw ParseError(0, "no samples in input");
    const auto n = labels.size();
    return Dataset(Tensor({n, dim}, std::move(values)), std::move(labels), num_classes);
}

inline Dataset load_csv(const std::string& path, int num_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    try {
        return parse_csv(in, num_classes);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), path + ": " + e.detail());
    }
}

/// Shortest representation that round-trips exactly (at most 17 significant digits).
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline void write_csv(std::ostream& out, const Dataset& data) {
    const auto d = data.dim();
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto r = data.features().row(i);
        for (std::size_t j = 0; j < d; ++j) out << format_double(r[j]) << ',';
        out << data.labels()[i] << '\n';
    }
}

inline void save_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_csv(out, data);
    if (!out) throw IoError("write failed for " + path);
}

/// Per-feature mean and population standard deviation.
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    static FeatureStats fit(const Dataset& data) {
        if (data.size() < 2) throw EmptyInputError("normalization needs at least 2 samples");
        const auto n = data.size();
        const auto d = data.dim();
        FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += data.features()(i, j);
        for (auto& m : s.mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double dev = data.features()(i, j) - s.mean[j];
                s.stddev[j] += dev * dev;
            }
        for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(n));
        return s;
    }

    /// Zero-variance features pass through unchanged.
    Dataset apply(const Dataset& data) const {
        if (data.dim() != mean.size()) throw ShapeError("feature statistics do not match dataset width");
        std::vector<double> values(data.features().values().begin(), data.features().values().end());
        const auto d = mean.size();
        for (std::size_t i = 0; i < data.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (stddev[j] > 0.0) values[i * d + j] = (values[i * d + j] - mean[j]) / stddev[j];
        return Dataset(Tensor(data.features().shape(), std::move(values)),
                       std::vector<int>(data.labels().begin(), data.labels().end()), data.num_classes());
    }
};

inline Dataset normalize(const Dataset& data) { return FeatureStats::fit(data).apply(data); }

}  // namespace otafl
