#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otafl/data.hpp"
#include "otafl/errors.hpp"
#include "otafl/layout.hpp"
#include "otafl/random.hpp"
#include "otafl/tensor.hpp"

namespace otafl {

enum class Activation { relu };

/// Fully connected network [d_in, h_1, ..., h_L, C]. ReLU on hidden layers, linear output.
class ModelSpec {
public:
    explicit ModelSpec(std::vector<std::size_t> layer_sizes, Activation activation = Activation::relu)
        : layer_sizes_(std::move(layer_sizes)), activation_(activation) {
        if (layer_sizes_.size() < 2) throw DomainError("model needs at least an input and an output layer");
        for (auto s : layer_sizes_)
            if (s < 1) throw DomainError("layer sizes must be >= 1");
        std::vector<Segment> segments;
        std::size_t offset = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
            const auto w = layer_sizes_[l] * layer_sizes_[l + 1];
            segments.push_back({l, SegmentKind::weight, offset, w});
            offset += w;
            segments.push_back({l, SegmentKind::bias, offset, layer_sizes_[l + 1]});
            offset += layer_sizes_[l + 1];
        }
        layout_ = std::make_shared<const Layout>(std::move(segments));
    }

    const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
    Activation activation() const noexcept { return activation_; }
    std::size_t input_dim() const noexcept { return layer_sizes_.front(); }
    std::size_t num_classes() const noexcept { return layer_sizes_.back(); }
    std::size_t num_layers() const noexcept { return layer_sizes_.size() - 1; }
    const LayoutPtr& layout() const noexcept { return layout_; }
    std::size_t parameter_count() const noexcept { return layout_->size(); }

    /// Weight segment of layer l: [out, in] row-major.
    const Segment& weight_segment(std::size_t l) const { return layout_->segments()[2 * l]; }
    const Segment& bias_segment(std::size_t l) const { return layout_->segments()[2 * l + 1]; }

    friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
        return a.layer_sizes_ == b.layer_sizes_ && a.activation_ == b.activation_;
    }

private:
    std::vector<std::size_t> layer_sizes_;
    Activation activation_;
    LayoutPtr layout_;
};

struct Batch {
    Tensor features;
    std::vector<int> labels;

    Batch(Tensor f, std::vector<int> y) : features(std::move(f)), labels(std::move(y)) {
        if (features.shape().size() != 2) throw ShapeError("batch features must be rank 2");
        if (features.rows() != labels.size()) throw ShapeError("batch feature rows != label count");
    }

    static Batch from(const Dataset& d) {
        return Batch(d.features(), std::vector<int>(d.labels().begin(), d.labels().end()));
    }

    std::size_t size() const noexcept { return labels.size(); }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
inline ParameterVector init_model(const ModelSpec& spec, std::uint64_t seed) {
    auto params = ParameterVector::zeros(spec.layout());
    Rng rng(derive_seed(seed, StreamTag::model_init));
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto& seg = spec.weight_segment(l);
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_sizes()[l]));
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) params[i] = rng.uniform(-bound, bound);
    }
    return params;
}

namespace detail {

inline void require_params(const ParameterVector& params, const ModelSpec& spec) {
    if (params.size() != spec.parameter_count() || !same_layout(params.layout, spec.layout()))
        throw LayoutError("parameter vector does not match the model spec");
}

inline void require_width(std::size_t width, const ModelSpec& spec) {
    if (width != spec.input_dim())
        throw ShapeError("input width " + std::to_string(width) + " != model input dim " + std::to_string(spec.input_dim()));
}

inline void require_labels(std::span<const int> labels, const ModelSpec& spec) {
    const auto c = static_cast<int>(spec.num_classes());
    for (auto y : labels)
        if (y < 0 || y >= c) throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
}

// Forward pass for one sample, keeping every layer's post-activation output.
// acts[0] is the input; acts[L] holds the logits.
inline void forward_sample(std::span<const double> w, const ModelSpec& spec, std::span<const double> x,
                           std::vector<std::vector<double>>& acts) {
    const auto& sizes = spec.layer_sizes();
    acts.resize(sizes.size());
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const auto in = sizes[l];
        const auto out = sizes[l + 1];
        const double* wl = w.data() + spec.weight_segment(l).offset;
        const double* bl = w.data() + spec.bias_segment(l).offset;
        auto& a = acts[l + 1];
        a.resize(out);
        const auto& prev = acts[l];
        const bool hidden = l + 1 < spec.num_layers();
        for (std::size_t o = 0; o < out; ++o) {
            double z = bl[o];
            const double* row = wl + o * in;
            for (std::size_t i = 0; i < in; ++i) z += row[i] * prev[i];
            a[o] = hidden ? std::max(z, 0.0) : z;
        }
    }
}

// log-sum-exp(z) - z[label], computed stably; also returns softmax in `probs`.
inline double cross_entropy(std::span<const double> logits, int label, std::vector<double>& probs) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    probs.resize(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        probs[k] = std::exp(logits[k] - zmax);
        sum += probs[k];
    }
    for (auto& p : probs) p /= sum;
    return zmax + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

inline std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

}  // namespace detail

/// Logits [B, C].
inline Tensor forward(const ParameterVector& params, const ModelSpec& spec, const Tensor& features) {
    detail::require_params(params, spec);
    detail::require_width(features.cols(), spec);
    const auto b = features.rows();
    const auto c = spec.num_classes();
    std::vector<double> logits(b * c);
    std::vector<std::vector<double>> acts;
    for (std::size_t r = 0; r < b; ++r) {
        detail::forward_sample(params.values, spec, features.row(r), acts);
        std::copy(acts.back().begin(), acts.back().end(), logits.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    return Tensor({b, c}, std::move(logits));
}

inline Tensor forward(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    return forward(params, spec, batch.features);
}

struct LossAndGrad {
    double loss = 0.0;
    GradientVector grad;
};

namespace detail {

inline LossAndGrad loss_and_grad_rows(const ParameterVector& params, const ModelSpec& spec, const Tensor& features,
                                      std::span<const int> labels) {
    require_params(params, spec);
    require_width(features.cols(), spec);
    require_labels(labels, spec);
    const auto b = labels.size();
    if (b == 0) throw EmptyInputError("empty batch");
    const auto& sizes = spec.layer_sizes();
    const auto layers = spec.num_layers();
    auto grad = GradientVector::zeros(spec.layout());
    const double scale = 1.0 / static_cast<double>(b);

    std::vector<std::vector<double>> acts;
    std::vector<double> probs;
    std::vector<double> delta;
    std::vector<double> back;
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        forward_sample(params.values, spec, features.row(r), acts);
        loss += cross_entropy(acts.back(), labels[r], probs);
        // dL/dz at the output: (softmax - onehot) / B
        delta = probs;
        delta[static_cast<std::size_t>(labels[r])] -= 1.0;
        for (auto& d : delta) d *= scale;
        for (std::size_t l = layers; l-- > 0;) {
            const auto in = sizes[l];
            const auto out = sizes[l + 1];
            const auto& prev = acts[l];
            double* gw = grad.values.data() + spec.weight_segment(l).offset;
            double* gb = grad.values.data() + spec.bias_segment(l).offset;
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                gb[o] += d;
                double* grow = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d * prev[i];
            }
            if (l == 0) break;
            const double* wl = params.values.data() + spec.weight_segment(l).offset;
            back.assign(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                const double* row = wl + o * in;
                for (std::size_t i = 0; i < in; ++i) back[i] += row[i] * d;
            }
            // ReLU derivative: the unit was active iff its output is positive.
            for (std::size_t i = 0; i < in; ++i)
                if (!(prev[i] > 0.0)) back[i] = 0.0;
            delta.swap(back);
        }
    }
    return {loss * scale, std::move(grad)};
}

}  // namespace detail

/// Mean softmax cross-entropy over the batch and its exact gradient.
inline LossAndGrad loss_and_grad(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    return detail::loss_and_grad_rows(params, spec, batch.features, batch.labels);
}

inline void require_learning_rate(double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be positive and finite");
}

/// new = old - lr * grad.
inline ParameterVector sgd_step(const ParameterVector& params, const GradientVector& grad, double lr) {
    require_learning_rate(lr);
    require_same_layout(params, grad);
    ParameterVector out = params;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = params[i] - lr * grad[i];
    return out;
}

/// As above, then dropped coordinates are forced to exactly 0.
inline ParameterVector sgd_step(const ParameterVector& params, const GradientVector& grad, double lr,
                                const PruneMask& mask) {
    require_learning_rate(lr);
    require_same_layout(params, grad);
    require_same_layout(params, mask);
    ParameterVector out = params;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.keep(i) ? params[i] - lr * grad[i] : 0.0;
    return out;
}

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean cross-entropy.
inline Evaluation evaluate(const ParameterVector& params, const ModelSpec& spec, const Dataset& data) {
    if (data.empty()) throw EmptyInputError("cannot evaluate on an empty dataset");
    detail::require_params(params, spec);
    detail::require_width(data.dim(), spec);
    detail::require_labels(data.labels(), spec);
    std::vector<std::vector<double>> acts;
    std::vector<double> probs;
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        detail::forward_sample(params.values, spec, data.features().row(r), acts);
        const int y = data.labels()[r];
        loss += detail::cross_entropy(acts.back(), y, probs);
        if (detail::argmax_lowest(acts.back()) == static_cast<std::size_t>(y)) ++correct;
    }
    const auto n = static_cast<double>(data.size());
    return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace otafl
