#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "otafl/errors.hpp"

namespace otafl {

enum class SegmentKind { weight, bias };

/// One contiguous run of the flat parameter array.
struct Segment {
    std::size_t layer = 0;
    SegmentKind kind = SegmentKind::weight;
    std::size_t offset = 0;
    std::size_t length = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Ordered segments tiling [0, size()) with no gaps or overlaps.
class Layout {
public:
    explicit Layout(std::vector<Segment> segments) : segments_(std::move(segments)) {
        std::size_t cursor = 0;
        for (const auto& s : segments_) {
            if (s.offset != cursor) throw LayoutError("layout segments must tile the vector contiguously");
            cursor += s.length;
            if (s.kind == SegmentKind::weight) weight_count_ += s.length;
        }
        size_ = cursor;
    }

    std::span<const Segment> segments() const noexcept { return segments_; }
    std::size_t size() const noexcept { return size_; }
    std::size_t weight_count() const noexcept { return weight_count_; }
    std::size_t bias_count() const noexcept { return size_ - weight_count_; }

    friend bool operator==(const Layout& a, const Layout& b) { return a.segments_ == b.segments_; }

private:
    std::vector<Segment> segments_;
    std::size_t size_ = 0;
    std::size_t weight_count_ = 0;
};

using LayoutPtr = std::shared_ptr<const Layout>;

inline bool same_layout(const LayoutPtr& a, const LayoutPtr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    return *a == *b;
}

/// Flat array of doubles tagged with the layout it was produced under.
/// `Tag` keeps parameters and gradients from being mixed up at compile time.
template <typename Tag>
struct FlatVector {
    std::vector<double> values;
    LayoutPtr layout;

    FlatVector() = default;
    FlatVector(std::vector<double> v, LayoutPtr l) : values(std::move(v)), layout(std::move(l)) {
        if (layout && layout->size() != values.size())
            throw LayoutError("vector length " + std::to_string(values.size()) + " does not match layout size " +
                              std::to_string(layout->size()));
    }

    static FlatVector zeros(LayoutPtr l) {
        const auto n = l->size();
        return FlatVector(std::vector<double>(n, 0.0), std::move(l));
    }

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    friend bool operator==(const FlatVector& a, const FlatVector& b) {
        return a.values == b.values && same_layout(a.layout, b.layout);
    }
};

struct ParameterTag;
struct GradientTag;

using ParameterVector = FlatVector<ParameterTag>;
using GradientVector = FlatVector<GradientTag>;

/// Per-parameter keep (true) / drop (false) flags. Bias entries are always kept.
class PruneMask {
public:
    PruneMask() = default;

    /// All-keep mask for a layout.
    explicit PruneMask(LayoutPtr layout) : keep_(layout->size(), 1), layout_(std::move(layout)) {}

    PruneMask(LayoutPtr layout, std::vector<std::uint8_t> keep) : keep_(std::move(keep)), layout_(std::move(layout)) {
        if (keep_.size() != layout_->size()) throw LayoutError("mask length does not match layout size");
        for (const auto& s : layout_->segments()) {
            if (s.kind != SegmentKind::bias) continue;
            for (std::size_t i = s.offset; i < s.offset + s.length; ++i)
                if (!keep_[i]) throw LayoutError("bias entries cannot be pruned");
        }
        for (auto& k : keep_) k = k ? 1 : 0;
    }

    std::size_t size() const noexcept { return keep_.size(); }
    bool keep(std::size_t i) const { return keep_[i] != 0; }
    std::span<const std::uint8_t> bits() const noexcept { return keep_; }
    const LayoutPtr& layout() const noexcept { return layout_; }

    std::size_t dropped() const {
        std::size_t n = 0;
        for (auto k : keep_) n += k ? 0 : 1;
        return n;
    }

    std::size_t prunable() const { return layout_ ? layout_->weight_count() : 0; }

    friend bool operator==(const PruneMask& a, const PruneMask& b) {
        return a.keep_ == b.keep_ && same_layout(a.layout_, b.layout_);
    }

private:
    std::vector<std::uint8_t> keep_;
    LayoutPtr layout_;
};

template <typename TagA, typename TagB>
void require_same_layout(const FlatVector<TagA>& a, const FlatVector<TagB>& b) {
    if (a.size() != b.size() || !same_layout(a.layout, b.layout))
        throw LayoutError("vectors have different layouts (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + " entries)");
}

template <typename Tag>
void require_same_layout(const FlatVector<Tag>& v, const PruneMask& m) {
    if (v.size() != m.size() || !same_layout(v.layout, m.layout()))
        throw LayoutError("mask layout does not match vector layout (" + std::to_string(m.size()) + " vs " +
                          std::to_string(v.size()) + " entries)");
}

}  // namespace otafl
