#include "pfedgpa/layout.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pfedgpa {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

Layout::Layout(std::vector<std::pair<std::string, Shape>> blocks) {
    for (auto& [name, shape] : blocks) {
        append(std::move(name), std::move(shape));
    }
}

std::size_t Layout::append(std::string name, Shape shape) {
    if (find(name)) {
        throw LayoutError("duplicate layer name '" + name + "'");
    }
    const std::size_t length = numel(shape);
    entries_.push_back({std::move(name), std::move(shape), total_, length});
    total_ += length;
    return entries_.back().offset;
}

std::optional<std::size_t> Layout::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

const LayoutEntry& Layout::entry(const std::string& name) const {
    auto idx = find(name);
    if (!idx) {
        throw LayoutError("unknown layer '" + name + "'");
    }
    return entries_[*idx];
}

bool Layout::operator==(const Layout& other) const {
    if (entries_.size() != other.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) {
            return false;
        }
    }
    return true;
}

LayerMask::LayerMask(const Layout& layout, std::vector<std::string> generated) : generated_(std::move(generated)) {
    if (generated_.empty()) {
        throw LayoutError("layer mask must name at least one layer");
    }
    for (const auto& name : generated_) {
        if (!layout.find(name)) {
            throw LayoutError("mask names unknown layer '" + name + "'");
        }
    }
    // keep layout order so split/merge are independent of how the mask was spelled
    std::vector<std::string> ordered;
    for (const auto& e : layout.entries()) {
        if (std::find(generated_.begin(), generated_.end(), e.name) != generated_.end()) {
            ordered.push_back(e.name);
        }
    }
    generated_ = std::move(ordered);
}

LayerMask LayerMask::all(const Layout& layout) {
    std::vector<std::string> names;
    for (const auto& e : layout.entries()) {
        names.push_back(e.name);
    }
    return LayerMask(layout, std::move(names));
}

LayerMask LayerMask::last(const Layout& layout, std::size_t count) {
    if (count == 0 || count > layout.size()) {
        throw LayoutError("cannot select the last " + std::to_string(count) + " of " +
                          std::to_string(layout.size()) + " layers");
    }
    std::vector<std::string> names;
    for (std::size_t i = layout.size() - count; i < layout.size(); ++i) {
        names.push_back(layout.at(i).name);
    }
    return LayerMask(layout, std::move(names));
}

bool LayerMask::contains(const std::string& name) const {
    return std::find(generated_.begin(), generated_.end(), name) != generated_.end();
}

std::size_t LayerMask::generated_length(const Layout& layout) const {
    std::size_t n = 0;
    for (const auto& name : generated_) {
        n += layout.entry(name).length;
    }
    return n;
}

template <typename T>
std::vector<T> flatten(const std::vector<Tensor<T>>& weights, const Layout& layout) {
    if (weights.size() != layout.size()) {
        throw LayoutError("expected " + std::to_string(layout.size()) + " weight blocks, got " +
                          std::to_string(weights.size()));
    }
    std::vector<T> out;
    out.reserve(layout.total());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const auto& e = layout.at(i);
        if (weights[i].shape != e.shape) {
            throw LayoutError("layer '" + e.name + "' expects shape " + shape_str(e.shape) + ", got " +
                              shape_str(weights[i].shape));
        }
        out.insert(out.end(), weights[i].data.begin(), weights[i].data.end());
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> unflatten(std::span<const T> vec, const Layout& layout) {
    if (vec.size() != layout.total()) {
        throw LayoutError("vector length " + std::to_string(vec.size()) + " does not match layout total " +
                          std::to_string(layout.total()));
    }
    std::vector<Tensor<T>> out;
    out.reserve(layout.size());
    for (const auto& e : layout.entries()) {
        auto part = vec.subspan(e.offset, e.length);
        out.emplace_back(e.shape, std::vector<T>(part.begin(), part.end()));
    }
    return out;
}

template <typename T>
SplitVector<T> split_by_mask(std::span<const T> vec, const Layout& layout, const LayerMask& mask) {
    if (vec.size() != layout.total()) {
        throw LayoutError("vector length does not match layout");
    }
    SplitVector<T> out;
    for (const auto& e : layout.entries()) {
        auto part = vec.subspan(e.offset, e.length);
        auto& dst = mask.contains(e.name) ? out.generated : out.retained;
        dst.insert(dst.end(), part.begin(), part.end());
    }
    for (const auto& name : mask.generated()) {
        layout.entry(name);  // throws on unknown names
    }
    return out;
}

template <typename T>
std::vector<T> merge_by_mask(std::span<const T> generated, std::span<const T> retained, const Layout& layout,
                             const LayerMask& mask) {
    const std::size_t gen_len = mask.generated_length(layout);
    if (generated.size() != gen_len || retained.size() != layout.total() - gen_len) {
        throw LayoutError("split parts do not partition the layout (" + std::to_string(generated.size()) + " + " +
                          std::to_string(retained.size()) + " vs " + std::to_string(layout.total()) + ")");
    }
    std::vector<T> out;
    out.reserve(layout.total());
    std::size_t g = 0;
    std::size_t r = 0;
    for (const auto& e : layout.entries()) {
        if (mask.contains(e.name)) {
            out.insert(out.end(), generated.begin() + g, generated.begin() + g + e.length);
            g += e.length;
        } else {
            out.insert(out.end(), retained.begin() + r, retained.begin() + r + e.length);
            r += e.length;
        }
    }
    return out;
}

template <typename T>
NormStats fit_norm(const std::vector<std::vector<T>>& vectors, double floor) {
    if (vectors.size() < 2) {
        throw LayoutError("fit_norm needs at least 2 vectors, got " + std::to_string(vectors.size()));
    }
    if (!(floor > 0.0)) {
        throw LayoutError("std floor must be positive");
    }
    const std::size_t d = vectors.front().size();
    NormStats stats;
    stats.floor = floor;
    stats.mean.assign(d, 0.0);
    stats.std.assign(d, 0.0);
    for (const auto& v : vectors) {
        if (v.size() != d) {
            throw LayoutError("fit_norm vectors have unequal lengths");
        }
        for (std::size_t i = 0; i < d; ++i) {
            stats.mean[i] += static_cast<double>(v[i]);
        }
    }
    const double n = static_cast<double>(vectors.size());
    for (auto& m : stats.mean) {
        m /= n;
    }
    for (const auto& v : vectors) {
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = static_cast<double>(v[i]) - stats.mean[i];
            stats.std[i] += dv * dv;
        }
    }
    // population std; two points {-1, +1} give std 1
    for (auto& s : stats.std) {
        s = std::max(std::sqrt(s / n), floor);
    }
    return stats;
}

template <typename T>
std::vector<T> normalize(std::span<const T> vec, const NormStats& stats) {
    if (vec.size() != stats.dim()) {
        throw LayoutError("normalize: dimension mismatch");
    }
    std::vector<T> out(vec.size());
    for (std::size_t i = 0; i < vec.size(); ++i) {
        out[i] = static_cast<T>((static_cast<double>(vec[i]) - stats.mean[i]) / stats.std[i]);
    }
    return out;
}

template <typename T>
std::vector<T> denormalize(std::span<const T> vec, const NormStats& stats) {
    if (vec.size() != stats.dim()) {
        throw LayoutError("denormalize: dimension mismatch");
    }
    std::vector<T> out(vec.size());
    for (std::size_t i = 0; i < vec.size(); ++i) {
        out[i] = static_cast<T>(static_cast<double>(vec[i]) * stats.std[i] + stats.mean[i]);
    }
    return out;
}

NormStats identity_norm(std::size_t dim) {
    NormStats s;
    s.mean.assign(dim, 0.0);
    s.std.assign(dim, 1.0);
    return s;
}

#define PFEDGPA_INSTANTIATE(T)                                                                                 \
    template std::vector<T> flatten(const std::vector<Tensor<T>>&, const Layout&);                             \
    template std::vector<Tensor<T>> unflatten(std::span<const T>, const Layout&);                              \
    template SplitVector<T> split_by_mask(std::span<const T>, const Layout&, const LayerMask&);                \
    template std::vector<T> merge_by_mask(std::span<const T>, std::span<const T>, const Layout&,               \
                                          const LayerMask&);                                                   \
    template NormStats fit_norm(const std::vector<std::vector<T>>&, double);                                   \
    template std::vector<T> normalize(std::span<const T>, const NormStats&);                                   \
    template std::vector<T> denormalize(std::span<const T>, const NormStats&);

PFEDGPA_INSTANTIATE(float)
PFEDGPA_INSTANTIATE(double)
#undef PFEDGPA_INSTANTIATE

}  // namespace pfedgpa
