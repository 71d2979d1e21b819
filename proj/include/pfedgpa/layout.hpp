#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/tensor.hpp"

namespace pfedgpa {

struct LayoutEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t length = 0;
};

/// Ordered, contiguous description of named parameter blocks inside one
/// flat vector.
class Layout {
public:
    Layout() = default;
    explicit Layout(std::vector<std::pair<std::string, Shape>> blocks);

    /// Appends a block at the current end and returns its offset.
    std::size_t append(std::string name, Shape shape);

    const std::vector<LayoutEntry>& entries() const noexcept { return entries_; }
    std::size_t total() const noexcept { return total_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const LayoutEntry& at(std::size_t i) const { return entries_.at(i); }
    std::optional<std::size_t> find(const std::string& name) const;
    const LayoutEntry& entry(const std::string& name) const;

    bool operator==(const Layout& other) const;

private:
    std::vector<LayoutEntry> entries_;
    std::size_t total_ = 0;
};

/// Names of the layers the server generates; the rest are kept by the client.
class LayerMask {
public:
    LayerMask() = default;
    LayerMask(const Layout& layout, std::vector<std::string> generated);
    static LayerMask all(const Layout& layout);
    /// The last `count` layer names of `layout`, in layout order.
    static LayerMask last(const Layout& layout, std::size_t count);

    const std::vector<std::string>& generated() const noexcept { return generated_; }
    bool contains(const std::string& name) const;
    /// Length of the generated part under `layout`.
    std::size_t generated_length(const Layout& layout) const;

private:
    std::vector<std::string> generated_;
};

template <typename T>
std::vector<T> flatten(const std::vector<Tensor<T>>& weights, const Layout& layout);

template <typename T>
std::vector<Tensor<T>> unflatten(std::span<const T> vec, const Layout& layout);

template <typename T>
struct SplitVector {
    std::vector<T> generated;
    std::vector<T> retained;
};

template <typename T>
SplitVector<T> split_by_mask(std::span<const T> vec, const Layout& layout, const LayerMask& mask);

template <typename T>
std::vector<T> merge_by_mask(std::span<const T> generated, std::span<const T> retained,
                             const Layout& layout, const LayerMask& mask);

/// Per-dimension z-score statistics over a collection of vectors.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    double floor = 1e-6;

    std::size_t dim() const noexcept { return mean.size(); }
};

template <typename T>
NormStats fit_norm(const std::vector<std::vector<T>>& vectors, double floor = 1e-6);

template <typename T>
std::vector<T> normalize(std::span<const T> vec, const NormStats& stats);

template <typename T>
std::vector<T> denormalize(std::span<const T> vec, const NormStats& stats);

/// Identity statistics (mean 0, std 1); used when normalization is disabled.
NormStats identity_norm(std::size_t dim);

}  // namespace pfedgpa
