#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pfedgpa {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Raised when sizes or layouts of two operands disagree.
class LayoutError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a computation produces NaN/Inf. Carries the index of the
/// operation (or step, for iterative procedures) that failed.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t index)
        : std::runtime_error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), T{0}) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape)) {
            throw LayoutError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
    }

    std::size_t size() const noexcept { return data.size(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }
    std::span<T> span() noexcept { return data; }
    std::span<const T> span() const noexcept { return data; }
};

template <typename T>
bool all_finite(std::span<const T> v) {
    for (T x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

template <typename To, typename From>
std::vector<To> convert(std::span<const From> v) {
    return std::vector<To>(v.begin(), v.end());
}

}  // namespace pfedgpa
