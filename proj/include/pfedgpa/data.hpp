#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/record.hpp"
#include "pfedgpa/rng.hpp"

namespace pfedgpa {

/// Labeled examples with a common per-example feature shape.
struct Dataset {
    Shape feature_shape;
    int n_classes = 0;
    std::vector<float> features;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t feature_size() const noexcept { return numel(feature_shape); }
    std::span<const float> example(std::size_t i) const {
        return std::span<const float>(features).subspan(i * feature_size(), feature_size());
    }
    void push(std::span<const float> x, int label);
    Dataset subset(std::span<const std::size_t> indices) const;
    /// Per-class counts of length n_classes.
    std::vector<std::size_t> histogram() const;

    template <typename T>
    Batch<T> batch(std::span<const std::size_t> indices) const;
    template <typename T>
    Batch<T> batch() const;
};

/// Gaussian blobs: class means evenly spaced on a circle of `radius` in the
/// plane of the first two coordinates, isotropic noise of `noise_std` in
/// all `dim` coordinates.
struct BlobSpec {
    int n_classes = 4;
    std::size_t dim = 32;
    double radius = 2.0;
    double noise_std = 1.0;
    std::size_t per_class = 2000;
};

Dataset make_blobs(const BlobSpec& spec, Rng& rng);

/// IDX (MNIST-style) image + label files; pixels scaled to [0,1] and shaped [1,H,W].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// CSV rows of `label,f1,f2,...`; an optional non-numeric header row is skipped.
Dataset load_csv(const std::string& path);

}  // namespace pfedgpa
