#include "pfedgpa/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pfedgpa {

void Dataset::push(std::span<const float> x, int label) {
    if (x.size() != feature_size()) {
        throw LayoutError("example has " + std::to_string(x.size()) + " features, dataset expects " +
                          std::to_string(feature_size()));
    }
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.feature_shape = feature_shape;
    out.n_classes = n_classes;
    out.features.reserve(indices.size() * feature_size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        out.push(example(i), labels.at(i));
    }
    return out;
}

std::vector<std::size_t> Dataset::histogram() const {
    std::vector<std::size_t> h(static_cast<std::size_t>(n_classes), 0);
    for (int y : labels) {
        ++h.at(static_cast<std::size_t>(y));
    }
    return h;
}

template <typename T>
Batch<T> Dataset::batch(std::span<const std::size_t> indices) const {
    Batch<T> b;
    b.size = indices.size();
    Shape s = feature_shape;
    s.insert(s.begin(), indices.size());
    Tensor<T> x(s);
    const std::size_t f = feature_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        auto ex = example(indices[k]);
        std::copy(ex.begin(), ex.end(), x.data.begin() + static_cast<std::ptrdiff_t>(k * f));
        b.labels.push_back(labels[indices[k]]);
    }
    b.inputs.push_back(std::move(x));
    return b;
}

template <typename T>
Batch<T> Dataset::batch() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch<T>(idx);
}

template Batch<float> Dataset::batch<float>(std::span<const std::size_t>) const;
template Batch<double> Dataset::batch<double>(std::span<const std::size_t>) const;
template Batch<float> Dataset::batch<float>() const;
template Batch<double> Dataset::batch<double>() const;

Dataset make_blobs(const BlobSpec& spec, Rng& rng) {
    if (spec.n_classes < 2 || spec.dim < 2) {
        throw ConfigError("blobs need at least 2 classes and 2 dimensions");
    }
    Dataset d;
    d.feature_shape = {spec.dim};
    d.n_classes = spec.n_classes;
    std::vector<float> x(spec.dim);
    for (int c = 0; c < spec.n_classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / spec.n_classes;
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            for (std::size_t k = 0; k < spec.dim; ++k) {
                x[k] = static_cast<float>(spec.noise_std * rng.normal());
            }
            x[0] += static_cast<float>(spec.radius * std::cos(angle));
            x[1] += static_cast<float>(spec.radius * std::sin(angle));
            d.push(x, c);
        }
    }
    return d;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw ConfigError("truncated IDX file: " + path);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!img) throw ConfigError("cannot open " + images_path);
    if (!lab) throw ConfigError("cannot open " + labels_path);
    if (read_be32(img, images_path) != 0x00000803) throw ConfigError("bad IDX image magic in " + images_path);
    if (read_be32(lab, labels_path) != 0x00000801) throw ConfigError("bad IDX label magic in " + labels_path);
    const std::uint32_t n = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    if (read_be32(lab, labels_path) != n) throw ConfigError("IDX image/label counts differ");

    Dataset d;
    d.feature_shape = {1, rows, cols};
    std::vector<unsigned char> pix(static_cast<std::size_t>(rows) * cols);
    std::vector<float> x(pix.size());
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char y = 0;
        if (!img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size())) ||
            !lab.read(reinterpret_cast<char*>(&y), 1)) {
            throw ConfigError("truncated IDX data at example " + std::to_string(i));
        }
        for (std::size_t k = 0; k < pix.size(); ++k) x[k] = static_cast<float>(pix[k]) / 255.0f;
        d.push(x, y);
        max_label = std::max<int>(max_label, y);
    }
    d.n_classes = max_label + 1;
    return d;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    Dataset d;
    std::string line;
    std::size_t line_no = 0;
    int max_label = 0;
    std::vector<float> x;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) throw ConfigError(path + ":" + std::to_string(line_no) + ": need label and features");
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(cells[0], &used);
            x.clear();
            for (std::size_t k = 1; k < cells.size(); ++k) x.push_back(std::stof(cells[k]));
        } catch (const std::exception&) {
            if (line_no == 1) continue;  // header
            throw ConfigError(path + ":" + std::to_string(line_no) + ": non-numeric cell");
        }
        if (label < 0) throw ConfigError(path + ":" + std::to_string(line_no) + ": negative label");
        if (d.feature_shape.empty()) d.feature_shape = {x.size()};
        d.push(x, label);
        max_label = std::max(max_label, label);
    }
    if (d.size() == 0) throw ConfigError(path + ": no examples");
    d.n_classes = max_label + 1;
    return d;
}

}  // namespace pfedgpa
