#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/data.hpp"
#include "pfedgpa/record.hpp"
#include "pfedgpa/rng.hpp"

namespace pfedgpa {

/// Reference client architectures.
///   mlp-tiny : input -> hidden -> classes (ReLU)
///   cnn-small: 2 conv + 2 fc
///   cnn-med  : 3 conv + 2 fc
struct ModelSpec {
    std::string arch = "mlp-tiny";
    Shape input_shape{32};
    int n_classes = 4;
    std::size_t hidden = 32;
};

struct ClassifierModel {
    ModelSpec spec;
    Record record;  // loss = softmax cross-entropy, output = logits

    const Layout& layout() const noexcept { return record.layout(); }
};

ClassifierModel build_classifier(const ModelSpec& spec);

/// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every
/// `<layer>.weight` and matching `<layer>.bias`; layer-norm gains start at 1.
std::vector<float> init_params(const Layout& layout, Rng& rng);

struct LocalUpdateConfig {
    std::size_t epochs = 2;
    std::size_t batch_size = 50;
    double lr = 0.01;
    double momentum = 0.0;
};

struct ClientState {
    std::size_t id = 0;
    Dataset train;
    Dataset test;
    std::shared_ptr<const ClassifierModel> model;
    std::vector<float> params;
    Rng rng;
    /// Mean training loss of each epoch of the most recent local_update.
    std::vector<double> last_epoch_losses;

    std::size_t sample_count() const noexcept { return train.size(); }
    const Layout& layout() const { return model->layout(); }
};

ClientState make_client(std::size_t id, Dataset train, Dataset test, std::shared_ptr<const ClassifierModel> model,
                        std::vector<float> params, Rng rng);

/// Mini-batch SGD on the client's cross-entropy for cfg.epochs passes,
/// reshuffling every epoch with the client's own stream. Stores and returns
/// the result.
std::vector<float> local_update(ClientState& client, std::span<const float> init, const LocalUpdateConfig& cfg);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

EvalResult evaluate(const ClientState& client, std::span<const float> params);
EvalResult evaluate(const ClassifierModel& model, const Dataset& data, std::span<const float> params);

/// Gradient of the mean log-likelihood, i.e. the negated cross-entropy gradient.
template <typename T>
std::vector<T> loss_gradient(const ClientState& client, std::span<const T> params, const Batch<T>& batch);

}  // namespace pfedgpa
