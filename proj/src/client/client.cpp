#include "pfedgpa/client.hpp"

#include <cmath>
#include <numeric>

namespace pfedgpa {

namespace {

NodeId dense(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out) {
    auto w = r.param(name + ".weight", {out, in});
    auto b = r.param(name + ".bias", {out});
    return r.affine(x, w, b);
}

NodeId conv(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
            std::size_t stride, std::size_t pad) {
    auto w = r.param(name + ".weight", {out, in, k, k});
    auto b = r.param(name + ".bias", {out});
    return r.conv2d(x, w, b, stride, pad);
}

}  // namespace

ClassifierModel build_classifier(const ModelSpec& spec) {
    if (spec.n_classes < 2) {
        throw ConfigError("classifier needs at least 2 classes");
    }
    ClassifierModel m;
    m.spec = spec;
    Record& r = m.record;
    const auto K = static_cast<std::size_t>(spec.n_classes);
    auto x = r.input(spec.input_shape);
    NodeId logits;
    if (spec.arch == "mlp-tiny") {
        const std::size_t in = numel(spec.input_shape);
        if (spec.input_shape.size() != 1) {
            x = r.reshape(x, {in});
        }
        auto h = r.relu(dense(r, x, "fc1", in, spec.hidden));
        logits = dense(r, h, "fc2", spec.hidden, K);
    } else if (spec.arch == "cnn-small" || spec.arch == "cnn-med") {
        if (spec.input_shape.size() != 3) {
            throw ConfigError(spec.arch + " expects [C,H,W] inputs, got " + shape_str(spec.input_shape));
        }
        const bool med = spec.arch == "cnn-med";
        std::vector<std::size_t> channels = med ? std::vector<std::size_t>{16, 32, 32} : std::vector<std::size_t>{8, 16};
        std::size_t c = spec.input_shape[0];
        std::size_t h = spec.input_shape[1];
        std::size_t w = spec.input_shape[2];
        NodeId cur = x;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            cur = r.relu(conv(r, cur, "conv" + std::to_string(i + 1), c, channels[i], 3, 2, 1));
            c = channels[i];
            h = (h + 2 - 3) / 2 + 1;
            w = (w + 2 - 3) / 2 + 1;
        }
        const std::size_t flat = c * h * w;
        cur = r.reshape(cur, {flat});
        const std::size_t hidden = med ? 128 : 64;
        cur = r.relu(dense(r, cur, "fc1", flat, hidden));
        logits = dense(r, cur, "fc2", hidden, K);
    } else {
        throw ConfigError("unknown architecture '" + spec.arch + "' (expected mlp-tiny, cnn-small or cnn-med)");
    }
    r.set_output(logits);
    r.set_loss(r.softmax_xent(logits));
    return m;
}

std::vector<float> init_params(const Layout& layout, Rng& rng) {
    std::vector<float> p(layout.total(), 0.0f);
    auto fan_in_of = [&](const std::string& weight) -> std::size_t {
        const auto& s = layout.entry(weight).shape;
        return s.size() > 1 ? numel(s) / s[0] : s[0];
    };
    for (const auto& e : layout.entries()) {
        const auto dot = e.name.rfind('.');
        const std::string stem = e.name.substr(0, dot);
        const std::string kind = dot == std::string::npos ? "" : e.name.substr(dot + 1);
        double bound = 0.0;
        if (kind == "weight") {
            bound = 1.0 / std::sqrt(static_cast<double>(fan_in_of(e.name)));
        } else if (kind == "bias" && layout.find(stem + ".weight")) {
            bound = 1.0 / std::sqrt(static_cast<double>(fan_in_of(stem + ".weight")));
        } else if (kind == "gamma") {
            std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(e.offset), e.length, 1.0f);
            continue;
        } else {
            continue;
        }
        for (std::size_t k = 0; k < e.length; ++k) {
            p[e.offset + k] = static_cast<float>(rng.uniform(-bound, bound));
        }
    }
    return p;
}

ClientState make_client(std::size_t id, Dataset train, Dataset test, std::shared_ptr<const ClassifierModel> model,
                        std::vector<float> params, Rng rng) {
    if (train.n_classes != test.n_classes) {
        throw LayoutError("client " + std::to_string(id) + ": train and test label alphabets differ");
    }
    if (params.size() != model->layout().total()) {
        throw LayoutError("client " + std::to_string(id) + ": params do not match the model layout");
    }
    ClientState c;
    c.id = id;
    c.train = std::move(train);
    c.test = std::move(test);
    c.model = std::move(model);
    c.params = std::move(params);
    c.rng = rng;
    return c;
}

std::vector<float> local_update(ClientState& client, std::span<const float> init, const LocalUpdateConfig& cfg) {
    const std::size_t n = client.train.size();
    if (n == 0) {
        throw LayoutError("client " + std::to_string(client.id) + " has no training data");
    }
    if (init.size() != client.layout().total()) {
        throw LayoutError("client " + std::to_string(client.id) + ": initial params length " +
                          std::to_string(init.size()) + " does not match layout " +
                          std::to_string(client.layout().total()));
    }
    std::vector<float> theta(init.begin(), init.end());
    std::vector<float> velocity(cfg.momentum > 0.0 ? theta.size() : 0, 0.0f);
    const std::size_t bs = std::min(cfg.batch_size, n);
    const auto lr = static_cast<float>(cfg.lr);
    const auto mom = static_cast<float>(cfg.momentum);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    client.last_epoch_losses.clear();

    std::size_t batch_index = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        client.rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += bs, ++batch_index) {
            const std::size_t end = std::min(n, start + bs);
            auto batch = client.train.batch<float>(std::span<const std::size_t>(order).subspan(start, end - start));
            LossAndGrad<float> lg;
            try {
                lg = value_and_grad<float>(client.model->record, theta, batch);
            } catch (const NumericError& e) {
                throw NumericError("client " + std::to_string(client.id) + ", batch " + std::to_string(batch_index) +
                                       ": " + e.what(),
                                   batch_index);
            }
            if (!std::isfinite(lg.loss)) {
                throw NumericError("client " + std::to_string(client.id) + ": non-finite loss at batch " +
                                       std::to_string(batch_index),
                                   batch_index);
            }
            epoch_loss += lg.loss;
            ++batches;
            if (mom > 0.0f) {
                for (std::size_t k = 0; k < theta.size(); ++k) {
                    velocity[k] = mom * velocity[k] + lg.grads[k];
                    theta[k] -= lr * velocity[k];
                }
            } else {
                theta = sgd_step<float>(theta, lg.grads, lr);
            }
        }
        client.last_epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }
    client.params = theta;
    return theta;
}

EvalResult evaluate(const ClassifierModel& model, const Dataset& data, std::span<const float> params) {
    if (data.size() == 0) {
        throw LayoutError("cannot evaluate on an empty test set");
    }
    auto batch = data.batch<float>();
    auto logits = forward<float>(model.record, params, batch);
    const auto K = static_cast<std::size_t>(model.spec.n_classes);
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size; ++b) {
        const float* z = logits.data.data() + b * K;
        // ties resolve to the lowest class index
        std::size_t arg = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (z[k] > z[arg]) arg = k;
        }
        if (static_cast<int>(arg) == batch.labels[b]) ++correct;
        const double m = z[arg];
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(z[k]) - m);
        loss += m + std::log(s) - z[batch.labels[b]];
    }
    return {static_cast<double>(correct) / static_cast<double>(batch.size), loss / static_cast<double>(batch.size)};
}

EvalResult evaluate(const ClientState& client, std::span<const float> params) {
    return evaluate(*client.model, client.test, params);
}

template <typename T>
std::vector<T> loss_gradient(const ClientState& client, std::span<const T> params, const Batch<T>& batch) {
    auto lg = value_and_grad<T>(client.model->record, params, batch);
    for (auto& g : lg.grads) g = -g;
    return lg.grads;
}

template std::vector<float> loss_gradient(const ClientState&, std::span<const float>, const Batch<float>&);
template std::vector<double> loss_gradient(const ClientState&, std::span<const double>, const Batch<double>&);

}  // namespace pfedgpa
