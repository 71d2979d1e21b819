#include <cmath>

#include "pfedgpa/autoencoder.hpp"
#include "pfedgpa/client.hpp"
#include "pfedgpa/diffusion.hpp"

namespace pfedgpa {

namespace {

NodeId dense(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out) {
    return r.affine(x, r.param(name + ".weight", {out, in}), r.param(name + ".bias", {out}));
}

NodeId conv(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out, std::size_t stride) {
    return r.conv1d(x, r.param(name + ".weight", {out, in, 3}), r.param(name + ".bias", {out}), stride, 1);
}

NodeId encoder(Record& r, NodeId x, const AutoencoderConfig& c, std::size_t P) {
    if (c.kind == "linear") return dense(r, x, "enc.fc", P, c.latent_dim);
    const std::size_t ch = c.channels;
    auto h = r.reshape(x, {1, P});
    h = r.silu(conv(r, h, "enc.conv1", 1, ch, 2));
    h = r.silu(conv(r, h, "enc.conv2", ch, ch, 2));
    h = r.silu(conv(r, h, "enc.conv3", ch, ch, 2));
    auto f = r.reshape(h, {ch * P / 8});
    return r.add(dense(r, f, "enc.fc", ch * P / 8, c.latent_dim), dense(r, x, "enc.skip", P, c.latent_dim));
}

NodeId decoder(Record& r, NodeId z, const AutoencoderConfig& c, std::size_t P) {
    if (c.kind == "linear") return dense(r, z, "dec.fc", c.latent_dim, P);
    const std::size_t ch = c.channels;
    auto g = r.silu(r.reshape(dense(r, z, "dec.fc", c.latent_dim, ch * P / 8), {ch, P / 8}));
    g = r.silu(conv(r, r.upsample1d(g), "dec.conv1", ch, ch, 1));
    g = r.silu(conv(r, r.upsample1d(g), "dec.conv2", ch, ch, 1));
    auto out = r.reshape(conv(r, r.upsample1d(g), "dec.conv3", ch, 1, 1), {P});
    return r.add(out, dense(r, z, "dec.skip", c.latent_dim, P));
}

template <typename T>
Tensor<T> rows(const std::vector<std::vector<T>>& v, std::size_t width) {
    Tensor<T> t({v.size(), width});
    for (std::size_t i = 0; i < v.size(); ++i) std::copy(v[i].begin(), v[i].end(), t.data.begin() + i * width);
    return t;
}

}  // namespace

Autoencoder::Autoencoder(std::size_t dim, const AutoencoderConfig& cfg, Rng& init_rng) : dim_(dim), cfg_(cfg) {
    build();
    params_ = init_params(train_->layout(), init_rng);
    if (cfg_.identity_init) {
        if (cfg_.kind != "linear" || cfg_.latent_dim != dim_) {
            throw ConfigError("identity init needs a linear autoencoder with latent_dim == dim");
        }
        std::fill(params_.begin(), params_.end(), 0.0f);
        for (const char* name : {"enc.fc.weight", "dec.fc.weight"}) {
            const auto& e = train_->layout().entry(name);
            for (std::size_t i = 0; i < dim_; ++i) params_[e.offset + i * dim_ + i] = 1.0f;
        }
    }
    opt_ = Optimizer(params_.size(), true);
}

Autoencoder::Autoencoder(std::size_t dim, const AutoencoderConfig& cfg, std::vector<float> params)
    : dim_(dim), cfg_(cfg) {
    build();
    if (params.size() != train_->layout().total()) {
        throw LayoutError("autoencoder checkpoint holds " + std::to_string(params.size()) + " parameters, layout needs " +
                          std::to_string(train_->layout().total()));
    }
    params_ = std::move(params);
    opt_ = Optimizer(params_.size(), true);
}

void Autoencoder::build() {
    if (cfg_.kind != "conv" && cfg_.kind != "linear") {
        throw ConfigError("unknown autoencoder kind '" + cfg_.kind + "' (expected conv or linear)");
    }
    if (cfg_.latent_dim == 0 || cfg_.latent_dim > dim_) {
        throw ConfigError("autoencoder latent_dim must lie in [1, " + std::to_string(dim_) + "]");
    }
    padded_ = cfg_.kind == "linear" ? dim_ : (dim_ + 7) / 8 * 8;

    train_ = std::make_shared<Record>();
    {
        auto& r = *train_;
        auto x = r.input({padded_});
        auto noise = r.input({cfg_.latent_dim});
        auto target = r.input({padded_});
        auto z = r.add(encoder(r, x, cfg_, padded_), noise);
        auto out = decoder(r, z, cfg_, padded_);
        r.set_output(out);
        r.set_loss(r.squared_error(out, target));
    }
    enc_ = std::make_shared<Record>();
    enc_->set_output(encoder(*enc_, enc_->input({padded_}), cfg_, padded_));
    dec_ = std::make_shared<Record>();
    dec_->set_output(decoder(*dec_, dec_->input({cfg_.latent_dim}), cfg_, padded_));
}

std::size_t Autoencoder::encoder_size() const { return enc_->layout().total(); }

std::vector<double> Autoencoder::encode(std::span<const double> vec, Rng& rng, bool augment) const {
    if (vec.size() != dim_) {
        throw LayoutError("encode: vector has " + std::to_string(vec.size()) + " values, autoencoder expects " +
                          std::to_string(dim_));
    }
    std::vector<double> p(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(encoder_size()));
    Batch<double> b;
    b.size = 1;
    Tensor<double> x({1, padded_});
    std::copy(vec.begin(), vec.end(), x.data.begin());
    b.inputs.push_back(std::move(x));
    auto z = forward<double>(*enc_, p, b).data;
    if (augment) {
        for (auto& v : z) v += cfg_.augment_sigma_latent * rng.normal();
    }
    return z;
}

std::vector<double> Autoencoder::decode(std::span<const double> latent) const {
    if (latent.size() != cfg_.latent_dim) throw LayoutError("decode: latent has the wrong dimension");
    std::vector<double> p(params_.begin() + static_cast<std::ptrdiff_t>(encoder_size()), params_.end());
    Batch<double> b;
    b.size = 1;
    b.inputs.push_back(Tensor<double>({1, cfg_.latent_dim}, std::vector<double>(latent.begin(), latent.end())));
    auto out = forward<double>(*dec_, p, b).data;
    out.resize(dim_);
    return out;
}

double Autoencoder::train_step(const std::vector<std::vector<float>>& batch, Rng& rng) {
    std::vector<std::vector<float>> noisy, noise, target;
    for (const auto& v : batch) {
        if (v.size() != dim_) throw LayoutError("autoencoder training vector has the wrong dimension");
        std::vector<float> t(padded_, 0.0f), n(padded_, 0.0f);
        std::copy(v.begin(), v.end(), t.begin());
        for (std::size_t i = 0; i < dim_; ++i) n[i] = t[i] + static_cast<float>(cfg_.augment_sigma_input * rng.normal());
        std::vector<float> zn(cfg_.latent_dim);
        for (auto& e : zn) e = static_cast<float>(cfg_.augment_sigma_latent * rng.normal());
        noisy.push_back(std::move(n));
        noise.push_back(std::move(zn));
        target.push_back(std::move(t));
    }
    Batch<float> b;
    b.size = batch.size();
    b.inputs.push_back(rows(noisy, padded_));
    b.inputs.push_back(rows(noise, cfg_.latent_dim));
    b.inputs.push_back(rows(target, padded_));
    auto lg = value_and_grad_chunked<float>(*train_, params_, b, cfg_.chunk, cfg_.workers);
    opt_.step(params_, lg.grads, cfg_.lr);
    loss_trace_.push_back(lg.loss);
    return lg.loss;
}

Autoencoder train_autoencoder(const std::vector<std::vector<float>>& vectors, const AutoencoderConfig& cfg, Rng& rng) {
    if (vectors.size() < 2) {
        throw LayoutError("autoencoder training needs at least 2 vectors, got " + std::to_string(vectors.size()));
    }
    Rng init = rng.child(0xae);
    Autoencoder ae(vectors.front().size(), cfg, init);
    DivergenceGuard guard;
    const std::size_t bs = std::min(std::max<std::size_t>(1, cfg.batch_size), vectors.size());
    std::vector<std::vector<float>> batch(bs);
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        for (auto& v : batch) v = vectors[rng.index(vectors.size())];
        double loss = 0.0;
        try {
            loss = ae.train_step(batch, rng);
        } catch (const NumericError& e) {
            throw DivergenceError("autoencoder training step " + std::to_string(it) + ": " + e.what(), it);
        }
        if (guard.observe(loss)) {
            throw DivergenceError("autoencoder training diverged at step " + std::to_string(it), it);
        }
    }
    return ae;
}

}  // namespace pfedgpa
