#include <cmath>

#include "pfedgpa/client.hpp"
#include "pfedgpa/diffusion.hpp"

namespace pfedgpa {

namespace {

constexpr std::size_t kMlpMaxDim = 4096;

NodeId dense(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out) {
    return r.affine(x, r.param(name + ".weight", {out, in}), r.param(name + ".bias", {out}));
}

NodeId conv(Record& r, NodeId x, const std::string& name, std::size_t in, std::size_t out, std::size_t stride) {
    return r.conv1d(x, r.param(name + ".weight", {out, in, 3}), r.param(name + ".bias", {out}), stride, 1);
}

// block(h) = silu(h + time projection), channel-wise for conv features
NodeId with_time(Record& r, NodeId h, NodeId temb, const std::string& name, std::size_t tdim, std::size_t ch,
                 bool conv_features) {
    auto e = dense(r, temb, name + ".time", tdim, ch);
    return r.silu(conv_features ? r.add_channel(h, e) : r.add(h, e));
}

std::shared_ptr<Record> build_mlp(std::size_t d, const EstimatorConfig& c) {
    auto r = std::make_shared<Record>();
    auto x = r->input({d});
    auto temb = r->input({c.time_dim});
    auto target = r->input({d});
    NodeId h = with_time(*r, dense(*r, x, "in", d, c.width), temb, "in", c.time_dim, c.width, false);
    for (std::size_t l = 1; l < c.depth; ++l) {
        const std::string name = "hidden" + std::to_string(l);
        h = with_time(*r, dense(*r, h, name, c.width, c.width), temb, name, c.time_dim, c.width, false);
    }
    auto out = dense(*r, h, "out", c.width, d);
    r->set_output(out);
    r->set_loss(r->squared_error(out, target));
    return r;
}

std::shared_ptr<Record> build_unet(std::size_t L, const EstimatorConfig& c) {
    auto r = std::make_shared<Record>();
    const std::size_t ch = c.unet_channels;
    const std::size_t td = c.time_dim;
    auto x = r->input({L});
    auto temb = r->input({td});
    auto target = r->input({L});
    auto img = r->reshape(x, {1, L});
    auto h0 = with_time(*r, conv(*r, img, "enc0", 1, ch, 1), temb, "enc0", td, ch, true);          // [ch, L]
    auto h1 = with_time(*r, conv(*r, h0, "down1", ch, 2 * ch, 2), temb, "down1", td, 2 * ch, true);  // [2ch, L/2]
    auto h2 = with_time(*r, conv(*r, h1, "down2", 2 * ch, 2 * ch, 2), temb, "down2", td, 2 * ch, true);  // [2ch, L/4]
    auto m = with_time(*r, conv(*r, h2, "mid", 2 * ch, 2 * ch, 1), temb, "mid", td, 2 * ch, true);
    auto u1 = r->concat_channels(r->upsample1d(m), h1);  // [4ch, L/2]
    u1 = with_time(*r, conv(*r, u1, "up1", 4 * ch, ch, 1), temb, "up1", td, ch, true);
    auto u0 = r->concat_channels(r->upsample1d(u1), h0);  // [2ch, L]
    u0 = with_time(*r, conv(*r, u0, "up0", 2 * ch, ch, 1), temb, "up0", td, ch, true);
    auto out = r->reshape(conv(*r, u0, "out", ch, 1, 1), {L});
    r->set_output(out);
    r->set_loss(r->squared_error(out, target));
    return r;
}

}  // namespace

std::vector<double> time_embedding(std::size_t t, std::size_t dim) {
    std::vector<double> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(static_cast<double>(t) * freq);
        e[half + i] = std::cos(static_cast<double>(t) * freq);
    }
    return e;
}

NetEstimator::NetEstimator(std::size_t dim, const EstimatorConfig& cfg, Rng& init_rng) : dim_(dim), cfg_(cfg) {
    build();
    params_ = init_params(record_->layout(), init_rng);
}

NetEstimator::NetEstimator(std::size_t dim, const EstimatorConfig& cfg, std::vector<float> params)
    : dim_(dim), cfg_(cfg) {
    build();
    if (params.size() != record_->layout().total()) {
        throw LayoutError("estimator checkpoint holds " + std::to_string(params.size()) + " parameters, layout needs " +
                          std::to_string(record_->layout().total()));
    }
    params_ = std::move(params);
}

NetEstimator::NetEstimator(const NetEstimator& other)
    : NoiseEstimator<float>(),
      NoiseEstimator<double>(),
      dim_(other.dim_),
      padded_dim_(other.padded_dim_),
      cfg_(other.cfg_),
      kind_(other.kind_),
      record_(other.record_),
      params_(other.params_),
      opt_(other.opt_),
      opt_kind_(other.opt_kind_),
      loss_trace_(other.loss_trace_) {}

void NetEstimator::build() {
    if (dim_ == 0) {
        throw ConfigError("estimator dimension must be positive");
    }
    kind_ = cfg_.kind == "auto" ? (dim_ <= kMlpMaxDim ? "mlp" : "unet") : cfg_.kind;
    if (cfg_.time_dim < 2 || cfg_.time_dim % 2 != 0) {
        throw ConfigError("time embedding dimension must be even and >= 2");
    }
    if (kind_ == "mlp") {
        if (cfg_.depth < 1 || cfg_.width < 1) throw ConfigError("mlp estimator needs depth >= 1 and width >= 1");
        padded_dim_ = dim_;
        record_ = build_mlp(dim_, cfg_);
    } else if (kind_ == "unet") {
        padded_dim_ = (dim_ + 3) / 4 * 4;
        record_ = build_unet(padded_dim_, cfg_);
    } else {
        throw ConfigError("unknown estimator kind '" + cfg_.kind + "' (expected mlp, unet or auto)");
    }
}

void NetEstimator::set_params(std::vector<float> params) {
    if (params.size() != params_.size()) throw LayoutError("estimator parameter length mismatch");
    params_ = std::move(params);
    std::lock_guard lock(cache_mu_);
    dirty_ = true;
}

const std::vector<double>& NetEstimator::double_params() const {
    std::lock_guard lock(cache_mu_);
    if (dirty_) {
        params_d_.assign(params_.begin(), params_.end());
        dirty_ = false;
    }
    return params_d_;
}

template <typename T>
Batch<T> NetEstimator::make_batch(std::span<const T> x, std::span<const std::size_t> steps,
                                  std::span<const T> eps) const {
    const std::size_t n = steps.size();
    if (x.size() != n * dim_) {
        throw LayoutError("estimator input holds " + std::to_string(x.size()) + " values, expected " +
                          std::to_string(n) + " x " + std::to_string(dim_));
    }
    Batch<T> b;
    b.size = n;
    Tensor<T> xin({n, padded_dim_});
    Tensor<T> tin({n, cfg_.time_dim});
    Tensor<T> target({n, padded_dim_});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x.begin() + i * dim_, x.begin() + (i + 1) * dim_, xin.data.begin() + i * padded_dim_);
        if (!eps.empty()) {
            std::copy(eps.begin() + i * dim_, eps.begin() + (i + 1) * dim_, target.data.begin() + i * padded_dim_);
        }
        auto e = time_embedding(steps[i], cfg_.time_dim);
        std::copy(e.begin(), e.end(), tin.data.begin() + i * cfg_.time_dim);
    }
    b.inputs.push_back(std::move(xin));
    b.inputs.push_back(std::move(tin));
    b.inputs.push_back(std::move(target));
    return b;
}

namespace {
template <typename T>
std::vector<T> strip_padding(const Tensor<T>& out, std::size_t n, std::size_t dim, std::size_t padded) {
    if (dim == padded) return out.data;
    std::vector<T> r(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(out.data.begin() + i * padded, out.data.begin() + i * padded + dim, r.begin() + i * dim);
    }
    return r;
}
}  // namespace

std::vector<float> NetEstimator::predict(std::span<const float> x, std::span<const std::size_t> steps) const {
    auto b = make_batch<float>(x, steps, {});
    return strip_padding(forward<float>(*record_, params_, b), steps.size(), dim_, padded_dim_);
}

std::vector<double> NetEstimator::predict(std::span<const double> x, std::span<const std::size_t> steps) const {
    auto b = make_batch<double>(x, steps, {});
    return strip_padding(forward<double>(*record_, double_params(), b), steps.size(), dim_, padded_dim_);
}

double NetEstimator::train_step(std::span<const float> x_t, std::span<const std::size_t> steps,
                                std::span<const float> eps, const DiffusionTrainConfig& cfg) {
    auto b = make_batch<float>(x_t, steps, eps);
    auto lg = value_and_grad_chunked<float>(*record_, params_, b, cfg.chunk, cfg.workers);
    if (cfg.optimizer != "adam" && cfg.optimizer != "momentum") {
        throw ConfigError("unknown diffusion optimizer '" + cfg.optimizer + "' (expected adam or momentum)");
    }
    if (opt_kind_ != cfg.optimizer) {
        opt_ = Optimizer(params_.size(), cfg.optimizer == "adam", cfg.momentum);
        opt_kind_ = cfg.optimizer;
    }
    opt_.step(params_, lg.grads, cfg.lr);
    {
        std::lock_guard lock(cache_mu_);
        dirty_ = true;
    }
    loss_trace_.push_back(lg.loss);
    return lg.loss;
}

template <typename T>
double ddpm_loss(const NoiseEstimator<T>& est, const std::vector<std::vector<T>>& batch_x0, const NoiseSchedule& s,
                 Rng& rng) {
    if (batch_x0.empty()) throw LayoutError("ddpm_loss: empty batch");
    const std::size_t d = est.dim();
    const std::size_t n = batch_x0.size();
    std::vector<T> x_t(n * d), eps(n * d);
    std::vector<std::size_t> steps(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (batch_x0[i].size() != d) throw LayoutError("ddpm_loss: vector dimension mismatch");
        steps[i] = 1 + rng.index(s.T);
        auto e = rng.normal_vector<T>(d);
        auto xt = forward_marginal<T>(batch_x0[i], steps[i], e, s);
        std::copy(e.begin(), e.end(), eps.begin() + i * d);
        std::copy(xt.begin(), xt.end(), x_t.begin() + i * d);
    }
    auto pred = est.predict(x_t, steps);
    double total = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double diff = static_cast<double>(eps[k]) - static_cast<double>(pred[k]);
        total += diff * diff;
    }
    const double loss = total / static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("ddpm_loss is not finite", 0);
    return loss;
}

template <typename T>
std::vector<T> reverse_step(const NoiseEstimator<T>& est, std::span<const T> x_t, std::size_t t, std::span<const T> z,
                            const NoiseSchedule& s) {
    s.check_step(t);
    if (z.size() != x_t.size()) throw LayoutError("reverse_step: z and x differ in length");
    auto eps = est.predict_one(x_t, t);
    auto out = posterior_mean<T>(x_t, eps, t, s);
    const T sigma = static_cast<T>(s.sigma(t));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * z[i];
    return out;
}

template <typename T>
std::vector<std::vector<T>> sample(const NoiseEstimator<T>& est, const NoiseSchedule& s, Rng& rng, std::size_t n) {
    const std::size_t d = est.dim();
    std::vector<T> x = rng.normal_vector<T>(n * d);
    std::vector<std::size_t> steps(n);
    for (std::size_t t = s.T; t >= 1; --t) {
        std::fill(steps.begin(), steps.end(), t);
        auto eps = est.predict(x, steps);
        x = posterior_mean<T>(x, eps, t, s);
        const T sigma = static_cast<T>(s.sigma(t));
        if (t > 1) {
            auto z = rng.normal_vector<T>(n * d);
            for (std::size_t k = 0; k < x.size(); ++k) x[k] += sigma * z[k];
        }
        if (!all_finite<T>(x)) throw NumericError("sampling diverged at step " + std::to_string(t), t);
    }
    std::vector<std::vector<T>> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i].assign(x.begin() + i * d, x.begin() + (i + 1) * d);
    return out;
}

void train_steps(NetEstimator& est, const std::vector<std::vector<float>>& dataset, const DiffusionTrainConfig& cfg,
                 const NoiseSchedule& s, Rng& rng) {
    if (dataset.size() < 2) {
        throw LayoutError("diffusion training needs at least 2 vectors, got " + std::to_string(dataset.size()));
    }
    const std::size_t d = est.dim();
    for (const auto& v : dataset) {
        if (v.size() != d) throw LayoutError("diffusion training vector has the wrong dimension");
    }
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
    std::vector<float> x_t(bs * d), eps(bs * d);
    std::vector<std::size_t> steps(bs);
    DivergenceGuard guard;
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        for (std::size_t i = 0; i < bs; ++i) {
            const auto& x0 = dataset[rng.index(dataset.size())];
            steps[i] = 1 + rng.index(s.T);
            auto e = rng.normal_vector<float>(d);
            auto xt = forward_marginal<float>(x0, steps[i], e, s);
            std::copy(e.begin(), e.end(), eps.begin() + i * d);
            std::copy(xt.begin(), xt.end(), x_t.begin() + i * d);
        }
        double loss = 0.0;
        try {
            loss = est.train_step(x_t, steps, eps, cfg);
        } catch (const NumericError& e) {
            throw DivergenceError("diffusion training step " + std::to_string(it) + ": " + e.what(), it);
        }
        if (guard.observe(loss)) {
            throw DivergenceError("diffusion training diverged: loss " + std::to_string(loss) + " stayed above 10x the initial " +
                                      std::to_string(guard.initial()) + " for 100 steps (step " + std::to_string(it) + ")",
                                  it);
        }
    }
}

NetEstimator train_diffusion(const std::vector<std::vector<float>>& dataset, const EstimatorConfig& est_cfg,
                             const DiffusionTrainConfig& cfg, const NoiseSchedule& s, Rng& rng) {
    if (dataset.size() < 2) {
        throw LayoutError("diffusion training needs at least 2 vectors, got " + std::to_string(dataset.size()));
    }
    Rng init = rng.child(0x1417);
    NetEstimator est(dataset.front().size(), est_cfg, init);
    train_steps(est, dataset, cfg, s, rng);
    return est;
}

#define PFEDGPA_INSTANTIATE(T)                                                                                 \
    template double ddpm_loss(const NoiseEstimator<T>&, const std::vector<std::vector<T>>&,                   \
                              const NoiseSchedule&, Rng&);                                                     \
    template std::vector<T> reverse_step(const NoiseEstimator<T>&, std::span<const T>, std::size_t,           \
                                         std::span<const T>, const NoiseSchedule&);                            \
    template std::vector<std::vector<T>> sample(const NoiseEstimator<T>&, const NoiseSchedule&, Rng&,          \
                                                std::size_t);

PFEDGPA_INSTANTIATE(float)
PFEDGPA_INSTANTIATE(double)
#undef PFEDGPA_INSTANTIATE

}  // namespace pfedgpa
