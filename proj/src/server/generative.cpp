#include "pfedgpa/generative.hpp"

namespace pfedgpa {

std::size_t GenerativeModel::model_dim() const { return ae ? ae->latent_dim() : mask.generated_length(layout); }

std::vector<double> GenerativeModel::encode(std::span<const float> full) const {
    auto part = split_by_mask<float>(full, layout, mask).generated;
    std::vector<double> v(part.begin(), part.end());
    v = normalize<double>(v, norm);
    if (ae) {
        Rng unused(0);
        v = ae->encode(v, unused, false);
    }
    return v;
}

std::vector<float> GenerativeModel::decode(std::span<const double> z, std::span<const float> full) const {
    std::vector<double> v(z.begin(), z.end());
    if (ae) v = ae->decode(v);
    v = denormalize<double>(v, norm);
    std::vector<float> gen(v.begin(), v.end());
    auto retained = split_by_mask<float>(full, layout, mask).retained;
    return merge_by_mask<float>(gen, retained, layout, mask);
}

std::vector<float> generate_personalized(const GenerativeModel& g, std::span<const float> full, Rng& rng,
                                         const GenerateOptions& opt) {
    if (!g.estimator) throw ConfigError("the server has no trained estimator yet");
    auto z = g.encode(full);
    auto latent = extract_latent(z, g.schedule, rng);
    auto out = invert_generate(*g.estimator, latent, g.schedule, opt.invert);
    return g.decode(out, full);
}

std::vector<float> generate_unconditional(const GenerativeModel& g, std::span<const float> full, Rng& rng) {
    if (!g.estimator) throw ConfigError("the server has no trained estimator yet");
    auto z = sample<double>(*g.estimator, g.schedule, rng, 1).front();
    return g.decode(z, full);
}

}  // namespace pfedgpa
