#include "natlas/fields.hpp"

#include <algorithm>

namespace natlas {

NeuralField::NeuralField(const HashGridConfig& grid, const MlpConfig& mlp, Rng& rng, bool zero_output_layer)
    : grid_(grid, rng), mlp_(mlp, rng, zero_output_layer) {
    if (mlp.input != grid.output_dim()) throw ConfigError("field MLP input width must equal the encoding width");
}

void NeuralField::forward(std::span<const double> p, FieldTape& tape, std::span<double> out) const {
    tape.features.resize(std::size_t(grid_.output_dim()));
    grid_.encode(p, tape.encoding, tape.features);
    mlp_.forward(tape.features, tape.mlp, out);
}

void NeuralField::forward(std::span<const double> p, std::span<double> out) const {
    thread_local FieldTape tape;
    forward(p, tape, out);
}

void NeuralField::backward(const FieldTape& tape, std::span<const double> dout, std::span<double> grad_grid,
                           std::span<double> grad_mlp, std::span<double> dp) const {
    thread_local std::vector<double> dfeat;
    dfeat.assign(tape.features.size(), 0.0);
    mlp_.backward(tape.mlp, dout, grad_mlp, dfeat);
    grid_.backward(tape.encoding, dfeat, grad_grid, dp);
}

void ModelConfig::validate() const {
    velocity_grid.validate();
    static_grid.validate();
    intensity_grid.validate();
    if (velocity_grid.input_dim != 4 || intensity_grid.input_dim != 4) throw ConfigError("velocity and intensity grids take 4D input");
    if (static_grid.input_dim != 3) throw ConfigError("static grid takes 3D input");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (hidden_width < 1 || hidden_layers < 0 || decoder_hidden_width < 1) throw ConfigError("MLP widths must be positive");
    if (euler_steps < 1) throw ConfigError("euler_steps must be >= 1");
    if (squarings < 0) throw ConfigError("squarings must be >= 0");
}

void FieldGradients::zero() {
    for (auto& g : groups) std::fill(g.begin(), g.end(), 0.0);
}

void FieldGradients::add(const FieldGradients& other) {
    for (std::size_t i = 0; i < kParameterGroups; ++i) {
        auto& a = groups[i];
        const auto& b = other.groups[i];
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    }
}

FieldSet::FieldSet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto mlp_cfg = [&](int in, int out) {
        MlpConfig m{in, out, {}};
        m.hidden.assign(std::size_t(cfg_.hidden_layers), cfg_.hidden_width);
        return m;
    };
    registration = NeuralField(cfg_.velocity_grid, mlp_cfg(cfg_.velocity_grid.output_dim(), 3), rng, true);
    static_field = NeuralField(cfg_.static_grid, mlp_cfg(cfg_.static_grid.output_dim(), cfg_.latent_dim), rng);
    intensity_field = NeuralField(cfg_.intensity_grid, mlp_cfg(cfg_.intensity_grid.output_dim(), cfg_.latent_dim), rng);
    decoder = Mlp(MlpConfig{cfg_.latent_dim, 1, {cfg_.decoder_hidden_width}}, rng);
}

std::array<std::span<double>, kParameterGroups> FieldSet::parameter_groups() {
    return {registration.grid().params(), registration.mlp().params(), static_field.grid().params(),
            static_field.mlp().params(),  intensity_field.grid().params(), intensity_field.mlp().params(),
            decoder.params()};
}

std::array<std::span<const double>, kParameterGroups> FieldSet::parameter_groups() const {
    return {registration.grid().params(), registration.mlp().params(), static_field.grid().params(),
            static_field.mlp().params(),  intensity_field.grid().params(), intensity_field.mlp().params(),
            decoder.params()};
}

FieldGradients FieldSet::make_gradients() const {
    FieldGradients g;
    const auto groups = parameter_groups();
    for (std::size_t i = 0; i < kParameterGroups; ++i) g.groups[i].assign(groups[i].size(), 0.0);
    return g;
}

Vec3 FieldSet::velocity(const Vec3& x, double t) const {
    const std::array<double, 4> p{x[0], x[1], x[2], t};
    Vec3 out{};
    registration.forward(p, out);
    return out;
}

std::vector<double> FieldSet::static_features(const Vec3& p) const {
    std::vector<double> out(std::size_t(cfg_.latent_dim));
    static_field.forward(p, out);
    return out;
}

std::vector<double> FieldSet::intensity_features(const Vec3& p, double t) const {
    std::vector<double> out(std::size_t(cfg_.latent_dim), 0.0);
    if (!cfg_.use_intensity_field) return out;
    const std::array<double, 4> q{p[0], p[1], p[2], t};
    intensity_field.forward(q, out);
    return out;
}

double FieldSet::decode_logit(std::span<const double> z) const {
    double out = 0;
    decoder.forward(z, std::span(&out, 1));
    return out;
}

double FieldSet::decode(std::span<const double> z) const { return sigmoid(decode_logit(z)); }

Vec3 FieldSet::displacement(const Vec3& x, double t) const {
    if (!cfg_.use_svf) return velocity(x, t);
    return integrate_pointwise([&](const Vec3& p) { return velocity(p, t); }, x, cfg_.euler_steps);
}

Prediction predict_intensity(const FieldSet& fs, const Vec3& x, double t, const Vec3& h) {
    Prediction out;
    auto& d = out.deformation;
    d.x = x;
    d.t = t;
    d.v = fs.velocity(x, t);
    d.u = fs.displacement(x, t);
    d.phi = x + d.u;
    const VectorFn u = [&](const Vec3& p) { return fs.displacement(p, t); };
    d.J = jacobian(u, x, h);
    d.det_J = determinant(d.J);
    d.div_u = trace(d.J) - 3.0;
    out.latents.v_static = fs.static_features(d.phi);
    out.latents.v_intensity = fs.intensity_features(d.phi, t);
    std::vector<double> z(out.latents.v_static);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += out.latents.v_intensity[i];
    out.intensity = fs.decode(z);
    return out;
}

DenseDeformation model_deformation(const FieldSet& fs, const Dims4& grid, double t, Direction dir) {
    const VectorFn field = [&](const Vec3& p) { return fs.velocity(p, t); };
    if (fs.config().use_svf) {
        return dir == Direction::forward ? integrate_grid(field, grid, fs.config().squarings)
                                         : inverse_grid(field, grid, fs.config().squarings);
    }
    auto u = sample_field(field, grid, Direction::forward);
    return dir == Direction::forward ? u : invert_displacement(u);
}

}  // namespace natlas
