#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "natlas/deformation.hpp"
#include "natlas/hash_grid.hpp"
#include "natlas/mlp.hpp"
#include "natlas/types.hpp"

namespace natlas {

/// Hash-grid encoding followed by an MLP.
struct FieldTape {
    EncodingTape encoding;
    std::vector<double> features;
    MlpTape mlp;
};

class NeuralField {
public:
    NeuralField() = default;
    NeuralField(const HashGridConfig& grid, const MlpConfig& mlp, Rng& rng, bool zero_output_layer = false);

    HashGrid& grid() { return grid_; }
    const HashGrid& grid() const { return grid_; }
    Mlp& mlp() { return mlp_; }
    const Mlp& mlp() const { return mlp_; }
    int input_dim() const { return grid_.input_dim(); }
    int output_dim() const { return mlp_.config().output; }

    void forward(std::span<const double> p, FieldTape& tape, std::span<double> out) const;
    void forward(std::span<const double> p, std::span<double> out) const;
    void backward(const FieldTape& tape, std::span<const double> dout, std::span<double> grad_grid,
                  std::span<double> grad_mlp, std::span<double> dp) const;

private:
    HashGrid grid_;
    Mlp mlp_;
};

struct ModelConfig {
    HashGridConfig velocity_grid{.input_dim = 4};
    HashGridConfig static_grid{.input_dim = 3};
    HashGridConfig intensity_grid{.input_dim = 4};
    int latent_dim = 16;
    int hidden_width = 64;
    int hidden_layers = 2;
    int decoder_hidden_width = 64;
    /// Integrate the velocity field (SVF). When false the registration field's
    /// output is used directly as the displacement.
    bool use_svf = true;
    /// Euler steps for pointwise integration; squarings for dense integration.
    int euler_steps = 8;
    int squarings = 6;
    /// When false the intensity field is disabled (v_intensity = 0).
    bool use_intensity_field = true;

    void validate() const;
};

/// v_static and v_intensity at one query.
struct LatentVectors {
    std::vector<double> v_static;
    std::vector<double> v_intensity;
};

inline constexpr std::size_t kParameterGroups = 7;
inline constexpr std::array<const char*, kParameterGroups> kParameterGroupNames{
    "velocity_grid", "velocity_mlp", "static_grid", "static_mlp", "intensity_grid", "intensity_mlp", "decoder_mlp"};

/// Gradient buffers matching FieldSet::parameter_groups().
struct FieldGradients {
    std::array<std::vector<double>, kParameterGroups> groups;

    void zero();
    void add(const FieldGradients& other);
    std::span<double> operator[](std::size_t i) { return groups[i]; }
};

/// Registration field (x,t) -> velocity, static field x -> R^n, intensity
/// field (x,t) -> R^n, and decoder R^n -> intensity.
class FieldSet {
public:
    FieldSet() = default;
    FieldSet(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    int latent_dim() const { return cfg_.latent_dim; }

    NeuralField registration;
    NeuralField static_field;
    NeuralField intensity_field;
    Mlp decoder;

    std::array<std::span<double>, kParameterGroups> parameter_groups();
    std::array<std::span<const double>, kParameterGroups> parameter_groups() const;
    FieldGradients make_gradients() const;

    /// Registration field output at (x, t): the velocity (or the displacement
    /// when use_svf is false), in normalized coordinates.
    Vec3 velocity(const Vec3& x, double t) const;
    std::vector<double> static_features(const Vec3& p) const;
    std::vector<double> intensity_features(const Vec3& p, double t) const;
    /// sigmoid(decoder(z))
    double decode(std::span<const double> z) const;
    double decode_logit(std::span<const double> z) const;

    /// u(x) at time t through the configured deformation model.
    Vec3 displacement(const Vec3& x, double t) const;

private:
    ModelConfig cfg_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Prediction {
    double intensity = 0;
    DeformationSample deformation;
    LatentVectors latents;
};

/// Full forward model at (x, t): phi = x + u(x), latents queried at phi, fused
/// by sum and decoded. The Jacobian uses finite-difference step h.
Prediction predict_intensity(const FieldSet& fs, const Vec3& x, double t, const Vec3& h);

/// Dense forward or inverse deformation of the model at time t on a grid.
/// SVF models use scaling and squaring; direct-displacement models sample the
/// field and invert it by fixed-point iteration.
DenseDeformation model_deformation(const FieldSet& fs, const Dims4& grid, double t, Direction dir);

}  // namespace natlas
