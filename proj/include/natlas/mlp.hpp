#pragma once

#include <span>
#include <vector>

#include "natlas/random.hpp"

namespace natlas {

/// Fully connected network: ReLU on hidden layers, linear output.
struct MlpConfig {
    int input = 1;
    int output = 1;
    std::vector<int> hidden;

    std::size_t parameter_count() const;
    void validate() const;
};

/// Per-layer activations cached by the forward pass.
struct MlpTape {
    std::vector<std::vector<double>> acts;  // acts[0] = input, acts.back() = output
};

class Mlp {
public:
    Mlp() = default;
    /// Uniform He-style weights (bound sqrt(6 / fan_in)), zero biases.
    /// zero_output_layer zeroes the last layer's weights as well.
    Mlp(const MlpConfig& cfg, Rng& rng, bool zero_output_layer = false);

    const MlpConfig& config() const { return cfg_; }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    void forward(std::span<const double> x, MlpTape& tape, std::span<double> out) const;
    void forward(std::span<const double> x, std::span<double> out) const;

    /// Accumulates parameter gradients into grad_params and writes the input
    /// gradient into dx (either may be empty).
    void backward(const MlpTape& tape, std::span<const double> dout, std::span<double> grad_params,
                  std::span<double> dx) const;

    // Parameter layout per layer: W (out x in, row-major) then b (out).
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t bias_offset(std::size_t layer) const;
    std::size_t layer_count() const { return widths_.size() - 1; }
    int width(std::size_t i) const { return widths_[i]; }

private:
    MlpConfig cfg_;
    std::vector<int> widths_;
    std::vector<std::size_t> offsets_;
    std::vector<double> params_;
};

}  // namespace natlas
