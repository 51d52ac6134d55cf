#include "natlas/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "natlas/simd.hpp"
#include "natlas/types.hpp"

namespace natlas {

std::size_t MlpConfig::parameter_count() const {
    std::size_t n = 0;
    int prev = input;
    for (int h : hidden) {
        n += std::size_t(h) * std::size_t(prev) + std::size_t(h);
        prev = h;
    }
    return n + std::size_t(output) * std::size_t(prev) + std::size_t(output);
}

void MlpConfig::validate() const {
    if (input < 1 || output < 1) throw ConfigError("MLP input and output widths must be >= 1");
    for (int h : hidden) {
        if (h < 1) throw ConfigError("MLP hidden widths must be >= 1");
    }
}

Mlp::Mlp(const MlpConfig& cfg, Rng& rng, bool zero_output_layer) : cfg_(cfg) {
    cfg_.validate();
    widths_.push_back(cfg.input);
    for (int h : cfg.hidden) widths_.push_back(h);
    widths_.push_back(cfg.output);
    params_.assign(cfg.parameter_count(), 0.0);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(off);
        const std::size_t in = std::size_t(widths_[l]);
        const std::size_t out = std::size_t(widths_[l + 1]);
        const bool last = l + 2 == widths_.size();
        const double bound = std::sqrt(6.0 / double(in));
        for (std::size_t i = 0; i < in * out; ++i) params_[off + i] = (last && zero_output_layer) ? 0.0 : rng.uniform(-bound, bound);
        off += in * out + out;
    }
}

std::size_t Mlp::bias_offset(std::size_t layer) const {
    return offsets_[layer] + std::size_t(widths_[layer]) * std::size_t(widths_[layer + 1]);
}

void Mlp::forward(std::span<const double> x, MlpTape& tape, std::span<double> out) const {
    const auto& k = simd::kernels();
    const std::size_t layers = layer_count();
    tape.acts.resize(layers + 1);
    tape.acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        auto& a = tape.acts[l + 1];
        a.resize(std::size_t(widths_[l + 1]));
        k.affine(params_.data() + offsets_[l], tape.acts[l].data(), params_.data() + bias_offset(l), a.data(),
                 a.size(), tape.acts[l].size());
        if (l + 1 < layers) {
            for (double& v : a) v = v > 0.0 ? v : 0.0;
        }
    }
    std::copy(tape.acts.back().begin(), tape.acts.back().end(), out.begin());
}

void Mlp::forward(std::span<const double> x, std::span<double> out) const {
    thread_local MlpTape tape;
    forward(x, tape, out);
}

void Mlp::backward(const MlpTape& tape, std::span<const double> dout, std::span<double> grad_params,
                   std::span<double> dx) const {
    const auto& k = simd::kernels();
    const std::size_t layers = layer_count();
    thread_local std::vector<double> g, g_prev;
    g.assign(dout.begin(), dout.end());
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t out = std::size_t(widths_[l + 1]);
        const std::size_t in = std::size_t(widths_[l]);
        if (l + 1 < layers) {
            const auto& a = tape.acts[l + 1];
            for (std::size_t i = 0; i < out; ++i) {
                if (!(a[i] > 0.0)) g[i] = 0.0;
            }
        }
        if (!grad_params.empty()) {
            k.outer_acc(g.data(), tape.acts[l].data(), grad_params.data() + offsets_[l], out, in);
            double* gb = grad_params.data() + bias_offset(l);
            for (std::size_t i = 0; i < out; ++i) gb[i] += g[i];
        }
        if (l == 0 && dx.empty()) break;
        g_prev.assign(in, 0.0);
        k.affine_transposed_acc(params_.data() + offsets_[l], g.data(), g_prev.data(), out, in);
        std::swap(g, g_prev);
    }
    if (!dx.empty()) std::copy(g.begin(), g.begin() + std::ptrdiff_t(dx.size()), dx.begin());
}

}  // namespace natlas
