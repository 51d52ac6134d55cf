#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "natlas/random.hpp"

namespace natlas {

struct HashGridConfig {
    int levels = 8;
    int features_per_level = 2;
    int table_size_log2 = 15;
    int base_resolution = 4;
    double growth_factor = 1.5;
    int input_dim = 3;
    /// Table entries start uniform in [-init_scale, init_scale].
    double init_scale = 1e-4;

    std::size_t table_size() const { return std::size_t(1) << table_size_log2; }
    int output_dim() const { return levels * features_per_level; }
    std::size_t parameter_count() const { return std::size_t(levels) * table_size() * std::size_t(features_per_level); }
    /// Throws ConfigError.
    void validate() const;
};

inline constexpr int kMaxGridDim = 4;
inline constexpr std::array<std::uint32_t, kMaxGridDim> kHashPrimes{1u, 2654435761u, 805459861u, 3674653429u};

/// floor(base_resolution * growth_factor^level)
int level_resolution(const HashGridConfig& cfg, int level);

/// Spatial hash: XOR of coordinate * prime, reduced mod 2^table_size_log2.
std::uint32_t hash_index(std::span<const std::uint32_t> cell, int table_size_log2);

/// Interpolation record for one lookup; reused across calls to avoid allocation.
struct EncodingTape {
    int dim = 0;
    int levels = 0;
    std::vector<std::uint32_t> slots;  // levels * 2^dim, absolute parameter row
    std::vector<double> weights;       // levels * 2^dim
    std::vector<double> frac;          // levels * dim
    std::array<bool, kMaxGridDim> inside{};  // coordinate was inside [0,1] (not clamped)
};

class HashGrid {
public:
    HashGrid() = default;
    HashGrid(const HashGridConfig& cfg, Rng& rng);

    const HashGridConfig& config() const { return cfg_; }
    int input_dim() const { return cfg_.input_dim; }
    int output_dim() const { return cfg_.output_dim(); }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Whether a level is small enough to index densely without hashing.
    bool dense_level(int level) const;
    /// Table slot within a level for a lattice vertex.
    std::uint32_t slot(int level, std::span<const std::uint32_t> cell) const;

    /// p has input_dim entries (clamped to [0,1]); out has output_dim entries.
    void encode(std::span<const double> p, EncodingTape& tape, std::span<double> out) const;
    void encode(std::span<const double> p, std::span<double> out) const;

    /// Accumulates dL/dparams into grad_params (size parameter_count) and
    /// writes dL/dp into dp (size input_dim). Either may be empty to skip it.
    void backward(const EncodingTape& tape, std::span<const double> dout, std::span<double> grad_params,
                  std::span<double> dp) const;

private:
    HashGridConfig cfg_;
    std::vector<int> resolution_;
    std::vector<char> dense_;
    std::vector<double> params_;
};

}  // namespace natlas
