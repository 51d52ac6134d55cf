#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "natlas/fields.hpp"
#include "natlas/random.hpp"
#include "natlas/volume.hpp"

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("natlas_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline natlas::Volume4D random_volume(natlas::Dims4 d, std::uint64_t seed) {
    natlas::Volume4D v(d);
    natlas::Rng rng(seed);
    for (auto& x : v.data) x = float(rng.uniform());
    return v;
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Small model that keeps unit tests fast.
inline natlas::ModelConfig tiny_model() {
    natlas::ModelConfig m;
    for (auto* g : {&m.velocity_grid, &m.static_grid, &m.intensity_grid}) {
        g->levels = 4;
        g->table_size_log2 = 10;
    }
    m.latent_dim = 8;
    m.hidden_width = 16;
    m.hidden_layers = 1;
    m.decoder_hidden_width = 16;
    return m;
}

/// Overwrites every parameter group with uniform values in [-scale, scale].
inline void randomize(natlas::FieldSet& fs, std::uint64_t seed, double scale) {
    natlas::Rng rng(seed);
    for (auto group : fs.parameter_groups())
        for (double& p : group) p = rng.uniform(-scale, scale);
}

}  // namespace test
