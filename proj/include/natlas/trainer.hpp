#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "natlas/fields.hpp"
#include "natlas/losses.hpp"
#include "natlas/random.hpp"
#include "natlas/volume.hpp"

namespace natlas {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-15;
};

struct TrainConfig {
    int iterations = 20000;
    int spatial_batch = 1024;
    int temporal_batch = 4;
    /// Cosine decay from learning_rate to final_learning_rate over `iterations`.
    double learning_rate = 1e-3;
    double final_learning_rate = 1e-4;
    AdamConfig adam;
    std::uint64_t seed = 0;
    /// Save a checkpoint every N iterations (0 = only at the end).
    int checkpoint_interval = 0;
    /// Points per batch carrying the Jacobian, divergence and TV stencils.
    int reg_points = 256;
    int threads = 1;
    /// Foreground = voxels whose temporal max exceeds this intensity quantile.
    double foreground_quantile = 0.05;
    /// Fraction of spatial samples drawn uniformly from the whole volume.
    double background_fraction = 0.1;
    LossWeights weights;
    int centrality_bins = 8;
    double centrality_decay = 0.99;
    /// Stop after this iteration even if `iterations` is larger (the schedule
    /// still follows `iterations`). Negative = run to the end.
    int stop_after = -1;

    void validate() const;
};

struct AdamState {
    std::array<std::vector<double>, kParameterGroups> m, v;
    std::int64_t step = 0;

    static AdamState zeros_like(const FieldSet& fs);
};

/// Bias-corrected Adam on one parameter vector:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps)
/// `step` is the already-incremented step count t >= 1.
/// Throws DataError if the spans differ in length.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::int64_t step, double lr, const AdamConfig& cfg);

/// One Adam step over every parameter group; increments state.step.
void adam_step(FieldSet& fs, const FieldGradients& grads, AdamState& state, double lr, const AdamConfig& cfg);

double cosine_learning_rate(const TrainConfig& cfg, int iteration);

/// Draws S jittered spatial points (foreground-biased) and M distinct frames.
class BatchSampler {
public:
    BatchSampler(const Volume4D& volume, double foreground_quantile, double background_fraction);

    Batch sample(Rng& rng, int spatial, int temporal) const;
    const std::vector<std::uint32_t>& foreground() const { return foreground_; }

private:
    Dims4 dims_;
    std::vector<std::uint32_t> foreground_;
    double background_fraction_;
};

struct LogRecord {
    int iter = 0;
    LossBreakdown loss;
    double learning_rate = 0;
    double wall_ms = 0;
};

/// Everything needed to continue training exactly where it stopped.
struct TrainState {
    ModelConfig model;
    TrainConfig train;
    Dims4 data_dims;
    FieldSet fields;
    AdamState adam;
    CentralityState centrality;
    Rng rng;
    int iteration = 0;
};

TrainState init_training(const Volume4D& volume, const ModelConfig& model, const TrainConfig& train);

struct TrainHooks {
    std::function<void(const LogRecord&)> on_step;
    /// Called every checkpoint_interval iterations and at the end.
    std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs iterations until train.iterations (or stop_after). Throws
/// std::runtime_error naming the term if any loss becomes non-finite.
void run_training(TrainState& state, const Volume4D& volume, const TrainHooks& hooks = {});

struct TrainResult {
    FieldSet fields;
    std::vector<LogRecord> log;
};

TrainResult train(const Volume4D& volume, const ModelConfig& model, const TrainConfig& cfg);

bool all_finite(const FieldSet& fs);

// Checkpoint: "NATC" | u32 version | u32 sections, then per section
// tag[4] | u64 length | payload | u32 crc32(payload). Sections: META (JSON),
// PAR0..PAR6 (one per parameter group), ADAM, CENT, RNG_.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Throws FormatError on bad magic/version/truncation and ChecksumError on corruption.
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace natlas
