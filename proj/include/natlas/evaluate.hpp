#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "natlas/fields.hpp"
#include "natlas/phantom.hpp"
#include "natlas/volume.hpp"

namespace natlas {

struct EvalConfig {
    int n_pairs = 50;
    /// LNCC window edge length (odd, >= 3).
    int window = 7;
    std::uint64_t seed = 0;
    /// Labels entering the weighted Dice; empty = every non-zero label present.
    std::vector<int> labels;

    void validate() const;
};

/// Windowed Pearson correlation averaged over masked voxels. Frame 0 of each
/// volume is used. Windows are clipped at the volume border; voxels whose
/// window is flat in both images are left out of the average. mask (optional,
/// one byte per voxel) selects the voxels to average over.
/// Throws DataError on a dims mismatch or an even / too small window.
double lncc(const Volume4D& a, const Volume4D& b, int window, std::span<const std::uint8_t> mask = {});

/// 2|A n B| / (|A| + |B|) on frame 0; nullopt if the label is absent from both.
std::optional<double> dice(const LabelVolume4D& a, const LabelVolume4D& b, int label);

struct WeightedDice {
    double weighted = 0;
    std::map<int, double> per_label;
};

/// Dice per label and their combination weighted by the label's voxel count
/// in `reference`. Labels absent from both volumes are skipped with a warning
/// on stderr. Empty `labels` = every non-zero label in either volume.
WeightedDice weighted_dice(const LabelVolume4D& predicted, const LabelVolume4D& reference, std::span<const int> labels = {});

struct PairResult {
    int source = 0;
    int target = 0;
    double lncc = 0;
    double lncc_unaligned = 0;
    std::optional<double> wdice;
    std::optional<double> wdice_unaligned;
};

struct DeformationStats {
    double u_norm = 0;
    double det_j = 1;
    double fold_ratio = 0;
};

struct EvalReport {
    EvalConfig config;
    std::vector<PairResult> per_pair;
    double lncc_mean = 0, lncc_sd = 0;
    double lncc_unaligned_mean = 0, lncc_unaligned_sd = 0;
    std::optional<double> wdice_mean, wdice_sd, wdice_unaligned_mean;
    std::map<int, double> per_label_dice;
    DeformationStats deformation;
    double runtime_seconds = 0;
};

/// Ordered frame pairs (i != j), sampled without replacement; all pairs when
/// n_pairs >= T(T-1).
std::vector<std::pair<int, int>> sample_pairs(int frames, int n_pairs, std::uint64_t seed);

/// For each sampled pair (i, j), maps frame i into frame j's space through
/// compose(inverse at t_i, forward at t_j) and scores it against frame j.
/// Unaligned scores compare the raw frames. Throws DataError if T < 2.
EvalReport evaluate_pairs(const FieldSet& fs, const Volume4D& volume, const LabelVolume4D* labels, const EvalConfig& cfg,
                          int threads = 1);

/// Mean |u|, mean det J and folding ratio over interior voxels of all fields.
DeformationStats deformation_stats(std::span<const DenseDeformation> fields);
/// Same over the model's forward deformation at every frame.
DeformationStats deformation_stats(const FieldSet& fs, const Dims4& grid, int frames, int threads = 1);

/// Mean over foreground voxels (label > 0 in that frame) and frames of
/// |(u_t - mean_s u_s) - (g_t - mean_s g_s)| in voxels, where u is the model's
/// forward displacement and g the known motion.
double motion_recovery_error(const FieldSet& fs, const VectorSeries& motion, const LabelVolume4D& labels, int threads = 1);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
/// Lists every schema violation; empty when valid.
std::vector<std::string> validate_report(const nlohmann::json& j);
/// Throws std::runtime_error if the file cannot be written.
void write_report(const EvalReport& r, const std::filesystem::path& path);

}  // namespace natlas
