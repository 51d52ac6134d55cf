#pragma once

#include <span>
#include <vector>

#include "natlas/fields.hpp"
#include "natlas/volume.hpp"

namespace natlas {

struct LossWeights {
    double def_norm = 1e-3;    // mean |u|
    double div = 5e-4;         // mean div(u)^2
    double centrality = 0.1;   // |moving-average u|^2
    double jac = 1.0;          // negative Jacobian determinant
    double intensity = 0.05;   // L1 on v_intensity
    double tv = 0.1;           // total variation of both latent fields

    void validate() const;
};

struct LossBreakdown {
    double rec = 0, def_norm = 0, div = 0, centrality = 0, jac = 0, intensity = 0, tv = 0;
    double total = 0;
};

/// Fills in total = rec + w.def_norm*def_norm + ... from the per-term values.
LossBreakdown total_loss(LossBreakdown terms, const LossWeights& w);

/// Running mean displacement per coarse spatial bin.
struct CentralityState {
    int bins_per_axis = 8;
    double decay = 0.99;
    std::vector<Vec3> mean;  // bins_per_axis^3, starts at zero

    CentralityState() = default;
    CentralityState(int bins, double decay_rate);
    std::size_t bin_of(const Vec3& x) const;
    std::size_t bin_count() const { return std::size_t(bins_per_axis) * bins_per_axis * bins_per_axis; }
    void validate() const;
};

/// New EMA values for the bins touched by one batch.
struct CentralityUpdate {
    std::vector<std::size_t> bins;
    std::vector<Vec3> values;
};

void apply(CentralityState& state, const CentralityUpdate& update);

// ---- elementary terms -------------------------------------------------------

/// Mean absolute error. Throws DataError on an empty batch.
double rec_loss(std::span<const double> observed, std::span<const double> predicted);
/// Batch mean of |u|.
double def_norm_loss(std::span<const Vec3> u);
/// Batch mean of div^2.
double div_loss(std::span<const double> divergence);
/// Mean of max(0, -det J).
double jac_loss(std::span<const double> det_j);
/// Mean of |v| over points and channels.
double int_loss(std::span<const std::vector<double>> v_intensity);
/// Anisotropic L1 total variation: mean |f(p + h e_a) - f(p)| over points,
/// axes and channels. shifted[i][a] are the features at point i moved along axis a.
double tv_loss(std::span<const std::vector<double>> at_point, std::span<const std::vector<std::vector<double>>> shifted);

/// Centrality term for a cartesian batch. u is laid out spatial-major
/// (u[s * temporal + m]); x holds the spatial points. Returns the penalty and
/// writes the blended per-bin means into update.
double centrality_loss(std::span<const Vec3> x, std::span<const Vec3> u, int temporal, const CentralityState& state,
                       CentralityUpdate* update = nullptr);

// ---- batched evaluation with gradients ---------------------------------------

/// Cartesian batch: every spatial point paired with every frame.
struct Batch {
    std::vector<Vec3> points;  // S spatial points, normalized coordinates
    std::vector<int> frames;   // M frame indices
    std::size_t size() const { return points.size() * frames.size(); }
};

struct LossOptions {
    /// Batch points (in spatial-major order) that also carry the stencil
    /// terms (divergence, negative Jacobian, TV). <= 0 means all.
    int reg_points = 0;
    /// Worker threads; gradients from each thread are merged in thread order.
    int threads = 1;
};

struct LossResult {
    LossBreakdown loss;
    CentralityUpdate centrality;
    /// Mean Î over the batch (diagnostics).
    double mean_prediction = 0;
};

/// Evaluates every loss term over the batch against the observed volume and,
/// if grads is non-null, accumulates d(total)/d(parameters) into it. The
/// centrality state is read, not modified. Pure given its inputs.
LossResult evaluate_loss(const FieldSet& fs, const Volume4D& volume, const Batch& batch, const LossWeights& weights,
                         const CentralityState& centrality, const LossOptions& options, FieldGradients* grads);

}  // namespace natlas
