#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsr/hypercube.hpp"
#include "hsr/recon_nets.hpp"
#include "hsr/segmentation.hpp"
#include "hsr/tensor.hpp"

namespace hsr {

// ---- image metrics (masked; background voxels never read) -------------------

inline constexpr double kMraeFloor = 1e-4;
/// Returned by psnr() when the masked error is exactly zero.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

double mrae(const Hypercube& rc, const Hypercube& gt, const Mask& mask, double floor = kMraeFloor);
double rmse_image(const Hypercube& rc, const Hypercube& gt, const Mask& mask);
double psnr(const Hypercube& rc, const Hypercube& gt, const Mask& mask, double peak = 1.0);
double l1_error(const Hypercube& rc, const Hypercube& gt, const Mask& mask);

// ---- image pairs in network layout ------------------------------------------

/// One RGB/ground-truth pair in channel-major [C,H,W] layout.
struct ImagePair {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<double> rgb;  // [3,H,W], 8-bit values divided by 255
    std::vector<double> gt;   // [bands,H,W]
    Mask mask;
};

std::vector<double> cube_to_chw(const Hypercube& cube);
Hypercube chw_to_cube(std::span<const double> chw, std::size_t height, std::size_t width,
                      std::vector<double> wavelengths);
std::vector<double> rgb_to_chw(const RgbImage& image);
ImagePair make_image_pair(const RgbImage& rgb, const Hypercube& gt, const Mask& mask);

// ---- losses on tapes --------------------------------------------------------

enum class LossKind { Mrae, L1 };
std::string to_string(LossKind kind);
LossKind parse_loss(const std::string& name);

/// Masked MRAE or L1 between `prediction` [bands,H,W] and `gt` (same layout), averaged over foreground voxels.
ad::Tensor masked_loss(ad::Tape& tape, const ad::Tensor& prediction, std::span<const double> gt, const Mask& mask,
                       LossKind kind);

// ---- optimizer --------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam update using each parameter's accumulated gradient (missing gradient = 0).
void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr, double beta1, double beta2,
               double eps = 1e-8);

// ---- patches ----------------------------------------------------------------

struct Patch {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t size = 0;
    std::vector<double> rgb;  // [3,p,p]
    std::vector<double> gt;   // [bands,p,p]
    Mask mask;
};

/// Number of stride-grid positions along one axis.
std::size_t grid_positions(std::size_t extent, std::size_t patch, std::size_t stride);

/// `count` aligned patches with corners drawn uniformly from the stride grid, restricted to corners whose
/// patch contains foreground.
std::vector<Patch> sample_patches(const ImagePair& pair, std::size_t patch, std::size_t stride, std::size_t count,
                                  Rng& rng);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 4;
    std::size_t patch_size = 32;
    std::size_t stride = 8;
    double learning_rate = 2e-3;
    double lr_decay = 0.99;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::size_t epochs = 20;
    std::size_t iterations_per_epoch = 50;
    LossKind loss = LossKind::Mrae;
    std::uint64_t seed = 1;

    /// Optimizer defaults for an architecture: L1 with beta1 = 0.5 for HRNET, MRAE otherwise.
    static TrainConfig for_architecture(Architecture arch);
    void validate() const;
};

struct ReconMetrics {
    double mrae = 0.0;
    double rmse = 0.0;
    double psnr = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> val_mrae;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch;  // lowest validation MRAE, restored into the network
    std::optional<std::size_t> knee_epoch;
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place. When `validation` is non-empty the parameters with the best validation MRAE are restored at
/// the end. Throws on a non-finite loss.
TrainHistory train(ReconNetwork& net, const std::vector<ImagePair>& training, const std::vector<ImagePair>& validation,
                   const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Index of maximum curvature of a decreasing curve after 3-point smoothing (Kneedle).
std::optional<std::size_t> knee_point(std::span<const double> values);

/// Full-image forward pass returning a [bands,H,W] buffer.
std::vector<double> predict_chw(const ReconNetwork& net, std::span<const double> rgb_chw, std::size_t height,
                                std::size_t width);
Hypercube reconstruct(const ReconNetwork& net, const RgbImage& rgb, const std::vector<double>& wavelengths);

/// Per-image metrics averaged over `pairs`.
ReconMetrics evaluate(const ReconNetwork& net, const std::vector<ImagePair>& pairs, double peak = 1.0);
/// Same averaging for precomputed predictions (one [bands,H,W] buffer per pair).
ReconMetrics evaluate_predictions(const std::vector<std::vector<double>>& predictions,
                                  const std::vector<ImagePair>& pairs, double peak = 1.0);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace hsr
