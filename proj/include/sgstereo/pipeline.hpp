#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sgstereo/autodiff.hpp"
#include "sgstereo/grid.hpp"
#include "sgstereo/synthetic.hpp"

namespace sgstereo {

enum class LossMode { SmoothL1SoftArgmax, CrossEntropy, L1, L1Cos };
enum class UpsampleMode { Bilinear, Trilinear };

std::string to_string(LossMode m);
std::string to_string(UpsampleMode m);
std::string to_string(SceneKind k);
LossMode loss_mode_from_string(const std::string& s);
UpsampleMode upsample_mode_from_string(const std::string& s);
SceneKind scene_from_string(const std::string& s);

struct TrainConfig {
    double sigma = 0.5;        ///< target width, bin-index units
    double lambda = 0.5;       ///< weight of the cosine term
    int d_max = 48;
    int d_ext = 16;
    int stride = 4;
    LossMode loss_mode = LossMode::L1Cos;
    UpsampleMode upsample_mode = UpsampleMode::Bilinear;
    double lr = 5e-3;
    int lr_decay_epoch = 0;    ///< 0 disables the decay step
    double lr_decay = 0.1;
    int epochs = 200;
    std::uint64_t seed = 0;
    int batch_size = 0;        ///< samples per optimizer step; 0 = full batch
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-2;
    double loss_threshold = 0.0;  ///< early-stop once mean loss <= T; 0 disables
    int height = 32;
    int width = 32;
    int train_samples = 8;
    int eval_samples = 8;
    SceneKind train_scene = SceneKind::Standard;
    SceneKind eval_scene = SceneKind::Ambiguous;
    int texture_period = 12;
    int eval_every = 10;       ///< epochs between metric rows in the history

    DisparityGrid grid() const { return DisparityGrid(d_ext, d_max, stride); }
    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct Metrics {
    double epe = 0.0;
    double d1 = 0.0;        ///< == err_gt3 (percent)
    double err_gt1 = 0.0;
    double err_gt2 = 0.0;
    double err_gt3 = 0.0;
    std::size_t valid_pixels = 0;
    std::size_t total_pixels = 0;
};

/// Small refinement stack over disparity-bin channels at quarter resolution:
/// logits = tau * volume + conv(relu(conv(volume))). Under 10k parameters.
struct RefinerModel {
    int bins = 0;
    int hidden = 16;
    ad::Parameter w1, b1, w2, b2, tau;

    RefinerModel() = default;
    RefinerModel(int bins_, int hidden_, std::uint64_t init_seed);
    std::vector<ad::Parameter*> parameters();
    std::size_t parameter_count() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double mean_tv = 0.0;  ///< mean total-variation distance of p to the target
    std::optional<Metrics> eval;
};

struct TrainResult {
    RefinerModel model;
    std::vector<EpochRecord> history;
    Metrics final_metrics;
};

/// Deterministic per-sample seeds: training draws depend on cfg.seed, the
/// evaluation split never does (shared across runs and seeds).
std::uint64_t train_sample_seed(const TrainConfig& cfg, int index);
std::uint64_t eval_sample_seed(const TrainConfig& cfg, int index);

std::vector<StereoSample> make_training_set(const TrainConfig& cfg);
std::vector<StereoSample> make_eval_set(const TrainConfig& cfg);

/// Trains the refiner: cost volume -> refiner -> upsample (per config) ->
/// softmax -> supervision per loss_mode, AdamW steps with decoupled weight
/// decay. Aborts with a diagnostic if the loss turns non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<StereoSample>& dataset);

/// Per-pixel disparity from the expectation of the predicted distribution.
/// Inference never consults ground truth and applies no top-k windowing.
DisparityMap predict_disparity(RefinerModel& model, const StereoSample& sample,
                               const TrainConfig& cfg);

Metrics evaluate(RefinerModel& model, const std::vector<StereoSample>& dataset,
                 const TrainConfig& cfg);

Metrics compute_metrics(const DisparityMap& pred, const DisparityMap& gt);

enum class AblationAxis { Sigma, Lambda, DExt, LossMode, UpsampleMode };
AblationAxis ablation_axis_from_string(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationCell {
    std::string value;
    std::uint64_t seed = 0;
    Metrics metrics;
    double final_train_loss = 0.0;
};

struct AblationResult {
    AblationAxis axis;
    std::vector<AblationCell> cells;       ///< per (value, seed), fixed order
    std::vector<std::pair<std::string, Metrics>> means;  ///< per value, seed-avg
};

/// One train+evaluate per (value, seed) over `seeds_per_value` consecutive
/// seeds starting at base.seed. `jobs` > 1 runs cells in parallel; the
/// result order is independent of completion order.
AblationResult run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                            const TrainConfig& base, int seeds_per_value = 3, int jobs = 1);

/// Applies an axis value ("0.5", "l1_cos", ...) to a config copy.
TrainConfig apply_axis_value(const TrainConfig& base, AblationAxis axis,
                             const std::string& value);

}  // namespace sgstereo
