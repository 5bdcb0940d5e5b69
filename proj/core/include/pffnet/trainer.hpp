#pragma once

// MSE objective, Adam, the epoch-based training loop and the ablation harness.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pffnet/data.hpp"
#include "pffnet/keyvalue.hpp"
#include "pffnet/model.hpp"

namespace pffnet {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 32;
    std::size_t iters_per_epoch = 2000;
    std::size_t total_epochs = 72;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    // Validate every this many epochs; 0 disables validation.
    std::size_t eval_every = 1;
    // Share of the patch set held out for validation when no validation set is given.
    double validation_fraction = 0.02;
    PFFNetConfig model;

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Keys: lr batch_size iters_per_epoch epochs beta1 beta2 eps seed eval_every val_fraction
// stem_kernel base_channels encoder_levels res_blocks skip image_channels.
// Unknown keys throw ConfigError.
void apply_key_values(TrainConfig& config, const KeyValues& kv);
KeyValues to_key_values(const TrainConfig& config);

template <typename T>
struct AdamState {
    ParamStore<T> m;
    ParamStore<T> v;
    std::uint64_t step = 0;

    friend bool operator==(const AdamState& a, const AdamState& b) {
        return a.step == b.step && a.m == b.m && a.v == b.v;
    }
};

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Zero moments shaped like `params`, step 0.
template <typename T>
AdamState<T> adam_init(const ParamStore<T>& params);

// One bias-corrected Adam update of every parameter. Throws ConfigError if the key sets
// or shapes of params, grads and state differ.
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, const AdamHyper& hyper);

template <typename T>
struct MseResult {
    double loss = 0.0;
    Tensor<T> grad;  // d loss / d prediction = 2 (prediction - target) / N
};

template <typename T>
MseResult<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

// PSNR (peak 1) implied by a mean squared error; +inf for zero.
double psnr_from_mse(double mse);

struct TrainState {
    ParamStore<float> params;
    AdamState<float> adam;
    std::uint64_t iteration = 0;         // Adam steps taken
    std::uint64_t epoch = 0;             // completed epochs
    double epoch_loss_sum = 0.0;         // of the epoch in progress
    BatchStream::Position data_position;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    std::uint64_t iteration = 0;
    double loss = 0.0;      // mean batch loss over the epoch
    double val_psnr = 0.0;  // NaN when not evaluated
    double wall_seconds = 0.0;
};

std::string metric_log_header();
std::string format_metric_row(const EpochRecord& record);

struct TrainOptions {
    // Checkpoints and metrics.tsv go here; empty writes nothing.
    std::string out_dir;
    // Save every this many epochs (the final epoch is always saved).
    std::size_t checkpoint_every = 1;
    // Explicit validation data; otherwise validation_fraction of the training data is held out.
    const PairDataset* validation = nullptr;
    // Stop once this many total iterations have run (0 runs to total_epochs); a checkpoint of
    // the interrupted state is written as interrupted.ckpt.
    std::uint64_t stop_after = 0;
    std::optional<TrainState> resume;
    std::ostream* log = nullptr;
    std::function<void(std::uint64_t iteration, double loss)> on_iteration;
};

struct TrainResult {
    TrainState state;
    std::vector<double> losses;  // per iteration run by this call
    std::vector<EpochRecord> epochs;
    std::vector<std::string> checkpoints;
    bool interrupted = false;
};

// Throws ConfigError for an empty or too-small dataset, NumericError on a non-finite loss
// (after writing diverged.ckpt with the pre-step state when out_dir is set).
TrainResult train(const TrainConfig& config, const PairDataset& data, const TrainOptions& options = {});

// Indices held out for validation: the first ceil(fraction * count) of a seeded
// permutation, never all of them.
std::vector<std::size_t> validation_indices(std::size_t count, double fraction, std::uint64_t seed);

// Mean PSNR of the clamped network output over a dataset, infinite items excluded.
double validation_psnr(const ParamStore<float>& params, const PFFNetConfig& config, const PairDataset& data);

struct AblationVariant {
    std::string name;
    std::size_t res_blocks = 18;
    bool skip_connections = true;
};

// The four block counts, plus a no-skip twin of the 12-block model.
std::vector<AblationVariant> default_ablation_variants();

struct AblationCurve {
    AblationVariant variant;
    std::vector<EpochRecord> epochs;
    std::vector<double> losses;

    // First 1-based iteration whose batch PSNR reaches `db`.
    std::optional<std::uint64_t> iterations_to(double db) const;
};

// Trains every variant from the same seed on the same data. With out_dir set, each variant
// gets its own subdirectory plus <name>.tsv, and ablation.tsv aligns the per-epoch curves.
std::vector<AblationCurve> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                        const PairDataset& data, const TrainOptions& options = {});

}  // namespace pffnet
