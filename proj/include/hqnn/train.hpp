#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hqnn/dataio.hpp"
#include "hqnn/models.hpp"

namespace hqnn::train {

/// The 10 seeds the sweep uses unless told otherwise.
extern const std::vector<std::uint64_t> kDefaultSeeds;

inline constexpr double kValFraction = 0.2;

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t epochs = 20;
    std::size_t batch_size = 1; // fixed; anything else is rejected
    std::uint64_t seed = 0;
    /// Split derives from `seed` unless pinned here.
    std::optional<std::uint64_t> split_seed;
    dataio::PairTask pair{0, 1};
    models::ModelSpec model;
    /// Best-so-far checkpoint target; empty disables persistence.
    std::filesystem::path checkpoint_path;
};

struct TrainRecord {
    std::uint64_t seed = 0;
    std::vector<double> train_loss;   // per-epoch mean
    std::vector<double> val_accuracy; // per-epoch, percent
    std::size_t best_epoch = 0;       // 1-indexed earliest maximum
    double best_val_accuracy = 0.0;
    std::string checkpoint_path;
};

struct SweepReport {
    std::vector<std::uint64_t> seeds;
    std::vector<TrainRecord> records;
    std::vector<double> accuracies; // best per seed, percent
    std::vector<std::size_t> best_epochs;
    double mean_accuracy = 0.0;
    double variance = 0.0;
};

/// Runs the full protocol on a pre-built split: one generator seeded from
/// config drives init and the per-epoch shuffles; one optimizer step per
/// sample; validation after every epoch; checkpoint saved on strict
/// accuracy improvement.
TrainRecord train(const TrainConfig& config, const dataio::SplitDataset& data);

/// Percent of samples whose output crosses the 0.5 threshold correctly
/// (>= 0.5 predicts label 1).
double evaluate_accuracy(const models::Model& model,
                         const std::vector<dataio::LabeledSample>& samples);

/// Same rule, but probabilities come from the given backend. Sampled mode
/// offsets the backend seed by the sample index so draws are independent
/// yet reproducible.
double evaluate_accuracy(const models::Model& model,
                         const std::vector<dataio::LabeledSample>& samples,
                         const qsim::QuantumBackend& backend);

/// Mean and population (1/k) variance.
std::pair<double, double> variance_stats(const std::vector<double>& acc);

/// One training run per seed over identically constructed splits; up to
/// `jobs` runs execute concurrently. Per-seed checkpoints append the seed
/// to the configured path stem.
SweepReport seed_sweep(const TrainConfig& base,
                       const std::vector<dataio::LabeledSample>& samples,
                       const std::vector<std::uint64_t>& seeds,
                       std::size_t jobs = 1);

} // namespace hqnn::train
