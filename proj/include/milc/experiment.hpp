#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "milc/data.hpp"
#include "milc/metrics.hpp"
#include "milc/nn.hpp"
#include "milc/pooling.hpp"

namespace milc {

enum class Pooling { max, mean, attention, certainty };

Pooling pooling_from_string(const std::string& name);
std::string to_string(Pooling p);

struct ExperimentConfig {
    Pooling pooling = Pooling::certainty;
    ModelSpec model;
    double lr = 0.01;
    size_t epochs = 1;
    size_t mc_passes = 10;  // T
    double eps = 1e-6;
    std::optional<size_t> bag_sample_n;          // train-time instances per bag
    size_t validation_every = 5;                 // epochs
    std::optional<size_t> validation_instance_cap;  // per-bag cap at validation
    std::vector<uint64_t> seeds{0};
    size_t top_k = 1;

    void validate() const;
};

struct ValPoint {
    size_t epoch;
    double auc;
};

struct RunRecord {
    uint64_t seed = 0;
    std::vector<ValPoint> val_history;
    std::vector<double> epoch_loss;  // mean training BCE per epoch
    size_t best_epoch = 0;
    double best_val_auc = -std::numeric_limits<double>::infinity();
    // test metrics, filled by run_sweep after evaluate()
    double test_bag_auc = std::numeric_limits<double>::quiet_NaN();
    double test_instance_auc = std::numeric_limits<double>::quiet_NaN();  // pooled instances
    double test_instance_auc_bagmean = std::numeric_limits<double>::quiet_NaN();
    size_t instance_bags_evaluated = 0;
    size_t instance_bags_skipped = 0;
    double wall_s = 0.0;
    bool failed = false;
    std::string fail_reason;
    ModelState best_model;  // snapshot at best_epoch
};

/// One seeded training run: per-epoch shuffled bag order, one optimizer step
/// per bag, periodic validation with best-checkpoint selection (strict
/// improvement, ties keep the earliest epoch). Validation always also runs
/// at the final epoch. Deterministic given (cfg, datasets, seed).
RunRecord train_one(const ExperimentConfig& cfg, const BagDataset& train_ds,
                    const BagDataset& val_ds, uint64_t seed);

struct BagEval {
    std::string bag_id;
    int label = 0;
    double z = 0.0;
    std::optional<size_t> selected_index;
};

struct EvalResult {
    ScoredSet bag_scores;  // one entry per evaluated bag, dataset order
    std::vector<BagEval> bags;
    std::vector<std::vector<double>> instance_h;  // infer-mode h per bag
    std::vector<std::optional<std::vector<uint8_t>>> instance_labels;
    size_t skipped_empty = 0;
};

/// Full-bag evaluation (no instance sampling): h from an infer pass, z via
/// the configured pooling (certainty draws fresh MC passes per bag).
EvalResult evaluate(const ModelState& model, const BagDataset& ds, Pooling pooling, size_t T,
                    double eps, uint64_t seed);

struct SweepHeadline {
    size_t n_selected = 0;
    double bag_auc_mean = std::numeric_limits<double>::quiet_NaN();
    double bag_auc_std = std::numeric_limits<double>::quiet_NaN();
    double instance_auc_mean = std::numeric_limits<double>::quiet_NaN();
    double instance_auc_std = std::numeric_limits<double>::quiet_NaN();
    double instance_auc_bagmean_mean = std::numeric_limits<double>::quiet_NaN();
    double instance_auc_bagmean_std = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentReport {
    std::vector<RunRecord> runs;   // seed order
    std::vector<size_t> ranked;    // indices of non-failed runs, val AUC desc
    std::vector<size_t> selected;  // ranked[0 .. min(top_k, |ranked|))
    SweepHeadline headline;        // population mean/std over selected runs
};

/// Trains every seed (up to `jobs` in parallel), evaluates each best model
/// on the test set, ranks runs by validation AUC and averages the top-k test
/// metrics. Failed seeds are skipped; all seeds failing throws.
ExperimentReport run_sweep(const ExperimentConfig& cfg, const BagDataset& train_ds,
                           const BagDataset& val_ds, const BagDataset& test_ds, size_t jobs = 1);

struct RankingRow {
    std::string bag_id;
    size_t rank;            // 1-based within the bag
    size_t instance_index;  // row in the bag
    double h;
    std::optional<int> instance_label;
};

/// Per bag, the top-n instances by h in descending order.
std::vector<RankingRow> export_rankings(const EvalResult& eval, size_t n_top);

}  // namespace milc
