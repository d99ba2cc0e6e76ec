#pragma once

#include <cstddef>
#include <vector>

namespace milc {

/// Parallel score/label vectors for one ROC computation.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;  // 0/1

    void push(double score, int label) {
        scores.push_back(score);
        labels.push_back(label);
    }
    size_t size() const { return scores.size(); }
    void validate() const;
    bool has_both_classes() const;
};

/// Mann-Whitney ROC AUC via average ranks; ties count 1/2. Throws a
/// MetricError on single-class input.
double roc_auc(const ScoredSet& s);

struct InstanceAucMean {
    double mean_auc = 0.0;
    size_t n_evaluated = 0;
    size_t n_skipped = 0;  // bags lacking both instance classes
};

/// Unweighted mean of per-bag AUCs over the evaluable sets; sets without
/// both classes are skipped and counted. Zero evaluable sets throws.
InstanceAucMean instance_auc_mean(const std::vector<ScoredSet>& per_bag);

/// Mean of the k largest values; 1 <= k <= |values|.
double topk_mean(const std::vector<double>& values, size_t k);

}  // namespace milc
