#include "milc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "milc/errors.hpp"

namespace milc {

void ScoredSet::validate() const {
    if (scores.size() != labels.size())
        throw DimError("scored set has " + std::to_string(scores.size()) + " scores but " +
                       std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y != 0 && y != 1) throw DataError("scored set labels must be 0/1");
    for (double s : scores)
        if (!std::isfinite(s)) throw NumericError("scored set holds a non-finite score");
}

bool ScoredSet::has_both_classes() const {
    bool pos = false, neg = false;
    for (int y : labels) (y == 1 ? pos : neg) = true;
    return pos && neg;
}

double roc_auc(const ScoredSet& s) {
    s.validate();
    size_t n = s.size();
    size_t n_pos = size_t(std::count(s.labels.begin(), s.labels.end(), 1));
    size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("AUC undefined: need at least one positive and one negative");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return s.scores[a] < s.scores[b]; });

    // average ranks within tied groups; ranks are 1-based
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
        double avg_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (size_t t = i; t < j; ++t)
            if (s.labels[order[t]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) /
           (double(n_pos) * double(n_neg));
}

InstanceAucMean instance_auc_mean(const std::vector<ScoredSet>& per_bag) {
    InstanceAucMean out;
    double sum = 0.0;
    for (const ScoredSet& s : per_bag) {
        if (!s.has_both_classes()) {
            ++out.n_skipped;
            continue;
        }
        sum += roc_auc(s);
        ++out.n_evaluated;
    }
    if (out.n_evaluated == 0)
        throw MetricError("instance AUC undefined: no bag held both instance classes");
    out.mean_auc = sum / double(out.n_evaluated);
    return out;
}

double topk_mean(const std::vector<double>& values, size_t k) {
    if (k < 1 || k > values.size())
        throw ParamError("topk_mean: k=" + std::to_string(k) + " outside [1," +
                         std::to_string(values.size()) + "]");
    std::vector<double> copy = values;
    std::nth_element(copy.begin(), copy.begin() + std::ptrdiff_t(k - 1), copy.end(),
                     std::greater<double>());
    double sum = std::accumulate(copy.begin(), copy.begin() + std::ptrdiff_t(k), 0.0);
    return sum / double(k);
}

}  // namespace milc
