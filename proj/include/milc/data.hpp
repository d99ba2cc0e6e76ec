#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "milc/rng.hpp"
#include "milc/tensor.hpp"

namespace milc {

/// One labeled set of instances. When instance labels are present the bag
/// label must equal their OR.
struct Bag {
    std::string bag_id;
    Tensor instances;  // K x d
    int label = 0;     // 0/1
    std::optional<std::vector<uint8_t>> instance_labels;

    size_t size() const { return instances.rows(); }
    size_t dim() const { return instances.cols(); }
    void validate() const;
};

struct BagDataset {
    std::vector<Bag> bags;
    std::string split;           // train | validation | test (informational)
    nlohmann::json provenance;   // generator config + seed

    size_t dim() const;  // common instance width; throws on mismatch
};

struct BagGenConfig {
    size_t n_bags = 100;
    size_t bag_size = 100;
    size_t positives_per_positive_bag = 1;
    double positive_fraction = 0.5;
    std::string positive_class_rule = "digit == 9";

    void validate() const;
};

// --- IDX ingestion ----------------------------------------------------------

struct IdxFile {
    uint32_t magic = 0;
    std::vector<size_t> dims;
    std::vector<double> values;  // images rescaled to [0,1]; labels raw

    bool is_images() const { return magic == 0x00000803u; }
};

/// Parses an IDX file: big-endian magic (0x803 3-D images, 0x801 1-D
/// labels), big-endian u32 dims, unsigned byte payload. Image pixels are
/// rescaled by /255.
IdxFile read_idx(const std::string& path);

// --- synthetic sources ------------------------------------------------------

struct DigitPool {
    Tensor images;            // N x 784
    std::vector<int> labels;  // 0..9
};

/// Synthetic 28x28 digit pool: ten stroke-composed class prototypes (shared
/// strokes make classes confusable) plus per-sample shift and pixel noise.
/// The class alphabet is fixed; the stream drives sampling only. Stands in
/// for MNIST when no IDX files are supplied.
DigitPool synthesize_digits(size_t n, RngStream& rng);

// --- bag generators ---------------------------------------------------------

/// Bags drawn with replacement from an image pool. Positive bags hold
/// exactly positives_per_positive_bag instances of the positive digit at
/// uniformly random positions; negative bags hold none.
BagDataset generate_mnist_bags(const Tensor& images, const std::vector<int>& labels,
                               const BagGenConfig& cfg, RngStream& rng, int positive_digit = 9);

/// Feature bags: negatives iid standard normal per coordinate, positives
/// shifted by `separation` along a fixed random unit direction derived from
/// direction_seed (shared across splits so train/val/test agree).
BagDataset generate_feature_bags(const BagGenConfig& cfg, size_t dim, double separation,
                                 uint64_t direction_seed, RngStream& rng);

// --- BagPack on-disk format -------------------------------------------------
// dir/manifest.jsonl: one JSON object per bag {bag_id, label, n_instances,
// dim, file, instance_labels?}; per-bag binary files of little-endian
// float64, row-major K x d. Round-trip is bit-exact.

void write_bagpack(const BagDataset& ds, const std::string& dir);
BagDataset read_bagpack(const std::string& dir);

// --- augmentation -----------------------------------------------------------

/// Uniform sample of n rows without replacement (original row order kept);
/// bags with K <= n come back unchanged.
Bag sample_instances(const Bag& bag, size_t n, RngStream& rng);

}  // namespace milc
