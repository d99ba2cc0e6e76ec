#include "milc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "bagpack format assumes a little-endian host");

namespace fs = std::filesystem;

namespace milc {

void Bag::validate() const {
    if (size() < 1) throw DataError("bag " + bag_id + " is empty");
    if (label != 0 && label != 1)
        throw DataError("bag " + bag_id + " has label " + std::to_string(label));
    if (instance_labels) {
        if (instance_labels->size() != size())
            throw DataError("bag " + bag_id + " instance label count mismatch");
        bool any = false;
        for (uint8_t y : *instance_labels) {
            if (y > 1) throw DataError("bag " + bag_id + " has a non-binary instance label");
            any = any || y == 1;
        }
        if (label == 0 && any)
            throw DataError("bag " + bag_id + " is negative but holds a positive instance");
        if (label == 1 && !any)
            throw DataError("bag " + bag_id + " is positive but holds no positive instance");
    }
}

size_t BagDataset::dim() const {
    if (bags.empty()) return 0;
    size_t d = bags.front().dim();
    for (const Bag& b : bags)
        if (b.dim() != d)
            throw DimError("bag " + b.bag_id + " has dim " + std::to_string(b.dim()) +
                           ", expected " + std::to_string(d));
    return d;
}

void BagGenConfig::validate() const {
    if (n_bags < 1) throw ParamError("n_bags must be >= 1");
    if (bag_size < 1) throw ParamError("bag_size must be >= 1");
    if (positives_per_positive_bag > bag_size)
        throw ParamError("positives_per_positive_bag exceeds bag_size");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
        throw ParamError("positive_fraction must lie in [0,1]");
    if (positive_fraction > 0.0 && positives_per_positive_bag < 1)
        throw ParamError("positive bags need positives_per_positive_bag >= 1");
}

// --- IDX --------------------------------------------------------------------

namespace {

uint32_t read_u32_be(std::istream& is, size_t& offset, const std::string& path,
                     const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("IDX file " + path + " truncated reading " + what + " at offset " +
                          std::to_string(offset));
    offset += 4;
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

IdxFile read_idx(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open IDX file " + path);
    size_t offset = 0;
    IdxFile f;
    f.magic = read_u32_be(is, offset, path, "magic");
    size_t ndims;
    if (f.magic == 0x00000803u)
        ndims = 3;
    else if (f.magic == 0x00000801u)
        ndims = 1;
    else {
        std::ostringstream os;
        os << "bad IDX magic 0x" << std::hex << f.magic << " in " << path << " at offset 0";
        throw FormatError(os.str());
    }
    size_t count = 1;
    for (size_t i = 0; i < ndims; ++i) {
        uint32_t d = read_u32_be(is, offset, path, "dimension");
        f.dims.push_back(d);
        count *= d;
    }
    std::vector<unsigned char> payload(count);
    is.read(reinterpret_cast<char*>(payload.data()), std::streamsize(count));
    size_t got = size_t(is.gcount());
    if (got != count)
        throw FormatError("IDX file " + path + " truncated: expected " + std::to_string(count) +
                          " payload bytes at offset " + std::to_string(offset) + ", got " +
                          std::to_string(got));
    offset += count;
    char extra;
    if (is.read(&extra, 1))
        throw FormatError("IDX file " + path + " has trailing bytes at offset " +
                          std::to_string(offset));
    f.values.resize(count);
    if (f.is_images())
        for (size_t i = 0; i < count; ++i) f.values[i] = double(payload[i]) / 255.0;
    else
        for (size_t i = 0; i < count; ++i) f.values[i] = double(payload[i]);
    return f;
}

// --- synthetic digits -------------------------------------------------------

namespace {

constexpr size_t kDigitSide = 28;
constexpr size_t kDigitDim = kDigitSide * kDigitSide;
constexpr size_t kStrokes = 16;
constexpr uint64_t kAlphabetSeed = 0x5ca1ab1e0ddba11ULL;

// soft-edged line segment rendered into a 28x28 canvas
void render_stroke(std::vector<double>& img, double r0, double c0, double r1, double c1,
                   double width) {
    double dr = r1 - r0, dc = c1 - c0;
    double len2 = dr * dr + dc * dc;
    for (size_t r = 0; r < kDigitSide; ++r) {
        for (size_t c = 0; c < kDigitSide; ++c) {
            double t = 0.0;
            if (len2 > 0.0)
                t = std::clamp(((double(r) - r0) * dr + (double(c) - c0) * dc) / len2, 0.0, 1.0);
            double pr = r0 + t * dr, pc = c0 + t * dc;
            double d2 = (double(r) - pr) * (double(r) - pr) + (double(c) - pc) * (double(c) - pc);
            double v = std::exp(-d2 / (2.0 * width * width));
            double& px = img[r * kDigitSide + c];
            px = std::max(px, v);
        }
    }
}

struct DigitAlphabet {
    // prototypes[c] is the clean 28x28 image of class c
    std::vector<std::vector<double>> prototypes;
};

const DigitAlphabet& digit_alphabet() {
    static const DigitAlphabet alphabet = [] {
        RngStream rng(kAlphabetSeed);
        std::vector<std::array<double, 4>> strokes(kStrokes);
        for (size_t i = 0; i < kStrokes; ++i) {
            RngStream sr = rng.derive(i);
            strokes[i] = {sr.uniform(5.0, 22.0), sr.uniform(5.0, 22.0), sr.uniform(5.0, 22.0),
                          sr.uniform(5.0, 22.0)};
        }
        DigitAlphabet a;
        a.prototypes.resize(10);
        for (size_t c = 0; c < 10; ++c) {
            auto& img = a.prototypes[c];
            img.assign(kDigitDim, 0.0);
            // classes share strokes, which keeps them confusable
            size_t ids[3] = {c, (c + 3) % kStrokes, (2 * c + 11) % kStrokes};
            for (size_t i : ids) {
                const auto& s = strokes[i];
                render_stroke(img, s[0], s[1], s[2], s[3], 1.3);
            }
        }
        return a;
    }();
    return alphabet;
}

}  // namespace

DigitPool synthesize_digits(size_t n, RngStream& rng) {
    const DigitAlphabet& a = digit_alphabet();
    DigitPool pool;
    pool.images = Tensor::zeros({n, kDigitDim});
    pool.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int cls = int(rng.index(10));
        pool.labels[i] = cls;
        const auto& proto = a.prototypes[size_t(cls)];
        int dr = int(rng.index(5)) - 2;
        int dc = int(rng.index(5)) - 2;
        double gain = rng.uniform(0.8, 1.2);
        double* out = pool.images.values.data() + i * kDigitDim;
        for (size_t r = 0; r < kDigitSide; ++r) {
            for (size_t c = 0; c < kDigitSide; ++c) {
                int sr = int(r) - dr, sc = int(c) - dc;
                double v = 0.0;
                if (sr >= 0 && sr < int(kDigitSide) && sc >= 0 && sc < int(kDigitSide))
                    v = gain * proto[size_t(sr) * kDigitSide + size_t(sc)];
                v += 0.30 * rng.normal();
                out[r * kDigitSide + c] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return pool;
}

// --- bag generators ---------------------------------------------------------

namespace {

std::vector<int> bag_label_layout(const BagGenConfig& cfg, RngStream& rng) {
    size_t n_pos = size_t(std::llround(cfg.positive_fraction * double(cfg.n_bags)));
    std::vector<int> labels(cfg.n_bags, 0);
    for (size_t i = 0; i < n_pos; ++i) labels[i] = 1;
    rng.shuffle(labels);
    return labels;
}

std::string bag_name(const char* prefix, size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%05zu", prefix, i);
    return buf;
}

}  // namespace

BagDataset generate_mnist_bags(const Tensor& images, const std::vector<int>& labels,
                               const BagGenConfig& cfg, RngStream& rng, int positive_digit) {
    cfg.validate();
    if (images.rank() != 2 || images.rows() != labels.size())
        throw DataError("image array and label count disagree");
    std::vector<size_t> pos_pool, neg_pool;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] == positive_digit ? pos_pool : neg_pool).push_back(i);

    std::vector<int> bag_labels = bag_label_layout(cfg, rng);
    bool any_pos = std::find(bag_labels.begin(), bag_labels.end(), 1) != bag_labels.end();
    if (any_pos && pos_pool.empty())
        throw DataError("source pool holds no instances of digit " + std::to_string(positive_digit));
    if (neg_pool.empty() && cfg.bag_size > cfg.positives_per_positive_bag)
        throw DataError("source pool holds no negative instances");

    size_t d = images.cols();
    BagDataset ds;
    ds.bags.reserve(cfg.n_bags);
    for (size_t m = 0; m < cfg.n_bags; ++m) {
        Bag bag;
        bag.bag_id = bag_name("bag", m);
        bag.label = bag_labels[m];
        bag.instances = Tensor::zeros({cfg.bag_size, d});
        std::vector<uint8_t> ylab(cfg.bag_size, 0);
        std::vector<char> is_pos_slot(cfg.bag_size, 0);
        if (bag.label == 1)
            for (size_t p : rng.sample_indices(cfg.bag_size, cfg.positives_per_positive_bag))
                is_pos_slot[p] = 1;
        for (size_t k = 0; k < cfg.bag_size; ++k) {
            const auto& pool = is_pos_slot[k] ? pos_pool : neg_pool;
            size_t src = pool[rng.index(pool.size())];
            std::memcpy(bag.instances.values.data() + k * d, images.values.data() + src * d,
                        d * sizeof(double));
            ylab[k] = is_pos_slot[k] ? 1 : 0;
        }
        bag.instance_labels = std::move(ylab);
        bag.validate();
        ds.bags.push_back(std::move(bag));
    }
    ds.provenance = {{"generator", "mnist_bags"},
                     {"n_bags", cfg.n_bags},
                     {"bag_size", cfg.bag_size},
                     {"positives_per_positive_bag", cfg.positives_per_positive_bag},
                     {"positive_fraction", cfg.positive_fraction},
                     {"positive_class_rule", cfg.positive_class_rule},
                     {"positive_digit", positive_digit}};
    return ds;
}

BagDataset generate_feature_bags(const BagGenConfig& cfg, size_t dim, double separation,
                                 uint64_t direction_seed, RngStream& rng) {
    cfg.validate();
    if (dim < 1) throw ParamError("feature dimension must be >= 1");
    if (separation < 0.0) throw ParamError("separation must be >= 0");

    std::vector<double> direction(dim);
    {
        RngStream dir_rng = RngStream(direction_seed).derive(0xD19EC7);
        double norm2 = 0.0;
        for (auto& v : direction) {
            v = dir_rng.normal();
            norm2 += v * v;
        }
        double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : direction) v *= inv;
    }

    std::vector<int> bag_labels = bag_label_layout(cfg, rng);
    BagDataset ds;
    ds.bags.reserve(cfg.n_bags);
    for (size_t m = 0; m < cfg.n_bags; ++m) {
        Bag bag;
        bag.bag_id = bag_name("fbag", m);
        bag.label = bag_labels[m];
        bag.instances = Tensor::zeros({cfg.bag_size, dim});
        std::vector<uint8_t> ylab(cfg.bag_size, 0);
        std::vector<char> is_pos_slot(cfg.bag_size, 0);
        if (bag.label == 1)
            for (size_t p : rng.sample_indices(cfg.bag_size, cfg.positives_per_positive_bag))
                is_pos_slot[p] = 1;
        for (size_t k = 0; k < cfg.bag_size; ++k) {
            double* row = bag.instances.values.data() + k * dim;
            for (size_t j = 0; j < dim; ++j) row[j] = rng.normal();
            if (is_pos_slot[k]) {
                for (size_t j = 0; j < dim; ++j) row[j] += separation * direction[j];
                ylab[k] = 1;
            }
        }
        bag.instance_labels = std::move(ylab);
        bag.validate();
        ds.bags.push_back(std::move(bag));
    }
    ds.provenance = {{"generator", "feature_bags"},
                     {"n_bags", cfg.n_bags},
                     {"bag_size", cfg.bag_size},
                     {"positives_per_positive_bag", cfg.positives_per_positive_bag},
                     {"positive_fraction", cfg.positive_fraction},
                     {"dim", dim},
                     {"separation", separation},
                     {"direction_seed", direction_seed}};
    return ds;
}

// --- BagPack ----------------------------------------------------------------

void write_bagpack(const BagDataset& ds, const std::string& dir) {
    fs::path target(dir);
    if (fs::exists(target)) throw IoError("bagpack target already exists: " + dir);
    fs::path parent = target.parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    fs::path tmp = target;
    tmp += ".tmp";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    if (!fs::create_directories(tmp)) throw IoError("cannot create " + tmp.string());

    try {
        std::ofstream manifest(tmp / "manifest.jsonl", std::ios::trunc);
        if (!manifest) throw IoError("cannot write manifest in " + tmp.string());
        for (const Bag& bag : ds.bags) {
            std::string file = bag.bag_id + ".bin";
            nlohmann::json line = {{"bag_id", bag.bag_id},
                                   {"label", bag.label},
                                   {"n_instances", bag.size()},
                                   {"dim", bag.dim()},
                                   {"file", file}};
            if (bag.instance_labels) {
                line["instance_labels"] = *bag.instance_labels;
            }
            manifest << line.dump() << "\n";
            std::ofstream bin(tmp / file, std::ios::binary | std::ios::trunc);
            if (!bin) throw IoError("cannot write " + file);
            bin.write(reinterpret_cast<const char*>(bag.instances.values.data()),
                      std::streamsize(bag.instances.values.size() * sizeof(double)));
            if (!bin) throw IoError("write failed for " + file);
        }
        if (!manifest) throw IoError("manifest write failed");
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove_all(tmp);
        throw IoError("cannot move bagpack into place: " + ec.message());
    }
}

BagDataset read_bagpack(const std::string& dir) {
    fs::path root(dir);
    std::ifstream manifest(root / "manifest.jsonl");
    if (!manifest) throw IoError("cannot open manifest in " + dir);
    BagDataset ds;
    std::string base = root.filename().string();
    if (base == "train" || base == "validation" || base == "test") ds.split = base;

    std::string line;
    size_t lineno = 0;
    size_t common_dim = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest line " + std::to_string(lineno) + " in " + dir +
                              " is not valid JSON: " + e.what());
        }
        for (const char* key : {"bag_id", "label", "n_instances", "dim", "file"})
            if (!j.contains(key))
                throw FormatError("manifest line " + std::to_string(lineno) + " missing key " + key);
        Bag bag;
        bag.bag_id = j.at("bag_id").get<std::string>();
        bag.label = j.at("label").get<int>();
        size_t k = j.at("n_instances").get<size_t>();
        size_t d = j.at("dim").get<size_t>();
        std::string file = j.at("file").get<std::string>();
        if (common_dim == 0)
            common_dim = d;
        else if (d != common_dim)
            throw FormatError("bag " + bag.bag_id + " has dim " + std::to_string(d) +
                              ", expected " + std::to_string(common_dim));
        fs::path binpath = root / file;
        std::error_code ec;
        auto fsize = fs::file_size(binpath, ec);
        if (ec) throw FormatError("bag " + bag.bag_id + ": missing data file " + file);
        size_t expect = k * d * sizeof(double);
        if (fsize != expect)
            throw FormatError("bag " + bag.bag_id + ": file " + file + " holds " +
                              std::to_string(fsize / sizeof(double)) + " floats, manifest declares " +
                              std::to_string(k * d));
        bag.instances = Tensor::zeros({k, d});
        std::ifstream bin(binpath, std::ios::binary);
        if (!bin.read(reinterpret_cast<char*>(bag.instances.values.data()), std::streamsize(expect)))
            throw IoError("read failed for " + binpath.string());
        if (j.contains("instance_labels")) {
            auto yl = j.at("instance_labels").get<std::vector<uint8_t>>();
            if (yl.size() != k)
                throw FormatError("bag " + bag.bag_id + ": instance_labels length " +
                                  std::to_string(yl.size()) + " does not match n_instances " +
                                  std::to_string(k));
            bag.instance_labels = std::move(yl);
        }
        ds.bags.push_back(std::move(bag));
    }
    return ds;
}

// --- augmentation -----------------------------------------------------------

Bag sample_instances(const Bag& bag, size_t n, RngStream& rng) {
    if (n < 1) throw ParamError("sample_instances needs n >= 1");
    if (bag.size() <= n) return bag;
    std::vector<size_t> keep = rng.sample_indices(bag.size(), n);
    Bag out;
    out.bag_id = bag.bag_id;
    out.label = bag.label;
    size_t d = bag.dim();
    out.instances = Tensor::zeros({n, d});
    for (size_t i = 0; i < n; ++i)
        std::memcpy(out.instances.values.data() + i * d,
                    bag.instances.values.data() + keep[i] * d, d * sizeof(double));
    if (bag.instance_labels) {
        std::vector<uint8_t> yl(n);
        for (size_t i = 0; i < n; ++i) yl[i] = (*bag.instance_labels)[keep[i]];
        out.instance_labels = std::move(yl);
    }
    return out;
}

}  // namespace milc
