#include "milc/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "milc/errors.hpp"

namespace fs = std::filesystem;

namespace milc {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool ok = std::any_of(allowed.begin(), allowed.end(),
                              [&](const char* k) { return item.key() == k; });
        if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
    }
}

template <typename T>
T get_req(const nlohmann::json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw ConfigError(ctx + " is missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + ctx + ": " + e.what());
    }
}

template <typename T>
T get_opt(const nlohmann::json& j, const char* key, T fallback, const std::string& ctx) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return get_req<T>(j, key, ctx);
}

template <typename T>
std::optional<T> get_maybe(const nlohmann::json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return get_req<T>(j, key, ctx);
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
    fs::path fp(p);
    if (fp.is_absolute() || base_dir.empty()) return fp.lexically_normal().string();
    return (fs::path(base_dir) / fp).lexically_normal().string();
}

BagGenConfig parse_split(const nlohmann::json& j, const std::string& ctx) {
    check_keys(j, {"n_bags", "bag_size", "positives_per_positive_bag", "positive_fraction"}, ctx);
    BagGenConfig c;
    c.n_bags = get_req<size_t>(j, "n_bags", ctx);
    c.bag_size = get_req<size_t>(j, "bag_size", ctx);
    c.positives_per_positive_bag = get_opt<size_t>(j, "positives_per_positive_bag", 1, ctx);
    c.positive_fraction = get_opt<double>(j, "positive_fraction", 0.5, ctx);
    return c;
}

ModelSpec parse_model(const nlohmann::json& j) {
    const std::string ctx = "model";
    check_keys(j, {"embedder", "head", "attention_hidden", "dropout", "activation"}, ctx);
    ModelSpec m;
    m.embedder_dims = get_req<std::vector<size_t>>(j, "embedder", ctx);
    m.head_dims = get_req<std::vector<size_t>>(j, "head", ctx);
    m.attention_hidden = get_opt<size_t>(j, "attention_hidden", 64, ctx);
    m.dropout_p = get_opt<double>(j, "dropout", 0.5, ctx);
    m.activation = get_opt<std::string>(j, "activation", "relu", ctx);
    return m;
}

nlohmann::json split_to_json(const BagGenConfig& c) {
    return {{"n_bags", c.n_bags},
            {"bag_size", c.bag_size},
            {"positives_per_positive_bag", c.positives_per_positive_bag},
            {"positive_fraction", c.positive_fraction}};
}

nlohmann::json model_to_json(const ModelSpec& m) {
    return {{"embedder", m.embedder_dims},
            {"head", m.head_dims},
            {"attention_hidden", m.attention_hidden},
            {"dropout", m.dropout_p},
            {"activation", m.activation}};
}

}  // namespace

void GenerateConfig::validate() const {
    if (kind != "mnist" && kind != "features")
        throw ConfigError("generator kind must be 'mnist' or 'features', got '" + kind + "'");
    if (splits.empty()) throw ConfigError("generator needs at least one split");
    for (const auto& [name, cfg] : splits) {
        if (name != "train" && name != "validation" && name != "test")
            throw ConfigError("unknown split '" + name + "'");
        try {
            cfg.validate();
        } catch (const Error& e) {
            throw ConfigError("split '" + name + "': " + e.what());
        }
    }
    if (kind == "mnist") {
        if (idx_images.has_value() != idx_labels.has_value())
            throw ConfigError("idx_images and idx_labels must be given together");
        if (!idx_images && pool_size < 100)
            throw ConfigError("synthetic pool_size must be >= 100");
        if (positive_digit < 0 || positive_digit > 9)
            throw ConfigError("positive_digit must lie in [0,9]");
    } else {
        if (dim < 1) throw ConfigError("feature dim must be >= 1");
        if (separation < 0.0) throw ConfigError("separation must be >= 0");
    }
}

GenerateConfig parse_generate_config(const nlohmann::json& j, const std::string& base_dir) {
    const std::string ctx = "generate";
    check_keys(j, {"kind", "seed", "splits", "mnist", "features"}, ctx);
    GenerateConfig g;
    g.kind = get_req<std::string>(j, "kind", ctx);
    g.seed = get_opt<uint64_t>(j, "seed", 7, ctx);
    if (!j.contains("splits")) throw ConfigError("generate is missing required key 'splits'");
    const auto& sp = j.at("splits");
    check_keys(sp, {"train", "validation", "test"}, "generate.splits");
    for (const auto& item : sp.items())
        g.splits[item.key()] = parse_split(item.value(), "generate.splits." + item.key());
    if (j.contains("mnist")) {
        const auto& m = j.at("mnist");
        check_keys(m, {"idx_images", "idx_labels", "pool_size", "positive_digit"}, "generate.mnist");
        g.idx_images = get_maybe<std::string>(m, "idx_images", "generate.mnist");
        g.idx_labels = get_maybe<std::string>(m, "idx_labels", "generate.mnist");
        if (g.idx_images) g.idx_images = resolve_path(*g.idx_images, base_dir);
        if (g.idx_labels) g.idx_labels = resolve_path(*g.idx_labels, base_dir);
        g.pool_size = get_opt<size_t>(m, "pool_size", g.pool_size, "generate.mnist");
        g.positive_digit = get_opt<int>(m, "positive_digit", g.positive_digit, "generate.mnist");
    }
    if (j.contains("features")) {
        const auto& f = j.at("features");
        check_keys(f, {"dim", "separation", "direction_seed"}, "generate.features");
        g.dim = get_opt<size_t>(f, "dim", g.dim, "generate.features");
        g.separation = get_opt<double>(f, "separation", g.separation, "generate.features");
        g.direction_seed = get_opt<uint64_t>(f, "direction_seed", g.direction_seed,
                                             "generate.features");
    }
    g.validate();
    return g;
}

TrainConfig parse_train_config(const nlohmann::json& j, const std::string& base_dir) {
    check_keys(j, {"out", "pooling", "model", "train", "data"}, "config");
    TrainConfig t;
    t.out = get_opt<std::string>(j, "out", "", "config");
    if (!t.out.empty()) t.out = resolve_path(t.out, base_dir);
    t.exp.pooling = pooling_from_string(get_opt<std::string>(j, "pooling", "certainty", "config"));
    if (!j.contains("model")) throw ConfigError("config is missing required key 'model'");
    t.exp.model = parse_model(j.at("model"));

    if (!j.contains("train")) throw ConfigError("config is missing required key 'train'");
    const auto& tr = j.at("train");
    const std::string ctx = "train";
    check_keys(tr,
               {"lr", "epochs", "mc_passes", "eps", "bag_sample_n", "validation_every",
                "validation_instance_cap", "seeds", "top_k"},
               ctx);
    t.exp.lr = get_opt<double>(tr, "lr", 0.01, ctx);
    t.exp.epochs = get_req<size_t>(tr, "epochs", ctx);
    t.exp.mc_passes = get_opt<size_t>(tr, "mc_passes", 10, ctx);
    t.exp.eps = get_opt<double>(tr, "eps", 1e-6, ctx);
    t.exp.bag_sample_n = get_maybe<size_t>(tr, "bag_sample_n", ctx);
    t.exp.validation_every = get_opt<size_t>(tr, "validation_every", 5, ctx);
    t.exp.validation_instance_cap = get_maybe<size_t>(tr, "validation_instance_cap", ctx);
    t.exp.seeds = get_opt<std::vector<uint64_t>>(tr, "seeds", {0}, ctx);
    t.exp.top_k = get_opt<size_t>(tr, "top_k", 1, ctx);

    if (!j.contains("data")) throw ConfigError("config is missing required key 'data'");
    const auto& da = j.at("data");
    check_keys(da, {"train", "validation", "test"}, "data");
    t.data_train = resolve_path(get_req<std::string>(da, "train", "data"), base_dir);
    t.data_validation = resolve_path(get_req<std::string>(da, "validation", "data"), base_dir);
    t.data_test = resolve_path(get_req<std::string>(da, "test", "data"), base_dir);

    try {
        t.exp.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return t;
}

nlohmann::json generate_config_to_json(const GenerateConfig& g) {
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [name, cfg] : g.splits) splits[name] = split_to_json(cfg);
    nlohmann::json j = {{"kind", g.kind}, {"seed", g.seed}, {"splits", splits}};
    if (g.kind == "mnist") {
        nlohmann::json m = {{"pool_size", g.pool_size}, {"positive_digit", g.positive_digit}};
        if (g.idx_images) m["idx_images"] = *g.idx_images;
        if (g.idx_labels) m["idx_labels"] = *g.idx_labels;
        j["mnist"] = m;
    } else {
        j["features"] = {{"dim", g.dim},
                         {"separation", g.separation},
                         {"direction_seed", g.direction_seed}};
    }
    return j;
}

nlohmann::json train_config_to_json(const TrainConfig& t) {
    nlohmann::json tr = {{"lr", t.exp.lr},
                         {"epochs", t.exp.epochs},
                         {"mc_passes", t.exp.mc_passes},
                         {"eps", t.exp.eps},
                         {"validation_every", t.exp.validation_every},
                         {"seeds", t.exp.seeds},
                         {"top_k", t.exp.top_k}};
    if (t.exp.bag_sample_n) tr["bag_sample_n"] = *t.exp.bag_sample_n;
    if (t.exp.validation_instance_cap)
        tr["validation_instance_cap"] = *t.exp.validation_instance_cap;
    return {{"pooling", to_string(t.exp.pooling)},
            {"model", model_to_json(t.exp.model)},
            {"train", tr},
            {"data",
             {{"train", t.data_train},
              {"validation", t.data_validation},
              {"test", t.data_test}}},
            {"out", t.out}};
}

GenerateConfig generate_preset(const std::string& name) {
    GenerateConfig g;
    if (name == "mnist-easy") {
        g.kind = "mnist";
        g.splits["train"] = {200, 10, 1, 0.5};
        g.splits["validation"] = {1000, 10, 1, 0.5};
        g.splits["test"] = {1000, 10, 1, 0.5};
    } else if (name == "mnist-1pct") {
        g.kind = "mnist";
        g.splits["train"] = {300, 100, 1, 0.5};
        g.splits["validation"] = {1000, 100, 1, 0.5};
        g.splits["test"] = {1000, 100, 1, 0.5};
    } else if (name == "features") {
        g.kind = "features";
        g.dim = 2048;
        g.separation = 5.0;
        g.splits["train"] = {100, 200, 10, 0.5};
        g.splits["validation"] = {50, 200, 10, 0.5};
        g.splits["test"] = {100, 200, 10, 0.5};
    } else {
        throw ConfigError("unknown preset '" + name + "' (mnist-easy|mnist-1pct|features)");
    }
    return g;
}

TrainConfig train_preset(const std::string& name) {
    TrainConfig t;
    if (name == "mnist-easy") {
        t.exp.model.embedder_dims = {784, 256, 128};
        t.exp.model.head_dims = {128, 64, 1};
        t.exp.model.attention_hidden = 64;
        t.exp.lr = 1e-3;
        t.exp.epochs = 30;
        t.exp.mc_passes = 10;
        t.exp.validation_every = 5;
        t.exp.seeds = {1, 2, 3, 4, 5};
        t.exp.top_k = 1;
    } else if (name == "mnist-1pct") {
        t.exp.model.embedder_dims = {784, 256, 128};
        t.exp.model.head_dims = {128, 64, 1};
        t.exp.model.attention_hidden = 64;
        t.exp.lr = 1e-3;
        t.exp.epochs = 25;
        t.exp.mc_passes = 10;
        t.exp.validation_every = 5;
        t.exp.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        t.exp.top_k = 3;
    } else if (name == "features") {
        t.exp.model.embedder_dims = {2048, 1024};
        t.exp.model.head_dims = {1024, 512, 256, 128, 64, 1};
        t.exp.model.attention_hidden = 1024;
        t.exp.lr = 0.01;
        t.exp.epochs = 10;
        t.exp.mc_passes = 5;
        t.exp.bag_sample_n = 128;
        t.exp.validation_every = 2;
        t.exp.validation_instance_cap = 20000;
        t.exp.seeds = {1};
        t.exp.top_k = 1;
    } else {
        throw ConfigError("unknown preset '" + name + "' (mnist-easy|mnist-1pct|features)");
    }
    t.exp.model.dropout_p = 0.5;
    return t;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
}

std::string config_hash(const nlohmann::json& j) {
    std::string canon = j.dump();  // object keys already sorted
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace milc
