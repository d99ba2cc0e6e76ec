#include "milc/cli.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "milc/config.hpp"
#include "milc/errors.hpp"
#include "milc/log.hpp"

namespace fs = std::filesystem;

namespace milc {

namespace {

// %.17g round-trips doubles exactly, so CSV readers can recompute summaries
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void atomic_write_text(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc | std::ios::binary);
        if (!os) throw IoError("cannot write " + tmp.string());
        os << content;
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + path.string() + " into place: " + ec.message());
}

std::string config_dir_of(const std::string& config_path) {
    return fs::path(config_path).parent_path().string();
}

void write_provenance(const fs::path& out_dir, const std::string& command,
                      const nlohmann::json& config, const std::string& out) {
    nlohmann::json prov = {{"command", command},
                           {"config", config},
                           {"config_hash", config_hash(config)},
                           {"out", out}};
    atomic_write_text(out_dir / "provenance.json", prov.dump(2) + "\n");
}

}  // namespace

// --- generate ---------------------------------------------------------------

int cmd_generate(const GenerateOptions& opt) {
    if (opt.config_path.has_value() == opt.preset.has_value())
        throw ConfigError("generate needs exactly one of --config or --preset");

    GenerateConfig g;
    std::string out;
    if (opt.config_path) {
        nlohmann::json doc = load_json_file(*opt.config_path);
        if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
        for (const auto& item : doc.items())
            if (item.key() != "out" && item.key() != "generate")
                throw ConfigError("unknown key '" + item.key() + "' in config");
        if (!doc.contains("generate"))
            throw ConfigError("config is missing required key 'generate'");
        std::string base = config_dir_of(*opt.config_path);
        g = parse_generate_config(doc.at("generate"), base);
        if (doc.contains("out")) {
            fs::path p(doc.at("out").get<std::string>());
            out = p.is_absolute() ? p.string() : (fs::path(base) / p).lexically_normal().string();
        }
    } else {
        g = generate_preset(*opt.preset);
    }
    if (opt.seed) g.seed = *opt.seed;
    if (opt.n_train) {
        if (!g.splits.count("train")) throw ConfigError("--n-train given but no train split");
        g.splits["train"].n_bags = *opt.n_train;
    }
    if (opt.idx_images) g.idx_images = *opt.idx_images;
    if (opt.idx_labels) g.idx_labels = *opt.idx_labels;
    if (opt.out) out = *opt.out;
    if (out.empty()) throw ConfigError("no output directory (use --out)");
    g.validate();

    RngStream root(g.seed);

    // load or synthesize the instance pool before touching the filesystem,
    // so a bad source leaves no partial output
    Tensor pool_images;
    std::vector<int> pool_labels;
    if (g.kind == "mnist") {
        if (g.idx_images) {
            IdxFile imgs = read_idx(*g.idx_images);
            if (!imgs.is_images())
                throw FormatError(*g.idx_images + " is not an image IDX file");
            IdxFile labs = read_idx(*g.idx_labels);
            if (labs.is_images())
                throw FormatError(*g.idx_labels + " is not a label IDX file");
            if (imgs.dims[0] != labs.dims[0])
                throw DataError("IDX image count " + std::to_string(imgs.dims[0]) +
                                " does not match label count " + std::to_string(labs.dims[0]));
            size_t n = imgs.dims[0], d = imgs.dims[1] * imgs.dims[2];
            pool_images = Tensor::zeros({n, d});
            pool_images.values = std::move(imgs.values);
            pool_labels.resize(n);
            for (size_t i = 0; i < n; ++i) pool_labels[i] = int(labs.values[i]);
        } else {
            RngStream pool_rng = root.derive(0);
            DigitPool pool = synthesize_digits(g.pool_size, pool_rng);
            pool_images = std::move(pool.images);
            pool_labels = std::move(pool.labels);
        }
    }

    fs::create_directories(out);
    const std::pair<const char*, uint64_t> split_salts[] = {
        {"train", 1}, {"validation", 2}, {"test", 3}};
    for (const auto& [name, salt] : split_salts) {
        auto it = g.splits.find(name);
        if (it == g.splits.end()) continue;
        RngStream srng = root.derive(salt);
        BagDataset ds;
        if (g.kind == "mnist")
            ds = generate_mnist_bags(pool_images, pool_labels, it->second, srng, g.positive_digit);
        else
            ds = generate_feature_bags(it->second, g.dim, g.separation, g.direction_seed, srng);
        ds.split = name;
        ds.provenance["seed"] = g.seed;
        ds.provenance["split"] = name;
        write_bagpack(ds, (fs::path(out) / name).string());
        std::cout << name << ": " << ds.bags.size() << " bags of " << it->second.bag_size
                  << " instances\n";
    }
    write_provenance(out, "generate", generate_config_to_json(g), out);
    return 0;
}

// --- train ------------------------------------------------------------------

int cmd_train(const TrainOptions& opt) {
    if (opt.config_path.has_value() == opt.preset.has_value())
        throw ConfigError("train needs exactly one of --config or --preset");

    TrainConfig t;
    if (opt.config_path) {
        nlohmann::json doc = load_json_file(*opt.config_path);
        t = parse_train_config(doc, config_dir_of(*opt.config_path));
    } else {
        t = train_preset(*opt.preset);
        if (!opt.data_dir) throw ConfigError("--preset training needs --data <packs-root>");
        t.data_train = (fs::path(*opt.data_dir) / "train").string();
        t.data_validation = (fs::path(*opt.data_dir) / "validation").string();
        t.data_test = (fs::path(*opt.data_dir) / "test").string();
    }
    if (opt.pooling) t.exp.pooling = pooling_from_string(*opt.pooling);
    if (opt.mc_passes) t.exp.mc_passes = *opt.mc_passes;
    if (opt.seed) {
        t.exp.seeds = {*opt.seed};
        t.exp.top_k = 1;
    }
    if (opt.out) t.out = *opt.out;
    if (t.out.empty()) throw ConfigError("no output directory (use --out or config 'out')");
    try {
        t.exp.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }

    BagDataset train_ds = read_bagpack(t.data_train);
    BagDataset val_ds = read_bagpack(t.data_validation);
    BagDataset test_ds = read_bagpack(t.data_test);
    logging::info("loaded " + std::to_string(train_ds.bags.size()) + "/" +
                  std::to_string(val_ds.bags.size()) + "/" + std::to_string(test_ds.bags.size()) +
                  " train/validation/test bags");

    ExperimentReport rep = run_sweep(t.exp, train_ds, val_ds, test_ds, opt.jobs);

    fs::create_directories(t.out);
    nlohmann::json cfg_json = train_config_to_json(t);
    cfg_json.erase("out");

    // per-seed checkpoints
    for (const RunRecord& r : rep.runs) {
        if (r.failed) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint-seed%" PRIu64 ".milc", r.seed);
        save_checkpoint((fs::path(t.out) / name).string(), r.best_model);
    }

    // runs.csv, one row per seed in config order
    std::string csv = "seed,best_epoch,val_auc,test_bag_auc,test_instance_auc,wall_s\n";
    for (const RunRecord& r : rep.runs) {
        csv += std::to_string(r.seed) + "," + std::to_string(r.best_epoch) + "," +
               fmt(r.failed ? std::numeric_limits<double>::quiet_NaN() : r.best_val_auc) + "," +
               fmt(r.test_bag_auc) + "," + fmt(r.test_instance_auc) + "," + fmt(r.wall_s) + "\n";
    }
    atomic_write_text(fs::path(t.out) / "runs.csv", csv);

    auto json_metric = [](double v) {
        return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
    };
    nlohmann::json ranked = nlohmann::json::array(), selected = nlohmann::json::array(),
                   failed = nlohmann::json::array();
    for (size_t i : rep.ranked) ranked.push_back(rep.runs[i].seed);
    for (size_t i : rep.selected) selected.push_back(rep.runs[i].seed);
    for (const RunRecord& r : rep.runs)
        if (r.failed) failed.push_back({{"seed", r.seed}, {"reason", r.fail_reason}});
    nlohmann::json summary = {
        {"pooling", to_string(t.exp.pooling)},
        {"top_k", t.exp.top_k},
        {"n_selected", rep.headline.n_selected},
        {"headline",
         {{"test_bag_auc_mean", json_metric(rep.headline.bag_auc_mean)},
          {"test_bag_auc_std", json_metric(rep.headline.bag_auc_std)},
          {"test_instance_auc_mean", json_metric(rep.headline.instance_auc_mean)},
          {"test_instance_auc_std", json_metric(rep.headline.instance_auc_std)},
          {"test_instance_auc_bagmean_mean", json_metric(rep.headline.instance_auc_bagmean_mean)},
          {"test_instance_auc_bagmean_std", json_metric(rep.headline.instance_auc_bagmean_std)}}},
        {"ranked_seeds", ranked},
        {"selected_seeds", selected},
        {"failed", failed},
        {"config_hash", config_hash(cfg_json)}};
    atomic_write_text(fs::path(t.out) / "summary.json", summary.dump(2) + "\n");
    write_provenance(t.out, "train", cfg_json, t.out);

    std::cout << "pooling=" << to_string(t.exp.pooling)
              << " top" << t.exp.top_k << " test_bag_auc=" << fmt(rep.headline.bag_auc_mean)
              << " +/- " << fmt(rep.headline.bag_auc_std) << " (" << rep.headline.n_selected
              << " of " << rep.runs.size() << " runs)\n";
    return 0;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const EvalOptions& opt) {
    if (opt.out.empty()) throw ConfigError("no output directory (use --out)");
    ModelState model = load_checkpoint(opt.checkpoint);
    BagDataset ds = read_bagpack(opt.data);
    Pooling pooling = pooling_from_string(opt.pooling);
    if (pooling == Pooling::certainty && opt.mc_passes < 2)
        throw ConfigError("certainty pooling needs --mc-passes >= 2");

    EvalResult ev = evaluate(model, ds, pooling, opt.mc_passes, opt.eps, opt.seed);
    std::vector<RankingRow> rows = export_rankings(ev, opt.top_n);

    fs::create_directories(opt.out);
    std::string scores = "bag_id,label,z,selected_index\n";
    for (const BagEval& b : ev.bags) {
        scores += b.bag_id + "," + std::to_string(b.label) + "," + fmt(b.z) + ",";
        if (b.selected_index) scores += std::to_string(*b.selected_index);
        scores += "\n";
    }
    atomic_write_text(fs::path(opt.out) / "scores.csv", scores);

    std::string rank = "bag_id,rank,instance_index,h,instance_label\n";
    for (const RankingRow& r : rows) {
        rank += r.bag_id + "," + std::to_string(r.rank) + "," + std::to_string(r.instance_index) +
                "," + fmt(r.h) + ",";
        if (r.instance_label) rank += std::to_string(*r.instance_label);
        rank += "\n";
    }
    atomic_write_text(fs::path(opt.out) / "rankings.csv", rank);

    nlohmann::json cfg = {{"checkpoint", opt.checkpoint}, {"data", opt.data},
                          {"pooling", opt.pooling},       {"mc_passes", opt.mc_passes},
                          {"eps", opt.eps},               {"seed", opt.seed},
                          {"top_n", opt.top_n}};
    write_provenance(opt.out, "eval", cfg, opt.out);

    std::cout << ev.bags.size() << " bags scored";
    if (ev.skipped_empty) std::cout << " (" << ev.skipped_empty << " empty bags skipped)";
    std::cout << "\n";
    return 0;
}

// --- dispatch ---------------------------------------------------------------

int run_cli(int argc, char** argv) {
    CLI::App app{"Multiple-instance learning with certainty pooling"};
    app.require_subcommand(1);

    GenerateOptions gopt;
    TrainOptions topt;
    EvalOptions eopt;

    CLI::App* gen = app.add_subcommand("generate", "Generate BagPack datasets");
    gen->add_option("--config", gopt.config_path, "JSON config file");
    gen->add_option("--preset", gopt.preset, "Preset name (mnist-easy|mnist-1pct|features)");
    gen->add_option("--seed", gopt.seed, "Generator seed");
    gen->add_option("--n-train", gopt.n_train, "Override train split bag count");
    gen->add_option("--idx-images", gopt.idx_images, "IDX image file for the instance pool");
    gen->add_option("--idx-labels", gopt.idx_labels, "IDX label file for the instance pool");
    gen->add_option("--out", gopt.out, "Output directory");

    CLI::App* tr = app.add_subcommand("train", "Run a training sweep");
    tr->add_option("--config", topt.config_path, "JSON config file");
    tr->add_option("--preset", topt.preset, "Preset name (mnist-easy|mnist-1pct|features)");
    tr->add_option("--data", topt.data_dir, "Packs root for --preset (train/validation/test)");
    tr->add_option("--pooling", topt.pooling, "max|mean|attention|certainty");
    tr->add_option("--seed", topt.seed, "Train a single seed instead of the configured list");
    tr->add_option("--mc-passes", topt.mc_passes, "MC dropout passes (T)");
    tr->add_option("--jobs", topt.jobs, "Parallel seed jobs");
    tr->add_option("--out", topt.out, "Output directory");

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a BagPack");
    ev->add_option("--checkpoint", eopt.checkpoint, "Model checkpoint")->required();
    ev->add_option("--data", eopt.data, "BagPack directory")->required();
    ev->add_option("--pooling", eopt.pooling, "max|mean|attention|certainty");
    ev->add_option("--mc-passes", eopt.mc_passes, "MC dropout passes (T)");
    ev->add_option("--eps", eopt.eps, "Certainty epsilon");
    ev->add_option("--seed", eopt.seed, "Evaluation seed");
    ev->add_option("--top-n", eopt.top_n, "Instances per bag in rankings.csv");
    ev->add_option("--out", eopt.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(gopt);
        if (tr->parsed()) return cmd_train(topt);
        return cmd_eval(eopt);
    } catch (const IoError& e) {
        std::cerr << "milc: i/o error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "milc: format error: " << e.what() << "\n";
        return 3;
    } catch (const SweepError& e) {
        std::cerr << "milc: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "milc: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "milc: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace milc
