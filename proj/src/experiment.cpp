#include "milc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "milc/errors.hpp"
#include "milc/log.hpp"

namespace milc {

Pooling pooling_from_string(const std::string& name) {
    if (name == "max") return Pooling::max;
    if (name == "mean") return Pooling::mean;
    if (name == "attention") return Pooling::attention;
    if (name == "certainty") return Pooling::certainty;
    throw ParamError("unknown pooling '" + name + "' (max|mean|attention|certainty)");
}

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::max: return "max";
        case Pooling::mean: return "mean";
        case Pooling::attention: return "attention";
        case Pooling::certainty: return "certainty";
    }
    throw ParamError("invalid pooling value");
}

void ExperimentConfig::validate() const {
    model.validate();
    if (!(lr > 0.0)) throw ParamError("lr must be > 0");
    if (epochs < 1) throw ParamError("epochs must be >= 1");
    if (pooling == Pooling::certainty && mc_passes < 2)
        throw ParamError("certainty pooling needs mc_passes >= 2");
    if (!(eps > 0.0)) throw ParamError("eps must be > 0");
    if (bag_sample_n && *bag_sample_n < 1) throw ParamError("bag_sample_n must be >= 1");
    if (validation_every < 1) throw ParamError("validation_every must be >= 1");
    if (validation_instance_cap && *validation_instance_cap < 1)
        throw ParamError("validation_instance_cap must be >= 1");
    if (seeds.empty()) throw ParamError("at least one seed required");
    if (top_k < 1 || top_k > seeds.size())
        throw ParamError("top_k must lie in [1, |seeds|]");
}

namespace {

struct PlainScore {
    PoolResult pool;
    std::vector<double> h;
};

// Shared scoring path for validation and test evaluation: infer-mode h,
// pooling on top; certainty additionally draws T MC passes from mc_rng.
PlainScore score_bag_plain(const ModelState& s, const Tensor& X, Pooling pooling, size_t T,
                           double eps, RngStream& mc_rng) {
    RngStream no_draws(0);  // infer mode consumes no randomness
    InstanceForward fwd = instance_forward(s, X, DropoutMode::infer, no_draws);
    PlainScore out;
    out.h = fwd.h.values;
    switch (pooling) {
        case Pooling::max:
            out.pool = max_pool(fwd.h);
            break;
        case Pooling::mean:
            out.pool = mean_pool(fwd.h);
            break;
        case Pooling::attention: {
            Tensor a = attention_plain(s, fwd.embeddings);
            out.pool = attention_pool(s, fwd.embeddings, a, DropoutMode::infer, no_draws);
            break;
        }
        case Pooling::certainty: {
            MCSampleMatrix mc = mc_dropout_predict(s, X, T, mc_rng);
            CertaintyVector c = certainty(mc, eps);
            out.pool = certainty_pool(fwd.h, c);
            break;
        }
    }
    return out;
}

double validation_auc(const ExperimentConfig& cfg, const ModelState& model,
                      const BagDataset& val_ds, RngStream vr) {
    ScoredSet s;
    for (size_t i = 0; i < val_ds.bags.size(); ++i) {
        const Bag& src = val_ds.bags[i];
        RngStream br = vr.derive(i);
        const Bag* bag = &src;
        Bag capped;
        if (cfg.validation_instance_cap && src.size() > *cfg.validation_instance_cap) {
            RngStream cap_rng = br.derive(0);
            capped = sample_instances(src, *cfg.validation_instance_cap, cap_rng);
            bag = &capped;
        }
        RngStream mc_rng = br.derive(1);
        PlainScore ps =
            score_bag_plain(model, bag->instances, cfg.pooling, cfg.mc_passes, cfg.eps, mc_rng);
        s.push(ps.pool.z, bag->label);
    }
    return roc_auc(s);
}

}  // namespace

RunRecord train_one(const ExperimentConfig& cfg, const BagDataset& train_ds,
                    const BagDataset& val_ds, uint64_t seed) {
    cfg.validate();
    if (train_ds.bags.empty()) throw DataError("training dataset is empty");
    if (val_ds.bags.empty()) throw DataError("validation dataset is empty");
    size_t d = train_ds.dim();
    if (d != cfg.model.input_dim())
        throw DimError("training data dim " + std::to_string(d) + " does not match model input " +
                       std::to_string(cfg.model.input_dim()));
    if (val_ds.dim() != d)
        throw DimError("validation data dim " + std::to_string(val_ds.dim()) +
                       " does not match training dim " + std::to_string(d));

    auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.seed = seed;

    RngStream root(seed);
    RngStream init_rng = root.derive(0x5EED);
    ModelState model = init_model(cfg.model, init_rng);
    AdamState opt(cfg.lr);
    rec.best_model = model;

    std::vector<size_t> order(train_ds.bags.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (size_t epoch = 1; epoch <= cfg.epochs && !rec.failed; ++epoch) {
        RngStream shuffle_rng = root.derive(1, epoch);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (size_t step = 0; step < order.size(); ++step) {
            const Bag& src = train_ds.bags[order[step]];
            RngStream step_rng = root.derive(2, epoch, step);

            const Bag* bag = &src;
            Bag sampled;
            if (cfg.bag_sample_n && src.size() > *cfg.bag_sample_n) {
                RngStream sub_rng = step_rng.derive(1);
                sampled = sample_instances(src, *cfg.bag_sample_n, sub_rng);
                bag = &sampled;
            }

            model.zero_grads();
            ag::Graph g;
            ag::Graph::Id X = g.input(bag->instances);
            RngStream drop_rng = step_rng.derive(3);
            ag::Graph::Id E = embed_graph(g, model, X, DropoutMode::train, drop_rng);
            ag::Graph::Id z;
            if (cfg.pooling == Pooling::attention) {
                z = attention_pool_graph(g, model, E, DropoutMode::train, drop_rng);
            } else {
                ag::Graph::Id H = head_graph(g, model, E, DropoutMode::train, drop_rng);
                ag::Graph::Id h_flat = g.reshape(H, {bag->size()});
                switch (cfg.pooling) {
                    case Pooling::max:
                        z = max_pool_graph(g, h_flat);
                        break;
                    case Pooling::mean:
                        z = mean_pool_graph(g, h_flat);
                        break;
                    default: {  // certainty
                        RngStream mc_rng = step_rng.derive(2);
                        MCSampleMatrix mc =
                            mc_dropout_predict(model, bag->instances, cfg.mc_passes, mc_rng);
                        CertaintyVector c = certainty(mc, cfg.eps);
                        z = certainty_pool_graph(g, h_flat, c);
                        break;
                    }
                }
            }
            ag::Graph::Id loss = g.bce(z, bag->label);
            double loss_val = g.value(loss).values[0];
            if (!std::isfinite(loss_val)) {
                rec.failed = true;
                rec.fail_reason = "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                  std::to_string(step);
                logging::error("seed " + std::to_string(seed) + ": " + rec.fail_reason);
                break;
            }
            loss_sum += loss_val;
            g.backward(loss);
            adam_step(opt, model.parameters());
        }
        if (rec.failed) break;
        rec.epoch_loss.push_back(order.empty() ? 0.0 : loss_sum / double(order.size()));

        if (epoch % cfg.validation_every == 0 || epoch == cfg.epochs) {
            double auc = validation_auc(cfg, model, val_ds, root.derive(4, epoch));
            rec.val_history.push_back({epoch, auc});
            logging::debug("seed " + std::to_string(seed) + " epoch " + std::to_string(epoch) +
                           " val_auc " + std::to_string(auc));
            if (auc > rec.best_val_auc) {
                rec.best_val_auc = auc;
                rec.best_epoch = epoch;
                rec.best_model = model;
            }
        }
    }

    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

EvalResult evaluate(const ModelState& model, const BagDataset& ds, Pooling pooling, size_t T,
                    double eps, uint64_t seed) {
    if (!ds.bags.empty() && ds.dim() != model.spec.input_dim())
        throw DimError("dataset dim " + std::to_string(ds.dim()) + " does not match model input " +
                       std::to_string(model.spec.input_dim()));
    RngStream root(seed);
    EvalResult out;
    for (size_t i = 0; i < ds.bags.size(); ++i) {
        const Bag& bag = ds.bags[i];
        if (bag.instances.rank() != 2 || bag.size() == 0) {
            ++out.skipped_empty;
            logging::info("skipping empty bag " + bag.bag_id);
            continue;
        }
        RngStream br = root.derive(5, i);
        PlainScore ps = score_bag_plain(model, bag.instances, pooling, T, eps, br);
        out.bag_scores.push(ps.pool.z, bag.label);
        out.bags.push_back({bag.bag_id, bag.label, ps.pool.z, ps.pool.selected_index});
        out.instance_h.push_back(std::move(ps.h));
        out.instance_labels.push_back(bag.instance_labels);
    }
    return out;
}

namespace {

void fill_test_metrics(RunRecord& rec, const EvalResult& ev) {
    rec.test_bag_auc = roc_auc(ev.bag_scores);

    ScoredSet pooled;
    std::vector<ScoredSet> positive_sets;
    for (size_t b = 0; b < ev.bags.size(); ++b) {
        if (!ev.instance_labels[b]) continue;
        const auto& yl = *ev.instance_labels[b];
        ScoredSet s;
        for (size_t k = 0; k < yl.size(); ++k) {
            pooled.push(ev.instance_h[b][k], yl[k]);
            s.push(ev.instance_h[b][k], yl[k]);
        }
        if (ev.bags[b].label == 1) positive_sets.push_back(std::move(s));
    }
    if (pooled.has_both_classes()) rec.test_instance_auc = roc_auc(pooled);
    if (!positive_sets.empty()) {
        try {
            InstanceAucMean m = instance_auc_mean(positive_sets);
            rec.test_instance_auc_bagmean = m.mean_auc;
            rec.instance_bags_evaluated = m.n_evaluated;
            rec.instance_bags_skipped = m.n_skipped;
        } catch (const MetricError&) {
            rec.instance_bags_skipped = positive_sets.size();
        }
    }
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    mean = std::numeric_limits<double>::quiet_NaN();
    sd = mean;
    if (xs.empty()) return;
    for (double x : xs)
        if (std::isnan(x)) return;
    double mu = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    mean = mu;
    sd = std::sqrt(var / double(xs.size()));  // population std
}

}  // namespace

ExperimentReport run_sweep(const ExperimentConfig& cfg, const BagDataset& train_ds,
                           const BagDataset& val_ds, const BagDataset& test_ds, size_t jobs) {
    cfg.validate();
    size_t n = cfg.seeds.size();
    ExperimentReport rep;
    rep.runs.resize(n);

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < n;) {
            uint64_t seed = cfg.seeds[i];
            auto t0 = std::chrono::steady_clock::now();
            RunRecord rec;
            try {
                rec = train_one(cfg, train_ds, val_ds, seed);
                if (!rec.failed) {
                    EvalResult ev =
                        evaluate(rec.best_model, test_ds, cfg.pooling, cfg.mc_passes, cfg.eps, seed);
                    fill_test_metrics(rec, ev);
                }
            } catch (const std::exception& e) {
                rec.seed = seed;
                rec.failed = true;
                rec.fail_reason = e.what();
                logging::error("seed " + std::to_string(seed) + " failed: " + rec.fail_reason);
            }
            rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            logging::info("seed " + std::to_string(seed) + (rec.failed ? " failed" : " done") +
                          ", wall " + std::to_string(rec.wall_s) + "s");
            rep.runs[i] = std::move(rec);
        }
    };

    size_t workers = std::clamp<size_t>(jobs, 1, n);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < n; ++i)
        if (!rep.runs[i].failed) rep.ranked.push_back(i);
    if (rep.ranked.empty()) throw SweepError("all seeds failed");
    std::stable_sort(rep.ranked.begin(), rep.ranked.end(), [&](size_t a, size_t b) {
        return rep.runs[a].best_val_auc > rep.runs[b].best_val_auc;
    });
    size_t k = std::min(cfg.top_k, rep.ranked.size());
    rep.selected.assign(rep.ranked.begin(), rep.ranked.begin() + std::ptrdiff_t(k));

    std::vector<double> bag, inst, instm;
    for (size_t i : rep.selected) {
        bag.push_back(rep.runs[i].test_bag_auc);
        inst.push_back(rep.runs[i].test_instance_auc);
        instm.push_back(rep.runs[i].test_instance_auc_bagmean);
    }
    rep.headline.n_selected = k;
    mean_std(bag, rep.headline.bag_auc_mean, rep.headline.bag_auc_std);
    mean_std(inst, rep.headline.instance_auc_mean, rep.headline.instance_auc_std);
    mean_std(instm, rep.headline.instance_auc_bagmean_mean, rep.headline.instance_auc_bagmean_std);
    return rep;
}

std::vector<RankingRow> export_rankings(const EvalResult& ev, size_t n_top) {
    if (n_top < 1) throw ParamError("n_top must be >= 1");
    std::vector<RankingRow> rows;
    for (size_t b = 0; b < ev.bags.size(); ++b) {
        const auto& h = ev.instance_h[b];
        std::vector<size_t> idx(h.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return h[x] > h[y]; });
        size_t take = std::min(n_top, h.size());
        for (size_t r = 0; r < take; ++r) {
            RankingRow row;
            row.bag_id = ev.bags[b].bag_id;
            row.rank = r + 1;
            row.instance_index = idx[r];
            row.h = h[idx[r]];
            if (ev.instance_labels[b]) row.instance_label = int((*ev.instance_labels[b])[idx[r]]);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace milc
