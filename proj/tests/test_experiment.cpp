#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "milc/errors.hpp"
#include "milc/experiment.hpp"

using namespace milc;

namespace {

ModelSpec feature_model(size_t d) {
    ModelSpec spec;
    spec.embedder_dims = {d, 6};
    spec.head_dims = {4, 1};
    spec.attention_hidden = 4;
    spec.dropout_p = 0.2;
    return spec;
}

BagDataset feature_ds(size_t n_bags, size_t bag_size, size_t d, double sep, uint64_t seed,
                      size_t pos_per_bag = 1) {
    BagGenConfig cfg;
    cfg.n_bags = n_bags;
    cfg.bag_size = bag_size;
    cfg.positives_per_positive_bag = pos_per_bag;
    cfg.positive_fraction = 0.5;
    RngStream rng(seed);
    return generate_feature_bags(cfg, d, sep, 99, rng);
}

ExperimentConfig small_cfg(Pooling pooling, size_t d) {
    ExperimentConfig cfg;
    cfg.pooling = pooling;
    cfg.model = feature_model(d);
    cfg.lr = 0.01;
    cfg.epochs = 3;
    cfg.mc_passes = 3;
    cfg.validation_every = 2;
    cfg.seeds = {1};
    cfg.top_k = 1;
    return cfg;
}

bool models_equal(const ModelState& a, const ModelState& b) {
    auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->values != pb[i]->values) return false;
    return true;
}

}  // namespace

TEST_CASE("ExperimentConfig::validate rejects inconsistent settings") {
    ExperimentConfig cfg = small_cfg(Pooling::certainty, 8);
    CHECK_NOTHROW(cfg.validate());

    ExperimentConfig c = cfg;
    c.mc_passes = 1;
    CHECK_THROWS_AS(c.validate(), ParamError);  // certainty needs T >= 2
    c.pooling = Pooling::max;
    CHECK_NOTHROW(c.validate());  // other poolings never run MC

    c = cfg;
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = cfg;
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = cfg;
    c.seeds = {};
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = cfg;
    c.top_k = 2;  // one seed only
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = cfg;
    c.validation_every = 0;
    CHECK_THROWS_AS(c.validate(), ParamError);
    c = cfg;
    c.eps = 0.0;
    CHECK_THROWS_AS(c.validate(), ParamError);
}

TEST_CASE("pooling names round-trip") {
    for (Pooling p : {Pooling::max, Pooling::mean, Pooling::attention, Pooling::certainty})
        CHECK(pooling_from_string(to_string(p)) == p);
    CHECK_THROWS_AS(pooling_from_string("median"), ParamError);
}

TEST_CASE("train_one: validation runs on the cadence and always at the end") {
    BagDataset train = feature_ds(6, 5, 8, 3.0, 100);
    BagDataset val = feature_ds(6, 5, 8, 3.0, 101);
    {
        ExperimentConfig cfg = small_cfg(Pooling::max, 8);
        cfg.epochs = 1;
        cfg.validation_every = 5;
        RunRecord rec = train_one(cfg, train, val, 1);
        REQUIRE(rec.val_history.size() == 1u);
        CHECK(rec.val_history[0].epoch == 1u);
        CHECK(rec.best_epoch == 1u);
        CHECK(rec.epoch_loss.size() == 1u);
    }
    {
        ExperimentConfig cfg = small_cfg(Pooling::max, 8);
        cfg.epochs = 7;
        cfg.validation_every = 3;
        RunRecord rec = train_one(cfg, train, val, 1);
        REQUIRE(rec.val_history.size() == 3u);
        CHECK(rec.val_history[0].epoch == 3u);
        CHECK(rec.val_history[1].epoch == 6u);
        CHECK(rec.val_history[2].epoch == 7u);
        CHECK(rec.epoch_loss.size() == 7u);
        // best_epoch is one of the validated epochs and carries the best AUC
        double best = -1.0;
        for (const ValPoint& p : rec.val_history) best = std::max(best, p.auc);
        CHECK(rec.best_val_auc == best);
        bool found = false;
        for (const ValPoint& p : rec.val_history)
            if (p.epoch == rec.best_epoch && p.auc == rec.best_val_auc) found = true;
        CHECK(found);
    }
}

TEST_CASE("train_one: identical inputs give bit-identical runs") {
    BagDataset train = feature_ds(8, 6, 8, 3.0, 110);
    BagDataset val = feature_ds(6, 6, 8, 3.0, 111);
    for (Pooling p : {Pooling::max, Pooling::mean, Pooling::attention, Pooling::certainty}) {
        ExperimentConfig cfg = small_cfg(p, 8);
        RunRecord a = train_one(cfg, train, val, 7);
        RunRecord b = train_one(cfg, train, val, 7);
        CAPTURE(to_string(p));
        CHECK(a.epoch_loss == b.epoch_loss);
        REQUIRE(a.val_history.size() == b.val_history.size());
        for (size_t i = 0; i < a.val_history.size(); ++i)
            CHECK(a.val_history[i].auc == b.val_history[i].auc);
        CHECK(a.best_epoch == b.best_epoch);
        CHECK(models_equal(a.best_model, b.best_model));

        RunRecord c = train_one(cfg, train, val, 8);
        CHECK(a.epoch_loss != c.epoch_loss);  // seed actually matters
    }
}

TEST_CASE("train_one: loss falls on well-separated data") {
    BagDataset train = feature_ds(16, 6, 8, 8.0, 120, 2);
    BagDataset val = feature_ds(8, 6, 8, 8.0, 121, 2);
    for (Pooling p : {Pooling::certainty, Pooling::mean}) {
        ExperimentConfig cfg = small_cfg(p, 8);
        cfg.epochs = 8;
        cfg.lr = 0.02;
        RunRecord rec = train_one(cfg, train, val, 3);
        REQUIRE(rec.epoch_loss.size() == 8u);
        CAPTURE(to_string(p));
        CHECK(!rec.failed);
        CHECK(rec.epoch_loss.back() < rec.epoch_loss.front());
    }
}

TEST_CASE("train_one: instance sampling caps the per-step bag size") {
    BagDataset train = feature_ds(6, 20, 8, 4.0, 130, 3);
    BagDataset val = feature_ds(6, 20, 8, 4.0, 131, 3);
    ExperimentConfig cfg = small_cfg(Pooling::certainty, 8);
    cfg.bag_sample_n = 5;
    cfg.epochs = 2;
    RunRecord rec = train_one(cfg, train, val, 2);
    CHECK(!rec.failed);
    CHECK(rec.val_history.back().auc >= 0.0);

    // sampling changes the trajectory relative to whole bags
    ExperimentConfig whole = cfg;
    whole.bag_sample_n.reset();
    RunRecord rec2 = train_one(whole, train, val, 2);
    CHECK(rec.epoch_loss != rec2.epoch_loss);
}

TEST_CASE("train_one: mismatched data and model dims are refused") {
    BagDataset train = feature_ds(4, 5, 8, 3.0, 140);
    BagDataset val = feature_ds(4, 5, 8, 3.0, 141);
    ExperimentConfig cfg = small_cfg(Pooling::max, 12);  // model expects 12
    CHECK_THROWS_AS(train_one(cfg, train, val, 1), DimError);
}

TEST_CASE("evaluate: deterministic, ordered, and in range") {
    BagDataset test = feature_ds(10, 6, 8, 3.0, 150);
    ExperimentConfig cfg = small_cfg(Pooling::certainty, 8);
    RngStream init(9);
    ModelState model = init_model(cfg.model, init);

    EvalResult a = evaluate(model, test, Pooling::certainty, 4, 1e-6, 5);
    EvalResult b = evaluate(model, test, Pooling::certainty, 4, 1e-6, 5);
    REQUIRE(a.bags.size() == test.bags.size());
    CHECK(a.bag_scores.scores == b.bag_scores.scores);
    for (size_t i = 0; i < a.bags.size(); ++i) {
        CHECK(a.bags[i].bag_id == test.bags[i].bag_id);
        CHECK(a.bags[i].label == test.bags[i].label);
        CHECK(a.bags[i].z > 0.0);
        CHECK(a.bags[i].z < 1.0);
        REQUIRE(a.bags[i].selected_index.has_value());
        CHECK(*a.bags[i].selected_index < test.bags[i].size());
        CHECK(a.bag_scores.scores[i] == a.bags[i].z);
        CHECK(a.bag_scores.labels[i] == test.bags[i].label);
        CHECK(a.instance_h[i].size() == test.bags[i].size());
    }
    CHECK(a.skipped_empty == 0u);

    // mean pooling reports no selected instance
    EvalResult m = evaluate(model, test, Pooling::mean, 4, 1e-6, 5);
    for (const BagEval& be : m.bags) CHECK(!be.selected_index.has_value());
}

TEST_CASE("evaluate: dropout-free certainty equals max pooling exactly") {
    BagDataset test = feature_ds(8, 7, 8, 3.0, 160);
    ModelSpec spec = feature_model(8);
    spec.dropout_p = 0.0;
    RngStream init(10);
    ModelState model = init_model(spec, init);

    EvalResult cert = evaluate(model, test, Pooling::certainty, 4, 1e-6, 5);
    EvalResult maxp = evaluate(model, test, Pooling::max, 4, 1e-6, 6);  // seed is irrelevant here
    REQUIRE(cert.bags.size() == maxp.bags.size());
    for (size_t i = 0; i < cert.bags.size(); ++i) {
        CHECK(cert.bags[i].z == maxp.bags[i].z);
        CHECK(cert.bags[i].selected_index == maxp.bags[i].selected_index);
    }
}

TEST_CASE("run_sweep: report structure, ranking, and headline arithmetic") {
    BagDataset train = feature_ds(10, 6, 8, 5.0, 170, 2);
    BagDataset val = feature_ds(8, 6, 8, 5.0, 171, 2);
    BagDataset test = feature_ds(8, 6, 8, 5.0, 172, 2);
    ExperimentConfig cfg = small_cfg(Pooling::max, 8);
    cfg.epochs = 4;
    cfg.seeds = {3, 1, 2};
    cfg.top_k = 2;

    ExperimentReport rep = run_sweep(cfg, train, val, test);
    REQUIRE(rep.runs.size() == 3u);
    CHECK(rep.runs[0].seed == 3u);  // seed order preserved in runs
    CHECK(rep.runs[1].seed == 1u);
    CHECK(rep.runs[2].seed == 2u);

    REQUIRE(rep.ranked.size() == 3u);
    for (size_t i = 1; i < rep.ranked.size(); ++i)
        CHECK(rep.runs[rep.ranked[i - 1]].best_val_auc >= rep.runs[rep.ranked[i]].best_val_auc);

    REQUIRE(rep.selected.size() == 2u);
    CHECK(rep.selected[0] == rep.ranked[0]);
    CHECK(rep.selected[1] == rep.ranked[1]);
    CHECK(rep.headline.n_selected == 2u);

    double mean = 0.0;
    for (size_t idx : rep.selected) mean += rep.runs[idx].test_bag_auc;
    mean /= 2.0;
    CHECK(rep.headline.bag_auc_mean == doctest::Approx(mean).epsilon(1e-15));
    double var = 0.0;
    for (size_t idx : rep.selected) {
        double d = rep.runs[idx].test_bag_auc - mean;
        var += d * d;
    }
    CHECK(rep.headline.bag_auc_std == doctest::Approx(std::sqrt(var / 2.0)).epsilon(1e-12));

    for (const RunRecord& r : rep.runs) {
        CHECK(!r.failed);
        CHECK(r.test_bag_auc >= 0.0);
        CHECK(r.test_bag_auc <= 1.0);
        CHECK(r.wall_s > 0.0);
    }
}

TEST_CASE("run_sweep: parallel execution is bit-identical to serial") {
    BagDataset train = feature_ds(8, 5, 8, 4.0, 180);
    BagDataset val = feature_ds(6, 5, 8, 4.0, 181);
    BagDataset test = feature_ds(6, 5, 8, 4.0, 182);
    ExperimentConfig cfg = small_cfg(Pooling::certainty, 8);
    cfg.seeds = {1, 2, 3, 4};
    cfg.top_k = 2;

    ExperimentReport serial = run_sweep(cfg, train, val, test, 1);
    ExperimentReport parallel = run_sweep(cfg, train, val, test, 2);
    REQUIRE(serial.runs.size() == parallel.runs.size());
    for (size_t i = 0; i < serial.runs.size(); ++i) {
        CHECK(serial.runs[i].best_val_auc == parallel.runs[i].best_val_auc);
        CHECK(serial.runs[i].test_bag_auc == parallel.runs[i].test_bag_auc);
        CHECK(serial.runs[i].epoch_loss == parallel.runs[i].epoch_loss);
    }
    CHECK(serial.ranked == parallel.ranked);
    CHECK(serial.headline.bag_auc_mean == parallel.headline.bag_auc_mean);
}

TEST_CASE("run_sweep: a single-class validation set fails every seed") {
    BagDataset train = feature_ds(6, 5, 8, 3.0, 190);
    BagDataset test = feature_ds(6, 5, 8, 3.0, 191);
    BagGenConfig gen;
    gen.n_bags = 5;
    gen.bag_size = 5;
    gen.positive_fraction = 0.0;  // all-negative: bag AUC undefined
    RngStream rng(192);
    BagDataset val = generate_feature_bags(gen, 8, 3.0, 99, rng);

    ExperimentConfig cfg = small_cfg(Pooling::max, 8);
    cfg.seeds = {1, 2};
    CHECK_THROWS_AS(run_sweep(cfg, train, val, test), SweepError);
}

TEST_CASE("run_sweep: headline ignores test scores of non-selected runs") {
    BagDataset train = feature_ds(10, 6, 8, 5.0, 200, 2);
    BagDataset val = feature_ds(8, 6, 8, 5.0, 201, 2);
    BagDataset test = feature_ds(8, 6, 8, 5.0, 202, 2);
    ExperimentConfig cfg = small_cfg(Pooling::mean, 8);
    cfg.epochs = 4;
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.top_k = 2;
    ExperimentReport rep = run_sweep(cfg, train, val, test);

    // recompute the headline from the selected runs only
    std::vector<double> sel;
    for (size_t idx : rep.selected) sel.push_back(rep.runs[idx].test_bag_auc);
    double mean = (sel[0] + sel[1]) / 2.0;
    CHECK(rep.headline.bag_auc_mean == doctest::Approx(mean).epsilon(1e-15));
    // and the selected runs are exactly the top validation scorers
    for (size_t idx : rep.ranked)
        if (std::find(rep.selected.begin(), rep.selected.end(), idx) == rep.selected.end())
            CHECK(rep.runs[idx].best_val_auc <=
                  std::min(rep.runs[rep.selected[0]].best_val_auc,
                           rep.runs[rep.selected[1]].best_val_auc));
}

TEST_CASE("export_rankings: per-bag descending h with 1-based ranks") {
    EvalResult ev;
    ev.bags.push_back({"bag-a", 1, 0.9, std::nullopt});
    ev.bags.push_back({"bag-b", 0, 0.2, std::nullopt});
    ev.instance_h.push_back({0.1, 0.8, 0.5, 0.3});
    ev.instance_h.push_back({0.6, 0.4});
    ev.instance_labels.push_back(std::vector<uint8_t>{0, 1, 0, 0});
    ev.instance_labels.push_back(std::nullopt);

    std::vector<RankingRow> rows = export_rankings(ev, 3);
    REQUIRE(rows.size() == 5u);  // 3 from bag-a, 2 from bag-b

    CHECK(rows[0].bag_id == "bag-a");
    CHECK(rows[0].rank == 1u);
    CHECK(rows[0].instance_index == 1u);
    CHECK(rows[0].h == 0.8);
    CHECK(rows[0].instance_label == 1);

    CHECK(rows[1].rank == 2u);
    CHECK(rows[1].instance_index == 2u);
    CHECK(rows[1].h == 0.5);
    CHECK(rows[1].instance_label == 0);

    CHECK(rows[2].rank == 3u);
    CHECK(rows[2].instance_index == 3u);

    CHECK(rows[3].bag_id == "bag-b");
    CHECK(rows[3].rank == 1u);
    CHECK(rows[3].instance_index == 0u);
    CHECK(rows[3].h == 0.6);
    CHECK(!rows[3].instance_label.has_value());
    CHECK(rows[4].rank == 2u);
    CHECK(rows[4].instance_index == 1u);
}
