#include "milc/pooling.hpp"

#include <cmath>
#include <string>

namespace milc {

namespace {

void check_nonempty(const Tensor& h) {
    if (h.size() == 0) throw DataError("pooling over an empty bag");
}

}  // namespace

PoolResult max_pool(const Tensor& h) {
    check_nonempty(h);
    size_t arg = 0;
    for (size_t i = 1; i < h.size(); ++i)
        if (h.values[i] > h.values[arg]) arg = i;
    PoolResult r;
    r.z = h.values[arg];
    r.selected_index = arg;
    return r;
}

PoolResult mean_pool(const Tensor& h) {
    check_nonempty(h);
    double s = 0.0;
    for (double v : h.values) s += v;
    PoolResult r;
    r.z = s / double(h.size());
    return r;
}

PoolResult attention_pool(const ModelState& s, const Tensor& embeddings, const Tensor& a,
                          DropoutMode mode, RngStream& rng) {
    size_t K = embeddings.rows();
    if (K == 0) throw DataError("pooling over an empty bag");
    if (a.size() != K)
        throw DimError("attention weights length " + std::to_string(a.size()) +
                       " does not match bag size " + std::to_string(K));
    double sum = 0.0;
    for (double v : a.values) sum += v;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError("attention weights sum to " + std::to_string(sum) + ", expected 1");

    size_t e = embeddings.cols();
    Tensor pooled = Tensor::zeros({1, e});
    for (size_t k = 0; k < K; ++k)
        for (size_t j = 0; j < e; ++j) pooled.values[j] += a.values[k] * embeddings(k, j);

    Tensor z = head_plain(s, pooled, mode, rng);
    PoolResult r;
    r.z = z.values[0];
    r.weights = a.values;
    return r;
}

size_t certainty_select(const std::vector<double>& h, const CertaintyVector& c) {
    if (h.size() != c.size())
        throw DimError("certainty length " + std::to_string(c.size()) +
                       " does not match prediction length " + std::to_string(h.size()));
    size_t arg = 0;
    double best = c.c[0] * h[0];
    for (size_t i = 1; i < h.size(); ++i) {
        double score = c.c[i] * h[i];
        if (score > best) {
            best = score;
            arg = i;
        }
    }
    return arg;
}

PoolResult certainty_pool(const Tensor& h, const CertaintyVector& c) {
    check_nonempty(h);
    size_t arg = certainty_select(h.values, c);
    PoolResult r;
    r.z = h.values[arg];
    r.selected_index = arg;
    std::vector<double> scores(h.size());
    for (size_t i = 0; i < h.size(); ++i) scores[i] = c.c[i] * h.values[i];
    r.weights = std::move(scores);
    return r;
}

MCSampleMatrix mc_dropout_predict(const ModelState& s, const Tensor& instances, size_t T,
                                  RngStream& rng) {
    if (T < 2) throw ParamError("mc_dropout_predict needs T >= 2, got " + std::to_string(T));
    size_t K = instances.rows();
    MCSampleMatrix X;
    X.T = T;
    X.K = K;
    X.samples.resize(T * K);
    for (size_t t = 0; t < T; ++t) {
        RngStream pass = rng.derive(t);
        InstanceForward f = instance_forward(s, instances, DropoutMode::mc, pass);
        for (size_t k = 0; k < K; ++k) X.samples[t * K + k] = f.h.values[k];
    }
    return X;
}

CertaintyVector certainty(const MCSampleMatrix& X, double eps) {
    if (X.T < 2) throw ParamError("certainty needs T >= 2, got " + std::to_string(X.T));
    CertaintyVector out;
    out.c.resize(X.K);
    for (size_t k = 0; k < X.K; ++k) {
        // Welford, then population variance (divide by T)
        double mean = 0.0, m2 = 0.0;
        for (size_t t = 0; t < X.T; ++t) {
            double x = X.at(t, k);
            double d = x - mean;
            mean += d / double(t + 1);
            m2 += d * (x - mean);
        }
        double sigma = std::sqrt(m2 / double(X.T));
        out.c[k] = 1.0 / (sigma + eps);
    }
    return out;
}

// --- graph path -------------------------------------------------------------

ag::Graph::Id max_pool_graph(ag::Graph& g, ag::Graph::Id h_flat, size_t* selected) {
    check_nonempty(g.value(h_flat));
    ag::Graph::Id z = g.max(h_flat);
    if (selected) {
        const Tensor& h = g.value(h_flat);
        size_t arg = 0;
        for (size_t i = 1; i < h.size(); ++i)
            if (h.values[i] > h.values[arg]) arg = i;
        *selected = arg;
    }
    return z;
}

ag::Graph::Id mean_pool_graph(ag::Graph& g, ag::Graph::Id h_flat) {
    check_nonempty(g.value(h_flat));
    return g.mean(h_flat);
}

ag::Graph::Id certainty_pool_graph(ag::Graph& g, ag::Graph::Id h_flat, const CertaintyVector& c,
                                   size_t* selected) {
    const Tensor& h = g.value(h_flat);
    check_nonempty(h);
    size_t arg = certainty_select(h.values, c);
    if (selected) *selected = arg;
    return g.select(h_flat, arg);
}

ag::Graph::Id attention_pool_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E, DropoutMode mode,
                                   RngStream& rng) {
    size_t K = g.value(E).rows();
    ag::Graph::Id a = attention_graph(g, s, E);             // [K]
    ag::Graph::Id arow = g.reshape(a, {1, K});
    ag::Graph::Id pooled = g.matmul(arow, E);               // [1 x e]
    ag::Graph::Id h = head_graph(g, s, pooled, mode, rng);  // [1 x 1]
    return g.reshape(h, {1});
}

}  // namespace milc
