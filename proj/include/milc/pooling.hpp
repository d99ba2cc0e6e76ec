#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "milc/graph.hpp"
#include "milc/nn.hpp"
#include "milc/tensor.hpp"

namespace milc {

/// T stochastic forward passes per instance: element (t,k) is the prediction
/// of instance k on pass t. Row-major T x K.
struct MCSampleMatrix {
    size_t T = 0;
    size_t K = 0;
    std::vector<double> samples;

    double at(size_t t, size_t k) const { return samples[t * K + k]; }
};

/// Per-instance certainty 1/(sigma_k + eps), always positive.
struct CertaintyVector {
    std::vector<double> c;
    size_t size() const { return c.size(); }
};

struct PoolResult {
    double z = 0.0;                               // bag prediction
    std::optional<size_t> selected_index;         // k* where the operator selects one instance
    std::optional<std::vector<double>> weights;   // attention a_k or certainty-weighted scores
};

// --- value path (evaluation) ------------------------------------------------

PoolResult max_pool(const Tensor& h);
PoolResult mean_pool(const Tensor& h);

/// z = head(sum_k a_k e_k). Requires sum(a) == 1 within 1e-9.
PoolResult attention_pool(const ModelState& s, const Tensor& embeddings, const Tensor& a,
                          DropoutMode mode, RngStream& rng);

/// k* = argmax_k c_k * h_k (ties to the lowest index); z = h_{k*}.
PoolResult certainty_pool(const Tensor& h, const CertaintyVector& c);

/// T no-gradient passes with dropout kept on; pass t draws from
/// rng.derive(t), so results are schedule-independent.
MCSampleMatrix mc_dropout_predict(const ModelState& s, const Tensor& instances, size_t T,
                                  RngStream& rng);

/// Population standard deviation per column, then c_k = 1/(sigma_k + eps).
CertaintyVector certainty(const MCSampleMatrix& X, double eps);

// --- graph path (training) --------------------------------------------------

ag::Graph::Id max_pool_graph(ag::Graph& g, ag::Graph::Id h_flat, size_t* selected = nullptr);
ag::Graph::Id mean_pool_graph(ag::Graph& g, ag::Graph::Id h_flat);

/// Selection index computed from c and the current (gradient-pass) h values;
/// gradient flows only through h_{k*}, certainty is a constant.
ag::Graph::Id certainty_pool_graph(ag::Graph& g, ag::Graph::Id h_flat, const CertaintyVector& c,
                                   size_t* selected = nullptr);

/// Attention weights from the state's attention net, pooled embedding through
/// the head; fully differentiable through weights and embeddings.
ag::Graph::Id attention_pool_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E, DropoutMode mode,
                                   RngStream& rng);

// Index of the certainty-weighted argmax; shared by both paths.
size_t certainty_select(const std::vector<double>& h, const CertaintyVector& c);

}  // namespace milc
