#pragma once

#include <string>
#include <vector>

#include "milc/graph.hpp"
#include "milc/rng.hpp"
#include "milc/tensor.hpp"

namespace milc {

/// Architecture description. embedder_dims[0] is the input width and the
/// last entry is the embedding width; a single-entry list means the embedder
/// is the identity and instances are used as embeddings directly. head_dims
/// are the classifier widths and must end in 1; hidden head layers get
/// relu + dropout, the final layer a sigmoid.
struct ModelSpec {
    std::vector<size_t> embedder_dims;
    std::vector<size_t> head_dims;
    size_t attention_hidden = 64;
    double dropout_p = 0.5;
    std::string activation = "relu";

    void validate() const;
    size_t input_dim() const { return embedder_dims.front(); }
    size_t embed_dim() const { return embedder_dims.back(); }
    size_t param_count() const;
    bool operator==(const ModelSpec&) const = default;
};

struct LayerParams {
    Tensor W;  // [in x out]
    Tensor b;  // [out]
};

struct ModelState {
    ModelSpec spec;
    std::vector<LayerParams> embedder;
    std::vector<LayerParams> head;
    Tensor attn_V;  // [embed x attention_hidden]
    Tensor attn_w;  // [attention_hidden x 1]

    std::vector<Tensor*> parameters();  // declaration order, stable
    std::vector<const Tensor*> parameters() const;
    void zero_grads();
    size_t param_count() const;
};

/// Xavier-uniform weights, zero biases; deterministic for a given stream.
ModelState init_model(const ModelSpec& spec, RngStream& rng);

// --- graph (gradient-recording) path ---------------------------------------

ag::Graph::Id embed_graph(ag::Graph& g, ModelState& s, ag::Graph::Id X, DropoutMode mode,
                          RngStream& rng);
// sigmoid instance predictions, [n x 1]
ag::Graph::Id head_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E, DropoutMode mode,
                         RngStream& rng);
// softmax attention weights over rows of E, [K]
ag::Graph::Id attention_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E);

// --- plain (no-tape) path ---------------------------------------------------
// Bit-identical to the graph path for the same mode and rng stream.

Tensor embed_plain(const ModelState& s, const Tensor& X, DropoutMode mode, RngStream& rng);
Tensor head_plain(const ModelState& s, const Tensor& E, DropoutMode mode,
                  RngStream& rng);  // [n] sigmoid outputs
Tensor attention_plain(const ModelState& s, const Tensor& E);  // [K] softmax weights

struct InstanceForward {
    Tensor embeddings;  // [K x e]
    Tensor h;           // [K]
};

/// Embedder + head applied per instance with shared weights.
InstanceForward instance_forward(const ModelState& s, const Tensor& instances, DropoutMode mode,
                                 RngStream& rng);

/// Bag-level binary cross-entropy with the prediction clamped to
/// [1e-7, 1-1e-7].
double bce_loss(double z, int label);

// --- optimizer --------------------------------------------------------------

struct AdamState {
    double lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    size_t t = 0;
    std::vector<std::vector<double>> m, v;

    explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// Bias-corrected Adam update over params, consuming their grad fields.
void adam_step(AdamState& opt, const std::vector<Tensor*>& params);

// --- checkpoints ------------------------------------------------------------
// Binary: magic "MILC", u32 version, serialized spec, then little-endian
// float64 per parameter tensor in declaration order.

void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

}  // namespace milc
