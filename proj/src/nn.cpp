#include "milc/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint and bagpack formats assume a little-endian host");

namespace milc {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using Map = Eigen::Map<EMat>;

MapC emap(const Tensor& t) {
    return MapC(t.values.data(), long(t.rows()), long(t.cols()));
}

}  // namespace

void ModelSpec::validate() const {
    if (embedder_dims.empty()) throw ParamError("embedder_dims must not be empty");
    if (head_dims.empty()) throw ParamError("head_dims must not be empty");
    for (size_t d : embedder_dims)
        if (d < 1) throw ParamError("embedder widths must be >= 1");
    for (size_t d : head_dims)
        if (d < 1) throw ParamError("head widths must be >= 1");
    if (head_dims.back() != 1) throw ParamError("head output width must be 1");
    if (attention_hidden < 1) throw ParamError("attention_hidden must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
        throw ParamError("dropout_p must lie in [0,1), got " + std::to_string(dropout_p));
    if (activation != "relu") throw ParamError("unsupported activation: " + activation);
}

size_t ModelSpec::param_count() const {
    size_t n = 0;
    for (size_t i = 1; i < embedder_dims.size(); ++i)
        n += embedder_dims[i - 1] * embedder_dims[i] + embedder_dims[i];
    size_t prev = embed_dim();
    for (size_t w : head_dims) {
        n += prev * w + w;
        prev = w;
    }
    n += embed_dim() * attention_hidden + attention_hidden;
    return n;
}

std::vector<Tensor*> ModelState::parameters() {
    std::vector<Tensor*> ps;
    for (auto& l : embedder) {
        ps.push_back(&l.W);
        ps.push_back(&l.b);
    }
    for (auto& l : head) {
        ps.push_back(&l.W);
        ps.push_back(&l.b);
    }
    ps.push_back(&attn_V);
    ps.push_back(&attn_w);
    return ps;
}

std::vector<const Tensor*> ModelState::parameters() const {
    std::vector<const Tensor*> ps;
    for (auto& l : embedder) {
        ps.push_back(&l.W);
        ps.push_back(&l.b);
    }
    for (auto& l : head) {
        ps.push_back(&l.W);
        ps.push_back(&l.b);
    }
    ps.push_back(&attn_V);
    ps.push_back(&attn_w);
    return ps;
}

void ModelState::zero_grads() {
    for (Tensor* p : parameters()) p->zero_grad();
}

size_t ModelState::param_count() const {
    size_t n = 0;
    for (const Tensor* p : parameters()) n += p->size();
    return n;
}

namespace {

Tensor xavier(size_t fan_in, size_t fan_out, RngStream& rng) {
    double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    Tensor W = Tensor::zeros({fan_in, fan_out});
    for (auto& v : W.values) v = rng.uniform(-limit, limit);
    return W;
}

LayerParams make_layer(size_t in, size_t out, RngStream& rng) {
    LayerParams l;
    l.W = xavier(in, out, rng);
    l.b = Tensor::zeros({out});
    l.W.set_requires_grad(true);
    l.b.set_requires_grad(true);
    return l;
}

}  // namespace

ModelState init_model(const ModelSpec& spec, RngStream& rng) {
    spec.validate();
    ModelState s;
    s.spec = spec;
    for (size_t i = 1; i < spec.embedder_dims.size(); ++i)
        s.embedder.push_back(make_layer(spec.embedder_dims[i - 1], spec.embedder_dims[i], rng));
    size_t prev = spec.embed_dim();
    for (size_t w : spec.head_dims) {
        s.head.push_back(make_layer(prev, w, rng));
        prev = w;
    }
    s.attn_V = xavier(spec.embed_dim(), spec.attention_hidden, rng);
    s.attn_w = xavier(spec.attention_hidden, 1, rng);
    s.attn_V.set_requires_grad(true);
    s.attn_w.set_requires_grad(true);
    return s;
}

// --- graph path -------------------------------------------------------------

ag::Graph::Id embed_graph(ag::Graph& g, ModelState& s, ag::Graph::Id X, DropoutMode mode,
                          RngStream& rng) {
    ag::Graph::Id cur = X;
    for (auto& l : s.embedder) {
        cur = g.add_row(g.matmul(cur, g.param(l.W)), g.param(l.b));
        cur = g.relu(cur);
        cur = g.dropout(cur, s.spec.dropout_p, mode, rng);
    }
    return cur;
}

ag::Graph::Id head_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E, DropoutMode mode,
                         RngStream& rng) {
    ag::Graph::Id cur = E;
    for (size_t i = 0; i + 1 < s.head.size(); ++i) {
        auto& l = s.head[i];
        cur = g.add_row(g.matmul(cur, g.param(l.W)), g.param(l.b));
        cur = g.relu(cur);
        cur = g.dropout(cur, s.spec.dropout_p, mode, rng);
    }
    auto& out = s.head.back();
    cur = g.add_row(g.matmul(cur, g.param(out.W)), g.param(out.b));
    return g.sigmoid(cur);
}

ag::Graph::Id attention_graph(ag::Graph& g, ModelState& s, ag::Graph::Id E) {
    size_t K = g.value(E).rows();
    if (K == 0) throw DataError("attention over an empty bag");
    auto scores = g.matmul(g.tanh(g.matmul(E, g.param(s.attn_V))), g.param(s.attn_w));  // [K x 1]
    return g.softmax(g.reshape(scores, {K}));
}

// --- plain path -------------------------------------------------------------

namespace {

// linear + relu + dropout, mirroring the graph path's rng consumption order
Tensor dense_forward(const Tensor& X, const LayerParams& l, double p, DropoutMode mode,
                     RngStream& rng, bool relu_dropout) {
    size_t r = X.rows(), c = l.W.cols();
    Tensor Y = Tensor::zeros({r, c});
    Map(Y.values.data(), long(r), long(c)) = emap(X) * emap(l.W);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) Y.values[i * c + j] += l.b.values[j];
    if (!relu_dropout) return Y;
    for (auto& v : Y.values) v = v > 0.0 ? v : 0.0;
    if (mode != DropoutMode::infer && p > 0.0) {
        std::vector<double> mask(Y.size());
        fill_dropout_mask(mask, p, rng);
        for (size_t i = 0; i < Y.size(); ++i) Y.values[i] *= mask[i];
    }
    return Y;
}

}  // namespace

Tensor embed_plain(const ModelState& s, const Tensor& X, DropoutMode mode, RngStream& rng) {
    if (X.rank() != 2 || X.cols() != s.spec.input_dim())
        throw DimError("instance width " + shape_str(X.shape) + " does not match embedder input " +
                       std::to_string(s.spec.input_dim()));
    Tensor cur = X;
    for (auto& l : s.embedder) cur = dense_forward(cur, l, s.spec.dropout_p, mode, rng, true);
    return cur;
}

Tensor head_plain(const ModelState& s, const Tensor& E, DropoutMode mode, RngStream& rng) {
    if (E.rank() != 2 || E.cols() != s.spec.embed_dim())
        throw DimError("embedding width " + shape_str(E.shape) + " does not match head input " +
                       std::to_string(s.spec.embed_dim()));
    Tensor cur = E;
    for (size_t i = 0; i + 1 < s.head.size(); ++i)
        cur = dense_forward(cur, s.head[i], s.spec.dropout_p, mode, rng, true);
    cur = dense_forward(cur, s.head.back(), 0.0, mode, rng, false);
    Tensor h = Tensor::zeros({cur.rows()});
    for (size_t i = 0; i < cur.rows(); ++i) h.values[i] = sigmoid_stable(cur.values[i]);
    return h;
}

Tensor attention_plain(const ModelState& s, const Tensor& E) {
    size_t K = E.rows();
    if (K == 0) throw DataError("attention over an empty bag");
    size_t hidden = s.spec.attention_hidden;
    Tensor hid = Tensor::zeros({K, hidden});
    Map(hid.values.data(), long(K), long(hidden)) = emap(E) * emap(s.attn_V);
    for (auto& v : hid.values) v = std::tanh(v);
    Tensor scores = Tensor::zeros({K});
    Map(scores.values.data(), long(K), 1) = emap(hid) * emap(s.attn_w);
    double m = *std::max_element(scores.values.begin(), scores.values.end());
    double sum = 0.0;
    for (auto& v : scores.values) {
        v = std::exp(v - m);
        sum += v;
    }
    for (auto& v : scores.values) v /= sum;
    return scores;
}

InstanceForward instance_forward(const ModelState& s, const Tensor& instances, DropoutMode mode,
                                 RngStream& rng) {
    InstanceForward out;
    out.embeddings = embed_plain(s, instances, mode, rng);
    out.h = head_plain(s, out.embeddings, mode, rng);
    return out;
}

double bce_loss(double z, int label) {
    double zc = std::clamp(z, 1e-7, 1.0 - 1e-7);
    double y = double(label);
    return -(y * std::log(zc) + (1.0 - y) * std::log(1.0 - zc));
}

// --- optimizer --------------------------------------------------------------

void adam_step(AdamState& opt, const std::vector<Tensor*>& params) {
    if (opt.m.empty()) {
        opt.m.resize(params.size());
        opt.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            opt.m[i].assign(params[i]->size(), 0.0);
            opt.v[i].assign(params[i]->size(), 0.0);
        }
    }
    if (opt.m.size() != params.size()) throw DimError("adam state does not match parameter list");
    opt.t += 1;
    double bc1 = 1.0 - std::pow(opt.beta1, double(opt.t));
    double bc2 = 1.0 - std::pow(opt.beta2, double(opt.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (opt.m[i].size() != p.size()) throw DimError("adam moment size does not match parameter");
        for (size_t j = 0; j < p.size(); ++j) {
            double g = p.grad[j];
            opt.m[i][j] = opt.beta1 * opt.m[i][j] + (1.0 - opt.beta1) * g;
            opt.v[i][j] = opt.beta2 * opt.v[i][j] + (1.0 - opt.beta2) * g * g;
            double mhat = opt.m[i][j] / bc1;
            double vhat = opt.v[i][j] / bc2;
            p.values[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'C'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is, const char* what) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(std::string("checkpoint truncated reading ") + what);
    return v;
}

double read_f64(std::istream& is, const char* what) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError(std::string("checkpoint truncated reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        write_u32(os, uint32_t(state.spec.embedder_dims.size()));
        for (size_t d : state.spec.embedder_dims) write_u32(os, uint32_t(d));
        write_u32(os, uint32_t(state.spec.head_dims.size()));
        for (size_t d : state.spec.head_dims) write_u32(os, uint32_t(d));
        write_u32(os, uint32_t(state.spec.attention_hidden));
        write_f64(os, state.spec.dropout_p);
        write_u32(os, 0);  // activation id: relu
        for (const Tensor* p : state.parameters())
            for (double v : p->values) write_f64(os, v);
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    ModelSpec spec;
    uint32_t ne = read_u32(is, "embedder dim count");
    for (uint32_t i = 0; i < ne; ++i) spec.embedder_dims.push_back(read_u32(is, "embedder dim"));
    uint32_t nh = read_u32(is, "head dim count");
    for (uint32_t i = 0; i < nh; ++i) spec.head_dims.push_back(read_u32(is, "head dim"));
    spec.attention_hidden = read_u32(is, "attention_hidden");
    spec.dropout_p = read_f64(is, "dropout_p");
    uint32_t act = read_u32(is, "activation");
    if (act != 0) throw FormatError("unknown activation id " + std::to_string(act));
    spec.validate();

    RngStream dummy(0);
    ModelState state = init_model(spec, dummy);
    for (Tensor* p : state.parameters())
        for (double& v : p->values) v = read_f64(is, "parameter");
    // nothing may trail the parameter payload
    char extra;
    if (is.read(&extra, 1)) throw FormatError("trailing bytes after checkpoint payload in " + path);
    return state;
}

}  // namespace milc
