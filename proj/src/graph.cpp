#include "milc/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace milc {

double sigmoid_stable(double x) {
    double y;
    if (x >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-x));
    } else {
        double e = std::exp(x);
        y = e / (1.0 + e);
    }
    // keep outputs strictly inside (0,1) even at saturation
    if (y < 1e-15) y = 1e-15;
    if (y > 1.0 - 1e-15) y = 1.0 - 1e-15;
    return y;
}

namespace ag {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using Map = Eigen::Map<EMat>;

MapC emap(const Tensor& t) {
    return MapC(t.values.data(), long(t.rows()), long(t.cols()));
}

MapC emap_buf(const std::vector<double>& buf, size_t r, size_t c) {
    return MapC(buf.data(), long(r), long(c));
}

Map emap_mut(std::vector<double>& buf, size_t r, size_t c) {
    return Map(buf.data(), long(r), long(c));
}

void check_axis(const Tensor& t, int axis) {
    if (axis == -1) {
        if (t.size() == 0) throw ParamError("reduction over empty tensor");
        return;
    }
    if (t.rank() != 2 || axis < 0 || axis > 1)
        throw ParamError("reduction axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(t.shape));
}

}  // namespace

void Graph::check_open() const {
    if (consumed_) throw ContractError("graph already consumed by backward()");
}

Graph::Id Graph::push(Node&& n) {
    check_open();
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
}

Graph::Id Graph::input(const Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.value = t;
    n.value.requires_grad = false;
    n.value.grad.clear();
    return push(std::move(n));
}

Graph::Id Graph::param(Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.value = t;
    n.bound = &t;
    return push(std::move(n));
}

Graph::Id Graph::matmul(Id ia, Id ib) {
    const Tensor& A = at(ia).value;
    const Tensor& B = at(ib).value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
        throw DimError("matmul shape mismatch: " + shape_str(A.shape) + " vs " +
                       shape_str(B.shape));
    Node n;
    n.op = Op::matmul;
    n.a = ia;
    n.b = ib;
    n.value = Tensor::zeros({A.rows(), B.cols()});
    emap_mut(n.value.values, A.rows(), B.cols()) = emap(A) * emap(B);
    return push(std::move(n));
}

Graph::Id Graph::add_row(Id ix, Id ibias) {
    const Tensor& X = at(ix).value;
    const Tensor& b = at(ibias).value;
    if (X.rank() != 2 || b.size() != X.cols())
        throw DimError("add_row shape mismatch: " + shape_str(X.shape) + " vs " +
                       shape_str(b.shape));
    Node n;
    n.op = Op::add_row;
    n.a = ix;
    n.b = ibias;
    n.value = X;
    size_t r = X.rows(), c = X.cols();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) n.value.values[i * c + j] += b.values[j];
    return push(std::move(n));
}

Graph::Id Graph::relu(Id ix) {
    Node n;
    n.op = Op::relu;
    n.a = ix;
    n.value = at(ix).value;
    for (auto& v : n.value.values) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

Graph::Id Graph::sigmoid(Id ix) {
    Node n;
    n.op = Op::sigmoid;
    n.a = ix;
    n.value = at(ix).value;
    for (auto& v : n.value.values) v = sigmoid_stable(v);
    return push(std::move(n));
}

Graph::Id Graph::tanh(Id ix) {
    Node n;
    n.op = Op::tanh_op;
    n.a = ix;
    n.value = at(ix).value;
    for (auto& v : n.value.values) v = std::tanh(v);
    return push(std::move(n));
}

Graph::Id Graph::dropout(Id ix, double p, DropoutMode mode, RngStream& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw ParamError("dropout probability must satisfy 0 <= p < 1, got " + std::to_string(p));
    Node n;
    n.op = Op::dropout;
    n.a = ix;
    n.value = at(ix).value;
    if (mode != DropoutMode::infer && p > 0.0) {
        n.saved.resize(n.value.size());
        fill_dropout_mask(n.saved, p, rng);
        for (size_t i = 0; i < n.value.size(); ++i) n.value.values[i] *= n.saved[i];
    }
    // infer (or p == 0): identity, no rng draws
    return push(std::move(n));
}

Graph::Id Graph::sum(Id ix, int axis) {
    const Tensor& X = at(ix).value;
    check_axis(X, axis);
    Node n;
    n.op = Op::sum;
    n.a = ix;
    n.axis = axis;
    if (axis == -1) {
        double s = 0.0;
        for (double v : X.values) s += v;
        n.value = Tensor::scalar(s);
    } else {
        size_t r = X.rows(), c = X.cols();
        size_t out = axis == 0 ? c : r;
        n.value = Tensor::zeros({out});
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) n.value.values[axis == 0 ? j : i] += X(i, j);
    }
    return push(std::move(n));
}

Graph::Id Graph::mean(Id ix, int axis) {
    const Tensor& X = at(ix).value;
    check_axis(X, axis);
    Node n;
    n.op = Op::mean;
    n.a = ix;
    n.axis = axis;
    if (axis == -1) {
        double s = 0.0;
        for (double v : X.values) s += v;
        n.value = Tensor::scalar(s / double(X.size()));
    } else {
        size_t r = X.rows(), c = X.cols();
        size_t out = axis == 0 ? c : r;
        double extent = double(axis == 0 ? r : c);
        n.value = Tensor::zeros({out});
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) n.value.values[axis == 0 ? j : i] += X(i, j);
        for (auto& v : n.value.values) v /= extent;
    }
    return push(std::move(n));
}

Graph::Id Graph::max(Id ix, int axis) {
    const Tensor& X = at(ix).value;
    check_axis(X, axis);
    Node n;
    n.op = Op::max;
    n.a = ix;
    n.axis = axis;
    if (axis == -1) {
        size_t arg = 0;
        for (size_t i = 1; i < X.size(); ++i)
            if (X.values[i] > X.values[arg]) arg = i;  // strict: first index wins ties
        n.value = Tensor::scalar(X.values[arg]);
        n.saved = {double(arg)};
    } else {
        size_t r = X.rows(), c = X.cols();
        size_t out = axis == 0 ? c : r;
        n.value = Tensor::zeros({out});
        n.saved.resize(out);
        for (size_t k = 0; k < out; ++k) {
            size_t extent = axis == 0 ? r : c;
            size_t arg = 0;
            double best = axis == 0 ? X(0, k) : X(k, 0);
            for (size_t i = 1; i < extent; ++i) {
                double v = axis == 0 ? X(i, k) : X(k, i);
                if (v > best) {
                    best = v;
                    arg = i;
                }
            }
            n.value.values[k] = best;
            n.saved[k] = double(arg);
        }
    }
    return push(std::move(n));
}

Graph::Id Graph::softmax(Id ix) {
    const Tensor& X = at(ix).value;
    if (X.size() == 0) throw ParamError("softmax over empty tensor");
    Node n;
    n.op = Op::softmax;
    n.a = ix;
    n.value = X;
    double m = *std::max_element(X.values.begin(), X.values.end());
    double s = 0.0;
    for (auto& v : n.value.values) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : n.value.values) v /= s;
    return push(std::move(n));
}

Graph::Id Graph::reshape(Id ix, std::vector<size_t> shape) {
    const Tensor& X = at(ix).value;
    if (shape_product(shape) != X.size())
        throw DimError("reshape " + shape_str(X.shape) + " -> " + shape_str(shape));
    Node n;
    n.op = Op::reshape;
    n.a = ix;
    n.value = Tensor(std::move(shape), X.values);
    return push(std::move(n));
}

Graph::Id Graph::select(Id ix, size_t flat_index) {
    const Tensor& X = at(ix).value;
    if (flat_index >= X.size())
        throw DimError("select index " + std::to_string(flat_index) + " out of range for " +
                       shape_str(X.shape));
    Node n;
    n.op = Op::select;
    n.a = ix;
    n.value = Tensor::scalar(X.values[flat_index]);
    n.saved = {double(flat_index)};
    return push(std::move(n));
}

Graph::Id Graph::bce(Id iz, double target) {
    const Tensor& Z = at(iz).value;
    if (Z.size() != 1) throw ContractError("bce expects a scalar prediction, got " + shape_str(Z.shape));
    double zc = std::clamp(Z.values[0], 1e-7, 1.0 - 1e-7);
    double loss = -(target * std::log(zc) + (1.0 - target) * std::log(1.0 - zc));
    Node n;
    n.op = Op::bce;
    n.a = iz;
    n.value = Tensor::scalar(loss);
    n.saved = {target, zc};
    return push(std::move(n));
}

void Graph::backward(Id loss) {
    check_open();
    if (nodes_.empty()) throw ContractError("backward on empty graph");
    if (loss < 0 || size_t(loss) >= nodes_.size()) throw ContractError("backward on unknown node");
    if (at(loss).value.size() != 1)
        throw ContractError("backward needs a scalar loss, got " + shape_str(at(loss).value.shape));
    consumed_ = true;

    for (auto& n : nodes_) n.adj.assign(n.value.size(), 0.0);
    at(loss).adj[0] = 1.0;

    for (size_t idx = nodes_.size(); idx-- > 0;) {
        Node& n = nodes_[idx];
        bool any = false;
        for (double g : n.adj)
            if (g != 0.0) {
                any = true;
                break;
            }
        if (!any) continue;

        switch (n.op) {
            case Op::leaf:
                if (n.bound && n.bound->requires_grad) {
                    for (size_t i = 0; i < n.adj.size(); ++i) n.bound->grad[i] += n.adj[i];
                }
                break;
            case Op::matmul: {
                Node& A = at(n.a);
                Node& B = at(n.b);
                size_t m = A.value.rows(), k = A.value.cols(), p = B.value.cols();
                auto G = emap_buf(n.adj, m, p);
                emap_mut(A.adj, m, k).noalias() += G * emap(B.value).transpose();
                emap_mut(B.adj, k, p).noalias() += emap(A.value).transpose() * G;
                break;
            }
            case Op::add_row: {
                Node& X = at(n.a);
                Node& b = at(n.b);
                size_t r = n.value.rows(), c = n.value.cols();
                for (size_t i = 0; i < r * c; ++i) X.adj[i] += n.adj[i];
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < c; ++j) b.adj[j] += n.adj[i * c + j];
                break;
            }
            case Op::relu: {
                Node& X = at(n.a);
                for (size_t i = 0; i < n.adj.size(); ++i)
                    if (X.value.values[i] > 0.0) X.adj[i] += n.adj[i];
                break;
            }
            case Op::sigmoid: {
                Node& X = at(n.a);
                for (size_t i = 0; i < n.adj.size(); ++i) {
                    double y = n.value.values[i];
                    X.adj[i] += n.adj[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::tanh_op: {
                Node& X = at(n.a);
                for (size_t i = 0; i < n.adj.size(); ++i) {
                    double y = n.value.values[i];
                    X.adj[i] += n.adj[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::dropout: {
                Node& X = at(n.a);
                if (n.saved.empty()) {
                    for (size_t i = 0; i < n.adj.size(); ++i) X.adj[i] += n.adj[i];
                } else {
                    for (size_t i = 0; i < n.adj.size(); ++i) X.adj[i] += n.adj[i] * n.saved[i];
                }
                break;
            }
            case Op::sum: {
                Node& X = at(n.a);
                if (n.axis == -1) {
                    double g = n.adj[0];
                    for (auto& a : X.adj) a += g;
                } else {
                    size_t r = X.value.rows(), c = X.value.cols();
                    for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < c; ++j)
                            X.adj[i * c + j] += n.adj[n.axis == 0 ? j : i];
                }
                break;
            }
            case Op::mean: {
                Node& X = at(n.a);
                if (n.axis == -1) {
                    double g = n.adj[0] / double(X.value.size());
                    for (auto& a : X.adj) a += g;
                } else {
                    size_t r = X.value.rows(), c = X.value.cols();
                    double extent = double(n.axis == 0 ? r : c);
                    for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < c; ++j)
                            X.adj[i * c + j] += n.adj[n.axis == 0 ? j : i] / extent;
                }
                break;
            }
            case Op::max: {
                Node& X = at(n.a);
                if (n.axis == -1) {
                    X.adj[size_t(n.saved[0])] += n.adj[0];
                } else {
                    size_t c = X.value.cols();
                    for (size_t k = 0; k < n.adj.size(); ++k) {
                        size_t arg = size_t(n.saved[k]);
                        size_t flat = n.axis == 0 ? arg * c + k : k * c + arg;
                        X.adj[flat] += n.adj[k];
                    }
                }
                break;
            }
            case Op::softmax: {
                Node& X = at(n.a);
                double dot = 0.0;
                for (size_t i = 0; i < n.adj.size(); ++i) dot += n.adj[i] * n.value.values[i];
                for (size_t i = 0; i < n.adj.size(); ++i)
                    X.adj[i] += n.value.values[i] * (n.adj[i] - dot);
                break;
            }
            case Op::reshape: {
                Node& X = at(n.a);
                for (size_t i = 0; i < n.adj.size(); ++i) X.adj[i] += n.adj[i];
                break;
            }
            case Op::select: {
                at(n.a).adj[size_t(n.saved[0])] += n.adj[0];
                break;
            }
            case Op::bce: {
                double y = n.saved[0], zc = n.saved[1];
                at(n.a).adj[0] += n.adj[0] * (-y / zc + (1.0 - y) / (1.0 - zc));
                break;
            }
        }
    }
}

}  // namespace ag
}  // namespace milc
