#include <doctest.h>

#include <cmath>

#include "milc/errors.hpp"
#include "milc/graph.hpp"
#include "oracles.hpp"

using milc::Tensor;
using milc::ag::Graph;

namespace {

Tensor param_matrix(size_t r, size_t c, std::vector<double> v) {
    Tensor t = Tensor::matrix(r, c, std::move(v));
    t.set_requires_grad(true);
    return t;
}

Tensor param_vec(std::vector<double> v) {
    Tensor t = Tensor::vec(std::move(v));
    t.set_requires_grad(true);
    return t;
}

}  // namespace

TEST_CASE("matmul: identity and 1x1 products") {
    Graph g;
    Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor v = Tensor::matrix(2, 1, {3, 4});
    Graph::Id out = g.matmul(g.input(I), g.input(v));
    CHECK(g.value(out).values == std::vector<double>{3, 4});

    Graph g2;
    Tensor a = Tensor::matrix(1, 1, {2});
    Tensor b = Tensor::matrix(1, 1, {5});
    CHECK(g2.value(g2.matmul(g2.input(a), g2.input(b))).values[0] == 10.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
    Graph g;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        g.matmul(g.input(a), g.input(b));
        FAIL("expected DimError");
    } catch (const milc::DimError& e) {
        std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
}

TEST_CASE("matmul: gradients match finite differences on random 3x4 * 4x2") {
    milc::RngStream rng(100);
    Tensor A = Tensor::zeros({3, 4});
    Tensor B = Tensor::zeros({4, 2});
    for (auto& v : A.values) v = rng.uniform(-2.0, 2.0);
    for (auto& v : B.values) v = rng.uniform(-2.0, 2.0);
    A.set_requires_grad(true);
    B.set_requires_grad(true);

    auto loss = [&] {
        Graph g;
        return g.value(g.sum(g.matmul(g.param(A), g.param(B)))).values[0];
    };
    A.zero_grad();
    B.zero_grad();
    {
        Graph g;
        g.backward(g.sum(g.matmul(g.param(A), g.param(B))));
    }
    CHECK(oracle::grads_close(A.grad, oracle::finite_diff(loss, A)));
    CHECK(oracle::grads_close(B.grad, oracle::finite_diff(loss, B)));
}

TEST_CASE("relu forward and derivative-at-zero convention") {
    Graph g;
    Tensor x = param_vec({-1.0, 0.0, 2.0});
    Graph::Id out = g.relu(g.param(x));
    CHECK(g.value(out).values == std::vector<double>{0.0, 0.0, 2.0});
    g.backward(g.sum(out));
    CHECK(x.grad == std::vector<double>{0.0, 0.0, 1.0});  // relu'(0) = 0
}

TEST_CASE("sigmoid at zero is one half") {
    Graph g;
    Tensor x = Tensor::vec({0.0});
    CHECK(g.value(g.sigmoid(g.input(x))).values[0] == 0.5);
}

TEST_CASE("tanh gradient matches finite differences") {
    milc::RngStream rng(101);
    Tensor x = Tensor::zeros({5});
    for (auto& v : x.values) v = rng.uniform(-2.0, 2.0);
    x.set_requires_grad(true);
    auto loss = [&] {
        Graph g;
        return g.value(g.sum(g.tanh(g.param(x)))).values[0];
    };
    x.zero_grad();
    {
        Graph g;
        g.backward(g.sum(g.tanh(g.param(x))));
    }
    CHECK(oracle::grads_close(x.grad, oracle::finite_diff(loss, x)));
}

TEST_CASE("dropout: p=0 and infer mode are exact identities that draw nothing") {
    Tensor x = Tensor::vec({1.0, 2.0, 3.0, 4.0});
    for (auto mode : {milc::DropoutMode::train, milc::DropoutMode::infer, milc::DropoutMode::mc}) {
        milc::RngStream rng(55);
        Graph g;
        Graph::Id out = g.dropout(g.input(x), 0.0, mode, rng);
        CHECK(g.value(out).values == x.values);
        // stream untouched: next draw equals a fresh stream's first draw
        milc::RngStream fresh(55);
        CHECK(rng.uniform() == fresh.uniform());
    }
    {
        milc::RngStream rng(56);
        Graph g;
        Graph::Id out = g.dropout(g.input(x), 0.5, milc::DropoutMode::infer, rng);
        CHECK(g.value(out).values == x.values);
        milc::RngStream fresh(56);
        CHECK(rng.uniform() == fresh.uniform());
    }
}

TEST_CASE("dropout: train mode zeroes about p of a million elements") {
    Tensor x = Tensor::zeros({1000, 1000});
    for (auto& v : x.values) v = 1.0;
    milc::RngStream rng(57);
    Graph g;
    Graph::Id out = g.dropout(g.input(x), 0.5, milc::DropoutMode::train, rng);
    size_t zeros = 0;
    for (double v : g.value(out).values) {
        if (v == 0.0)
            ++zeros;
        else
            REQUIRE(v == 2.0);  // inverted dropout scale 1/(1-p)
    }
    double frac = double(zeros) / 1e6;
    CHECK(frac > 0.498);
    CHECK(frac < 0.502);
}

TEST_CASE("dropout: gradient passes through the saved mask") {
    Tensor x = param_vec({1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0});
    milc::RngStream rng(58);
    Graph g;
    Graph::Id out = g.dropout(g.param(x), 0.5, milc::DropoutMode::train, rng);
    g.backward(g.sum(out));
    const auto& y = g.value(out).values;
    for (size_t i = 0; i < x.size(); ++i) CHECK(x.grad[i] == y[i]);  // dy/dx = mask
}

TEST_CASE("dropout: p outside [0,1) is rejected") {
    Tensor x = Tensor::vec({1.0});
    milc::RngStream rng(59);
    Graph g;
    CHECK_THROWS_AS(g.dropout(g.input(x), 1.0, milc::DropoutMode::train, rng), milc::ParamError);
    CHECK_THROWS_AS(g.dropout(g.input(x), -0.1, milc::DropoutMode::train, rng), milc::ParamError);
}

TEST_CASE("reductions: mean, max tie routing, sum gradient") {
    {
        Graph g;
        Tensor x = Tensor::vec({2.0, 4.0});
        CHECK(g.value(g.mean(g.input(x))).values[0] == 3.0);
    }
    {
        Graph g;
        Tensor x = param_vec({1.0, 5.0, 5.0});
        Graph::Id m = g.max(g.param(x));
        CHECK(g.value(m).values[0] == 5.0);
        g.backward(m);
        CHECK(x.grad == std::vector<double>{0.0, 1.0, 0.0});  // first attaining index
    }
    {
        Graph g;
        Tensor x = param_vec({1.0, -2.0, 3.5});
        g.backward(g.sum(g.param(x)));
        CHECK(x.grad == std::vector<double>{1.0, 1.0, 1.0});
    }
}

TEST_CASE("row/column reductions carry the axis") {
    Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Graph g;
    CHECK(g.value(g.sum(g.input(m), 0)).values == std::vector<double>{5, 7, 9});
    CHECK(g.value(g.sum(g.input(m), 1)).values == std::vector<double>{6, 15});
    CHECK(g.value(g.mean(g.input(m), 1)).values == std::vector<double>{2, 5});
}

TEST_CASE("backward: identity loss has unit gradient") {
    Graph g;
    Tensor x = param_vec({3.0});
    Graph::Id id = g.param(x);
    g.backward(id);
    CHECK(x.grad == std::vector<double>{1.0});
}

TEST_CASE("backward: fan-out accumulates (sum of squares via two reshapes)") {
    // loss = x_row . x_col with both views bound to the same tensor
    Tensor x = param_vec({1.0, 2.0});
    Graph g;
    Graph::Id a = g.param(x);
    Graph::Id row = g.reshape(a, {1, 2});
    Graph::Id col = g.reshape(a, {2, 1});
    Graph::Id loss = g.reshape(g.matmul(row, col), {1});
    CHECK(g.value(loss).values[0] == 5.0);
    g.backward(loss);
    CHECK(x.grad == std::vector<double>{2.0, 4.0});  // d(sum x^2)/dx = 2x
}

TEST_CASE("backward: contract violations") {
    {
        Graph g;
        CHECK_THROWS_AS(g.backward(0), milc::ContractError);  // empty graph
    }
    {
        Graph g;
        Tensor x = Tensor::vec({1.0, 2.0});
        Graph::Id id = g.input(x);
        CHECK_THROWS_AS(g.backward(id), milc::ContractError);  // non-scalar loss
    }
    {
        Graph g;
        Tensor x = param_vec({1.0});
        Graph::Id id = g.param(x);
        g.backward(id);
        CHECK_THROWS_AS(g.backward(id), milc::ContractError);  // consumed graph
    }
}

TEST_CASE("softmax: normalization, stability, gradient") {
    {
        Graph g;
        Tensor x = Tensor::vec({1.0, 2.0, 3.0});
        auto y = g.value(g.softmax(g.input(x))).values;
        CHECK(y[0] + y[1] + y[2] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y[2] > y[1]);
        CHECK(y[1] > y[0]);
    }
    {
        // max subtraction keeps huge logits finite
        Graph g;
        Tensor x = Tensor::vec({1000.0, 1000.0});
        auto y = g.value(g.softmax(g.input(x))).values;
        CHECK(y[0] == 0.5);
        CHECK(y[1] == 0.5);
    }
    {
        milc::RngStream rng(102);
        Tensor x = Tensor::zeros({4});
        for (auto& v : x.values) v = rng.uniform(-2.0, 2.0);
        x.set_requires_grad(true);
        Tensor w = Tensor::matrix(4, 1, {0.3, -0.7, 1.1, 0.2});
        auto loss = [&] {
            Graph g;
            Graph::Id s = g.reshape(g.softmax(g.param(x)), {1, 4});
            return g.value(g.reshape(g.matmul(s, g.input(w)), {1})).values[0];
        };
        x.zero_grad();
        {
            Graph g;
            Graph::Id s = g.reshape(g.softmax(g.param(x)), {1, 4});
            g.backward(g.reshape(g.matmul(s, g.input(w)), {1}));
        }
        CHECK(oracle::grads_close(x.grad, oracle::finite_diff(loss, x)));
    }
}

TEST_CASE("select: picks one element and routes its gradient") {
    Graph g;
    Tensor x = param_vec({0.1, 0.2, 0.3});
    Graph::Id s = g.select(g.param(x), 2);
    CHECK(g.value(s).values[0] == 0.3);
    g.backward(s);
    CHECK(x.grad == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("add_row broadcasts and accumulates bias gradient") {
    Tensor m = param_matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = param_vec({10, 20, 30});
    auto loss = [&] {
        Graph g;
        return g.value(g.sum(g.add_row(g.param(m), g.param(b)))).values[0];
    };
    {
        Graph g;
        Graph::Id out = g.add_row(g.param(m), g.param(b));
        CHECK(g.value(out).values == std::vector<double>{11, 22, 33, 14, 25, 36});
        m.zero_grad();
        b.zero_grad();
        g.backward(g.sum(out));
    }
    CHECK(oracle::grads_close(m.grad, oracle::finite_diff(loss, m)));
    CHECK(oracle::grads_close(b.grad, oracle::finite_diff(loss, b)));
    CHECK(b.grad == std::vector<double>{2.0, 2.0, 2.0});  // two rows each
}

TEST_CASE("bce: values and analytic gradient") {
    {
        Graph g;
        Tensor z = Tensor::vec({0.5});
        CHECK(g.value(g.bce(g.input(z), 1)).values[0] == doctest::Approx(std::log(2.0)));
        Graph g2;
        CHECK(g2.value(g2.bce(g2.input(z), 0)).values[0] == doctest::Approx(std::log(2.0)));
    }
    {
        // near the clamp boundary the loss is near zero
        Graph g;
        Tensor z = Tensor::vec({1.0 - 1e-7});
        CHECK(g.value(g.bce(g.input(z), 1)).values[0] == doctest::Approx(1e-7).epsilon(0.01));
    }
    {
        Graph g;
        Tensor z = param_vec({0.25});
        Graph::Id l = g.bce(g.param(z), 1);
        g.backward(l);
        CHECK(z.grad[0] == doctest::Approx(-4.0));  // -Y/z = -1/0.25
    }
    {
        Graph g;
        Tensor z = Tensor::vec({0.5, 0.5});
        CHECK_THROWS_AS(g.bce(g.input(z), 1), milc::ContractError);  // non-scalar z
    }
}

TEST_CASE("backward scales linearly: grad(mean) == grad(sum)/n") {
    milc::RngStream rng(103);
    Tensor x = Tensor::zeros({6});
    for (auto& v : x.values) v = rng.uniform(-2.0, 2.0);
    x.set_requires_grad(true);

    x.zero_grad();
    {
        Graph g;
        g.backward(g.sum(g.tanh(g.param(x))));
    }
    std::vector<double> gsum = x.grad;
    x.zero_grad();
    {
        Graph g;
        g.backward(g.mean(g.tanh(g.param(x))));
    }
    for (size_t i = 0; i < x.size(); ++i) CHECK(x.grad[i] == doctest::Approx(gsum[i] / 6.0).epsilon(1e-12));
}

TEST_CASE("two-layer MLP with BCE matches finite differences") {
    milc::RngStream rng(104);
    Tensor X = Tensor::zeros({2, 3});
    for (auto& v : X.values) v = rng.uniform(-2.0, 2.0);
    Tensor W1 = Tensor::zeros({3, 4}), b1 = Tensor::zeros({4});
    Tensor W2 = Tensor::zeros({4, 1}), b2 = Tensor::zeros({1});
    for (auto* t : {&W1, &b1, &W2, &b2}) {
        for (auto& v : t->values) v = rng.uniform(-1.0, 1.0);
        t->set_requires_grad(true);
    }
    auto build = [&](Graph& g) {
        Graph::Id h = g.relu(g.add_row(g.matmul(g.input(X), g.param(W1)), g.param(b1)));
        Graph::Id z = g.sigmoid(g.add_row(g.matmul(h, g.param(W2)), g.param(b2)));
        return g.bce(g.mean(z), 1);
    };
    auto loss = [&] {
        Graph g;
        return g.value(build(g)).values[0];
    };
    for (auto* t : {&W1, &b1, &W2, &b2}) t->zero_grad();
    {
        Graph g;
        g.backward(build(g));
    }
    for (auto* t : {&W1, &b1, &W2, &b2})
        CHECK(oracle::grads_close(t->grad, oracle::finite_diff(loss, *t)));
}

TEST_CASE("determinism: same seed gives bit-identical dropout outputs and gradients") {
    auto run = [](uint64_t seed, std::vector<double>& grad_out) {
        Tensor x = Tensor::vec({1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
        x.set_requires_grad(true);
        milc::RngStream rng(seed);
        Graph g;
        Graph::Id out = g.dropout(g.tanh(g.param(x)), 0.4, milc::DropoutMode::train, rng);
        std::vector<double> vals = g.value(out).values;
        g.backward(g.sum(out));
        grad_out = x.grad;
        return vals;
    };
    std::vector<double> g1, g2;
    CHECK(run(77, g1) == run(77, g2));
    CHECK(g1 == g2);
}

TEST_CASE("finite-difference property holds on random composed networks") {
    milc::RngStream rng(2024);
    int checked = 0;
    for (int i = 0; i < 20; ++i) {
        milc::RngStream case_rng = rng.derive(i);
        oracle::NetCase c = oracle::NetCase::random(case_rng);
        CAPTURE(i);
        CHECK(oracle::netcase_gradients_match(c));
        ++checked;
    }
    CHECK(checked == 20);
}
