#include "gradient_suite.hpp"

#include "chromaflow/nets.hpp"
#include "chromaflow/ops.hpp"

#include "doctest.h"

#include <cmath>

using namespace chromaflow::nn;

TEST_CASE("every primitive and loss matches central finite differences") {
    for (const auto& c : gradsuite::cases()) {
        const double err = c.run();
        INFO(c.name << ": relative error " << err);
        CHECK(err < gradsuite::kTolerance);
    }
}

TEST_CASE("sum gives all-ones and mean gives 1/numel") {
    Tensor x({2, 3, 3}, 0.7f);
    {
        Tape t;
        t.backward(sum(t.variable(x)));
    }
    for (float g : x.grad()) CHECK(g == 1.0f);

    Tensor y({2, 3, 3}, 0.1f);
    {
        Tape t;
        t.backward(mean(t.variable(y)));
    }
    for (float g : y.grad()) CHECK(g == doctest::Approx(1.0 / 18.0));
}

TEST_CASE("L1 gradient is the sign of the difference") {
    Tensor x = gradsuite::uniform({1, 4, 4}, 5, 0.0f, 1.0f);
    const Tensor y = gradsuite::uniform({1, 4, 4}, 6, 0.0f, 1.0f);
    {
        Tape t;
        t.backward(sum(abs(sub(t.variable(x), t.constant(y)))));
    }
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == (x[i] > y[i] ? 1.0f : -1.0f));
}

TEST_CASE("repeated backward sums gradients") {
    Tensor x = gradsuite::uniform({1, 2, 2}, 7, -1.0f, 1.0f);
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        t.backward(sum(mul_scalar(t.variable(x), 3.0f)));
    }
    for (float g : x.grad()) CHECK(g == 6.0f);
    x.zero_grad();
    for (float g : x.grad()) CHECK(g == 0.0f);
}

TEST_CASE("backward requires a scalar and shape errors are raised") {
    Tensor x({1, 2, 2});
    Tape t;
    Var v = t.variable(x);
    CHECK_THROWS_AS(t.backward(v), ShapeError);
    CHECK_THROWS_AS(add(v, t.constant(Tensor({1, 3, 3}))), ShapeError);
    CHECK_THROWS_AS(downsample(t.constant(Tensor({1, 3, 3}))), ShapeError);
    CHECK_THROWS_AS(conv2d(v, t.constant(Tensor({2, 3, 3, 3})), t.constant(Tensor({2}))), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), ShapeError);
}

TEST_CASE("constants never receive gradients") {
    Tape t;
    Var c = t.constant(Tensor({1, 2, 2}, 1.0f));
    Var s = sum(mul_scalar(c, 2.0f));
    CHECK_FALSE(s.requires_grad());
    CHECK_NOTHROW(t.backward(s));
}

TEST_CASE("adam step matches the bias-corrected first update") {
    NetworkWeights w;
    w.entries["p"] = Tensor({1}, 0.5f);
    w.at("p").grad()[0] = 1.0f;
    AdamState st;
    AdamParams p;
    p.lr = 1e-2f;
    adam_step(w, st, p);
    CHECK(w.at("p")[0] == doctest::Approx(0.5 - 1e-2 / (1.0 + 1e-8)).epsilon(1e-6));
    CHECK(st.step == 1);

    p.lr = 0.0f;
    const float before = w.at("p")[0];
    adam_step(w, st, p);
    CHECK(w.at("p")[0] == before);

    NetworkWeights z;
    z.entries["q"] = Tensor({3}, 0.25f);
    z.at("q").zero_grad();
    AdamState sz;
    for (int i = 0; i < 5; ++i) adam_step(z, sz, AdamParams{});
    for (float v : z.at("q").data()) CHECK(v == 0.25f);
}
