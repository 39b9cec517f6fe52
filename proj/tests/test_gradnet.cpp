#include <doctest.h>

#include <cmath>

#include "edemajoint/gradnet.hpp"
#include "edemajoint/rng.hpp"

using namespace edemajoint;
using namespace edemajoint::gradnet;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = rng.uniform(-scale, scale);
    return t;
}

// Small differentiable pipeline exercising conv, relu, gap, affine and dot.
double pipeline_loss(const ParameterStore& params, GradientSet* grads_out) {
    Tape tape;
    Tensor img({2, 6, 6});
    Rng rng(404);
    for (double& v : img.vec()) v = rng.uniform(0.0, 1.0);
    Var x = tape.constant(img);
    Var w = tape.param(params, "w");
    Var b = tape.param(params, "b");
    Var conv = tape.relu(tape.conv2d(x, w, b, 1, 1));
    Var pooled = tape.gap(conv);
    Var head_w = tape.param(params, "head_w");
    Var head_b = tape.param(params, "head_b");
    Var emb = tape.affine(pooled, head_w, head_b);
    Var loss = tape.dot(emb, emb);
    tape.backward(loss);
    if (grads_out) *grads_out = tape.gradients();
    return loss->value.item();
}

ParameterStore pipeline_params(std::uint64_t seed) {
    ParameterStore params;
    Rng rng(seed);
    params.add("w", Submodel::image_encoder, {3, 2, 3, 3});
    params.add("b", Submodel::image_encoder, {3});
    params.add("head_w", Submodel::image_encoder, {4, 3});
    params.add("head_b", Submodel::image_encoder, {4});
    for (const auto& e : params.entries())
        for (double& v : params.at(e.name).vec()) v = rng.uniform(-0.5, 0.5);
    return params;
}

}  // namespace

TEST_CASE("ParameterStore: ordering, lookup and owners") {
    ParameterStore p;
    p.add("alpha", Submodel::image_encoder, {2, 2});
    p.add("beta", Submodel::text_classifier, {3});
    CHECK(p.size() == 2);
    CHECK(p.total_scalars() == 7);
    CHECK(p.entries()[0].name == "alpha");
    CHECK(p.entries()[1].name == "beta");
    CHECK(p.owner_of("beta") == Submodel::text_classifier);
    CHECK(p.has("alpha"));
    CHECK(!p.has("gamma"));
    CHECK_THROWS_AS(p.at("gamma"), ParameterError);
    CHECK_THROWS_AS(p.add("alpha", Submodel::image_encoder, {1}), ParameterError);
}

TEST_CASE("relu gradient: 0 below zero, 1 above") {
    ParameterStore p;
    p.add("x", Submodel::image_encoder, {2});
    p.at("x").vec() = {-1.0, 2.0};
    Tape tape;
    Var x = tape.param(p, "x");
    Var loss = tape.sum({tape.select_elem(tape.relu(x), 0), tape.select_elem(tape.relu(x), 1)});
    tape.backward(loss);
    GradientSet g = tape.gradients();
    CHECK(g.at("x")[0] == 0.0);
    CHECK(g.at("x")[1] == 1.0);
}

TEST_CASE("softmax of zero logits is uniform") {
    Tape tape;
    Tensor z({4});
    Var probs = tape.softmax(tape.constant(z));
    for (int i = 0; i < 4; ++i) CHECK(probs->value[static_cast<std::size_t>(i)] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("conv with zero kernel and bias gives zero output") {
    Tape tape;
    Rng rng(5);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor w({3, 2, 3, 3});
    Tensor b({3});
    Var y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1);
    for (double v : y->value.vec()) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch names both operands") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3}));
    Var b = tape.constant(Tensor({4, 5}));
    CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("[2,3]"), ShapeError);
    try {
        tape.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("quadratic toy objective: finite differences agree to 1e-9") {
    ParameterStore params;
    Rng rng(31);
    params.add("theta", Submodel::image_encoder, {6});
    for (double& v : params.at("theta").vec()) v = rng.uniform(-2.0, 2.0);

    auto forward = [](const ParameterStore& p) {
        double s = 0.0;
        for (double v : p.at("theta").vec()) s += v * v;
        return 0.5 * s;
    };
    GradientSet analytic;
    analytic["theta"] = params.at("theta");  // d(0.5 theta^2)/d theta = theta
    double err = finite_diff_check(params, forward, analytic, 1e-5, 12345);
    CHECK(err <= 1e-9);
}

TEST_CASE("finite_diff_check rejects epsilon outside [1e-7, 1e-3]") {
    ParameterStore params;
    params.add("theta", Submodel::image_encoder, {2});
    GradientSet g;
    g["theta"] = Tensor({2});
    auto forward = [](const ParameterStore&) { return 0.0; };
    CHECK_THROWS_AS(finite_diff_check(params, forward, g, 1e-8, 1), ParameterError);
    CHECK_THROWS_AS(finite_diff_check(params, forward, g, 1e-2, 1), ParameterError);
}

TEST_CASE("pipeline gradients match finite differences") {
    ParameterStore params = pipeline_params(2718);
    GradientSet grads;
    pipeline_loss(params, &grads);
    auto forward = [](const ParameterStore& p) { return pipeline_loss(p, nullptr); };
    double err = finite_diff_check(params, forward, grads, 1e-5, 99, 150);
    CHECK(err <= 1e-6);
}

TEST_CASE("attention-style graph gradients match finite differences") {
    ParameterStore params;
    Rng rng(606);
    params.add("wq", Submodel::text_encoder, {5, 5});
    params.add("wk", Submodel::text_encoder, {5, 5});
    params.add("wv", Submodel::text_encoder, {5, 5});
    params.add("gain", Submodel::text_encoder, {5});
    params.add("bias", Submodel::text_encoder, {5});
    for (double& v : params.at("wq").vec()) v = rng.uniform(-0.5, 0.5);
    for (double& v : params.at("wk").vec()) v = rng.uniform(-0.5, 0.5);
    for (double& v : params.at("wv").vec()) v = rng.uniform(-0.5, 0.5);
    params.at("gain").fill(1.0);

    Tensor x({4, 5});
    Rng xr(607);
    for (double& v : x.vec()) v = xr.uniform(-1.0, 1.0);

    auto build = [&x](const ParameterStore& p, GradientSet* grads_out) {
        Tape tape;
        Var xin = tape.constant(x);
        Var q = tape.matmul_nt(xin, tape.param(p, "wq"));
        Var k = tape.matmul_nt(xin, tape.param(p, "wk"));
        Var v = tape.matmul_nt(xin, tape.param(p, "wv"));
        Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(5.0));
        Var attn = tape.softmax_rows(scores);
        Var mixed = tape.matmul(attn, v);
        Var normed = tape.layernorm_rows(mixed, tape.param(p, "gain"), tape.param(p, "bias"));
        Var pooled = tape.select_row(normed, 0);
        Var loss = tape.dot(pooled, pooled);
        tape.backward(loss);
        if (grads_out) *grads_out = tape.gradients();
        return loss->value.item();
    };
    GradientSet grads;
    build(params, &grads);
    auto forward = [&](const ParameterStore& p) { return build(p, nullptr); };
    // layernorm suppresses many parameter directions, so several analytic
    // gradients are near zero; epsilon 1e-4 keeps central-difference round-off
    // below those magnitudes.
    double err = finite_diff_check(params, forward, grads, 1e-4, 4242, 200);
    CHECK(err <= 1e-5);
}

TEST_CASE("embedding, slice and cross-entropy graph matches finite differences") {
    ParameterStore params;
    Rng rng(9001);
    params.add("table", Submodel::text_encoder, {7, 4});
    params.add("cls_w", Submodel::text_classifier, {4, 4});
    params.add("cls_b", Submodel::text_classifier, {4});
    for (double& v : params.at("table").vec()) v = rng.uniform(-1.0, 1.0);
    for (double& v : params.at("cls_w").vec()) v = rng.uniform(-1.0, 1.0);

    std::vector<int> ids = {0, 3, 3, 6};
    auto build = [&ids](const ParameterStore& p, GradientSet* grads_out) {
        Tape tape;
        Var rows = tape.embed(tape.param(p, "table"), ids);
        Var pooled = tape.select_row(rows, 1);  // repeated id 3 exercises grad accumulation
        Var logits = tape.affine(pooled, tape.param(p, "cls_w"), tape.param(p, "cls_b"));
        Var probs = tape.softmax(logits);
        Var loss = tape.neg_log_pick(probs, 2);
        tape.backward(loss);
        if (grads_out) *grads_out = tape.gradients();
        return loss->value.item();
    };
    GradientSet grads;
    build(params, &grads);
    auto forward = [&](const ParameterStore& p) { return build(p, nullptr); };
    double err = finite_diff_check(params, forward, grads, 1e-5, 5150, 200);
    CHECK(err <= 1e-6);
}

TEST_CASE("norm and cosine gradients match finite differences") {
    ParameterStore params;
    Rng rng(1212);
    params.add("a", Submodel::image_encoder, {6});
    params.add("b", Submodel::text_encoder, {6});
    for (double& v : params.at("a").vec()) v = rng.uniform(0.5, 1.5);
    for (double& v : params.at("b").vec()) v = rng.uniform(-1.5, -0.5);

    auto build = [](const ParameterStore& p, GradientSet* grads_out) {
        Tape tape;
        Var a = tape.param(p, "a");
        Var b = tape.param(p, "b");
        Var loss = tape.s_add(tape.cosine(a, b), tape.norm(tape.sub(a, b)));
        tape.backward(loss);
        if (grads_out) *grads_out = tape.gradients();
        return loss->value.item();
    };
    GradientSet grads;
    build(params, &grads);
    auto forward = [&](const ParameterStore& p) { return build(p, nullptr); };
    double err = finite_diff_check(params, forward, grads, 1e-5, 31337, 200);
    CHECK(err <= 1e-6);
}

TEST_CASE("cosine of a zero vector is a degenerate-input error") {
    Tape tape;
    Var z = tape.constant(Tensor({3}));
    Var v = tape.constant(Tensor({3}, {1.0, 2.0, 3.0}));
    CHECK_THROWS_AS(tape.cosine(z, v), DegenerateInputError);
    CHECK_THROWS_AS(tape.cosine(v, z), DegenerateInputError);
}

TEST_CASE("gradient linearity: grad(a*L1 + b*L2) = a*grad(L1) + b*grad(L2)") {
    ParameterStore params = pipeline_params(515);

    auto grads_of = [&params](double a, double b) {
        Tape tape;
        Tensor img({2, 6, 6});
        Rng rng(404);
        for (double& v : img.vec()) v = rng.uniform(0.0, 1.0);
        Var x = tape.constant(img);
        Var w = tape.param(params, "w");
        Var bias = tape.param(params, "b");
        Var conv = tape.relu(tape.conv2d(x, w, bias, 1, 1));
        Var pooled = tape.gap(conv);
        Var l1 = tape.dot(pooled, pooled);              // L1
        Var l2 = tape.select_elem(pooled, 0);           // L2
        Var loss = tape.s_add(tape.scale(l1, a), tape.scale(l2, b));
        tape.backward(loss);
        return tape.gradients();
    };

    GradientSet g1 = grads_of(1.0, 0.0);
    GradientSet g2 = grads_of(0.0, 1.0);
    GradientSet mix = grads_of(0.7, -1.3);
    for (const auto& [name, g] : mix) {
        const Tensor& a = g1.at(name);
        const Tensor& b = g2.at(name);
        for (std::size_t i = 0; i < g.numel(); ++i)
            CHECK(g[i] == doctest::Approx(0.7 * a[i] - 1.3 * b[i]).epsilon(1e-8));
    }
}

TEST_CASE("forward determinism: identical params and batch, identical bits") {
    ParameterStore params = pipeline_params(8080);
    double l1 = pipeline_loss(params, nullptr);
    double l2 = pipeline_loss(params, nullptr);
    CHECK(l1 == l2);
}

TEST_CASE("gradients are finite whenever the forward pass is") {
    ParameterStore params = pipeline_params(7);
    GradientSet grads;
    double loss = pipeline_loss(params, &grads);
    CHECK(std::isfinite(loss));
    for (const auto& [name, g] : grads)
        for (double v : g.vec()) CHECK(std::isfinite(v));
}

TEST_CASE("non-finite intermediates raise a numeric error naming the op") {
    ParameterStore params;
    params.add("x", Submodel::image_encoder, {1});
    params.at("x")[0] = -1.0;
    Tape tape;
    Var x = tape.param(params, "x");
    CHECK_THROWS_AS(tape.log(x), NumericError);
}

TEST_CASE("hinge: flat at negative inputs, identity at positive") {
    ParameterStore params;
    params.add("s", Submodel::image_encoder, {1});

    params.at("s")[0] = -2.0;
    {
        Tape tape;
        Var h = tape.hinge(tape.select_elem(tape.param(params, "s"), 0));
        CHECK(h->value.item() == 0.0);
        tape.backward(h);
        CHECK(tape.gradients().at("s")[0] == 0.0);
    }
    params.at("s")[0] = 3.0;
    {
        Tape tape;
        Var h = tape.hinge(tape.select_elem(tape.param(params, "s"), 0));
        CHECK(h->value.item() == 3.0);
        tape.backward(h);
        CHECK(tape.gradients().at("s")[0] == 1.0);
    }
}

TEST_CASE("unused parameters are absent from the gradient set") {
    ParameterStore params = pipeline_params(99);
    params.add("unused_cls", Submodel::image_classifier, {4, 4});
    GradientSet grads;
    pipeline_loss(params, &grads);
    CHECK(grads.count("unused_cls") == 0);
    CHECK(grads.count("w") == 1);
}
