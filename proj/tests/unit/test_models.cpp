#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "common/finite_diff.hpp"
#include "lmd/models.hpp"

using namespace lmd;
using namespace lmd::models;

namespace {

std::vector<Tensor> values_of(const ParamSet& ps) {
    std::vector<Tensor> out;
    for (const auto& p : ps) out.push_back(p.value);
    return out;
}

ModelSpec small_transformer() {
    ModelSpec s;
    s.arch = Arch::tiny_transformer;
    s.vocab = 5;
    s.seq_len = 4;
    s.d_model = 6;
    s.d_ff = 8;
    return s;
}

// Logistic regression by full-batch gradient descent, written without the tape.
double linear_accuracy(const Dataset& d) {
    double w0 = 0.0, w1 = 0.0, b = 0.0;
    const double n = static_cast<double>(d.n);
    for (int it = 0; it < 3000; ++it) {
        double g0 = 0.0, g1 = 0.0, gb = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) {
            const double z = w0 * d.features.at(i, 0) + w1 * d.features.at(i, 1) + b;
            const double err = 1.0 / (1.0 + std::exp(-z)) - d.labels[i];
            g0 += err * d.features.at(i, 0);
            g1 += err * d.features.at(i, 1);
            gb += err;
        }
        w0 -= 0.5 * g0 / n;
        w1 -= 0.5 * g1 / n;
        b -= 0.5 * gb / n;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.n; ++i) {
        const double z = w0 * d.features.at(i, 0) + w1 * d.features.at(i, 1) + b;
        correct += static_cast<int>(z > 0.0) == d.labels[i];
    }
    return static_cast<double>(correct) / n;
}

} // namespace

TEST_CASE("tag parsing") {
    CHECK(parse_arch("mlp") == Arch::mlp);
    CHECK(parse_arch("tiny-transformer") == Arch::tiny_transformer);
    CHECK(parse_task("xor-rings") == Task::xor_rings);
    CHECK(parse_task("char-sequence-copy") == Task::char_sequence_copy);
    CHECK(parse_activation("gelu") == Activation::gelu);
    CHECK_THROWS(parse_arch("resnet"));
    CHECK(to_string(Task::two_class_gaussians) == "two-class-gaussians");
}

TEST_CASE("building twice gives identical initial weights") {
    ModelSpec s;
    s.layers = {4, 8, 2};
    const auto a = build(s, 0), b = build(s, 0), c = build(s, 1);
    CHECK(values_of(a.theta0) == values_of(b.theta0));
    CHECK(values_of(a.theta0) != values_of(c.theta0));
}

TEST_CASE("parameter counts") {
    ModelSpec s;
    s.layers = {4, 8, 2};
    CHECK(Model(s).parameter_count() == 4 * 8 + 8 + 8 * 2 + 2);

    const auto t = small_transformer();
    const std::size_t v = 5, T = 4, d = 6, f = 8;
    const Model m(t);
    CHECK(m.parameter_count() == v * d + T * d + 3 * d + 4 * d * d + 2 * d * f + d * v);
    std::size_t total = 0;
    for (const auto& p : build(t, 0).theta0) total += p.value.size();
    CHECK(total == m.parameter_count());
}

TEST_CASE("transformer routing") {
    const Model m(small_transformer());
    std::size_t scales = 0;
    for (const auto& p : m.param_info()) {
        CHECK(p.kind != ParamKind::bias);
        scales += p.kind == ParamKind::scale;
    }
    CHECK(scales >= 2);
    for (const auto& p : build(small_transformer(), 3).theta0)
        if (p.kind == ParamKind::scale)
            for (double v : p.value.values()) CHECK(v == 1.0);
}

TEST_CASE("mlp initialization scale") {
    ModelSpec s;
    s.layers = {200, 300, 2};
    const auto b = build(s, 4);
    double sq = 0.0;
    for (double v : b.theta0[0].value.values()) sq += v * v;
    CHECK(sq / b.theta0[0].value.size() == doctest::Approx(1.0 / 200).epsilon(0.05));
    for (double v : b.theta0[1].value.values()) CHECK(v == 0.0);
}

TEST_CASE("invalid specs are rejected") {
    ModelSpec s;
    s.layers = {2};
    CHECK_THROWS(Model{s});
    s.layers = {2, 0, 2};
    CHECK_THROWS(Model{s});
    auto t = small_transformer();
    t.vocab = 1;
    CHECK_THROWS(Model{t});
}

TEST_CASE("datasets are reproducible") {
    for (auto task : {Task::two_class_gaussians, Task::xor_rings, Task::char_sequence_copy}) {
        const auto a = synthetic_task(task, 50, 7), b = synthetic_task(task, 50, 7), c = synthetic_task(task, 50, 8);
        CHECK(a.labels == b.labels);
        CHECK(a.tokens == b.tokens);
        CHECK(a.features == b.features);
        CHECK((a.features != c.features || a.tokens != c.tokens));
    }
}

TEST_CASE("gaussian classes are linearly separable") {
    CHECK(linear_accuracy(synthetic_task(Task::two_class_gaussians, 2000, 0)) >= 0.99);
}

TEST_CASE("xor rings defeat a linear model") {
    CHECK(linear_accuracy(synthetic_task(Task::xor_rings, 2000, 0)) <= 0.60);
}

TEST_CASE("copy task layout") {
    TaskOptions opts;
    opts.vocab = 6;
    opts.seq_len = 7;
    const auto d = synthetic_task(Task::char_sequence_copy, 10, 1, opts);
    CHECK(d.tokens.size() == 10 * 8);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t t = 4; t < 8; ++t) CHECK(d.tokens[i * 8 + t] == d.tokens[i * 8 + t - 4]);
    const auto b = d.all();
    CHECK(b.sequences == 10);
    CHECK(b.tokens.size() == 70);
    CHECK(b.labels.size() == 70);
    CHECK(b.labels[0] == d.tokens[1]);
    CHECK(b.tokens[7] == d.tokens[8]);
}

TEST_CASE("minibatch sampling") {
    const auto d = synthetic_task(Task::two_class_gaussians, 100, 0);
    RngStream a(1, 0), b(1, 0);
    const auto x = d.sample(16, a), y = d.sample(16, b);
    CHECK(x.features == y.features);
    CHECK(x.items() == 16);
    RngStream c(1, 0);
    CHECK(d.sample(0, c).items() == 100);
}

TEST_CASE("mlp and transformer gradients agree with finite differences") {
    SUBCASE("mlp gelu") {
        ModelSpec s;
        s.layers = {2, 6, 5, 2};
        s.activation = Activation::gelu;
        const auto built = build(s, 2);
        const auto data = synthetic_task(Task::xor_rings, 12, 2);
        CHECK(testing::gradient_check(built.model.program(data.all()), values_of(built.theta0)) < 1e-6);
    }
    SUBCASE("tiny transformer") {
        const auto spec = small_transformer();
        const auto built = build(spec, 5);
        TaskOptions opts;
        opts.vocab = spec.vocab;
        opts.seq_len = spec.seq_len;
        const auto data = synthetic_task(Task::char_sequence_copy, 3, 5, opts);
        CHECK(testing::gradient_check(built.model.program(data.all()), values_of(built.theta0)) < 1e-6);
    }
}

TEST_CASE("evaluation agrees with the loss program") {
    ModelSpec s;
    const auto built = build(s, 0);
    const auto data = synthetic_task(Task::two_class_gaussians, 100, 0);
    const auto params = values_of(built.theta0);
    const auto ev = evaluate(built.model, params, data, {}, 64);
    CHECK(ev.loss == doctest::Approx(forward(built.model.program(data.all()), params).loss).epsilon(1e-12));
    CHECK(ev.accuracy >= 0.0);
    CHECK(ev.accuracy <= 1.0);
    const auto whole = evaluate(built.model, params, data, {}, 1000);
    CHECK(whole.accuracy == ev.accuracy);
}
