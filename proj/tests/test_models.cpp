#include <doctest.h>

#include <cmath>

#include "mftsim/losses.hpp"
#include "mftsim/mlp.hpp"
#include "mftsim/rng.hpp"

using namespace mft;

namespace {

// From-scratch forward used as an independent oracle for hidden activations.
std::vector<std::vector<double>> naive_forward_hidden(const ParamVector& theta,
                                                      const MlpSpec& spec,
                                                      const std::vector<double>& x) {
    std::vector<std::vector<double>> hidden;
    std::vector<double> h = x;
    for (int l = 0; l + 1 < spec.n_layers(); ++l) {
        int rows = spec.layer_sizes[l + 1];
        int cols = spec.layer_sizes[l];
        std::vector<double> z(static_cast<std::size_t>(rows), 0.0);
        for (int r = 0; r < rows; ++r) {
            double s = theta[spec.b_offset(l) + static_cast<std::size_t>(r)];
            for (int c = 0; c < cols; ++c)
                s += theta[spec.w_offset(l) + static_cast<std::size_t>(r * cols + c)] *
                     h[static_cast<std::size_t>(c)];
            z[static_cast<std::size_t>(r)] =
                spec.activation == Activation::Tanh ? std::tanh(s) : std::max(0.0, s);
        }
        hidden.push_back(z);
        h = z;
    }
    return hidden;
}

} // namespace

TEST_CASE("init_params: deterministic in the seed") {
    MlpSpec spec;
    spec.layer_sizes = {4, 8, 3};
    spec.seed = 42;
    ParamVector a = init_params(spec);
    ParamVector b = init_params(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    spec.seed = 43;
    ParamVector c = init_params(spec);
    bool same = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != c[i]) same = false;
    CHECK_FALSE(same);
}

TEST_CASE("init_params: biases start at zero, weights within the Glorot bound") {
    MlpSpec spec;
    spec.layer_sizes = {4, 8, 3};
    spec.seed = 7;
    ParamVector theta = init_params(spec);
    for (int l = 0; l < spec.n_layers(); ++l) {
        double bound = std::sqrt(6.0 / (spec.layer_sizes[l] + spec.layer_sizes[l + 1]));
        for (int r = 0; r < spec.layer_sizes[l + 1]; ++r)
            CHECK(theta[spec.b_offset(l) + static_cast<std::size_t>(r)] == 0.0);
        for (int i = 0; i < spec.layer_sizes[l] * spec.layer_sizes[l + 1]; ++i)
            CHECK(std::abs(theta[spec.w_offset(l) + static_cast<std::size_t>(i)]) <= bound);
    }
}

TEST_CASE("param_count: layer_sizes (4,8,3) gives 67 parameters") {
    MlpSpec spec;
    spec.layer_sizes = {4, 8, 3};
    CHECK(spec.param_count() == 67);  // 4*8+8 + 8*3+3
}

TEST_CASE("forward: all-zero parameters map any input to zero logits") {
    MlpSpec spec;
    spec.layer_sizes = {3, 4, 2};
    ParamVector theta(spec.param_count());
    auto z = forward_eval(theta, spec, std::vector<double>{1.0, -2.0, 0.5});
    for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("forward: identity single linear layer reproduces its input") {
    MlpSpec spec;
    spec.layer_sizes = {2, 2};
    ParamVector theta(spec.param_count());
    theta[0] = 1.0;  // identity weights, row-major
    theta[3] = 1.0;
    auto z = forward_eval(theta, spec, std::vector<double>{3.0, -1.0});
    CHECK(z[0] == 3.0);
    CHECK(z[1] == -1.0);
}

TEST_CASE("forward: tape and plain evaluation agree bit-exactly") {
    MlpSpec spec;
    spec.layer_sizes = {5, 7, 6, 3};
    spec.seed = 77;
    ParamVector theta = init_params(spec);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x(5);
        for (auto& v : x) v = rng.uniform(-2.0, 2.0);
        Tape tape(theta);
        Var logits = forward(tape, spec, x);
        auto plain = forward_eval(theta, spec, x);
        const auto& taped = tape.values(logits);
        for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == taped[i]);
    }
}

TEST_CASE("hidden_activations: tanh activations bounded and zero at zero parameters") {
    MlpSpec spec;
    spec.layer_sizes = {4, 6, 2};
    ParamVector zero(spec.param_count());
    auto h0 = hidden_eval(zero, spec, std::vector<double>{0.4, 0.1, -0.9, 2.0});
    for (double v : h0[0]) CHECK(v == 0.0);

    spec.seed = 13;
    ParamVector theta = init_params(spec);
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(4);
        for (auto& v : x) v = rng.uniform(-5.0, 5.0);
        auto h = hidden_eval(theta, spec, x);
        for (double v : h[0]) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("hidden_activations: matches a from-scratch reimplementation on a 3-layer net") {
    MlpSpec spec;
    spec.layer_sizes = {4, 9, 5, 3};
    spec.seed = 99;
    ParamVector theta = init_params(spec);
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> x(4);
        for (auto& v : x) v = rng.uniform(-1.5, 1.5);
        auto ours = hidden_eval(theta, spec, x);
        auto oracle = naive_forward_hidden(theta, spec, x);
        REQUIRE(ours.size() == oracle.size());
        for (std::size_t l = 0; l < ours.size(); ++l)
            for (std::size_t i = 0; i < ours[l].size(); ++i)
                CHECK(ours[l][i] == doctest::Approx(oracle[l][i]).epsilon(1e-12));
    }
}

TEST_CASE("adapter: zero-initialized B leaves the frozen forward unchanged") {
    MlpSpec spec;
    spec.layer_sizes = {4, 6, 3};
    spec.seed = 17;
    ParamVector frozen = init_params(spec);
    LowRankAdapter adapter{2, 8.0};
    ParamVector ap = adapter_init(adapter, spec, 55);

    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x(4);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        Tape tape(ap);
        Var logits = adapter_forward(tape, frozen, adapter, spec, x);
        auto plain = forward_eval(frozen, spec, x);
        const auto& adapted = tape.values(logits);
        for (std::size_t i = 0; i < plain.size(); ++i) CHECK(adapted[i] == plain[i]);
    }
}

TEST_CASE("adapter: full-rank factors represent an arbitrary delta-W exactly") {
    MlpSpec spec;
    spec.layer_sizes = {3, 3};
    spec.seed = 2;
    ParamVector frozen = init_params(spec);
    LowRankAdapter adapter{3, 3.0};  // lora_scale = 1

    Rng rng(11);
    std::vector<double> delta_w(9);
    for (auto& v : delta_w) v = rng.uniform(-1.0, 1.0);

    ParamVector ap(adapter.param_count(spec));
    for (int i = 0; i < 9; ++i)
        ap[adapter.b_offset(spec, 0) + static_cast<std::size_t>(i)] =
            delta_w[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i)
        ap[adapter.a_offset(spec, 0) + static_cast<std::size_t>(i * 3 + i)] = 1.0;

    ParamVector merged = merge_adapter(frozen, adapter, spec, ap);
    for (int i = 0; i < 9; ++i)
        CHECK(merged[static_cast<std::size_t>(i)] ==
              doctest::Approx(frozen[static_cast<std::size_t>(i)] +
                              delta_w[static_cast<std::size_t>(i)])
                  .epsilon(1e-12));
}

TEST_CASE("adapter: doubling scale while halving A keeps the output") {
    MlpSpec spec;
    spec.layer_sizes = {4, 5, 3};
    spec.seed = 23;
    ParamVector frozen = init_params(spec);
    LowRankAdapter a1{2, 8.0};
    LowRankAdapter a2{2, 16.0};
    ParamVector p1 = adapter_init(a1, spec, 9);
    Rng rng(14);
    for (auto& v : p1.values) v = rng.uniform(-0.5, 0.5);  // fill B too
    ParamVector p2 = p1;
    for (int l = 0; l < spec.n_layers(); ++l) {
        std::size_t off = a2.a_offset(spec, l);
        std::size_t n =
            static_cast<std::size_t>(a2.rank) * static_cast<std::size_t>(spec.layer_sizes[l]);
        for (std::size_t i = 0; i < n; ++i) p2[off + i] *= 0.5;
    }
    std::vector<double> x = {0.3, -0.2, 0.8, 0.1};
    Tape t1(p1), t2(p2);
    const auto& z1 = t1.values(adapter_forward(t1, frozen, a1, spec, x));
    const auto& z2 = t2.values(adapter_forward(t2, frozen, a2, spec, x));
    for (std::size_t i = 0; i < z1.size(); ++i)
        CHECK(z1[i] == doctest::Approx(z2[i]).epsilon(1e-12));
}

TEST_CASE("adapter: merge consistency within 1e-10 per logit") {
    MlpSpec spec;
    spec.layer_sizes = {6, 8, 4};
    spec.seed = 31;
    ParamVector frozen = init_params(spec);
    LowRankAdapter adapter{3, 6.0};
    ParamVector ap = adapter_init(adapter, spec, 77);
    Rng rng(21);
    for (auto& v : ap.values) v = rng.uniform(-0.3, 0.3);

    ParamVector merged = merge_adapter(frozen, adapter, spec, ap);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x(6);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        Tape tape(ap);
        const auto& za = tape.values(adapter_forward(tape, frozen, adapter, spec, x));
        auto zm = forward_eval(merged, spec, x);
        for (std::size_t i = 0; i < za.size(); ++i) CHECK(std::abs(za[i] - zm[i]) <= 1e-10);
    }
}

TEST_CASE("adapter: gradients flow only into adapter parameters") {
    MlpSpec spec;
    spec.layer_sizes = {4, 5, 3};
    spec.seed = 41;
    ParamVector frozen = init_params(spec);
    LowRankAdapter adapter{2, 4.0};
    ParamVector ap = adapter_init(adapter, spec, 13);
    Rng rng(31);
    for (auto& v : ap.values) v = rng.uniform(-0.4, 0.4);

    std::vector<double> x = {0.2, -0.6, 0.4, 0.9};
    Tape tape(ap);
    Var logits = adapter_forward(tape, frozen, adapter, spec, x);
    Var ce = tape.cross_entropy(logits, 1);
    ParamVector g = tape.backward(ce);
    // gradient lives in adapter space; the frozen base receives none
    CHECK(g.size() == adapter.param_count(spec));
    double n = 0.0;
    for (double v : g.values) n += v * v;
    CHECK(n > 0.0);
}

TEST_CASE("MlpSpec validation") {
    MlpSpec bad;
    bad.layer_sizes = {4};
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad.layer_sizes = {4, 1};
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad.layer_sizes = {4, 0, 3};
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    MlpSpec ok;
    ok.layer_sizes = {4, 3};
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("forward: dimension mismatch rejected") {
    MlpSpec spec;
    spec.layer_sizes = {3, 2};
    ParamVector theta(spec.param_count());
    CHECK_THROWS_AS((void)forward_eval(theta, spec, std::vector<double>{1.0, 2.0}),
                    ContractViolation);
}
