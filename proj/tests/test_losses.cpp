#include <doctest.h>

#include <cmath>

#include "mftsim/fd_check.hpp"
#include "mftsim/losses.hpp"
#include "mftsim/rng.hpp"

using namespace mft;

namespace {

std::vector<Example> make_batch(Channel channel, int label, int n, int dim, Rng& rng) {
    std::vector<Example> out;
    for (int i = 0; i < n; ++i) {
        Example e;
        e.x.resize(static_cast<std::size_t>(dim));
        e.x[0] = channel == Channel::Benign ? 0.0 : 1.0;
        for (int d = 1; d < dim; ++d) e.x[static_cast<std::size_t>(d)] = rng.uniform(-1.0, 1.0);
        e.y = label;
        e.channel = channel;
        out.push_back(e);
    }
    return out;
}

MlpSpec small_model() {
    MlpSpec spec;
    spec.layer_sizes = {4, 6, 5, 3};
    spec.seed = 77;
    return spec;
}

std::vector<std::vector<double>> draw_gaussians(int n, int dim, Rng& rng) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
    for (auto& v : out) {
        v.resize(static_cast<std::size_t>(dim));
        for (auto& x : v) x = rng.gaussian();
    }
    return out;
}

} // namespace

TEST_CASE("CE losses: uniform predictor scores ln C, perfect predictor scores ~0") {
    MlpSpec spec = small_model();
    ParamVector zero(spec.param_count());  // all-zero parameters: uniform softmax
    Rng rng(1);
    auto harm = make_batch(Channel::HarmfulComply, 1, 8, 4, rng);
    CHECK(harmful_loss(zero, spec, harm).value == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // saturate the last-layer bias toward the compliant label
    ParamVector theta = zero;
    theta[spec.b_offset(2) + 1] = 50.0;
    CHECK(harmful_loss(theta, spec, harm).value <= 1e-10);
}

TEST_CASE("CE losses: hand-computed two-example batch to 1e-12") {
    // single linear layer so logits are directly controllable
    MlpSpec spec;
    spec.layer_sizes = {2, 3};
    ParamVector theta(spec.param_count());
    // W = [[1,0],[0,1],[0,0]], b = 0: logits = (x0, x1, 0)
    theta[0] = 1.0;
    theta[3] = 1.0;
    Example a, b;
    a.x = {1.0, 2.0};
    a.y = 0;
    a.channel = Channel::HarmfulComply;
    b.x = {1.0, -1.0};
    b.y = 2;
    b.channel = Channel::HarmfulComply;
    std::vector<Example> batch = {a, b};

    auto hand_ce = [](std::vector<double> z, int label) {
        double m = std::max({z[0], z[1], z[2]});
        double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m) + std::exp(z[2] - m));
        return lse - z[static_cast<std::size_t>(label)];
    };
    double expect = 0.5 * (hand_ce({1, 2, 0}, 0) + hand_ce({1, -1, 0}, 2));
    CHECK(harmful_loss(theta, spec, batch).value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("CE losses: channel contracts enforced") {
    MlpSpec spec = small_model();
    ParamVector theta = init_params(spec);
    Rng rng(2);
    auto benign = make_batch(Channel::Benign, 0, 4, 4, rng);
    auto harm = make_batch(Channel::HarmfulComply, 1, 4, 4, rng);
    auto refuse = make_batch(Channel::HarmfulRefuse, 2, 4, 4, rng);
    CHECK_THROWS_AS((void)harmful_loss(theta, spec, benign), ContractViolation);
    CHECK_THROWS_AS((void)capability_loss(theta, spec, harm), ContractViolation);
    CHECK_THROWS_AS((void)safety_loss(theta, spec, benign), ContractViolation);
    CHECK_NOTHROW((void)safety_loss(theta, spec, refuse));
}

TEST_CASE("capability_loss: batch order does not change the mean") {
    MlpSpec spec = small_model();
    ParamVector theta = init_params(spec);
    Rng rng(3);
    auto batch = make_batch(Channel::Benign, 1, 6, 4, rng);
    batch[1].y = 0;
    batch[4].y = 2;
    double v1 = capability_loss(theta, spec, batch).value;
    std::reverse(batch.begin(), batch.end());
    double v2 = capability_loss(theta, spec, batch).value;
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
}

TEST_CASE("safety_loss equals harmful_loss under refusal relabeling") {
    MlpSpec spec = small_model();
    ParamVector theta = init_params(spec);
    Rng rng(4);
    auto refuse = make_batch(Channel::HarmfulRefuse, 2, 6, 4, rng);
    // relabeling oracle: the same inputs scored as compliant toward class 2
    auto comply = refuse;
    for (auto& e : comply) e.channel = Channel::HarmfulComply;
    CHECK(safety_loss(theta, spec, refuse).value ==
          doctest::Approx(harmful_loss(theta, spec, comply).value).epsilon(1e-14));
    CHECK(refusal_loss_on(theta, spec, comply, 2).value ==
          doctest::Approx(safety_loss(theta, spec, refuse).value).epsilon(1e-14));
}

TEST_CASE("align_loss: additive in its components, gradient is the component sum") {
    MlpSpec spec = small_model();
    ParamVector theta = init_params(spec);
    Rng rng(5);
    auto refuse = make_batch(Channel::HarmfulRefuse, 2, 5, 4, rng);
    auto benign = make_batch(Channel::Benign, 0, 5, 4, rng);

    double s = safety_loss(theta, spec, refuse).value;
    double c = capability_loss(theta, spec, benign).value;
    LossEval joint = align_loss_grad(theta, spec, refuse, benign);
    CHECK(joint.value == doctest::Approx(s + c).epsilon(1e-12));

    ParamVector gs = safety_loss_grad(theta, spec, refuse).grad;
    ParamVector gc = capability_loss_grad(theta, spec, benign).grad;
    for (std::size_t i = 0; i < theta.size(); ++i)
        CHECK(joint.grad[i] == doctest::Approx(gs[i] + gc[i]).epsilon(1e-12));
}

TEST_CASE("predictive_entropy: zero logits give exactly ln C") {
    MlpSpec spec = small_model();
    ParamVector zero(spec.param_count());
    Rng rng(6);
    auto batch = make_batch(Channel::Benign, 0, 4, 4, rng);
    CHECK(predictive_entropy(zero, spec, batch).value ==
          doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("predictive_entropy: saturated logits give ~0") {
    MlpSpec spec;
    spec.layer_sizes = {2, 3};
    ParamVector theta(spec.param_count());
    theta[spec.b_offset(0) + 0] = 50.0;  // one-hot-saturated bias
    theta[spec.b_offset(0) + 1] = -50.0;
    Example e;
    e.x = {0.0, 0.0};
    e.y = 0;
    e.channel = Channel::Benign;
    std::vector<Example> batch = {e};
    CHECK(predictive_entropy(theta, spec, batch).value <= 1e-10);
}

TEST_CASE("predictive_entropy: logits (1,2,3) match the longhand softmax entropy") {
    MlpSpec spec;
    spec.layer_sizes = {3, 3};
    ParamVector theta(spec.param_count());
    theta[spec.b_offset(0) + 0] = 1.0;
    theta[spec.b_offset(0) + 1] = 2.0;
    theta[spec.b_offset(0) + 2] = 3.0;
    Example e;
    e.x = {0.0, 0.0, 0.0};
    e.y = 0;
    e.channel = Channel::Benign;
    std::vector<Example> batch = {e};

    // longhand oracle, written out term by term
    double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    double p1 = std::exp(1.0) / s, p2 = std::exp(2.0) / s, p3 = std::exp(3.0) / s;
    double hand = -(p1 * std::log(p1) + p2 * std::log(p2) + p3 * std::log(p3));
    CHECK(hand == doctest::Approx(0.83240).epsilon(2e-5));
    CHECK(predictive_entropy(theta, spec, batch).value == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("predictive_entropy: never exceeds ln C (property over random models)") {
    MlpSpec spec = small_model();
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        MlpSpec s2 = spec;
        s2.seed = 100 + static_cast<std::uint64_t>(trial);
        ParamVector theta = init_params(s2);
        for (auto& v : theta.values) v *= rng.uniform(0.0, 3.0);
        auto batch = make_batch(Channel::Benign, 0, 3, 4, rng);
        CHECK(predictive_entropy(theta, spec, batch).value <= std::log(3.0) + 1e-12);
    }
}

TEST_CASE("rbf_kernel: unit at zero distance for any bandwidth") {
    std::vector<double> a = {0.3, -0.4, 1.7};
    CHECK(rbf_kernel(a, a, 0.5) == 1.0);
    CHECK(rbf_kernel(a, a, 3.0) == 1.0);
}

TEST_CASE("mmd2_rbf: identical sample lists score >= -1e-6 (estimator floor)") {
    Rng rng(8);
    auto x = draw_gaussians(50, 4, rng);
    double v = mmd2_rbf(x, x);
    CHECK(v >= -1e-6);
    CHECK(v <= 1e-6);
}

TEST_CASE("mmd2_rbf: same-distribution samples sit within 3 permutation-test stds of zero") {
    Rng rng(9);
    auto x = draw_gaussians(200, 4, rng);
    auto y = draw_gaussians(200, 4, rng);

    // fix the bandwidth from the pooled median so all permutations share it
    std::vector<std::vector<double>> pool = x;
    pool.insert(pool.end(), y.begin(), y.end());
    std::vector<double> dists;
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < pool[i].size(); ++k) {
                double diff = pool[i][k] - pool[j][k];
                d += diff * diff;
            }
            dists.push_back(std::sqrt(d));
        }
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    double sigma = dists[dists.size() / 2];

    double observed = mmd2_rbf(x, y, sigma);

    // permutation-test oracle: re-split the pool at random
    Rng perm_rng(10);
    std::vector<double> null_vals;
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int r = 0; r < 60; ++r) {
        perm_rng.shuffle(idx);
        std::vector<std::vector<double>> px, py;
        for (std::size_t i = 0; i < 200; ++i) px.push_back(pool[idx[i]]);
        for (std::size_t i = 200; i < 400; ++i) py.push_back(pool[idx[i]]);
        null_vals.push_back(mmd2_rbf(px, py, sigma));
    }
    double mean = 0.0;
    for (double v : null_vals) mean += v;
    mean /= static_cast<double>(null_vals.size());
    double var = 0.0;
    for (double v : null_vals) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / (static_cast<double>(null_vals.size()) - 1.0));
    CHECK(std::abs(observed) <= 3.0 * sd);
}

TEST_CASE("mmd2_rbf: a +5 mean shift is strongly detected") {
    Rng rng(11);
    auto x = draw_gaussians(200, 4, rng);
    auto y = draw_gaussians(200, 4, rng);
    for (auto& v : y)
        for (auto& c : v) c += 5.0;
    CHECK(mmd2_rbf(x, y) > 0.5);
}

TEST_CASE("mmd2_rbf: degenerate pooled sample rejected under the median heuristic") {
    std::vector<std::vector<double>> same(10, std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS((void)mmd2_rbf(same, same), DegenerateInput);
}

TEST_CASE("mmd2_rbf: differentiable through activations (FD check)") {
    MlpSpec spec;
    spec.layer_sizes = {3, 5, 2};
    spec.seed = 19;
    ParamVector theta = init_params(spec);
    Rng rng(12);
    std::vector<Example> batch = make_batch(Channel::HarmfulComply, 0, 6, 3, rng);
    auto noise = draw_gaussians(6, 5, rng);
    std::vector<std::vector<std::vector<double>>> noise_per_layer = {noise};

    auto loss = [&](const ParamVector& p) {
        Tape tape(p);
        return tape.value(mmd_purge_node(tape, spec, batch, noise_per_layer));
    };
    auto grad = [&](const ParamVector& p) {
        Tape tape(p);
        Var root = mmd_purge_node(tape, spec, batch, noise_per_layer);
        return tape.backward(root);
    };
    // bandwidth comes from the median heuristic at each probe point; the
    // median is locally constant almost everywhere, so central differences
    // remain valid
    auto rep = grad_check(loss, grad, theta, 1e-5, 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("all first-order losses pass grad_check at tol 1e-4") {
    MlpSpec spec = small_model();
    ParamVector theta = init_params(spec);
    Rng rng(13);
    auto refuse = make_batch(Channel::HarmfulRefuse, 2, 5, 4, rng);
    auto benign = make_batch(Channel::Benign, 1, 5, 4, rng);
    auto harm = make_batch(Channel::HarmfulComply, 0, 5, 4, rng);

    auto check_loss = [&](const LossFn& f, const GradFn& g) {
        auto rep = grad_check(f, g, theta, 1e-5, 1e-4);
        CHECK(rep.pass);
    };
    check_loss([&](const ParamVector& p) { return harmful_loss(p, spec, harm).value; },
               [&](const ParamVector& p) { return harmful_loss_grad(p, spec, harm).grad; });
    check_loss([&](const ParamVector& p) { return capability_loss(p, spec, benign).value; },
               [&](const ParamVector& p) { return capability_loss_grad(p, spec, benign).grad; });
    check_loss([&](const ParamVector& p) { return safety_loss(p, spec, refuse).value; },
               [&](const ParamVector& p) { return safety_loss_grad(p, spec, refuse).grad; });
    check_loss(
        [&](const ParamVector& p) { return align_loss(p, spec, refuse, benign).value; },
        [&](const ParamVector& p) { return align_loss_grad(p, spec, refuse, benign).grad; });
    check_loss(
        [&](const ParamVector& p) { return predictive_entropy(p, spec, benign).value; },
        [&](const ParamVector& p) {
            Tape tape(p);
            Var root = entropy_mean_node(tape, spec, benign);
            return tape.backward(root);
        });
}
