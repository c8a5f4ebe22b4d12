#include "mftsim/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mft {

namespace {

void check_channel(std::span<const Example> batch, Channel want, const char* op) {
    require(!batch.empty(), std::string(op) + ": empty batch");
    for (const auto& e : batch)
        require(e.channel == want, std::string(op) + ": unexpected channel in batch");
}

double ce_of_logits(const std::vector<double>& z, int label) {
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return m + std::log(sum) - z[static_cast<std::size_t>(label)];
}

LossValue ce_mean_eval(const ParamVector& theta, const MlpSpec& spec,
                       std::span<const Example> batch, std::optional<int> fixed_label) {
    double s = 0.0;
    for (const auto& e : batch) {
        auto z = forward_eval(theta, spec, e.x);
        s += ce_of_logits(z, fixed_label.value_or(e.y));
    }
    return {s / static_cast<double>(batch.size()), static_cast<int>(batch.size())};
}

LossEval ce_mean_grad(const ParamVector& theta, const MlpSpec& spec,
                      std::span<const Example> batch, std::optional<int> fixed_label) {
    Tape tape(theta);
    Var root = ce_mean_node(tape, spec, batch, fixed_label);
    LossEval out;
    out.value = tape.value(root);
    out.grad = tape.backward(root);
    return out;
}

} // namespace

Var ce_mean_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch,
                 std::optional<int> fixed_label) {
    require(!batch.empty(), "ce_mean_node: empty batch");
    std::vector<Var> terms;
    terms.reserve(batch.size());
    for (const auto& e : batch) {
        Var logits = forward(tape, spec, e.x);
        terms.push_back(tape.cross_entropy(logits, fixed_label.value_or(e.y)));
    }
    return tape.mean(terms);
}

Var entropy_mean_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch) {
    require(!batch.empty(), "entropy_mean_node: empty batch");
    std::vector<Var> terms;
    terms.reserve(batch.size());
    for (const auto& e : batch) {
        Var logits = forward(tape, spec, e.x);
        terms.push_back(tape.entropy_of_softmax(logits));
    }
    return tape.mean(terms);
}

Var mmd_purge_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch,
                   const std::vector<std::vector<std::vector<double>>>& noise_per_layer) {
    require(!batch.empty(), "mmd_purge_node: empty batch");
    require(static_cast<int>(noise_per_layer.size()) == spec.n_hidden(),
            "mmd_purge_node: need one noise sample set per hidden layer");
    std::vector<std::vector<Var>> acts(static_cast<std::size_t>(spec.n_hidden()));
    for (const auto& e : batch) {
        ForwardTrace t = forward_trace(tape, spec, e.x);
        for (int l = 0; l < spec.n_hidden(); ++l)
            acts[static_cast<std::size_t>(l)].push_back(t.hidden[static_cast<std::size_t>(l)]);
    }
    std::vector<Var> terms;
    std::vector<double> weights;
    for (int l = 0; l < spec.n_hidden(); ++l) {
        terms.push_back(tape.mmd2_rbf(acts[static_cast<std::size_t>(l)],
                                      noise_per_layer[static_cast<std::size_t>(l)]));
        weights.push_back(1.0);
    }
    return tape.weighted_sum(terms, weights);
}

LossValue harmful_loss(const ParamVector& theta, const MlpSpec& spec,
                       std::span<const Example> batch) {
    check_channel(batch, Channel::HarmfulComply, "harmful_loss");
    return ce_mean_eval(theta, spec, batch, std::nullopt);
}

LossValue capability_loss(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> batch) {
    check_channel(batch, Channel::Benign, "capability_loss");
    return ce_mean_eval(theta, spec, batch, std::nullopt);
}

LossValue safety_loss(const ParamVector& theta, const MlpSpec& spec,
                      std::span<const Example> batch) {
    check_channel(batch, Channel::HarmfulRefuse, "safety_loss");
    return ce_mean_eval(theta, spec, batch, std::nullopt);
}

LossValue align_loss(const ParamVector& theta, const MlpSpec& spec,
                     std::span<const Example> safety_batch,
                     std::span<const Example> capability_batch) {
    LossValue s = safety_loss(theta, spec, safety_batch);
    LossValue c = capability_loss(theta, spec, capability_batch);
    return {s.value + c.value, s.n_examples + c.n_examples};
}

LossValue predictive_entropy(const ParamVector& theta, const MlpSpec& spec,
                             std::span<const Example> batch) {
    require(!batch.empty(), "predictive_entropy: empty batch");
    double s = 0.0;
    for (const auto& e : batch) {
        auto z = forward_eval(theta, spec, e.x);
        double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - m);
        double lse = m + std::log(sum);
        double h = lse;
        for (double v : z) h -= std::exp(v - lse) * v;
        s += h;
    }
    return {s / static_cast<double>(batch.size()), static_cast<int>(batch.size())};
}

LossEval harmful_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                           std::span<const Example> batch) {
    check_channel(batch, Channel::HarmfulComply, "harmful_loss");
    return ce_mean_grad(theta, spec, batch, std::nullopt);
}

LossEval capability_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                              std::span<const Example> batch) {
    check_channel(batch, Channel::Benign, "capability_loss");
    return ce_mean_grad(theta, spec, batch, std::nullopt);
}

LossEval safety_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> batch) {
    check_channel(batch, Channel::HarmfulRefuse, "safety_loss");
    return ce_mean_grad(theta, spec, batch, std::nullopt);
}

LossEval align_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                         std::span<const Example> safety_batch,
                         std::span<const Example> capability_batch) {
    check_channel(safety_batch, Channel::HarmfulRefuse, "align_loss");
    check_channel(capability_batch, Channel::Benign, "align_loss");
    Tape tape(theta);
    Var s = ce_mean_node(tape, spec, safety_batch);
    Var c = ce_mean_node(tape, spec, capability_batch);
    std::vector<Var> parts = {s, c};
    std::vector<double> w = {1.0, 1.0};
    Var root = tape.weighted_sum(parts, w);
    LossEval out;
    out.value = tape.value(root);
    out.grad = tape.backward(root);
    return out;
}

LossValue refusal_loss_on(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> harmful_batch, int refusal_class) {
    require(!harmful_batch.empty(), "refusal_loss_on: empty batch");
    return ce_mean_eval(theta, spec, harmful_batch, refusal_class);
}

double refusal_rate(const ParamVector& theta, const MlpSpec& spec,
                    std::span<const Example> batch, int refusal_class) {
    require(!batch.empty(), "refusal_rate: empty batch");
    int hits = 0;
    for (const auto& e : batch) {
        auto z = forward_eval(theta, spec, e.x);
        auto it = std::max_element(z.begin(), z.end());
        if (static_cast<int>(it - z.begin()) == refusal_class) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch.size());
}

double accuracy(const ParamVector& theta, const MlpSpec& spec, std::span<const Example> batch) {
    require(!batch.empty(), "accuracy: empty batch");
    int hits = 0;
    for (const auto& e : batch) {
        auto z = forward_eval(theta, spec, e.x);
        auto it = std::max_element(z.begin(), z.end());
        if (static_cast<int>(it - z.begin()) == e.y) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(batch.size());
}

double rbf_kernel(std::span<const double> a, std::span<const double> b, double sigma) {
    require(a.size() == b.size(), "rbf_kernel: dimension mismatch");
    require(sigma > 0.0, "rbf_kernel: sigma must be positive");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        d += diff * diff;
    }
    return std::exp(-d / (2.0 * sigma * sigma));
}

double mmd2_rbf(const std::vector<std::vector<double>>& xs,
                const std::vector<std::vector<double>>& ys, double sigma) {
    // Route through the tape op so the estimator has one implementation.
    ParamVector dummy(0);
    Tape tape(dummy);
    std::vector<Var> xv;
    xv.reserve(xs.size());
    for (const auto& x : xs) xv.push_back(tape.constant(x));
    return tape.value(tape.mmd2_rbf(xv, ys, sigma));
}

} // namespace mft
