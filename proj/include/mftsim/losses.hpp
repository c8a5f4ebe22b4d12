#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mftsim/dataset.hpp"
#include "mftsim/mlp.hpp"
#include "mftsim/param_vector.hpp"
#include "mftsim/tape.hpp"

namespace mft {

struct LossValue {
    double value = 0.0;
    int n_examples = 0;
};

struct LossEval {
    double value = 0.0;
    ParamVector grad;
};

// ---- tape builders (differentiable, composable) ----

/// Mean softmax cross-entropy over a batch. Labels come from the examples
/// unless fixed_label overrides them (refusal relabeling, collapse targets).
Var ce_mean_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch,
                 std::optional<int> fixed_label = std::nullopt);

/// Mean predictive entropy (nats) over a batch.
Var entropy_mean_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch);

/// Sum over hidden layers of MMD^2 between the batch's activations and the
/// given per-layer noise samples (median-heuristic bandwidth).
Var mmd_purge_node(Tape& tape, const MlpSpec& spec, std::span<const Example> batch,
                   const std::vector<std::vector<std::vector<double>>>& noise_per_layer);

// ---- value / gradient entry points ----

LossValue harmful_loss(const ParamVector& theta, const MlpSpec& spec,
                       std::span<const Example> batch);
LossValue capability_loss(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> batch);
LossValue safety_loss(const ParamVector& theta, const MlpSpec& spec,
                      std::span<const Example> batch);
LossValue align_loss(const ParamVector& theta, const MlpSpec& spec,
                     std::span<const Example> safety_batch,
                     std::span<const Example> capability_batch);
LossValue predictive_entropy(const ParamVector& theta, const MlpSpec& spec,
                             std::span<const Example> batch);

LossEval harmful_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                           std::span<const Example> batch);
LossEval capability_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                              std::span<const Example> batch);
LossEval safety_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> batch);
LossEval align_loss_grad(const ParamVector& theta, const MlpSpec& spec,
                         std::span<const Example> safety_batch,
                         std::span<const Example> capability_batch);

/// Safety loss measured on arbitrary harmful inputs by relabeling to the
/// refusal class (holdout diagnostics).
LossValue refusal_loss_on(const ParamVector& theta, const MlpSpec& spec,
                          std::span<const Example> harmful_batch, int refusal_class);

/// Fraction of batch inputs classified as refusal_class.
double refusal_rate(const ParamVector& theta, const MlpSpec& spec,
                    std::span<const Example> batch, int refusal_class);

/// Fraction of batch inputs classified as their stored label.
double accuracy(const ParamVector& theta, const MlpSpec& spec, std::span<const Example> batch);

/// RBF kernel exp(-|a-b|^2 / (2 sigma^2)).
double rbf_kernel(std::span<const double> a, std::span<const double> b, double sigma);

/// Unbiased MMD^2 with RBF kernel on plain samples. sigma <= 0 selects the
/// median heuristic over the pooled sample.
double mmd2_rbf(const std::vector<std::vector<double>>& xs,
                const std::vector<std::vector<double>>& ys, double sigma = 0.0);

} // namespace mft
