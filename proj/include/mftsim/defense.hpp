#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mftsim/attack.hpp"
#include "mftsim/dataset.hpp"
#include "mftsim/losses.hpp"
#include "mftsim/mlp.hpp"
#include "mftsim/param_vector.hpp"
#include "mftsim/rng.hpp"

namespace mft {

enum class LossTemplate { T1, T2, T3, T4, None };
enum class Strategy { Anchoring, SelfDestruct };
enum class Penalizer { Booster, TarEntropy, Ctrap };

/// Runnable defense instances. AlignOnly is the plain alignment baseline
/// (no hardening term); it produces the undefended aligned release.
enum class DefenseKind {
    AlignOnly,
    T1Weight,
    T1Hidden,
    T2RepNoise,
    T3Booster,
    T3Tar,
    T3Ctrap,
    T4Seam,
    T4Sdd,
};

LossTemplate template_of(DefenseKind k);
Strategy strategy_of(DefenseKind k);
std::string to_string(LossTemplate t);
std::string to_string(Strategy s);

struct DefenseHyper {
    double sam_radius = 0.0;      // perturbation ball; <= 0 selects the auto rule
    double purge_alpha = 1.0;     // weight of the purge regularizer (T2)
    double purge_beta = 0.5;      // weight of the harmful gradient-ascent term (T2)
    double lookahead_lambda = 1.0;
    int inner_steps = 1;          // K simulated attacker steps (T3)
    double inner_lr = 0.05;       // eta_in of the simulated attacker
    double couple_beta = 1.0;     // T4 coupling weight
    double sdd_weight = 0.2;      // T4 decoy-term weight
    int collapse_class = -1;      // < 0 selects (refusal + 1) mod C
    int hidden_layer = 1;         // T1 hidden-space layer index
};

struct DefenseSpec {
    std::string name;
    DefenseKind kind = DefenseKind::AlignOnly;
    DefenseHyper hyper;
    int steps = 2000;
    double lr = 0.01;
    double warmup_ratio = 0.1;
    int batch_size = 32;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;

    LossTemplate tmpl() const { return template_of(kind); }
    Strategy strategy() const { return strategy_of(kind); }
    void validate() const;
    std::uint64_t hash() const;
};

struct BaselineMetrics {
    double loss_h = 0.0;
    double loss_c = 0.0;
    double loss_s = 0.0;
    double benign_acc = 0.0;
    double refusal_rate = 0.0;
};

struct DefendedCheckpoint {
    ParamVector theta;
    DefenseSpec spec;
    BaselineMetrics baseline;  // holdout metrics at release
};

/// A defense run whose released model fails the alignment gate.
struct DefenseFailed : std::runtime_error {
    BaselineMetrics metrics;
    DefenseFailed(const std::string& msg, BaselineMetrics m)
        : std::runtime_error(msg), metrics(m) {}
};

struct AlignmentGate {
    double max_loss_s = 0.3;
    double max_loss_c = 0.5;
    double min_refusal_rate = 0.9;
};

// ---- template losses (explicit batches; used by tests and the runner) ----

/// T1 weight space: L_align(theta + delta*) + lambda L_c(theta) with
/// delta* one normalized ascent step of radius sam_radius on L_align.
double t1_robust_basin_loss(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                            double lambda, std::span<const Example> safety,
                            std::span<const Example> cap);
LossEval t1_robust_basin_grad(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                              double lambda, std::span<const Example> safety,
                              std::span<const Example> cap);

/// T1 hidden space: the ascent step perturbs the layer activations
/// per example instead of the weights.
double t1_hidden_variant_loss(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                              double lambda, std::span<const Example> safety,
                              std::span<const Example> cap, int layer);
LossEval t1_hidden_variant_grad(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                                double lambda, std::span<const Example> safety,
                                std::span<const Example> cap, int layer);

/// T2: L_align - beta L_h + alpha * sum_layers MMD^2(harmful activations, noise).
double t2_repnoise_loss(const ParamVector& theta, const MlpSpec& model, double alpha, double beta,
                        std::span<const Example> safety, std::span<const Example> cap,
                        std::span<const Example> harm,
                        const std::vector<std::vector<std::vector<double>>>& noise_per_layer);
LossEval t2_repnoise_grad(const ParamVector& theta, const MlpSpec& model, double alpha,
                          double beta, std::span<const Example> safety,
                          std::span<const Example> cap, std::span<const Example> harm,
                          const std::vector<std::vector<std::vector<double>>>& noise_per_layer);

struct SimAttackResult {
    ParamVector theta_prime;
    std::vector<ParamVector> path;  // includes start and end
};

/// K normalized gradient steps on the harmful loss (step = eta_in g / |g|).
SimAttackResult sim_attack(const ParamVector& theta, const MlpSpec& model,
                           std::span<const Example> harm, int k, double eta_in);

/// T3: L_align(theta) + lambda R(theta') with theta' = sim_attack(theta).
/// booster: R = max(0, L_h(theta) - L_h(theta'));
/// tar_entropy: R = ln C - predictive_entropy(theta', entropy_batch);
/// ctrap: R = CE(theta', benign_batch -> collapse_class).
/// Outer gradients use the first-order approximation d theta'/d theta = I.
double t3_lookahead_loss(const ParamVector& theta, const MlpSpec& model, Penalizer penalizer,
                         const DefenseHyper& hyper, std::span<const Example> safety,
                         std::span<const Example> cap, std::span<const Example> harm,
                         std::span<const Example> aux, int collapse_class);
LossEval t3_lookahead_grad(const ParamVector& theta, const MlpSpec& model, Penalizer penalizer,
                           const DefenseHyper& hyper, std::span<const Example> safety,
                           std::span<const Example> cap, std::span<const Example> harm,
                           std::span<const Example> aux, int collapse_class);

/// T4 coupling: L_align + beta_c cos(grad L_h, grad L_c). The cosine term's
/// gradient uses finite-difference Hessian-vector products.
double t4_seam_couple_loss(const ParamVector& theta, const MlpSpec& model, double couple_beta,
                           std::span<const Example> safety, std::span<const Example> cap,
                           std::span<const Example> harm);
LossEval t4_seam_couple_grad(const ParamVector& theta, const MlpSpec& model, double couple_beta,
                             std::span<const Example> safety, std::span<const Example> cap,
                             std::span<const Example> harm);

/// T4 data-level coupling: L_align + sdd_weight * CE on decoy-labeled
/// harmful inputs. The decoy pressure stays below the refusal pressure so
/// the released model still refuses; it pre-loads the trap direction.
double t4_sdd_data_loss(const ParamVector& theta, const MlpSpec& model, double sdd_weight,
                        std::span<const Example> safety, std::span<const Example> cap,
                        std::span<const Example> sdd);
LossEval t4_sdd_data_grad(const ParamVector& theta, const MlpSpec& model, double sdd_weight,
                          std::span<const Example> safety, std::span<const Example> cap,
                          std::span<const Example> sdd);

/// Per-step defense objective with batches drawn from the run RNG.
LossEval defense_loss_grad(const DefenseSpec& spec, const ParamVector& theta,
                           const MlpSpec& model, const DatasetBundle& bundle, Rng& rng);

/// Optimizes the template loss with the shared optimizer, then applies the
/// alignment gate on the holdouts. Throws DefenseFailed if the gate fails.
DefendedCheckpoint run_defense(const ParamVector& base, const DefenseSpec& spec,
                               const MlpSpec& model, const DatasetBundle& bundle,
                               const AlignmentGate& gate);

/// Release criteria for the plain alignment run: training stops at the
/// first step where all three hold on the holdouts. Stopping at "good
/// enough" rather than convergence keeps the capability threshold derived
/// from this model meaningfully above the Bayes floor.
struct AlignStop {
    double min_refusal_rate = 0.95;
    double max_loss_s = 0.15;
    double max_loss_c = 0.30;
};

/// Plain alignment training (no hardening term): the undefended release.
/// max_steps caps the run if the release criteria are never met.
DefendedCheckpoint run_alignment(const ParamVector& base, const MlpSpec& model,
                                 const DatasetBundle& bundle, const AlignmentGate& gate,
                                 int max_steps, double lr, std::uint64_t seed,
                                 const AlignStop& stop = AlignStop{});

BaselineMetrics holdout_metrics(const ParamVector& theta, const MlpSpec& model,
                                const DatasetBundle& bundle);

// ---- registry ----

struct TaxonomyRow {
    std::string defense;
    std::string sub_strategy;
    int year;
    std::string templates;
    Strategy strategy;
    std::string citation;
};

/// Published-defense taxonomy metadata (including entries the simulator does
/// not instantiate).
const std::vector<TaxonomyRow>& defense_taxonomy();

struct DefenseInstance {
    std::string name;
    DefenseKind kind;
    std::string mirrors;  // taxonomy entries this instance follows
};

/// The runnable template instances.
const std::vector<DefenseInstance>& defense_instances();

DefenseSpec default_defense_spec(const std::string& name);
std::string registry_json();

} // namespace mft
