#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mftsim/dataset.hpp"
#include "mftsim/losses.hpp"
#include "mftsim/mlp.hpp"
#include "mftsim/param_vector.hpp"
#include "mftsim/rng.hpp"

namespace mft {

// ---- learning-rate schedules ----

/// Linear warmup over warmup_ratio * T steps, then cosine decay to zero.
struct CosineWarmup {
    double eta0 = 0.01;
    double warmup_ratio = 0.1;
};

/// Two-phase schedule: a constant high-rate kick for the first
/// floor(kick_fraction * T) steps, then cosine decay from eta0 down to
/// eta0 / settle_min_div.
struct KickSettle {
    double eta0 = 0.01;
    double kick_mult = 50.0;
    double kick_fraction = 0.1;
    double settle_min_div = 100.0;
};

using Schedule = std::variant<CosineWarmup, KickSettle>;

double schedule_eval(const Schedule& schedule, int t, int total_steps);

// ---- shared optimizer ----

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
    double clip_norm = 1.0;
};

struct AdamState {
    std::vector<double> m, v;
    long t = 0;

    void init(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

struct StepResult {
    ParamVector theta;
    double applied_grad_norm = 0.0;  // post-clip
};

/// Global-norm gradient clipping followed by a bias-corrected
/// adaptive-moment update with decoupled weight decay.
StepResult optimizer_step(const ParamVector& theta, const ParamVector& grad, double eta,
                          AdamState& state, const OptimizerConfig& cfg);

// ---- attack specification ----

enum class AttackObjective { Naive, Mixed };

struct ParamMode {
    bool adapter = false;
    int rank = 8;
    double alpha = 16.0;
};

struct AttackSpec {
    std::string name = "naive";
    AttackObjective objective = AttackObjective::Naive;
    double lambda_h = 1.0;
    double lambda_c = 1.0;
    Schedule schedule = CosineWarmup{};
    int total_steps = 3000;
    int batch_size = 32;
    double clip_norm = 1.0;
    ParamMode param_mode;
    std::uint64_t seed = 0;
    int log_interval = 100;

    void validate() const;
    std::uint64_t hash() const;
};

/// Objective value on the attacker's full splits (Eq. form: naive is harmful
/// loss alone; mixed adds the weighted capability term).
double attack_objective(const AttackSpec& spec, const ParamVector& theta, const MlpSpec& model,
                        const DatasetBundle& bundle);
LossEval attack_objective_grad(const AttackSpec& spec, const ParamVector& theta,
                               const MlpSpec& model, std::span<const Example> batch_h,
                               std::span<const Example> batch_c);

struct StepLog {
    int step = 0;
    double eta = 0.0;
    double loss_h = 0.0;      // fixed eval batch, post-step parameters
    double loss_c = 0.0;      // fixed eval batch, post-step parameters
    double grad_norm = 0.0;   // post-clip
};

struct AttackTrajectory {
    std::vector<StepLog> per_step;
    std::vector<std::pair<int, ParamVector>> theta_path;  // full-parameter space
    ParamVector final_theta;                              // full-parameter space
    bool aborted = false;
    std::string abort_reason;
};

/// T optimizer steps on the attack objective under the schedule. Batches are
/// drawn without replacement per epoch, reshuffled per epoch from the run
/// RNG. Deterministic in spec.seed. On numeric failure the partial
/// trajectory is returned with aborted set.
AttackTrajectory run_attack(const ParamVector& theta_start, const MlpSpec& model,
                            const AttackSpec& spec, const DatasetBundle& bundle);

void save_trajectory_csv(const AttackTrajectory& traj, const std::string& path);

std::string to_string(AttackObjective o);

} // namespace mft
