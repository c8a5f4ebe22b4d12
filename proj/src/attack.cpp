#include "mftsim/attack.hpp"

#include <cmath>
#include <sstream>

#include "mftsim/util.hpp"

namespace mft {

namespace {

constexpr double kPi = 3.141592653589793238462643383279;
constexpr int kEvalBatch = 32;

} // namespace

double schedule_eval(const Schedule& schedule, int t, int total_steps) {
    require(total_steps > 0, "schedule_eval: total_steps must be positive");
    require(t >= 0 && t <= total_steps, "schedule_eval: step out of range");
    if (std::holds_alternative<CosineWarmup>(schedule)) {
        const auto& s = std::get<CosineWarmup>(schedule);
        int w = static_cast<int>(s.warmup_ratio * total_steps);
        if (t < w) return s.eta0 * static_cast<double>(t) / static_cast<double>(w);
        double progress =
            static_cast<double>(t - w) / static_cast<double>(total_steps - w);
        return s.eta0 * 0.5 * (1.0 + std::cos(kPi * progress));
    }
    const auto& s = std::get<KickSettle>(schedule);
    int kick_end = static_cast<int>(s.kick_fraction * total_steps);
    if (t < kick_end) return s.eta0 * s.kick_mult;
    double eta_max = s.eta0;
    double eta_min = s.eta0 / s.settle_min_div;
    double tt = static_cast<double>(t - kick_end) / static_cast<double>(total_steps - kick_end);
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(kPi * tt));
}

StepResult optimizer_step(const ParamVector& theta, const ParamVector& grad, double eta,
                          AdamState& state, const OptimizerConfig& cfg) {
    require(eta >= 0.0, "optimizer_step: negative learning rate");
    require(grad.size() == theta.size(), "optimizer_step: gradient length mismatch");
    if (!grad.all_finite()) throw NumericFailure("optimizer_step: non-finite gradient");
    if (state.m.empty()) state.init(theta.size());
    require(state.m.size() == theta.size(), "optimizer_step: state size mismatch");

    double gn = norm(grad);
    double clip_scale = (gn > cfg.clip_norm && gn > 0.0) ? cfg.clip_norm / gn : 1.0;

    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    StepResult out;
    out.theta = theta;
    out.applied_grad_norm = gn * clip_scale;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i] * clip_scale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        out.theta[i] -= eta * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta[i]);
    }
    if (!out.theta.all_finite()) throw NumericFailure("optimizer_step: non-finite parameters");
    return out;
}

void AttackSpec::validate() const {
    require(total_steps >= 0, "AttackSpec: negative step count");
    require(batch_size > 0, "AttackSpec: batch_size must be positive");
    require(clip_norm > 0.0, "AttackSpec: clip_norm must be positive");
    require(lambda_h >= 0.0 && lambda_c >= 0.0, "AttackSpec: negative objective weights");
    require(log_interval > 0, "AttackSpec: log_interval must be positive");
    if (std::holds_alternative<CosineWarmup>(schedule)) {
        const auto& s = std::get<CosineWarmup>(schedule);
        require(s.eta0 > 0.0, "AttackSpec: eta0 must be positive");
        require(s.warmup_ratio >= 0.0 && s.warmup_ratio < 1.0,
                "AttackSpec: warmup_ratio must be in [0, 1)");
    } else {
        const auto& s = std::get<KickSettle>(schedule);
        require(s.eta0 > 0.0, "AttackSpec: eta0 must be positive");
        require(s.kick_mult >= 50.0 && s.kick_mult <= 100.0,
                "AttackSpec: kick_mult must lie in [50, 100]");
        require(s.kick_fraction > 0.0 && s.kick_fraction < 1.0,
                "AttackSpec: kick_fraction must be in (0, 1)");
        require(s.settle_min_div > 1.0, "AttackSpec: settle_min_div must exceed 1");
    }
    if (param_mode.adapter) require(param_mode.rank > 0, "AttackSpec: adapter rank positive");
}

std::uint64_t AttackSpec::hash() const {
    std::ostringstream s;
    s << name << '|' << to_string(objective) << '|' << fmt_double(lambda_h) << '|'
      << fmt_double(lambda_c) << '|';
    if (std::holds_alternative<CosineWarmup>(schedule)) {
        const auto& c = std::get<CosineWarmup>(schedule);
        s << "cosine_warmup:" << fmt_double(c.eta0) << ',' << fmt_double(c.warmup_ratio);
    } else {
        const auto& k = std::get<KickSettle>(schedule);
        s << "kick_settle:" << fmt_double(k.eta0) << ',' << fmt_double(k.kick_mult) << ','
          << fmt_double(k.kick_fraction) << ',' << fmt_double(k.settle_min_div);
    }
    s << '|' << total_steps << '|' << batch_size << '|' << fmt_double(clip_norm) << '|'
      << (param_mode.adapter ? 1 : 0) << ',' << param_mode.rank << ','
      << fmt_double(param_mode.alpha) << '|' << seed << '|' << log_interval;
    return fnv1a64(s.str());
}

std::string to_string(AttackObjective o) {
    return o == AttackObjective::Naive ? "naive" : "mixed";
}

double attack_objective(const AttackSpec& spec, const ParamVector& theta, const MlpSpec& model,
                        const DatasetBundle& bundle) {
    double lh = harmful_loss(theta, model, bundle.d_h_attack).value;
    if (spec.objective == AttackObjective::Naive) return lh;
    double lc = capability_loss(theta, model, bundle.d_c_retain).value;
    return spec.lambda_h * lh + spec.lambda_c * lc;
}

LossEval attack_objective_grad(const AttackSpec& spec, const ParamVector& theta,
                               const MlpSpec& model, std::span<const Example> batch_h,
                               std::span<const Example> batch_c) {
    Tape tape(theta);
    if (spec.objective == AttackObjective::Naive) {
        Var h = ce_mean_node(tape, model, batch_h);
        std::vector<Var> parts = {h};
        std::vector<double> w = {1.0};
        Var root = tape.weighted_sum(parts, w);
        return {tape.value(root), tape.backward(root)};
    }
    Var h = ce_mean_node(tape, model, batch_h);
    Var c = ce_mean_node(tape, model, batch_c);
    std::vector<Var> parts = {h, c};
    std::vector<double> w = {spec.lambda_h, spec.lambda_c};
    Var root = tape.weighted_sum(parts, w);
    return {tape.value(root), tape.backward(root)};
}

namespace {

/// Without-replacement batches, reshuffled each epoch.
class BatchSampler {
public:
    BatchSampler(std::size_t n, int batch_size) : batch_(static_cast<std::size_t>(batch_size)) {
        order_.resize(n);
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        pos_ = n;  // force shuffle on first draw
    }

    std::vector<std::size_t> next(Rng& rng) {
        std::vector<std::size_t> idx;
        idx.reserve(batch_);
        while (idx.size() < batch_) {
            if (pos_ >= order_.size()) {
                rng.shuffle(order_);
                pos_ = 0;
            }
            idx.push_back(order_[pos_++]);
        }
        return idx;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::size_t batch_;
};

std::vector<Example> gather(const std::vector<Example>& split,
                            const std::vector<std::size_t>& idx) {
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(split[i]);
    return out;
}

std::vector<Example> sample_eval_batch(const std::vector<Example>& split, Rng& rng) {
    std::vector<std::size_t> order(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t n = std::min<std::size_t>(kEvalBatch, split.size());
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(split[order[i]]);
    return out;
}

// Adapter-mode objective: tape theta is the adapter parameter vector.
LossEval adapter_objective_grad(const AttackSpec& spec, const ParamVector& adapter_params,
                                const ParamVector& frozen, const LowRankAdapter& adapter,
                                const MlpSpec& model, std::span<const Example> batch_h,
                                std::span<const Example> batch_c) {
    Tape tape(adapter_params);
    auto ce_mean = [&](std::span<const Example> batch) {
        std::vector<Var> terms;
        terms.reserve(batch.size());
        for (const auto& e : batch) {
            Var logits = adapter_forward(tape, frozen, adapter, model, e.x);
            terms.push_back(tape.cross_entropy(logits, e.y));
        }
        return tape.mean(terms);
    };
    std::vector<Var> parts;
    std::vector<double> w;
    parts.push_back(ce_mean(batch_h));
    w.push_back(spec.objective == AttackObjective::Naive ? 1.0 : spec.lambda_h);
    if (spec.objective == AttackObjective::Mixed) {
        parts.push_back(ce_mean(batch_c));
        w.push_back(spec.lambda_c);
    }
    Var root = tape.weighted_sum(parts, w);
    return {tape.value(root), tape.backward(root)};
}

} // namespace

AttackTrajectory run_attack(const ParamVector& theta_start, const MlpSpec& model,
                            const AttackSpec& spec, const DatasetBundle& bundle) {
    spec.validate();
    require(!bundle.d_h_attack.empty(), "run_attack: empty harmful attack split");

    Rng rng(seed_combine(spec.seed, spec.hash()));
    std::vector<Example> eval_h = sample_eval_batch(bundle.holdout_h, rng);
    std::vector<Example> eval_c = sample_eval_batch(bundle.holdout_c, rng);

    LowRankAdapter adapter{spec.param_mode.rank, spec.param_mode.alpha};
    const bool adapter_mode = spec.param_mode.adapter;
    ParamVector theta = adapter_mode
                            ? adapter_init(adapter, model, seed_combine(spec.seed, 0xada))
                            : theta_start;
    auto merged = [&](const ParamVector& run_theta) {
        return adapter_mode ? merge_adapter(theta_start, adapter, model, run_theta) : run_theta;
    };

    AttackTrajectory traj;
    traj.theta_path.emplace_back(0, merged(theta));

    BatchSampler sampler_h(bundle.d_h_attack.size(), spec.batch_size);
    BatchSampler sampler_c(bundle.d_c_retain.size(), spec.batch_size);

    AdamState state;
    OptimizerConfig opt;
    opt.clip_norm = spec.clip_norm;

    traj.per_step.reserve(static_cast<std::size_t>(spec.total_steps));
    for (int t = 0; t < spec.total_steps; ++t) {
        double eta = schedule_eval(spec.schedule, t, spec.total_steps);
        std::vector<Example> batch_h = gather(bundle.d_h_attack, sampler_h.next(rng));
        std::vector<Example> batch_c;
        if (spec.objective == AttackObjective::Mixed)
            batch_c = gather(bundle.d_c_retain, sampler_c.next(rng));

        try {
            LossEval obj =
                adapter_mode
                    ? adapter_objective_grad(spec, theta, theta_start, adapter, model, batch_h,
                                             batch_c)
                    : attack_objective_grad(spec, theta, model, batch_h, batch_c);
            StepResult step = optimizer_step(theta, obj.grad, eta, state, opt);
            theta = std::move(step.theta);

            ParamVector full = merged(theta);
            StepLog log;
            log.step = t;
            log.eta = eta;
            log.loss_h = harmful_loss(full, model, eval_h).value;
            log.loss_c = capability_loss(full, model, eval_c).value;
            log.grad_norm = step.applied_grad_norm;
            traj.per_step.push_back(log);

            if ((t + 1) % spec.log_interval == 0 && t + 1 < spec.total_steps)
                traj.theta_path.emplace_back(t + 1, full);
        } catch (const NumericFailure& e) {
            traj.aborted = true;
            traj.abort_reason = e.what();
            traj.final_theta = merged(theta);
            return traj;
        }
    }
    traj.final_theta = merged(theta);
    if (spec.total_steps > 0) traj.theta_path.emplace_back(spec.total_steps, traj.final_theta);
    return traj;
}

void save_trajectory_csv(const AttackTrajectory& traj, const std::string& path) {
    std::ostringstream out;
    out << "step,eta,loss_h,loss_c,grad_norm\n";
    for (const auto& s : traj.per_step)
        out << s.step << ',' << fmt_double(s.eta) << ',' << fmt_double(s.loss_h) << ','
            << fmt_double(s.loss_c) << ',' << fmt_double(s.grad_norm) << '\n';
    write_file(path, out.str());
}

} // namespace mft
