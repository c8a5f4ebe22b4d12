#include "mftsim/defense.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mftsim/fd_check.hpp"
#include "mftsim/sampler.hpp"
#include "mftsim/util.hpp"

namespace mft {

using nlohmann::json;

LossTemplate template_of(DefenseKind k) {
    switch (k) {
        case DefenseKind::AlignOnly: return LossTemplate::None;
        case DefenseKind::T1Weight:
        case DefenseKind::T1Hidden: return LossTemplate::T1;
        case DefenseKind::T2RepNoise: return LossTemplate::T2;
        case DefenseKind::T3Booster:
        case DefenseKind::T3Tar:
        case DefenseKind::T3Ctrap: return LossTemplate::T3;
        case DefenseKind::T4Seam:
        case DefenseKind::T4Sdd: return LossTemplate::T4;
    }
    return LossTemplate::None;
}

Strategy strategy_of(DefenseKind k) {
    switch (k) {
        case DefenseKind::T3Ctrap:
        case DefenseKind::T4Seam:
        case DefenseKind::T4Sdd: return Strategy::SelfDestruct;
        default: return Strategy::Anchoring;
    }
}

std::string to_string(LossTemplate t) {
    switch (t) {
        case LossTemplate::T1: return "T1";
        case LossTemplate::T2: return "T2";
        case LossTemplate::T3: return "T3";
        case LossTemplate::T4: return "T4";
        case LossTemplate::None: return "none";
    }
    return "?";
}

std::string to_string(Strategy s) {
    return s == Strategy::Anchoring ? "anchoring" : "self_destruct";
}

void DefenseSpec::validate() const {
    require(steps >= 0, "DefenseSpec: negative step count");
    require(lr > 0.0, "DefenseSpec: lr must be positive");
    require(batch_size > 0, "DefenseSpec: batch_size must be positive");
    require(hyper.purge_alpha >= 0.0 && hyper.purge_beta >= 0.0,
            "DefenseSpec: purge weights must be nonnegative");
    require(hyper.inner_steps >= 1, "DefenseSpec: inner_steps must be >= 1");
    require(hyper.inner_lr >= 0.0, "DefenseSpec: inner_lr must be nonnegative");
    require(hyper.couple_beta >= 0.0, "DefenseSpec: couple_beta must be nonnegative");
}

std::uint64_t DefenseSpec::hash() const {
    std::ostringstream s;
    s << name << '|' << static_cast<int>(kind) << '|' << fmt_double(hyper.sam_radius) << ','
      << fmt_double(hyper.purge_alpha) << ',' << fmt_double(hyper.purge_beta) << ','
      << fmt_double(hyper.lookahead_lambda) << ',' << hyper.inner_steps << ','
      << fmt_double(hyper.inner_lr) << ',' << fmt_double(hyper.couple_beta) << ','
      << fmt_double(hyper.sdd_weight) << ',' << hyper.collapse_class << ',' << hyper.hidden_layer << '|' << steps << '|'
      << fmt_double(lr) << '|' << fmt_double(warmup_ratio) << '|' << batch_size << '|'
      << fmt_double(clip_norm) << '|' << seed;
    return fnv1a64(s.str());
}

// ---- T1 ----

namespace {

constexpr double kFlatEps = 1e-12;

ParamVector ascent_point(const ParamVector& theta, const ParamVector& g, double radius) {
    double gn = norm(g);
    if (gn < kFlatEps) return theta;  // flat point: no perturbation
    ParamVector p = theta;
    axpy(radius / gn, g, p);
    return p;
}

} // namespace

double t1_robust_basin_loss(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                            double lambda, std::span<const Example> safety,
                            std::span<const Example> cap) {
    require(sam_radius >= 0.0, "t1: sam_radius must be nonnegative");
    ParamVector g = align_loss_grad(theta, model, safety, cap).grad;
    ParamVector pert = ascent_point(theta, g, sam_radius);
    return align_loss(pert, model, safety, cap).value +
           lambda * capability_loss(theta, model, cap).value;
}

LossEval t1_robust_basin_grad(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                              double lambda, std::span<const Example> safety,
                              std::span<const Example> cap) {
    require(sam_radius >= 0.0, "t1: sam_radius must be nonnegative");
    ParamVector g = align_loss_grad(theta, model, safety, cap).grad;
    ParamVector pert = ascent_point(theta, g, sam_radius);
    LossEval at_pert = align_loss_grad(pert, model, safety, cap);
    LossEval cap_term = capability_loss_grad(theta, model, cap);
    LossEval out;
    out.value = at_pert.value + lambda * cap_term.value;
    out.grad = at_pert.grad;  // delta* treated as constant
    axpy(lambda, cap_term.grad, out.grad);
    return out;
}

namespace {

struct HiddenPerturbations {
    std::vector<std::vector<double>> safety;
    std::vector<std::vector<double>> cap;
};

/// Per-example ascent directions in activation space: the adjoint of each
/// example's layer activation under the align loss, scaled to radius.
HiddenPerturbations hidden_ascent_deltas(const ParamVector& theta, const MlpSpec& model,
                                         double radius, std::span<const Example> safety,
                                         std::span<const Example> cap, int layer) {
    require(layer >= 0 && layer < model.n_hidden(), "t1_hidden: layer out of range");
    Tape tape(theta);
    std::vector<Var> acts;
    std::vector<Var> terms;
    auto add_batch = [&](std::span<const Example> batch) {
        std::vector<Var> ce;
        for (const auto& e : batch) {
            ForwardTrace tr = forward_trace(tape, model, e.x);
            acts.push_back(tr.hidden[static_cast<std::size_t>(layer)]);
            ce.push_back(tape.cross_entropy(tr.logits, e.y));
        }
        terms.push_back(tape.mean(ce));
    };
    add_batch(safety);
    add_batch(cap);
    std::vector<double> w = {1.0, 1.0};
    Var root = tape.weighted_sum(terms, w);
    tape.backward(root);

    HiddenPerturbations out;
    auto scale_delta = [&](const std::vector<double>& adj) {
        double n = 0.0;
        for (double v : adj) n += v * v;
        n = std::sqrt(n);
        std::vector<double> d(adj.size(), 0.0);
        if (n >= kFlatEps)
            for (std::size_t i = 0; i < adj.size(); ++i) d[i] = radius * adj[i] / n;
        return d;
    };
    for (std::size_t i = 0; i < safety.size(); ++i)
        out.safety.push_back(scale_delta(tape.adjoint(acts[i])));
    for (std::size_t i = 0; i < cap.size(); ++i)
        out.cap.push_back(scale_delta(tape.adjoint(acts[safety.size() + i])));
    return out;
}

LossEval t1_hidden_eval(const ParamVector& theta, const MlpSpec& model, double radius,
                        double lambda, std::span<const Example> safety,
                        std::span<const Example> cap, int layer, bool want_grad) {
    HiddenPerturbations deltas = hidden_ascent_deltas(theta, model, radius, safety, cap, layer);

    Tape tape(theta);
    std::vector<Var> terms;
    auto add_perturbed = [&](std::span<const Example> batch,
                             const std::vector<std::vector<double>>& ds) {
        std::vector<Var> ce;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ForwardTrace tr = forward_trace_perturbed(tape, model, batch[i].x, layer, ds[i]);
            ce.push_back(tape.cross_entropy(tr.logits, batch[i].y));
        }
        terms.push_back(tape.mean(ce));
    };
    add_perturbed(safety, deltas.safety);
    add_perturbed(cap, deltas.cap);
    terms.push_back(ce_mean_node(tape, model, cap));  // lambda L_c at unperturbed theta
    std::vector<double> w = {1.0, 1.0, lambda};
    Var root = tape.weighted_sum(terms, w);
    LossEval out;
    out.value = tape.value(root);
    if (want_grad) out.grad = tape.backward(root);
    return out;
}

} // namespace

double t1_hidden_variant_loss(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                              double lambda, std::span<const Example> safety,
                              std::span<const Example> cap, int layer) {
    require(sam_radius >= 0.0, "t1_hidden: sam_radius must be nonnegative");
    return t1_hidden_eval(theta, model, sam_radius, lambda, safety, cap, layer, false).value;
}

LossEval t1_hidden_variant_grad(const ParamVector& theta, const MlpSpec& model, double sam_radius,
                                double lambda, std::span<const Example> safety,
                                std::span<const Example> cap, int layer) {
    require(sam_radius >= 0.0, "t1_hidden: sam_radius must be nonnegative");
    return t1_hidden_eval(theta, model, sam_radius, lambda, safety, cap, layer, true);
}

// ---- T2 ----

namespace {

LossEval t2_eval(const ParamVector& theta, const MlpSpec& model, double alpha, double beta,
                 std::span<const Example> safety, std::span<const Example> cap,
                 std::span<const Example> harm,
                 const std::vector<std::vector<std::vector<double>>>& noise_per_layer,
                 bool want_grad) {
    Tape tape(theta);
    std::vector<Var> terms = {
        ce_mean_node(tape, model, safety),
        ce_mean_node(tape, model, cap),
        ce_mean_node(tape, model, harm),
        mmd_purge_node(tape, model, harm, noise_per_layer),
    };
    std::vector<double> w = {1.0, 1.0, -beta, alpha};
    Var root = tape.weighted_sum(terms, w);
    LossEval out;
    out.value = tape.value(root);
    if (want_grad) out.grad = tape.backward(root);
    return out;
}

} // namespace

double t2_repnoise_loss(const ParamVector& theta, const MlpSpec& model, double alpha, double beta,
                        std::span<const Example> safety, std::span<const Example> cap,
                        std::span<const Example> harm,
                        const std::vector<std::vector<std::vector<double>>>& noise_per_layer) {
    return t2_eval(theta, model, alpha, beta, safety, cap, harm, noise_per_layer, false).value;
}

LossEval t2_repnoise_grad(const ParamVector& theta, const MlpSpec& model, double alpha,
                          double beta, std::span<const Example> safety,
                          std::span<const Example> cap, std::span<const Example> harm,
                          const std::vector<std::vector<std::vector<double>>>& noise_per_layer) {
    return t2_eval(theta, model, alpha, beta, safety, cap, harm, noise_per_layer, true);
}

// ---- T3 ----

SimAttackResult sim_attack(const ParamVector& theta, const MlpSpec& model,
                           std::span<const Example> harm, int k, double eta_in) {
    require(k >= 1, "sim_attack: inner step count must be >= 1");
    require(eta_in >= 0.0, "sim_attack: inner_lr must be nonnegative");
    SimAttackResult out;
    out.path.push_back(theta);
    ParamVector cur = theta;
    for (int i = 0; i < k; ++i) {
        ParamVector g = harmful_loss_grad(cur, model, harm).grad;
        if (!g.all_finite()) throw NumericFailure("sim_attack: non-finite inner gradient");
        double gn = norm(g);
        if (gn >= kFlatEps && eta_in > 0.0) axpy(-eta_in / gn, g, cur);
        out.path.push_back(cur);
    }
    out.theta_prime = cur;
    return out;
}

namespace {

LossEval t3_eval(const ParamVector& theta, const MlpSpec& model, Penalizer penalizer,
                 const DefenseHyper& hyper, std::span<const Example> safety,
                 std::span<const Example> cap, std::span<const Example> harm,
                 std::span<const Example> aux, int collapse_class, bool want_grad) {
    double lambda = hyper.lookahead_lambda;
    LossEval align = want_grad ? align_loss_grad(theta, model, safety, cap)
                               : LossEval{align_loss(theta, model, safety, cap).value, {}};
    SimAttackResult sim = sim_attack(theta, model, harm, hyper.inner_steps, hyper.inner_lr);
    const ParamVector& tp = sim.theta_prime;

    double r = 0.0;
    ParamVector r_grad;  // gradient at theta', first-order d theta'/d theta = I
    switch (penalizer) {
        case Penalizer::Booster: {
            double lh_now = harmful_loss(theta, model, harm).value;
            double lh_post = harmful_loss(tp, model, harm).value;
            r = std::max(0.0, lh_now - lh_post);
            if (want_grad) {
                r_grad = ParamVector(theta.size());
                if (lh_now - lh_post > 0.0) {
                    r_grad = harmful_loss_grad(theta, model, harm).grad;
                    axpy(-1.0, harmful_loss_grad(tp, model, harm).grad, r_grad);
                }
            }
            break;
        }
        case Penalizer::TarEntropy: {
            require(!aux.empty(), "t3 tar: empty entropy batch");
            double log_c = std::log(static_cast<double>(model.output_dim()));
            if (want_grad) {
                Tape tape(tp);
                Var h = entropy_mean_node(tape, model, aux);
                r = log_c - tape.value(h);
                r_grad = tape.backward(h);
                for (double& v : r_grad.values) v = -v;
            } else {
                r = log_c - predictive_entropy(tp, model, aux).value;
            }
            break;
        }
        case Penalizer::Ctrap: {
            require(!aux.empty(), "t3 ctrap: empty benign batch");
            require(collapse_class >= 0 && collapse_class < model.output_dim(),
                    "t3 ctrap: collapse class out of range");
            if (want_grad) {
                Tape tape(tp);
                Var ce = ce_mean_node(tape, model, aux, collapse_class);
                r = tape.value(ce);
                r_grad = tape.backward(ce);
            } else {
                Tape tape(tp);
                r = tape.value(ce_mean_node(tape, model, aux, collapse_class));
            }
            break;
        }
    }

    LossEval out;
    out.value = align.value + lambda * r;
    if (want_grad) {
        out.grad = align.grad;
        if (r_grad.size() == theta.size()) axpy(lambda, r_grad, out.grad);
    }
    return out;
}

} // namespace

double t3_lookahead_loss(const ParamVector& theta, const MlpSpec& model, Penalizer penalizer,
                         const DefenseHyper& hyper, std::span<const Example> safety,
                         std::span<const Example> cap, std::span<const Example> harm,
                         std::span<const Example> aux, int collapse_class) {
    return t3_eval(theta, model, penalizer, hyper, safety, cap, harm, aux, collapse_class, false)
        .value;
}

LossEval t3_lookahead_grad(const ParamVector& theta, const MlpSpec& model, Penalizer penalizer,
                           const DefenseHyper& hyper, std::span<const Example> safety,
                           std::span<const Example> cap, std::span<const Example> harm,
                           std::span<const Example> aux, int collapse_class) {
    return t3_eval(theta, model, penalizer, hyper, safety, cap, harm, aux, collapse_class, true);
}

// ---- T4 ----

namespace {

/// H v for the loss behind grad_fn, by central differences along the
/// normalized direction.
ParamVector hvp_direction(const GradFn& grad_fn, const ParamVector& theta, const ParamVector& v,
                          double eps) {
    double vn = norm(v);
    ParamVector unit = scale(v, 1.0 / vn);
    ParamVector h = hvp_fd(grad_fn, theta, unit, eps);
    return scale(h, vn);
}

constexpr double kHvpEps = 1e-4;

} // namespace

double t4_seam_couple_loss(const ParamVector& theta, const MlpSpec& model, double couple_beta,
                           std::span<const Example> safety, std::span<const Example> cap,
                           std::span<const Example> harm) {
    double base = align_loss(theta, model, safety, cap).value;
    ParamVector gh = harmful_loss_grad(theta, model, harm).grad;
    ParamVector gc = capability_loss_grad(theta, model, cap).grad;
    if (norm(gh) < kFlatEps || norm(gc) < kFlatEps) return base;  // converged component
    return base + couple_beta * vec_cosine(gh, gc);
}

LossEval t4_seam_couple_grad(const ParamVector& theta, const MlpSpec& model, double couple_beta,
                             std::span<const Example> safety, std::span<const Example> cap,
                             std::span<const Example> harm) {
    LossEval align = align_loss_grad(theta, model, safety, cap);
    ParamVector gh = harmful_loss_grad(theta, model, harm).grad;
    ParamVector gc = capability_loss_grad(theta, model, cap).grad;
    double bh = norm(gh), bc = norm(gc);
    if (bh < kFlatEps || bc < kFlatEps) return align;  // converged component: skip coupling

    GradFn gh_fn = [&](const ParamVector& p) { return harmful_loss_grad(p, model, harm).grad; };
    GradFn gc_fn = [&](const ParamVector& p) { return capability_loss_grad(p, model, cap).grad; };

    double a = dot(gh, gc);
    ParamVector hh_gc = hvp_direction(gh_fn, theta, gc, kHvpEps);
    ParamVector hc_gh = hvp_direction(gc_fn, theta, gh, kHvpEps);
    ParamVector hh_gh = hvp_direction(gh_fn, theta, gh, kHvpEps);
    ParamVector hc_gc = hvp_direction(gc_fn, theta, gc, kHvpEps);

    // grad cos = (Hh gc + Hc gh)/(bh bc) - a (Hh gh)/(bh^3 bc) - a (Hc gc)/(bh bc^3)
    ParamVector cos_grad(theta.size());
    axpy(1.0 / (bh * bc), hh_gc, cos_grad);
    axpy(1.0 / (bh * bc), hc_gh, cos_grad);
    axpy(-a / (bh * bh * bh * bc), hh_gh, cos_grad);
    axpy(-a / (bh * bc * bc * bc), hc_gc, cos_grad);

    LossEval out;
    out.value = align.value + couple_beta * (a / (bh * bc));
    out.grad = align.grad;
    axpy(couple_beta, cos_grad, out.grad);
    return out;
}

double t4_sdd_data_loss(const ParamVector& theta, const MlpSpec& model, double sdd_weight,
                        std::span<const Example> safety, std::span<const Example> cap,
                        std::span<const Example> sdd) {
    require(sdd_weight >= 0.0, "t4_sdd: decoy weight must be nonnegative");
    double v = align_loss(theta, model, safety, cap).value;
    if (!sdd.empty() && sdd_weight > 0.0) {
        Tape tape(theta);
        v += sdd_weight * tape.value(ce_mean_node(tape, model, sdd));
    }
    return v;
}

LossEval t4_sdd_data_grad(const ParamVector& theta, const MlpSpec& model, double sdd_weight,
                          std::span<const Example> safety, std::span<const Example> cap,
                          std::span<const Example> sdd) {
    require(sdd_weight >= 0.0, "t4_sdd: decoy weight must be nonnegative");
    Tape tape(theta);
    std::vector<Var> terms = {ce_mean_node(tape, model, safety), ce_mean_node(tape, model, cap)};
    std::vector<double> w = {1.0, 1.0};
    if (!sdd.empty() && sdd_weight > 0.0) {
        terms.push_back(ce_mean_node(tape, model, sdd));
        w.push_back(sdd_weight);
    }
    Var root = tape.weighted_sum(terms, w);
    return {tape.value(root), tape.backward(root)};
}

// ---- per-step objective and runner ----

LossEval defense_loss_grad(const DefenseSpec& spec, const ParamVector& theta,
                           const MlpSpec& model, const DatasetBundle& bundle, Rng& rng) {
    std::size_t bs = static_cast<std::size_t>(spec.batch_size);
    std::vector<Example> safety = sample_batch(bundle.d_align_safety, bs, rng);
    std::vector<Example> cap = sample_batch(bundle.d_align_capability, bs, rng);

    switch (spec.kind) {
        case DefenseKind::AlignOnly:
            return align_loss_grad(theta, model, safety, cap);
        case DefenseKind::T1Weight:
            return t1_robust_basin_grad(theta, model, spec.hyper.sam_radius,
                                        spec.hyper.lookahead_lambda, safety, cap);
        case DefenseKind::T1Hidden:
            return t1_hidden_variant_grad(theta, model, spec.hyper.sam_radius,
                                          spec.hyper.lookahead_lambda, safety, cap,
                                          spec.hyper.hidden_layer);
        case DefenseKind::T2RepNoise: {
            std::vector<Example> harm = sample_batch(bundle.d_h_attack, bs, rng);
            std::vector<std::vector<std::vector<double>>> noise(
                static_cast<std::size_t>(model.n_hidden()));
            for (int l = 0; l < model.n_hidden(); ++l) {
                std::size_t dim = static_cast<std::size_t>(model.layer_sizes[l + 1]);
                auto& layer_noise = noise[static_cast<std::size_t>(l)];
                layer_noise.resize(harm.size());
                for (auto& sample : layer_noise) {
                    sample.resize(dim);
                    for (double& v : sample) v = rng.gaussian();
                }
            }
            return t2_repnoise_grad(theta, model, spec.hyper.purge_alpha, spec.hyper.purge_beta,
                                    safety, cap, harm, noise);
        }
        case DefenseKind::T3Booster:
        case DefenseKind::T3Tar:
        case DefenseKind::T3Ctrap: {
            std::vector<Example> harm = sample_batch(bundle.d_h_attack, bs, rng);
            Penalizer pen = spec.kind == DefenseKind::T3Booster  ? Penalizer::Booster
                            : spec.kind == DefenseKind::T3Tar    ? Penalizer::TarEntropy
                                                                 : Penalizer::Ctrap;
            std::vector<Example> aux;
            int collapse = spec.hyper.collapse_class;
            if (pen == Penalizer::TarEntropy) {
                aux = sample_batch(bundle.holdout_h, bs, rng);
            } else if (pen == Penalizer::Ctrap) {
                aux = cap;
                if (collapse < 0)
                    collapse = (bundle.refusal_class() + 1) % bundle.total_classes();
            }
            return t3_lookahead_grad(theta, model, pen, spec.hyper, safety, cap, harm, aux,
                                     collapse);
        }
        case DefenseKind::T4Seam: {
            std::vector<Example> harm = sample_batch(bundle.d_h_attack, bs, rng);
            return t4_seam_couple_grad(theta, model, spec.hyper.couple_beta, safety, cap, harm);
        }
        case DefenseKind::T4Sdd: {
            std::vector<Example> sdd = sample_batch(bundle.d_sdd, bs, rng);
            return t4_sdd_data_grad(theta, model, spec.hyper.sdd_weight, safety, cap, sdd);
        }
    }
    throw ContractViolation("defense_loss_grad: unknown defense kind");
}

BaselineMetrics holdout_metrics(const ParamVector& theta, const MlpSpec& model,
                                const DatasetBundle& bundle) {
    BaselineMetrics m;
    m.loss_h = harmful_loss(theta, model, bundle.holdout_h).value;
    m.loss_c = capability_loss(theta, model, bundle.holdout_c).value;
    m.loss_s = refusal_loss_on(theta, model, bundle.holdout_h, bundle.refusal_class()).value;
    m.benign_acc = accuracy(theta, model, bundle.holdout_c);
    m.refusal_rate = refusal_rate(theta, model, bundle.holdout_h, bundle.refusal_class());
    return m;
}

namespace {

double resolve_sam_radius(const DefenseSpec& spec, const ParamVector& base,
                          const MlpSpec& model) {
    if (spec.hyper.sam_radius > 0.0) return spec.hyper.sam_radius;
    if (spec.kind == DefenseKind::T1Weight) return 0.05 * norm(base);
    if (spec.kind == DefenseKind::T1Hidden) {
        int dim = model.layer_sizes[static_cast<std::size_t>(spec.hyper.hidden_layer) + 1];
        return 0.05 * std::sqrt(static_cast<double>(dim));
    }
    return spec.hyper.sam_radius;
}

} // namespace

DefendedCheckpoint run_defense(const ParamVector& base, const DefenseSpec& spec,
                               const MlpSpec& model, const DatasetBundle& bundle,
                               const AlignmentGate& gate) {
    spec.validate();
    DefenseSpec resolved = spec;
    resolved.hyper.sam_radius = resolve_sam_radius(spec, base, model);
    if (resolved.hyper.collapse_class < 0 && spec.kind == DefenseKind::T3Ctrap)
        resolved.hyper.collapse_class = (bundle.refusal_class() + 1) % bundle.total_classes();

    Rng rng(seed_combine(resolved.seed, resolved.hash()));
    Schedule sched = CosineWarmup{resolved.lr, resolved.warmup_ratio};
    AdamState state;
    OptimizerConfig opt;
    opt.clip_norm = resolved.clip_norm;

    ParamVector theta = base;
    for (int t = 0; t < resolved.steps; ++t) {
        double eta = schedule_eval(sched, t, resolved.steps);
        LossEval e = defense_loss_grad(resolved, theta, model, bundle, rng);
        theta = optimizer_step(theta, e.grad, eta, state, opt).theta;
    }

    DefendedCheckpoint ckpt;
    ckpt.theta = std::move(theta);
    ckpt.spec = resolved;
    ckpt.baseline = holdout_metrics(ckpt.theta, model, bundle);
    if (ckpt.baseline.loss_s > gate.max_loss_s || ckpt.baseline.loss_c > gate.max_loss_c ||
        ckpt.baseline.refusal_rate < gate.min_refusal_rate) {
        std::ostringstream msg;
        msg << "defense '" << resolved.name << "' failed the alignment gate: loss_s="
            << fmt_double(ckpt.baseline.loss_s) << " loss_c=" << fmt_double(ckpt.baseline.loss_c)
            << " refusal_rate=" << fmt_double(ckpt.baseline.refusal_rate);
        throw DefenseFailed(msg.str(), ckpt.baseline);
    }
    return ckpt;
}

DefendedCheckpoint run_alignment(const ParamVector& base, const MlpSpec& model,
                                 const DatasetBundle& bundle, const AlignmentGate& gate,
                                 int max_steps, double lr, std::uint64_t seed,
                                 const AlignStop& stop) {
    DefenseSpec spec;
    spec.name = "align_base";
    spec.kind = DefenseKind::AlignOnly;
    spec.steps = max_steps;
    spec.lr = lr;
    spec.seed = seed;
    spec.validate();

    Rng rng(seed_combine(spec.seed, spec.hash()));
    Schedule sched = CosineWarmup{spec.lr, spec.warmup_ratio};
    AdamState state;
    OptimizerConfig opt;
    opt.clip_norm = spec.clip_norm;

    ParamVector theta = base;
    BaselineMetrics metrics = holdout_metrics(theta, model, bundle);
    for (int t = 0; t < max_steps; ++t) {
        if (metrics.refusal_rate >= stop.min_refusal_rate && metrics.loss_s <= stop.max_loss_s &&
            metrics.loss_c <= stop.max_loss_c)
            break;
        double eta = schedule_eval(sched, t, max_steps);
        LossEval e = defense_loss_grad(spec, theta, model, bundle, rng);
        theta = optimizer_step(theta, e.grad, eta, state, opt).theta;
        metrics = holdout_metrics(theta, model, bundle);
    }

    DefendedCheckpoint ckpt;
    ckpt.theta = std::move(theta);
    ckpt.spec = spec;
    ckpt.baseline = metrics;
    if (ckpt.baseline.loss_s > gate.max_loss_s || ckpt.baseline.loss_c > gate.max_loss_c ||
        ckpt.baseline.refusal_rate < gate.min_refusal_rate) {
        std::ostringstream msg;
        msg << "alignment failed the gate after " << max_steps
            << " steps: loss_s=" << fmt_double(ckpt.baseline.loss_s)
            << " loss_c=" << fmt_double(ckpt.baseline.loss_c)
            << " refusal_rate=" << fmt_double(ckpt.baseline.refusal_rate);
        throw DefenseFailed(msg.str(), ckpt.baseline);
    }
    return ckpt;
}

// ---- registry ----

const std::vector<TaxonomyRow>& defense_taxonomy() {
    static const std::vector<TaxonomyRow> rows = {
        {"Vaccine", "representation", 2024, "T1", Strategy::Anchoring, "huang2024vaccine"},
        {"T-Vaccine", "representation", 2025, "T1", Strategy::Anchoring, "liu2025targeted"},
        {"RepNoise", "representation", 2024, "T2", Strategy::Anchoring,
         "rosati2024representation"},
        {"VAA", "direction", 2025, "T1", Strategy::Anchoring, "chen2025vulnerability"},
        {"SAM-unlearning", "direction", 2025, "T1", Strategy::Anchoring, "fan2025towards"},
        {"Antibody", "direction", 2026, "T1+T3", Strategy::Anchoring, "nguyen2026antibody"},
        {"Booster", "direction", 2024, "T3", Strategy::Anchoring, "huang2024booster"},
        {"LoX", "subspace", 2025, "T1", Strategy::Anchoring, "perin2025lox"},
        {"AntiDote", "subspace", 2026, "T3", Strategy::Anchoring, "sanyal2026antidote"},
        {"KT-IPA", "objective", 2025, "T2+T3", Strategy::Anchoring, "cheng2025weaponization"},
        {"MLAC", "trajectory", 2023, "T3", Strategy::Anchoring, "henderson2023self"},
        {"TAR", "trajectory", 2024, "T3", Strategy::Anchoring, "tamirisa2024tamper"},
        {"CTRAP", "self_destruct", 2025, "T3", Strategy::SelfDestruct, "yi2025ctrap"},
        {"SEAM", "self_destruct", 2025, "T4", Strategy::SelfDestruct, "wang2025self"},
        {"SDD", "self_destruct", 2025, "T4", Strategy::SelfDestruct, "chen2025sdd"},
    };
    return rows;
}

const std::vector<DefenseInstance>& defense_instances() {
    static const std::vector<DefenseInstance> rows = {
        {"t1_weight", DefenseKind::T1Weight, "SAM-unlearning, VAA"},
        {"t1_hidden", DefenseKind::T1Hidden, "Vaccine, T-Vaccine"},
        {"t2_repnoise", DefenseKind::T2RepNoise, "RepNoise"},
        {"t3_booster", DefenseKind::T3Booster, "Booster"},
        {"t3_tar", DefenseKind::T3Tar, "TAR, MLAC"},
        {"t3_ctrap", DefenseKind::T3Ctrap, "CTRAP"},
        {"t4_seam", DefenseKind::T4Seam, "SEAM"},
        {"t4_sdd", DefenseKind::T4Sdd, "SDD"},
    };
    return rows;
}

DefenseSpec default_defense_spec(const std::string& name) {
    for (const auto& inst : defense_instances()) {
        if (inst.name != name) continue;
        DefenseSpec spec;
        spec.name = name;
        spec.kind = inst.kind;
        return spec;
    }
    throw ContractViolation("unknown defense instance: " + name);
}

std::string registry_json() {
    json taxonomy = json::array();
    for (const auto& r : defense_taxonomy())
        taxonomy.push_back({{"defense", r.defense},
                            {"sub_strategy", r.sub_strategy},
                            {"year", r.year},
                            {"template", r.templates},
                            {"strategy", to_string(r.strategy)},
                            {"citation", r.citation}});
    json instances = json::array();
    for (const auto& i : defense_instances())
        instances.push_back({{"name", i.name},
                             {"template", to_string(template_of(i.kind))},
                             {"strategy", to_string(strategy_of(i.kind))},
                             {"mirrors", i.mirrors}});
    return json{{"taxonomy", taxonomy}, {"instances", instances}}.dump(2) + "\n";
}

} // namespace mft
