#include <cmath>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "mftsim/checkpoint.hpp"
#include "mftsim/fd_check.hpp"
#include "mftsim/matrix.hpp"
#include "mftsim/util.hpp"

using namespace mft;

namespace {

ExperimentConfig load_config_or_default(const std::string& config_path, const std::string& out,
                                        std::uint64_t* seed_override, int jobs, bool cache,
                                        bool no_cache) {
    ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = load_experiment_config(ConfigFile::parse_file(config_path));
    else
        cfg = default_experiment_config();
    if (!out.empty()) {
        cfg.out_dir = out;
    } else if (const char* env = std::getenv("MFTSIM_OUT")) {
        cfg.out_dir = env;
    }
    if (seed_override) cfg.seeds = {*seed_override};
    if (jobs > 0) cfg.jobs = jobs;
    if (cache) cfg.cache = true;
    if (no_cache) cfg.cache = false;
    return cfg;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    DisjointReport rep = verify_disjoint(bundle);
    if (!rep.pass) {
        std::cerr << "generated bundle failed disjointness checks:\n";
        for (const auto& v : rep.violations) std::cerr << "  " << v << "\n";
        return 1;
    }
    ensure_dir(cfg.out_dir);
    save_bundle(bundle, cfg.out_dir + "/bundle.jsonl", cfg.out_dir + "/bundle_manifest.json");
    std::cout << "wrote " << cfg.out_dir << "/bundle.jsonl ("
              << bundle.d_align_safety.size() + bundle.d_align_capability.size() +
                     bundle.d_h_attack.size() + bundle.d_c_retain.size() + bundle.d_sdd.size() +
                     bundle.holdout_h.size() + bundle.holdout_c.size()
              << " examples)\n";
    return 0;
}

int cmd_align_base(const ExperimentConfig& cfg, std::uint64_t seed) {
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    MlpSpec init_spec = cfg.model;
    init_spec.seed = seed_combine(cfg.model.seed, seed);
    ParamVector base = init_params(init_spec);
    DefendedCheckpoint aligned =
        run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                      seed_combine(cfg.align_seed, seed), cfg.align_stop);
    ensure_dir(cfg.out_dir);
    CheckpointMeta meta;
    meta.model_spec = cfg.model;
    meta.seed = seed;
    meta.role = "base";
    meta.provenance["bundle_hash"] = hex64(bundle_hash(bundle));
    std::string path = cfg.out_dir + "/aligned_s" + std::to_string(seed) + ".ckpt";
    save_checkpoint(path, meta, aligned.theta);
    std::cout << "aligned base written to " << path << " (loss_s="
              << fmt_double(aligned.baseline.loss_s)
              << ", loss_c=" << fmt_double(aligned.baseline.loss_c)
              << ", refusal_rate=" << fmt_double(aligned.baseline.refusal_rate) << ")\n";
    return 0;
}

int cmd_defend(const ExperimentConfig& cfg, const std::string& defense, std::uint64_t seed) {
    const DefenseSpec* spec = cfg.find_defense(defense);
    if (!spec) {
        std::cerr << "unknown defense: " << defense << "\n";
        return 1;
    }
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    MlpSpec init_spec = cfg.model;
    init_spec.seed = seed_combine(cfg.model.seed, seed);
    ParamVector base = init_params(init_spec);
    DefendedCheckpoint aligned =
        run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                      seed_combine(cfg.align_seed, seed), cfg.align_stop);
    DefendedCheckpoint ckpt = defend_cached(cfg, *spec, seed, bundle, aligned.theta);
    std::cout << "defense " << defense << " seed " << seed
              << ": loss_s=" << fmt_double(ckpt.baseline.loss_s)
              << " loss_c=" << fmt_double(ckpt.baseline.loss_c)
              << " loss_h=" << fmt_double(ckpt.baseline.loss_h)
              << " refusal_rate=" << fmt_double(ckpt.baseline.refusal_rate) << "\n";
    return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const std::string& defense, const std::string& attack,
               std::uint64_t seed) {
    const DefenseSpec* dspec = cfg.find_defense(defense);
    const AttackSpec* aspec = cfg.find_attack(attack);
    if (!dspec || !aspec) {
        std::cerr << "unknown defense or attack\n";
        return 1;
    }
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    MlpSpec init_spec = cfg.model;
    init_spec.seed = seed_combine(cfg.model.seed, seed);
    ParamVector base = init_params(init_spec);
    DefendedCheckpoint aligned =
        run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                      seed_combine(cfg.align_seed, seed), cfg.align_stop);
    DefendedCheckpoint ckpt = defend_cached(cfg, *dspec, seed, bundle, aligned.theta);
    AttackTrajectory traj = run_attack(ckpt.theta, cfg.model, seeded(*aspec, seed), bundle);
    if (traj.aborted) {
        std::cerr << "attack aborted: " << traj.abort_reason << "\n";
        return 1;
    }
    ensure_dir(cfg.out_dir);
    std::string base_name = defense + "_" + attack + "_s" + std::to_string(seed);
    save_trajectory_csv(traj, cfg.out_dir + "/trajectories/" + base_name + ".csv");
    CheckpointMeta meta;
    meta.model_spec = cfg.model;
    meta.seed = seed;
    meta.role = "attacked";
    meta.provenance["defense_spec_hash"] = hex64(seeded(*dspec, seed).hash());
    meta.provenance["attack_spec_hash"] = hex64(seeded(*aspec, seed).hash());
    save_checkpoint(cfg.out_dir + "/checkpoints/" + base_name + ".ckpt", meta, traj.final_theta);
    std::cout << "attack " << attack << " on " << defense << " seed " << seed << ": final loss_h="
              << fmt_double(traj.per_step.empty() ? 0.0 : traj.per_step.back().loss_h)
              << " loss_c="
              << fmt_double(traj.per_step.empty() ? 0.0 : traj.per_step.back().loss_c) << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& defense, const std::string& attack,
             std::uint64_t seed) {
    ExperimentConfig one = cfg;
    one.seeds = {seed, seed, seed};  // judge needs the seed context; reuse matrix plumbing
    const DefenseSpec* dspec = cfg.find_defense(defense);
    const AttackSpec* aspec = cfg.find_attack(attack);
    if (!dspec || !aspec) {
        std::cerr << "unknown defense or attack\n";
        return 1;
    }
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    MlpSpec init_spec = cfg.model;
    init_spec.seed = seed_combine(cfg.model.seed, seed);
    ParamVector base = init_params(init_spec);
    DefendedCheckpoint aligned =
        run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                      seed_combine(cfg.align_seed, seed), cfg.align_stop);
    AttackSpec oracle_spec = seeded(*cfg.find_attack("naive"), seed);
    OracleResult oracle = reference_theta_star(aligned, cfg.model, oracle_spec, bundle,
                                               cfg.margins);
    DefendedCheckpoint ckpt = defend_cached(cfg, *dspec, seed, bundle, aligned.theta);
    AttackTrajectory traj = run_attack(ckpt.theta, cfg.model, seeded(*aspec, seed), bundle);
    Verdict v = judge(traj, oracle.thresholds, ckpt.baseline, cfg.model, bundle, seed);
    SelfDestructDiag sd = selfdestruct_diag(traj, oracle.thresholds, cfg.severity, cfg.model,
                                            bundle);
    std::cout << "verdict: success=" << (v.success ? "true" : "false")
              << " loss_h=" << fmt_double(v.loss_h_final) << " loss_c="
              << fmt_double(v.loss_c_final) << " delta_h=" << fmt_double(v.delta_h)
              << " delta_c=" << fmt_double(v.delta_c)
              << " selfdestruct_fired=" << (sd.fired ? "true" : "false")
              << " (tau_h=" << fmt_double(oracle.thresholds.tau_h)
              << ", tau_c=" << fmt_double(oracle.thresholds.tau_c) << ")\n";
    return 0;
}

int cmd_landscape(const ExperimentConfig& cfg, const std::string& defense, std::uint64_t seed,
                  const std::string& bounds_arg) {
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    std::optional<GridBounds> bounds;
    if (!bounds_arg.empty()) {
        GridBounds gb;
        if (std::sscanf(bounds_arg.c_str(), "%lf,%lf,%lf,%lf", &gb.a_min, &gb.a_max, &gb.b_min,
                        &gb.b_max) != 4) {
            std::cerr << "--bounds expects a_min,a_max,b_min,b_max\n";
            return 1;
        }
        bounds = gb;
    }
    LandscapeArtifacts arts = emit_landscape(cfg, defense, seed, bundle, bounds);
    std::cout << "landscape artifacts:\n  " << arts.plane_json << "\n";
    for (const auto& p : arts.grid_csvs) std::cout << "  " << p << "\n";
    for (const auto& p : arts.projection_csvs) std::cout << "  " << p << "\n";
    return 0;
}

int cmd_run_matrix(const ExperimentConfig& cfg, bool quiet) {
    MatrixResult result = run_matrix(cfg, quiet ? LogFn{} : [](const std::string& m) {
        std::cout << m << "\n";
    });
    write_reports(result, cfg);
    std::cout << "matrix complete: " << result.rows.size() << " aggregate rows, "
              << result.cells.size() << " cells, " << result.failures.size() << " failures\n";
    std::cout << "reports written under " << cfg.out_dir << "\n";
    if (!result.all_ok) {
        for (const auto& f : result.failures) std::cerr << "failure: " << f << "\n";
        return 1;
    }
    return 0;
}

int cmd_verify(const ExperimentConfig& cfg) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    DatasetBundle bundle = gen_bundle(cfg.bundle);
    check("bundle disjointness and channel invariants", verify_disjoint(bundle).pass);

    // oracle classifier: zero harmful compliance, high benign accuracy
    int comply = 0;
    for (const auto& e : bundle.holdout_h)
        if (oracle_predict(bundle, e.x) == e.y) ++comply;
    int correct = 0;
    for (const auto& e : bundle.holdout_c)
        if (oracle_predict(bundle, e.x) == e.y) ++correct;
    check("oracle classifier refuses all harmful holdout inputs", comply == 0);
    check("oracle classifier benign accuracy >= 0.95",
          static_cast<double>(correct) / bundle.holdout_c.size() >= 0.95);

    // gradient spot checks
    MlpSpec small;
    small.layer_sizes = {cfg.bundle.feature_dim, 8, cfg.bundle.total_classes()};
    small.seed = 11;
    ParamVector theta = init_params(small);
    std::vector<Example> batch(bundle.holdout_c.begin(), bundle.holdout_c.begin() + 8);
    auto loss_fn = [&](const ParamVector& p) {
        return capability_loss(p, small, batch).value;
    };
    auto grad_fn = [&](const ParamVector& p) {
        return capability_loss_grad(p, small, batch).grad;
    };
    check("capability loss gradient matches central differences",
          grad_check(loss_fn, grad_fn, theta, 1e-5, 1e-4).pass);

    // schedule spot values
    Schedule ks = KickSettle{0.01, 50.0, 0.1, 100.0};
    check("kick_settle schedule endpoints",
          std::abs(schedule_eval(ks, 0, 100) - 0.5) < 1e-12 &&
              std::abs(schedule_eval(ks, 55, 100) - 0.00505) < 1e-12 &&
              std::abs(schedule_eval(ks, 100, 100) - 0.0001) < 1e-12);

    // judge brute force over the threshold grid
    bool judge_ok = true;
    const double grid[3] = {0.0, 0.5, 1.0};
    for (double lh : grid)
        for (double lc : grid)
            for (double th : grid)
                for (double tc : grid)
                    if (judge_success(lh, lc, th, tc) != (lh <= th && lc <= tc)) judge_ok = false;
    check("judge matches brute-force conjunction on 81 cases", judge_ok);

    check("defense registry covers the taxonomy", defense_taxonomy().size() == 15 &&
                                                      defense_instances().size() == 8);
    std::cout << (failures == 0 ? "verify: all gates passed\n"
                                : "verify: " + std::to_string(failures) + " gates failed\n");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale malicious fine-tuning attack/defense simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, defense, attack, bounds;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    bool cache_flag = false, no_cache_flag = false, quiet = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "configuration file");
        cmd->add_option("--out", out_dir, "output directory (default: $MFTSIM_OUT or ./out)");
        cmd->add_option("--jobs", jobs, "worker pool width");
        cmd->add_flag("--cache", cache_flag, "enable checkpoint caching");
        cmd->add_flag("--no-cache", no_cache_flag, "disable checkpoint caching");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the dataset bundle");
    add_common(gen);
    auto* align = app.add_subcommand("align-base", "train the aligned undefended release");
    add_common(align);
    align->add_option("--seed", seed, "run seed")->required();
    auto* defend = app.add_subcommand("defend", "train one defended checkpoint");
    add_common(defend);
    defend->add_option("--defense", defense, "defense instance name")->required();
    defend->add_option("--seed", seed, "run seed")->required();
    auto* atk = app.add_subcommand("attack", "run one attack on a defended checkpoint");
    add_common(atk);
    atk->add_option("--defense", defense, "defense instance name")->required();
    atk->add_option("--attack", attack, "attack name")->required();
    atk->add_option("--seed", seed, "run seed")->required();
    auto* ev = app.add_subcommand("eval", "attack then judge against the oracle thresholds");
    add_common(ev);
    ev->add_option("--defense", defense, "defense instance name")->required();
    ev->add_option("--attack", attack, "attack name")->required();
    ev->add_option("--seed", seed, "run seed")->required();
    auto* land = app.add_subcommand("landscape", "emit the 2D loss plane artifacts");
    add_common(land);
    land->add_option("--defense", defense, "defense instance name")->required();
    land->add_option("--seed", seed, "run seed")->required();
    land->add_option("--bounds", bounds, "a_min,a_max,b_min,b_max");
    auto* matrix = app.add_subcommand("run-matrix", "run the defense x attack x seed matrix");
    add_common(matrix);
    matrix->add_flag("--quiet", quiet, "suppress progress lines");
    auto* list = app.add_subcommand("list-defenses", "print the defense registry as JSON");
    auto* verify = app.add_subcommand("verify", "run the invariant gates");
    add_common(verify);

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            std::cout << registry_json();
            return 0;
        }
        ExperimentConfig cfg = load_config_or_default(
            config_path, out_dir, nullptr, jobs, cache_flag, no_cache_flag);
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (align->parsed()) return cmd_align_base(cfg, seed);
        if (defend->parsed()) return cmd_defend(cfg, defense, seed);
        if (atk->parsed()) return cmd_attack(cfg, defense, attack, seed);
        if (ev->parsed()) return cmd_eval(cfg, defense, attack, seed);
        if (land->parsed()) return cmd_landscape(cfg, defense, seed, bounds);
        if (matrix->parsed()) return cmd_run_matrix(cfg, quiet);
        if (verify->parsed()) return cmd_verify(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
