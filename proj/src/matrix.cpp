#include "mftsim/matrix.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mftsim/checkpoint.hpp"
#include "mftsim/sampler.hpp"
#include "mftsim/util.hpp"

namespace mft {

using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "mftsim 0.1.0";

void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || tasks.size() <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            tasks[i]();
        }
    };
    std::vector<std::thread> pool;
    int width = std::min<int>(jobs, static_cast<int>(tasks.size()));
    pool.reserve(static_cast<std::size_t>(width));
    for (int i = 0; i < width; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

void log_line(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

} // namespace

DefenseSpec seeded(const DefenseSpec& spec, std::uint64_t run_seed) {
    DefenseSpec s = spec;
    s.seed = seed_combine(spec.seed, run_seed);
    return s;
}

AttackSpec seeded(const AttackSpec& spec, std::uint64_t run_seed) {
    AttackSpec s = spec;
    s.seed = seed_combine(spec.seed, run_seed);
    return s;
}

DefendedCheckpoint defend_cached(const ExperimentConfig& cfg, const DefenseSpec& spec,
                                 std::uint64_t run_seed, const DatasetBundle& bundle,
                                 const ParamVector& base) {
    DefenseSpec run_spec = seeded(spec, run_seed);
    std::uint64_t key = run_spec.hash();
    key = fnv1a64(&run_seed, sizeof(run_seed), key);
    std::uint64_t bh = bundle_hash(bundle);
    key = fnv1a64(&bh, sizeof(bh), key);
    key = fnv1a64(base.data(), base.size() * sizeof(double), key);
    std::string path =
        cfg.out_dir + "/checkpoints/" + spec.name + "_s" + std::to_string(run_seed) + "_" +
        hex64(key) + ".ckpt";

    if (cfg.cache && file_exists(path)) {
        auto [meta, theta] = load_checkpoint(path);
        DefendedCheckpoint ckpt;
        ckpt.theta = std::move(theta);
        ckpt.spec = run_spec;
        ckpt.baseline = holdout_metrics(ckpt.theta, cfg.model, bundle);
        return ckpt;
    }

    DefendedCheckpoint ckpt = run_defense(base, run_spec, cfg.model, bundle, cfg.gate);
    if (cfg.cache) {
        CheckpointMeta meta;
        meta.model_spec = cfg.model;
        meta.seed = run_seed;
        meta.role = spec.kind == DefenseKind::AlignOnly ? "base" : "defended";
        meta.provenance["defense_spec_hash"] = hex64(run_spec.hash());
        meta.provenance["bundle_hash"] = hex64(bundle_hash(bundle));
        save_checkpoint(path, meta, ckpt.theta);
    }
    return ckpt;
}

MatrixResult run_matrix(const ExperimentConfig& cfg, const LogFn& log) {
    cfg.validate_matrix();
    DatasetBundle bundle = gen_bundle(cfg.bundle);
    const AttackSpec* naive = cfg.find_attack("naive");

    MatrixResult result;
    result.contexts.resize(cfg.seeds.size());

    // Phase 1: per-seed base alignment and oracle thresholds.
    std::vector<std::function<void()>> phase1;
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
        phase1.push_back([&, si] {
            SeedContext& ctx = result.contexts[si];
            ctx.seed = cfg.seeds[si];
            try {
                MlpSpec init_spec = cfg.model;
                init_spec.seed = seed_combine(cfg.model.seed, ctx.seed);
                ParamVector base = init_params(init_spec);
                ctx.aligned =
                    run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                                  seed_combine(cfg.align_seed, ctx.seed), cfg.align_stop);
                AttackSpec oracle_spec =
                    naive ? seeded(*naive, ctx.seed) : seeded(default_attack_spec("naive"), ctx.seed);
                ctx.oracle = reference_theta_star(ctx.aligned, cfg.model, oracle_spec, bundle,
                                                  cfg.margins);
                ctx.ok = true;
                log_line(log, "seed " + std::to_string(ctx.seed) + ": aligned base ok, tau_h=" +
                                  fmt_double(ctx.oracle.thresholds.tau_h) + " tau_c=" +
                                  fmt_double(ctx.oracle.thresholds.tau_c));
            } catch (const std::exception& e) {
                ctx.ok = false;
                ctx.error = e.what();
            }
        });
    }
    run_tasks(phase1, cfg.jobs);

    // Phase 2: defended checkpoints per (defense, seed).
    struct DefendTask {
        std::size_t si;
        std::size_t di;
    };
    std::vector<DefendTask> defend_tasks;
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
        for (std::size_t di = 0; di < cfg.defenses.size(); ++di)
            defend_tasks.push_back({si, di});
    std::vector<std::function<void()>> phase2;
    for (const auto& task : defend_tasks) {
        phase2.push_back([&, task] {
            SeedContext& ctx = result.contexts[task.si];
            if (!ctx.ok) return;
            const DefenseSpec& spec = cfg.defenses[task.di];
            try {
                MlpSpec init_spec = cfg.model;
                init_spec.seed = seed_combine(cfg.model.seed, ctx.seed);
                DefendedCheckpoint ckpt =
                    defend_cached(cfg, spec, ctx.seed, bundle, ctx.aligned.theta);
                ctx.defended.emplace(spec.name, std::move(ckpt));
                log_line(log, "seed " + std::to_string(ctx.seed) + ": defense " + spec.name +
                                  " gate passed");
            } catch (const std::exception& e) {
                ctx.defense_errors[spec.name] = e.what();
            }
        });
    }
    run_tasks(phase2, cfg.jobs);

    // Phase 3: attack, judge and diagnose each cell.
    struct Cell {
        std::size_t si, di, ai;
    };
    std::vector<Cell> cells;
    for (std::size_t di = 0; di < cfg.defenses.size(); ++di)
        for (std::size_t ai = 0; ai < cfg.attacks.size(); ++ai)
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si) cells.push_back({si, di, ai});
    result.cells.resize(cells.size());
    std::vector<std::function<void()>> phase3;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        phase3.push_back([&, ci] {
            const Cell& cell = cells[ci];
            SeedContext& ctx = result.contexts[cell.si];
            const DefenseSpec& dspec = cfg.defenses[cell.di];
            const AttackSpec& aspec = cfg.attacks[cell.ai];
            CellResult& out = result.cells[ci];
            out.defense = dspec.name;
            out.attack = aspec.name;
            out.seed = ctx.seed;
            if (!ctx.ok) {
                out.error = "seed context failed: " + ctx.error;
                return;
            }
            auto it = ctx.defended.find(dspec.name);
            if (it == ctx.defended.end()) {
                out.error = "defense failed: " + ctx.defense_errors[dspec.name];
                return;
            }
            try {
                const DefendedCheckpoint& ckpt = it->second;
                AttackSpec run_spec = seeded(aspec, ctx.seed);
                AttackTrajectory traj = run_attack(ckpt.theta, cfg.model, run_spec, bundle);
                if (traj.aborted) {
                    out.error = "attack aborted: " + traj.abort_reason;
                    return;
                }
                save_trajectory_csv(traj, cfg.out_dir + "/trajectories/" + dspec.name + "_" +
                                              aspec.name + "_s" + std::to_string(ctx.seed) +
                                              ".csv");
                out.verdict = judge(traj, ctx.oracle.thresholds, ckpt.baseline, cfg.model, bundle,
                                    ctx.seed);
                out.selfdestruct = selfdestruct_diag(traj, ctx.oracle.thresholds, cfg.severity,
                                                     cfg.model, bundle);
                if (aspec.name == "naive") {
                    AnchorDiagnostics diag = anchor_diag_from_trajectory(
                        ckpt, ctx.oracle.theta_star, traj, ctx.oracle.thresholds, cfg.model,
                        bundle, cfg.flat_threshold);
                    ctx.anchor.emplace(dspec.name, diag);
                }
                out.ok = true;
                log_line(log, "cell " + dspec.name + " x " + aspec.name + " seed " +
                                  std::to_string(ctx.seed) + ": success=" +
                                  (out.verdict.success ? "1" : "0") + " dh=" +
                                  fmt_double(out.verdict.delta_h) + " dc=" +
                                  fmt_double(out.verdict.delta_c));
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        });
    }
    run_tasks(phase3, cfg.jobs);

    // Aggregate rows per (defense, attack); stamp the evaluation-rule flag.
    std::map<std::string, std::map<std::string, double>> success_by_defense;
    for (std::size_t di = 0; di < cfg.defenses.size(); ++di) {
        for (std::size_t ai = 0; ai < cfg.attacks.size(); ++ai) {
            std::vector<Verdict> verdicts;
            for (const auto& c : result.cells)
                if (c.ok && c.defense == cfg.defenses[di].name && c.attack == cfg.attacks[ai].name)
                    verdicts.push_back(c.verdict);
            if (verdicts.size() >= 3) {
                AggregateRow row =
                    aggregate(cfg.defenses[di].name, cfg.attacks[ai].name, verdicts);
                success_by_defense[row.defense][row.attack] = row.success_fraction;
                result.rows.push_back(std::move(row));
            } else {
                result.failures.push_back("row " + cfg.defenses[di].name + " x " +
                                          cfg.attacks[ai].name + ": fewer than 3 completed seeds");
            }
        }
    }
    // A defense whose robustness holds only against the naive attacker is a
    // best-case estimate: naive mostly fails while some adaptive attack
    // mostly succeeds.
    for (auto& row : result.rows) {
        const auto& per_attack = success_by_defense[row.defense];
        auto naive_it = per_attack.find("naive");
        if (naive_it == per_attack.end()) continue;
        bool naive_blocked = naive_it->second < 0.5;
        bool adaptive_wins = false;
        for (const auto& [attack, frac] : per_attack)
            if (attack != "naive" && frac >= 0.5) adaptive_wins = true;
        row.best_case_estimate = naive_blocked && adaptive_wins;
    }

    for (const auto& ctx : result.contexts) {
        if (!ctx.ok)
            result.failures.push_back("seed " + std::to_string(ctx.seed) + ": " + ctx.error);
        for (const auto& [name, err] : ctx.defense_errors)
            result.failures.push_back("defense " + name + " seed " + std::to_string(ctx.seed) +
                                      ": " + err);
    }
    for (const auto& c : result.cells)
        if (!c.ok)
            result.failures.push_back("cell " + c.defense + " x " + c.attack + " seed " +
                                      std::to_string(c.seed) + ": " + c.error);
    result.all_ok = result.failures.empty();
    return result;
}

void write_reports(const MatrixResult& result, const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    std::vector<std::string> artifacts;

    {
        std::ostringstream csv;
        csv << "defense,attack,mean_delta_h,std_delta_h,mean_delta_c,std_delta_c,"
               "success_fraction,n_seeds,best_case_estimate\n";
        for (const auto& r : result.rows)
            csv << r.defense << ',' << r.attack << ',' << fmt_double(r.mean_delta_h) << ','
                << fmt_double(r.std_delta_h) << ',' << fmt_double(r.mean_delta_c) << ','
                << fmt_double(r.std_delta_c) << ',' << fmt_double(r.success_fraction) << ','
                << r.n_seeds << ',' << (r.best_case_estimate ? 1 : 0) << '\n';
        write_file(cfg.out_dir + "/report.csv", csv.str());
        artifacts.push_back("report.csv");
    }
    {
        std::ostringstream csv;
        csv << "defense,attack,seed,ok,success,loss_h_final,loss_c_final,delta_h,delta_c,"
               "benign_acc,selfdestruct_fired,error\n";
        for (const auto& c : result.cells) {
            csv << c.defense << ',' << c.attack << ',' << c.seed << ',' << (c.ok ? 1 : 0) << ',';
            if (c.ok)
                csv << (c.verdict.success ? 1 : 0) << ',' << fmt_double(c.verdict.loss_h_final)
                    << ',' << fmt_double(c.verdict.loss_c_final) << ','
                    << fmt_double(c.verdict.delta_h) << ',' << fmt_double(c.verdict.delta_c) << ','
                    << fmt_double(c.verdict.benign_acc) << ',' << (c.selfdestruct.fired ? 1 : 0)
                    << ',';
            else
                csv << ",,,,,,,";
            std::string err = c.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            csv << err << '\n';
        }
        write_file(cfg.out_dir + "/verdicts.csv", csv.str());
        artifacts.push_back("verdicts.csv");
    }
    {
        json j;
        j["schema_version"] = 1;
        j["tool_version"] = kToolVersion;
        j["config_hash"] = hex64(cfg.config_hash);
        j["seeds"] = cfg.seeds;
        j["thresholds"] = json::array();
        for (const auto& ctx : result.contexts) {
            json t = {{"seed", ctx.seed}, {"ok", ctx.ok}};
            if (ctx.ok) {
                t["tau_h"] = ctx.oracle.thresholds.tau_h;
                t["tau_c"] = ctx.oracle.thresholds.tau_c;
                t["provenance"] = ctx.oracle.thresholds.provenance;
            } else {
                t["error"] = ctx.error;
            }
            j["thresholds"].push_back(t);
        }
        j["rows"] = json::array();
        for (const auto& r : result.rows)
            j["rows"].push_back({{"defense", r.defense},
                                 {"attack", r.attack},
                                 {"mean_delta_h", r.mean_delta_h},
                                 {"std_delta_h", r.std_delta_h},
                                 {"mean_delta_c", r.mean_delta_c},
                                 {"std_delta_c", r.std_delta_c},
                                 {"success_fraction", r.success_fraction},
                                 {"n_seeds", r.n_seeds},
                                 {"best_case_estimate", r.best_case_estimate}});
        j["failures"] = result.failures;
        write_file(cfg.out_dir + "/report.json", j.dump(2) + "\n");
        artifacts.push_back("report.json");
    }
    {
        json manifest = {{"schema_version", 1},
                         {"tool_version", kToolVersion},
                         {"config_hash", hex64(cfg.config_hash)},
                         {"artifacts", artifacts}};
        write_file(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    }
}

LandscapeArtifacts emit_landscape(const ExperimentConfig& cfg, const std::string& defense_name,
                                  std::uint64_t seed, const DatasetBundle& bundle,
                                  std::optional<GridBounds> bounds) {
    const DefenseSpec* dspec = cfg.find_defense(defense_name);
    require(dspec != nullptr, "emit_landscape: unknown defense " + defense_name);
    const AttackSpec* naive = cfg.find_attack("naive");
    const AttackSpec* adaptive = cfg.find_attack("sidestepper");
    require(naive && adaptive, "emit_landscape: config must include naive and sidestepper");

    MlpSpec init_spec = cfg.model;
    init_spec.seed = seed_combine(cfg.model.seed, seed);
    ParamVector base = init_params(init_spec);
    DefendedCheckpoint aligned =
        run_alignment(base, cfg.model, bundle, cfg.gate, cfg.align_steps, cfg.align_lr,
                      seed_combine(cfg.align_seed, seed), cfg.align_stop);
    DefendedCheckpoint ckpt = defend_cached(cfg, *dspec, seed, bundle, aligned.theta);

    AttackTrajectory naive_traj = run_attack(ckpt.theta, cfg.model, seeded(*naive, seed), bundle);
    AttackTrajectory adapt_traj =
        run_attack(ckpt.theta, cfg.model, seeded(*adaptive, seed), bundle);
    require(!naive_traj.aborted && !adapt_traj.aborted, "emit_landscape: attack aborted");

    Plane plane = build_plane(ckpt.theta, sub(naive_traj.final_theta, ckpt.theta),
                              sub(adapt_traj.final_theta, ckpt.theta));
    GridBounds gb = bounds ? *bounds : default_bounds(plane, {&naive_traj, &adapt_traj});

    std::uint64_t eval_seed = seed_combine(0x6121d, seed);
    Rng rng(eval_seed);
    std::vector<Example> harm_eval = sample_batch(bundle.holdout_h, 64, rng);
    std::vector<Example> cap_eval = sample_batch(bundle.holdout_c, 64, rng);

    LandscapeArtifacts arts;
    std::string prefix = cfg.out_dir + "/landscape/" + defense_name + "_s" +
                         std::to_string(seed) + "_";
    std::vector<LossGrid> grids;
    for (GridLossTag tag : {GridLossTag::Harm, GridLossTag::Capability, GridLossTag::Joint}) {
        LossGrid grid = grid_eval(plane, tag, gb, cfg.landscape_resolution, cfg.model, harm_eval,
                                  cap_eval);
        std::string path = prefix + to_string(tag) + ".csv";
        write_grid_csv(grid, path);
        arts.grid_csvs.push_back(path);
        grids.push_back(std::move(grid));
    }
    arts.plane_json = prefix + "plane.json";
    write_grid_sidecar(plane, grids, eval_seed, arts.plane_json);
    for (const auto& [name, traj] :
         std::vector<std::pair<std::string, const AttackTrajectory*>>{
             {"naive", &naive_traj}, {"sidestepper", &adapt_traj}}) {
        std::string path = prefix + name + "_projection.csv";
        write_projection_csv(plane, *traj, path);
        arts.projection_csvs.push_back(path);
    }
    return arts;
}

} // namespace mft
