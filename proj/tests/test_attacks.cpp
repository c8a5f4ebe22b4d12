#include <doctest.h>

#include <cmath>

#include "mftsim/attack.hpp"
#include "mftsim/config.hpp"
#include "mftsim/dataset.hpp"
#include "mftsim/mlp.hpp"

using namespace mft;

namespace {

DatasetBundle tiny_bundle() {
    BundleSpec spec;
    spec.n_train = 64;
    spec.n_holdout = 48;
    spec.seed = 12;
    return gen_bundle(spec);
}

MlpSpec tiny_model(const DatasetBundle& b) {
    MlpSpec m;
    m.layer_sizes = {b.spec.feature_dim, 16, b.total_classes()};
    m.seed = 5;
    return m;
}

} // namespace

TEST_CASE("schedule_eval: kick_settle matches its stated values") {
    Schedule ks = KickSettle{0.01, 50.0, 0.1, 100.0};
    // kick phase: eta_kick = kick_mult * eta0
    CHECK(schedule_eval(ks, 0, 100) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(schedule_eval(ks, 9, 100) == doctest::Approx(0.5).epsilon(1e-15));
    // settle start: full eta0
    CHECK(schedule_eval(ks, 10, 100) == doctest::Approx(0.01).epsilon(1e-12));
    // settle midpoint: (eta_max + eta_min) / 2
    CHECK(schedule_eval(ks, 55, 100) == doctest::Approx(0.00505).epsilon(1e-12));
    // settle end: eta0 / settle_min_div
    CHECK(schedule_eval(ks, 100, 100) == doctest::Approx(0.0001).epsilon(1e-12));
}

TEST_CASE("schedule_eval: cosine warmup ramps then decays to zero") {
    Schedule cw = CosineWarmup{0.01, 0.1};
    CHECK(schedule_eval(cw, 0, 100) == 0.0);
    CHECK(schedule_eval(cw, 5, 100) == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(schedule_eval(cw, 10, 100) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(schedule_eval(cw, 55, 100) == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(schedule_eval(cw, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("schedule_eval: step beyond the horizon rejected") {
    Schedule cw = CosineWarmup{0.01, 0.1};
    CHECK_THROWS_AS((void)schedule_eval(cw, 101, 100), ContractViolation);
}

TEST_CASE("optimizer_step: clipping applies exactly at the norm bound") {
    ParamVector theta(std::vector<double>{0.0, 0.0});
    AdamState state;
    OptimizerConfig cfg;
    cfg.clip_norm = 1.0;
    ParamVector grad(std::vector<double>{0.0, 4.0});
    auto r = optimizer_step(theta, grad, 0.1, state, cfg);
    CHECK(r.applied_grad_norm == doctest::Approx(1.0).epsilon(1e-15));

    AdamState s2;
    ParamVector small(std::vector<double>{0.3, 0.4});
    auto r2 = optimizer_step(theta, small, 0.1, s2, cfg);
    CHECK(r2.applied_grad_norm == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("optimizer_step: first bias-corrected step moves by ~eta in the sign direction") {
    ParamVector theta(std::vector<double>{1.0});
    ParamVector grad(std::vector<double>{1.0});  // d(0.5 theta^2)/d theta at 1
    AdamState state;
    OptimizerConfig cfg;
    auto r = optimizer_step(theta, grad, 0.05, state, cfg);
    CHECK(r.theta[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-7));
}

TEST_CASE("optimizer_step: NaN gradient raises a numeric failure") {
    ParamVector theta(std::vector<double>{1.0});
    ParamVector grad(std::vector<double>{std::nan("")});
    AdamState state;
    OptimizerConfig cfg;
    CHECK_THROWS_AS((void)optimizer_step(theta, grad, 0.05, state, cfg), NumericFailure);
}

TEST_CASE("attack_objective: mixed weights sum the component losses") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);

    AttackSpec mixed = default_attack_spec("sidestepper");
    double lh = harmful_loss(theta, m, b.d_h_attack).value;
    double lc = capability_loss(theta, m, b.d_c_retain).value;
    CHECK(attack_objective(mixed, theta, m, b) == doctest::Approx(lh + lc).epsilon(1e-12));

    AttackSpec naive = default_attack_spec("naive");
    CHECK(attack_objective(naive, theta, m, b) == doctest::Approx(lh).epsilon(1e-12));
}

TEST_CASE("attack_objective: lambda_c = 0 reproduces the naive objective and gradient") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    std::vector<Example> bh(b.d_h_attack.begin(), b.d_h_attack.begin() + 8);
    std::vector<Example> bc(b.d_c_retain.begin(), b.d_c_retain.begin() + 8);

    AttackSpec mixed = default_attack_spec("sidestepper");
    mixed.lambda_c = 0.0;
    AttackSpec naive = default_attack_spec("naive");
    LossEval em = attack_objective_grad(mixed, theta, m, bh, bc);
    LossEval en = attack_objective_grad(naive, theta, m, bh, bc);
    CHECK(em.value == doctest::Approx(en.value).epsilon(1e-12));
    for (std::size_t i = 0; i < theta.size(); ++i)
        CHECK(em.grad[i] == doctest::Approx(en.grad[i]).epsilon(1e-12));
}

TEST_CASE("attack_objective: gradient is the weighted component sum") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    std::vector<Example> bh(b.d_h_attack.begin(), b.d_h_attack.begin() + 8);
    std::vector<Example> bc(b.d_c_retain.begin(), b.d_c_retain.begin() + 8);

    AttackSpec mixed = default_attack_spec("sidestepper");
    mixed.lambda_h = 0.7;
    mixed.lambda_c = 1.3;
    LossEval e = attack_objective_grad(mixed, theta, m, bh, bc);
    ParamVector gh = harmful_loss_grad(theta, m, bh).grad;
    ParamVector gc = capability_loss_grad(theta, m, bc).grad;
    for (std::size_t i = 0; i < theta.size(); ++i)
        CHECK(e.grad[i] == doctest::Approx(0.7 * gh[i] + 1.3 * gc[i]).epsilon(1e-10));
}

TEST_CASE("run_attack: zero steps returns the starting parameters") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    AttackSpec spec = default_attack_spec("naive");
    spec.total_steps = 0;
    AttackTrajectory traj = run_attack(theta, m, spec, b);
    CHECK_FALSE(traj.aborted);
    CHECK(traj.per_step.empty());
    REQUIRE(traj.final_theta.size() == theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(traj.final_theta[i] == theta[i]);
}

TEST_CASE("run_attack: same seed gives a bit-identical trajectory") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    AttackSpec spec = default_attack_spec("sidestepper");
    spec.total_steps = 40;
    spec.batch_size = 8;
    AttackTrajectory t1 = run_attack(theta, m, spec, b);
    AttackTrajectory t2 = run_attack(theta, m, spec, b);
    REQUIRE(t1.per_step.size() == t2.per_step.size());
    for (std::size_t i = 0; i < t1.per_step.size(); ++i) {
        CHECK(t1.per_step[i].loss_h == t2.per_step[i].loss_h);
        CHECK(t1.per_step[i].grad_norm == t2.per_step[i].grad_norm);
    }
    for (std::size_t i = 0; i < t1.final_theta.size(); ++i)
        CHECK(t1.final_theta[i] == t2.final_theta[i]);

    spec.seed += 1;
    AttackTrajectory t3 = run_attack(theta, m, spec, b);
    bool same = true;
    for (std::size_t i = 0; i < t1.final_theta.size(); ++i)
        if (t1.final_theta[i] != t3.final_theta[i]) same = false;
    CHECK_FALSE(same);
}

TEST_CASE("run_attack: logged learning rates match schedule_eval exactly") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    AttackSpec spec = default_attack_spec("kick_settle");
    spec.total_steps = 60;
    spec.batch_size = 8;
    AttackTrajectory traj = run_attack(theta, m, spec, b);
    REQUIRE(traj.per_step.size() == 60);
    for (const auto& s : traj.per_step)
        CHECK(s.eta == schedule_eval(spec.schedule, s.step, spec.total_steps));
}

TEST_CASE("run_attack: per_step length equals T and clip bound holds") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    AttackSpec spec = default_attack_spec("naive");
    spec.total_steps = 80;
    spec.batch_size = 8;
    AttackTrajectory traj = run_attack(theta, m, spec, b);
    CHECK(traj.per_step.size() == 80);
    for (const auto& s : traj.per_step) CHECK(s.grad_norm <= spec.clip_norm + 1e-12);
    // theta_path holds start, periodic samples, end
    CHECK(traj.theta_path.front().first == 0);
    CHECK(traj.theta_path.back().first == 80);
}

TEST_CASE("run_attack: objective non-increasing on >= 90% of tiny-eta steps") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    // start from a partially trained model so the landscape is smooth
    ParamVector theta = init_params(m);
    AttackSpec warm = default_attack_spec("naive");
    warm.total_steps = 100;
    warm.batch_size = 16;
    theta = run_attack(theta, m, warm, b).final_theta;

    AttackSpec spec = default_attack_spec("naive");
    spec.schedule = CosineWarmup{1e-4, 0.0};
    spec.total_steps = 50;
    spec.batch_size = 16;
    spec.seed = 9;

    // evaluate the full-split objective along the trajectory
    AttackTrajectory traj = run_attack(theta, m, spec, b);
    int downhill = 0;
    double prev = attack_objective(spec, theta, m, b);
    ParamVector cur = theta;
    // replay through theta_path samples at log_interval granularity is too
    // coarse; rerun with per-step thetas via a 1-step-at-a-time loop
    spec.log_interval = 1;
    traj = run_attack(theta, m, spec, b);
    REQUIRE(traj.theta_path.size() >= 50);
    int steps = 0;
    for (std::size_t i = 1; i < traj.theta_path.size(); ++i) {
        double v = attack_objective(spec, traj.theta_path[i].second, m, b);
        if (v <= prev + 1e-12) ++downhill;
        prev = v;
        ++steps;
    }
    CHECK(static_cast<double>(downhill) / steps >= 0.9);
}

TEST_CASE("run_attack: adapter mode trains only the adapter and merges for judging") {
    DatasetBundle b = tiny_bundle();
    MlpSpec m = tiny_model(b);
    ParamVector theta = init_params(m);
    AttackSpec spec = default_attack_spec("naive");
    spec.total_steps = 60;
    spec.batch_size = 8;
    spec.param_mode.adapter = true;
    spec.param_mode.rank = 4;
    spec.param_mode.alpha = 8.0;
    AttackTrajectory traj = run_attack(theta, m, spec, b);
    CHECK_FALSE(traj.aborted);
    CHECK(traj.final_theta.size() == theta.size());  // merged back to full space
    // biases are frozen in adapter mode
    for (int l = 0; l < m.n_layers(); ++l)
        for (int r = 0; r < m.layer_sizes[l + 1]; ++r)
            CHECK(traj.final_theta[m.b_offset(l) + static_cast<std::size_t>(r)] ==
                  theta[m.b_offset(l) + static_cast<std::size_t>(r)]);
    // harmful loss should have moved
    CHECK(traj.per_step.back().loss_h < traj.per_step.front().loss_h);
}

TEST_CASE("AttackSpec validation: kick_mult range enforced") {
    AttackSpec spec = default_attack_spec("kick_settle");
    auto ks = std::get<KickSettle>(spec.schedule);
    ks.kick_mult = 10.0;
    spec.schedule = ks;
    CHECK_THROWS_AS(spec.validate(), ContractViolation);
    ks.kick_mult = 100.0;
    spec.schedule = ks;
    CHECK_NOTHROW(spec.validate());
}
