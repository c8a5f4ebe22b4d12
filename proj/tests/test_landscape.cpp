#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mftsim/landscape.hpp"
#include "mftsim/losses.hpp"
#include "mftsim/rng.hpp"
#include "mftsim/util.hpp"

using namespace mft;

namespace {

ParamVector randvec(std::size_t n, Rng& rng) {
    ParamVector v(n);
    for (auto& x : v.values) x = rng.gaussian();
    return v;
}

} // namespace

TEST_CASE("build_plane: axis-aligned Gram-Schmidt case") {
    ParamVector origin(3);
    ParamVector dn(std::vector<double>{2.0, 0.0, 0.0});
    ParamVector da(std::vector<double>{1.0, 1.0, 0.0});
    Plane p = build_plane(origin, dn, da);
    CHECK(p.e1[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p.e1[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(p.e2[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.e2[1] == doctest::Approx(1.0).epsilon(1e-12));
    // the naive delta projects to (|delta|, 0)
    ParamVector at = add(origin, dn);
    auto [a, b] = project(p, at);
    CHECK(a == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(b == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("build_plane: orthonormal for random nonparallel deltas (1000 trials)") {
    Rng rng(99);
    for (int t = 0; t < 1000; ++t) {
        ParamVector origin = randvec(20, rng);
        ParamVector dn = randvec(20, rng);
        ParamVector da = randvec(20, rng);
        Plane p = build_plane(origin, dn, da);
        CHECK(std::abs(norm(p.e1) - 1.0) <= 1e-10);
        CHECK(std::abs(norm(p.e2) - 1.0) <= 1e-10);
        CHECK(std::abs(dot(p.e1, p.e2)) <= 1e-10);
    }
}

TEST_CASE("build_plane: parallel deltas rejected") {
    ParamVector origin(4);
    Rng rng(7);
    ParamVector dn = randvec(4, rng);
    CHECK_THROWS_AS((void)build_plane(origin, dn, scale(dn, -2.5)), DegeneratePlane);
    ParamVector zero(4);
    CHECK_THROWS_AS((void)build_plane(origin, zero, dn), DegeneratePlane);
}

TEST_CASE("project: origin maps to (0,0), embedding round-trips to 1e-12") {
    Rng rng(13);
    ParamVector origin = randvec(30, rng);
    Plane p = build_plane(origin, randvec(30, rng), randvec(30, rng));

    auto [a0, b0] = project(p, origin);
    CHECK(std::abs(a0) <= 1e-12);
    CHECK(std::abs(b0) <= 1e-12);

    ParamVector shifted = add(origin, scale(p.e1, 3.0));
    auto [a1, b1] = project(p, shifted);
    CHECK(a1 == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::abs(b1) <= 1e-12);

    for (int t = 0; t < 50; ++t) {
        double a = rng.uniform(-5.0, 5.0);
        double b = rng.uniform(-5.0, 5.0);
        auto [ar, br] = project(p, embed(p, a, b));
        CHECK(std::abs(ar - a) <= 1e-12);
        CHECK(std::abs(br - b) <= 1e-12);
    }
}

TEST_CASE("grid_eval: origin cell equals the loss at the origin exactly") {
    BundleSpec bs;
    bs.n_train = 32;
    bs.n_holdout = 24;
    bs.feature_dim = 6;
    bs.n_classes = 3;
    bs.seed = 55;
    DatasetBundle bundle = gen_bundle(bs);
    MlpSpec model;
    model.layer_sizes = {6, 8, 4};
    model.seed = 3;
    ParamVector theta = init_params(model);

    Rng rng(4);
    Plane p = build_plane(theta, randvec(theta.size(), rng), randvec(theta.size(), rng));
    GridBounds bounds{-1.0, 1.0, -1.0, 1.0};  // odd-free grid: resolution 3 puts a node at 0
    LossGrid harm = grid_eval(p, GridLossTag::Harm, bounds, 3, model, bundle.holdout_h,
                              bundle.holdout_c);
    double at_origin = harmful_loss(theta, model, bundle.holdout_h).value;
    // center cell of a 3x3 grid over [-1,1]^2 is exactly (0,0)
    CHECK(harm.values[4] == at_origin);
    CHECK(harm.nan_count == 0);

    LossGrid cap = grid_eval(p, GridLossTag::Capability, bounds, 3, model, bundle.holdout_h,
                             bundle.holdout_c);
    LossGrid joint = grid_eval(p, GridLossTag::Joint, bounds, 3, model, bundle.holdout_h,
                               bundle.holdout_c);
    for (std::size_t i = 0; i < joint.values.size(); ++i)
        CHECK(joint.values[i] == doctest::Approx(harm.values[i] + cap.values[i]).epsilon(1e-12));
}

TEST_CASE("default_bounds: 1.5x extent centered on the trajectory hull") {
    Rng rng(31);
    ParamVector origin(6);
    Plane p = build_plane(origin, randvec(6, rng), randvec(6, rng));

    AttackTrajectory traj;
    traj.theta_path.emplace_back(0, embed(p, 0.0, 0.0));
    traj.theta_path.emplace_back(1, embed(p, 4.0, 1.0));
    traj.theta_path.emplace_back(2, embed(p, 2.0, -1.0));
    GridBounds b = default_bounds(p, {&traj});
    CHECK(b.a_min == doctest::Approx(2.0 - 3.0).epsilon(1e-9));
    CHECK(b.a_max == doctest::Approx(2.0 + 3.0).epsilon(1e-9));
    CHECK(b.b_min == doctest::Approx(0.0 - 1.5).epsilon(1e-9));
    CHECK(b.b_max == doctest::Approx(0.0 + 1.5).epsilon(1e-9));
}

TEST_CASE("grid csv: schema header and row count") {
    Rng rng(3);
    ParamVector origin(4);
    Plane p = build_plane(origin, randvec(4, rng), randvec(4, rng));
    LossGrid grid;
    grid.bounds = {0.0, 1.0, 0.0, 1.0};
    grid.resolution = 4;
    grid.tag = GridLossTag::Harm;
    grid.values.assign(16, 0.25);
    std::string path = "/tmp/mftsim_test_grid.csv";
    write_grid_csv(grid, path);
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    CHECK(line == "alpha,beta,value,loss_tag");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 16);
}

TEST_CASE("projection csv: step, alpha, beta rows for every sampled checkpoint") {
    Rng rng(37);
    ParamVector origin(5);
    Plane p = build_plane(origin, randvec(5, rng), randvec(5, rng));
    AttackTrajectory traj;
    traj.theta_path.emplace_back(0, embed(p, 0.0, 0.0));
    traj.theta_path.emplace_back(100, embed(p, 1.5, 0.25));
    std::string path = "/tmp/mftsim_test_proj.csv";
    write_projection_csv(p, traj, path);
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,alpha,beta");
    std::getline(in, line);
    CHECK(line.rfind("0,", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("100,", 0) == 0);
}
