#include "mftsim/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mftsim/losses.hpp"
#include "mftsim/util.hpp"

namespace mft {

using nlohmann::json;

Plane build_plane(const ParamVector& origin, const ParamVector& delta_naive,
                  const ParamVector& delta_adapt) {
    require(delta_naive.size() == origin.size() && delta_adapt.size() == origin.size(),
            "build_plane: dimension mismatch");
    double n1 = norm(delta_naive);
    if (n1 <= 0.0) throw DegeneratePlane("build_plane: zero naive delta");

    Plane p;
    p.origin = origin;
    p.e1 = scale(delta_naive, 1.0 / n1);

    ParamVector residual = delta_adapt;
    axpy(-dot(delta_adapt, p.e1), p.e1, residual);
    double n2 = norm(residual);
    double na = norm(delta_adapt);
    // angle between the deltas must exceed ~1e-6 rad: sin(angle) = n2 / |adapt|
    if (na <= 0.0 || n2 <= 1e-6 * na)
        throw DegeneratePlane("build_plane: attack deltas are (near) parallel");
    p.e2 = scale(residual, 1.0 / n2);
    return p;
}

std::pair<double, double> project(const Plane& plane, const ParamVector& theta) {
    ParamVector d = sub(theta, plane.origin);
    return {dot(d, plane.e1), dot(d, plane.e2)};
}

ParamVector embed(const Plane& plane, double a, double b) {
    ParamVector p = plane.origin;
    axpy(a, plane.e1, p);
    axpy(b, plane.e2, p);
    return p;
}

std::string to_string(GridLossTag t) {
    switch (t) {
        case GridLossTag::Harm: return "harm";
        case GridLossTag::Capability: return "capability";
        case GridLossTag::Joint: return "joint";
    }
    return "?";
}

LossGrid grid_eval(const Plane& plane, GridLossTag tag, const GridBounds& bounds, int resolution,
                   const MlpSpec& model, std::span<const Example> harm_eval,
                   std::span<const Example> cap_eval) {
    require(resolution >= 2, "grid_eval: resolution must be >= 2");
    require(!harm_eval.empty() && !cap_eval.empty(), "grid_eval: empty evaluation batches");
    LossGrid grid;
    grid.bounds = bounds;
    grid.resolution = resolution;
    grid.tag = tag;
    grid.values.reserve(static_cast<std::size_t>(resolution) * resolution);

    for (int ai = 0; ai < resolution; ++ai) {
        double a = bounds.a_min + (bounds.a_max - bounds.a_min) * ai / (resolution - 1);
        for (int bi = 0; bi < resolution; ++bi) {
            double b = bounds.b_min + (bounds.b_max - bounds.b_min) * bi / (resolution - 1);
            ParamVector theta = embed(plane, a, b);
            double v = std::numeric_limits<double>::quiet_NaN();
            try {
                switch (tag) {
                    case GridLossTag::Harm:
                        v = harmful_loss(theta, model, harm_eval).value;
                        break;
                    case GridLossTag::Capability:
                        v = capability_loss(theta, model, cap_eval).value;
                        break;
                    case GridLossTag::Joint:
                        v = harmful_loss(theta, model, harm_eval).value +
                            capability_loss(theta, model, cap_eval).value;
                        break;
                }
            } catch (const NumericFailure&) {
                v = std::numeric_limits<double>::quiet_NaN();
            }
            if (!std::isfinite(v)) {
                grid.nan_count += 1;
                v = std::numeric_limits<double>::quiet_NaN();
            }
            grid.values.push_back(v);
        }
    }
    return grid;
}

GridBounds default_bounds(const Plane& plane,
                          const std::vector<const AttackTrajectory*>& trajectories) {
    require(!trajectories.empty(), "default_bounds: no trajectories");
    double a_min = 0.0, a_max = 0.0, b_min = 0.0, b_max = 0.0;
    bool first = true;
    for (const auto* traj : trajectories) {
        for (const auto& [step, theta] : traj->theta_path) {
            auto [a, b] = project(plane, theta);
            if (first) {
                a_min = a_max = a;
                b_min = b_max = b;
                first = false;
            } else {
                a_min = std::min(a_min, a);
                a_max = std::max(a_max, a);
                b_min = std::min(b_min, b);
                b_max = std::max(b_max, b);
            }
        }
    }
    auto expand = [](double lo, double hi) {
        double c = 0.5 * (lo + hi);
        double half = 0.5 * (hi - lo);
        if (half <= 0.0) half = 1.0;
        return std::pair<double, double>{c - 1.5 * half, c + 1.5 * half};
    };
    GridBounds g;
    std::tie(g.a_min, g.a_max) = expand(a_min, a_max);
    std::tie(g.b_min, g.b_max) = expand(b_min, b_max);
    return g;
}

void write_grid_csv(const LossGrid& grid, const std::string& path) {
    std::ostringstream out;
    out << "alpha,beta,value,loss_tag\n";
    int res = grid.resolution;
    for (int ai = 0; ai < res; ++ai) {
        double a = grid.bounds.a_min + (grid.bounds.a_max - grid.bounds.a_min) * ai / (res - 1);
        for (int bi = 0; bi < res; ++bi) {
            double b =
                grid.bounds.b_min + (grid.bounds.b_max - grid.bounds.b_min) * bi / (res - 1);
            out << fmt_double(a) << ',' << fmt_double(b) << ','
                << fmt_double(grid.values[static_cast<std::size_t>(ai * res + bi)]) << ','
                << to_string(grid.tag) << '\n';
        }
    }
    write_file(path, out.str());
}

namespace {

std::string vector_hash(const ParamVector& v) {
    return hex64(fnv1a64(v.data(), v.size() * sizeof(double)));
}

} // namespace

void write_grid_sidecar(const Plane& plane, const std::vector<LossGrid>& grids,
                        std::uint64_t eval_batch_seed, const std::string& path) {
    json j = {
        {"schema_version", 1},
        {"origin_hash", vector_hash(plane.origin)},
        {"e1_hash", vector_hash(plane.e1)},
        {"e2_hash", vector_hash(plane.e2)},
        {"eval_batch_seed", eval_batch_seed},
        {"grids", json::array()},
    };
    for (const auto& g : grids)
        j["grids"].push_back({{"loss_tag", to_string(g.tag)},
                              {"resolution", g.resolution},
                              {"a_min", g.bounds.a_min},
                              {"a_max", g.bounds.a_max},
                              {"b_min", g.bounds.b_min},
                              {"b_max", g.bounds.b_max},
                              {"nan_count", g.nan_count}});
    write_file(path, j.dump(2) + "\n");
}

void write_projection_csv(const Plane& plane, const AttackTrajectory& trajectory,
                          const std::string& path) {
    std::ostringstream out;
    out << "step,alpha,beta\n";
    for (const auto& [step, theta] : trajectory.theta_path) {
        auto [a, b] = project(plane, theta);
        out << step << ',' << fmt_double(a) << ',' << fmt_double(b) << '\n';
    }
    write_file(path, out.str());
}

} // namespace mft
