#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mftsim/attack.hpp"
#include "mftsim/dataset.hpp"
#include "mftsim/mlp.hpp"
#include "mftsim/param_vector.hpp"

namespace mft {

/// 2D slice of parameter space spanned by the Gram-Schmidt
/// orthonormalization of the naive and adaptive attack deltas.
struct Plane {
    ParamVector origin;
    ParamVector e1;
    ParamVector e2;
};

/// e1 is the normalized naive delta, e2 the normalized orthogonal component
/// of the adaptive delta. Throws DegeneratePlane if the deltas are parallel
/// (angle below ~1e-6 rad) or the naive delta is zero.
Plane build_plane(const ParamVector& origin, const ParamVector& delta_naive,
                  const ParamVector& delta_adapt);

/// Coordinates of theta in the plane: inner products of (theta - origin)
/// with e1 and e2.
std::pair<double, double> project(const Plane& plane, const ParamVector& theta);

/// origin + a e1 + b e2.
ParamVector embed(const Plane& plane, double a, double b);

enum class GridLossTag { Harm, Capability, Joint };
std::string to_string(GridLossTag t);

struct GridBounds {
    double a_min = 0.0, a_max = 1.0;
    double b_min = 0.0, b_max = 1.0;
};

struct LossGrid {
    GridBounds bounds;
    int resolution = 30;
    GridLossTag tag = GridLossTag::Harm;
    std::vector<double> values;  // row-major over (alpha index, beta index)
    int nan_count = 0;
};

/// Evaluates the tagged loss over a resolution x resolution grid on fixed
/// evaluation batches. Non-finite cells are stored as NaN and counted; the
/// sweep continues.
LossGrid grid_eval(const Plane& plane, GridLossTag tag, const GridBounds& bounds, int resolution,
                   const MlpSpec& model, std::span<const Example> harm_eval,
                   std::span<const Example> cap_eval);

/// 1.5x the trajectory extent per axis, centered on the projected hull of
/// the given paths.
GridBounds default_bounds(const Plane& plane,
                          const std::vector<const AttackTrajectory*>& trajectories);

void write_grid_csv(const LossGrid& grid, const std::string& path);

/// JSON sidecar with plane-vector hashes, bounds, resolution, and the
/// evaluation-batch seed.
void write_grid_sidecar(const Plane& plane, const std::vector<LossGrid>& grids,
                        std::uint64_t eval_batch_seed, const std::string& path);

/// Projected trajectory samples as CSV (step, alpha, beta).
void write_projection_csv(const Plane& plane, const AttackTrajectory& trajectory,
                          const std::string& path);

} // namespace mft
