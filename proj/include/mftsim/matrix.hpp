#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mftsim/config.hpp"
#include "mftsim/judge.hpp"
#include "mftsim/landscape.hpp"

namespace mft {

struct CellResult {
    std::string defense;
    std::string attack;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    Verdict verdict;
    SelfDestructDiag selfdestruct;
};

/// Per-seed shared state: aligned undefended release, oracle attack result,
/// and the defended checkpoints.
struct SeedContext {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    DefendedCheckpoint aligned;
    OracleResult oracle;
    std::map<std::string, DefendedCheckpoint> defended;
    std::map<std::string, std::string> defense_errors;
    std::map<std::string, AnchorDiagnostics> anchor;  // per defense, naive budget
};

struct MatrixResult {
    std::vector<SeedContext> contexts;  // one per seed, config order
    std::vector<CellResult> cells;      // sorted by defense, attack, seed
    std::vector<AggregateRow> rows;     // sorted by defense, attack
    bool all_ok = false;
    std::vector<std::string> failures;
};

using LogFn = std::function<void(const std::string&)>;

/// The full defense x attack x seed protocol: align the base, build the
/// oracle and thresholds, defend, attack, judge, diagnose, aggregate. Cell
/// failures are recorded; the matrix continues.
MatrixResult run_matrix(const ExperimentConfig& cfg, const LogFn& log = nullptr);

/// report.csv, verdicts.csv, report.json, manifest.json under cfg.out_dir.
/// Byte-identical for identical inputs.
void write_reports(const MatrixResult& result, const ExperimentConfig& cfg);

/// Defended checkpoint via the run cache (content-hash keyed file under
/// out_dir/checkpoints). Falls through to a fresh run when disabled.
DefendedCheckpoint defend_cached(const ExperimentConfig& cfg, const DefenseSpec& spec,
                                 std::uint64_t run_seed, const DatasetBundle& bundle,
                                 const ParamVector& base);

/// Spec with its run seed folded in (the per-seed variation convention).
DefenseSpec seeded(const DefenseSpec& spec, std::uint64_t run_seed);
AttackSpec seeded(const AttackSpec& spec, std::uint64_t run_seed);

/// App-style landscape bundle for one defense: plane from the naive and
/// adaptive deltas, three grids, and projected trajectories.
struct LandscapeArtifacts {
    std::string plane_json;
    std::vector<std::string> grid_csvs;
    std::vector<std::string> projection_csvs;
};

LandscapeArtifacts emit_landscape(const ExperimentConfig& cfg, const std::string& defense_name,
                                  std::uint64_t seed, const DatasetBundle& bundle,
                                  std::optional<GridBounds> bounds = std::nullopt);

} // namespace mft
