#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mftsim/attack.hpp"
#include "mftsim/dataset.hpp"
#include "mftsim/defense.hpp"
#include "mftsim/judge.hpp"
#include "mftsim/mlp.hpp"

namespace mft {

/// Plain key-value configuration with [section] tables. Values are scalars
/// or comma-separated lists; '#' starts a comment.
class ConfigFile {
public:
    static ConfigFile parse_text(const std::string& text);
    static ConfigFile parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& def) const;
    double get_double(const std::string& section, const std::string& key, double def) const;
    int get_int(const std::string& section, const std::string& key, int def) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t def) const;
    bool get_bool(const std::string& section, const std::string& key, bool def) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                      const std::vector<std::string>& def) const;

    std::vector<std::string> sections_with_prefix(const std::string& prefix) const;

    /// Sorted, normalized serialization; the config hash is derived from it.
    std::string canonical() const;
    std::uint64_t hash() const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct ExperimentConfig {
    BundleSpec bundle;
    MlpSpec model;

    int align_steps = 2000;  // cap; alignment stops at the release criteria
    double align_lr = 0.005;
    std::uint64_t align_seed = 7;
    AlignStop align_stop;
    AlignmentGate gate;

    std::vector<DefenseSpec> defenses;
    std::vector<AttackSpec> attacks;
    std::vector<std::uint64_t> seeds = {0, 1, 2};

    Margins margins;
    double severity = 1.5;
    double flat_threshold = 1e-3;

    std::string out_dir = "out";
    int jobs = 1;
    bool cache = true;
    int landscape_resolution = 30;

    std::uint64_t config_hash = 0;

    const AttackSpec* find_attack(const std::string& name) const;
    const DefenseSpec* find_defense(const std::string& name) const;
    void validate_matrix() const;
};

/// The pinned desk-scale defaults: the default bundle, model, the eight
/// registry defenses, and the three attacks (naive, sidestepper,
/// kick_settle).
ExperimentConfig default_experiment_config();

/// Defaults overridden by the parsed file.
ExperimentConfig load_experiment_config(const ConfigFile& file);

AttackSpec default_attack_spec(const std::string& name);

} // namespace mft
