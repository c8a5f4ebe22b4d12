#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mftsim/errors.hpp"

namespace mft {

enum class Channel { Benign, HarmfulComply, HarmfulRefuse, SddDecoy };

std::string to_string(Channel c);
Channel channel_from_string(const std::string& s);

/// One classification example. x[0] is the harmful-context flag (0 or 1);
/// the remaining coordinates are task features.
struct Example {
    std::vector<double> x;
    int y = 0;
    Channel channel = Channel::Benign;
};

struct BundleSpec {
    int n_train = 512;    // per training split
    int n_holdout = 256;  // per holdout split
    int feature_dim = 16; // total input dim including the flag coordinate
    int n_classes = 4;    // benign classes; refusal is one extra output class
    double sigma = 0.5;
    double center_scale = 2.0;
    std::uint64_t seed = 42;

    void validate() const;
    int refusal_class() const { return n_classes; }
    int total_classes() const { return n_classes + 1; }
};

/// Disjoint splits for the fine-tuning game. d_align_* belong to the
/// defender, d_h_attack / d_c_retain to the attacker; holdouts are
/// evaluation-only. Immutable after generation.
struct DatasetBundle {
    BundleSpec spec;
    std::vector<Example> d_align_safety;      // harmful_refuse
    std::vector<Example> d_align_capability;  // benign
    std::vector<Example> d_h_attack;          // harmful_comply
    std::vector<Example> d_c_retain;          // benign
    std::vector<Example> d_sdd;               // sdd_decoy
    std::vector<Example> holdout_h;           // harmful_comply
    std::vector<Example> holdout_c;           // benign
    std::vector<std::vector<double>> centers; // per benign class, feature space

    int refusal_class() const { return spec.refusal_class(); }
    int total_classes() const { return spec.total_classes(); }
};

DatasetBundle gen_bundle(const BundleSpec& spec);

/// Decoy copies of the bundle's defender-side harmful prompts: each input is
/// relabeled with the benign class one past its nearest-center class, never
/// the refusal class. The label map is the cyclic permutation k -> (k+1) mod
/// n_classes.
std::vector<Example> gen_sdd_pairs(const DatasetBundle& bundle, std::uint64_t seed);

struct DisjointReport {
    bool pass = true;
    std::vector<std::string> violations;
};

/// Checks split disjointness (exact feature-vector equality) and
/// channel/flag/label consistency.
DisjointReport verify_disjoint(const DatasetBundle& bundle);

/// Nearest-center class of a feature vector (ignores the flag coordinate).
int nearest_center(const DatasetBundle& bundle, std::span<const double> x);

/// The reference classifier: refusal on flag=1 inputs, nearest-center class
/// otherwise. Establishes that a model with low safety and capability loss
/// exists.
int oracle_predict(const DatasetBundle& bundle, std::span<const double> x);

// JSON-lines export/import plus manifest (CLI gen-data format).
void save_bundle(const DatasetBundle& bundle, const std::string& jsonl_path,
                 const std::string& manifest_path);
DatasetBundle load_bundle(const std::string& jsonl_path, const std::string& manifest_path);

std::uint64_t bundle_hash(const DatasetBundle& bundle);

} // namespace mft
