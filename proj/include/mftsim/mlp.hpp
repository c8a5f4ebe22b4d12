#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mftsim/param_vector.hpp"
#include "mftsim/tape.hpp"

namespace mft {

enum class Activation { Tanh, Relu };

/// Fully connected classifier. layer_sizes runs input dim .. output classes;
/// parameters are laid out layer by layer as row-major W then b.
struct MlpSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::Tanh;
    std::uint64_t seed = 0;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int n_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
    int n_hidden() const { return n_layers() - 1; }

    std::size_t param_count() const;
    std::size_t w_offset(int layer) const;
    std::size_t b_offset(int layer) const;
    void validate() const;
};

/// Seeded Glorot-uniform weights, zero biases.
ParamVector init_params(const MlpSpec& spec);

struct ForwardTrace {
    Var logits;
    std::vector<Var> hidden;  // post-nonlinearity activations, one per hidden layer
};

ForwardTrace forward_trace(Tape& tape, const MlpSpec& spec, std::span<const double> x);

/// Same forward pass with a constant perturbation added to the activation of
/// one hidden layer.
ForwardTrace forward_trace_perturbed(Tape& tape, const MlpSpec& spec, std::span<const double> x,
                                     int layer, std::span<const double> delta);

Var forward(Tape& tape, const MlpSpec& spec, std::span<const double> x);

/// Plain (non-tape) forward; bit-identical to the tape path.
std::vector<double> forward_eval(const ParamVector& theta, const MlpSpec& spec,
                                 std::span<const double> x);

/// Post-nonlinearity activations of every hidden layer, non-tape path.
std::vector<std::vector<double>> hidden_eval(const ParamVector& theta, const MlpSpec& spec,
                                             std::span<const double> x);

/// Low-rank adapter over every weight matrix of an MlpSpec: per layer a pair
/// B (out x r, zero-init) and A (r x in, seeded uniform). Effective weight is
/// W + (alpha/r) B A; biases stay frozen.
struct LowRankAdapter {
    int rank = 4;
    double alpha = 8.0;

    double lora_scale() const { return alpha / static_cast<double>(rank); }
    std::size_t param_count(const MlpSpec& spec) const;
    std::size_t b_offset(const MlpSpec& spec, int layer) const;
    std::size_t a_offset(const MlpSpec& spec, int layer) const;
    void validate(const MlpSpec& spec) const;
};

ParamVector adapter_init(const LowRankAdapter& adapter, const MlpSpec& spec, std::uint64_t seed);

/// Forward through frozen weights plus adapter; tape theta must be the
/// adapter parameter vector. frozen must outlive the tape.
ForwardTrace adapter_forward_trace(Tape& tape, const ParamVector& frozen,
                                   const LowRankAdapter& adapter, const MlpSpec& spec,
                                   std::span<const double> x);

Var adapter_forward(Tape& tape, const ParamVector& frozen, const LowRankAdapter& adapter,
                    const MlpSpec& spec, std::span<const double> x);

/// Materialize W + scale * B A into a plain parameter vector.
ParamVector merge_adapter(const ParamVector& frozen, const LowRankAdapter& adapter,
                          const MlpSpec& spec, const ParamVector& adapter_params);

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

} // namespace mft
