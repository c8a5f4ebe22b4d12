#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mftsim/param_vector.hpp"

namespace mft {

enum class OpKind : std::uint8_t {
    Const,
    ParamSlice,
    Affine,
    LoraAffine,
    FrozenAffine,
    Tanh,
    Relu,
    AddConst,
    CrossEntropy,
    EntropyOfSoftmax,
    Mean,
    WeightedSum,
    Hinge,
    Mmd2Rbf,
    SquareNorm,
    DotProduct,
    Product,
};

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over vector-valued nodes bound to one parameter vector.
/// Built per evaluation, consumed by one backward pass from a scalar root.
/// Nodes are appended in topological order; parent indices always precede
/// the node. Single-threaded during construction.
class Tape {
public:
    explicit Tape(const ParamVector& theta) : theta_(&theta) {}

    const ParamVector& theta() const { return *theta_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(std::vector<double> v);
    Var constant(std::span<const double> v);

    /// theta[offset .. offset+len).
    Var param_slice(std::size_t offset, std::size_t len);

    /// W x + b with W = theta[w_off ..] row-major (rows x cols), b = theta[b_off ..].
    Var affine(std::size_t w_off, std::size_t rows, std::size_t cols, std::size_t b_off, Var x);

    /// (W + scale * B A) x + b with W, b taken from a frozen buffer (constant)
    /// and B (rows x rank), A (rank x cols) taken from theta. The frozen
    /// pointers must outlive the tape.
    Var lora_affine(const double* frozen_w, const double* frozen_b, std::size_t rows,
                    std::size_t cols, std::size_t b_off, std::size_t a_off, std::size_t rank,
                    double lora_scale, Var x);

    /// W x + b with constant (non-parameter) coefficients. b may be null.
    Var frozen_affine(const double* w, const double* b, std::size_t rows, std::size_t cols,
                      Var x);

    /// sum_i x_i^2. Scalar.
    Var square_norm(Var x);

    /// <a, b> of two equal-length nodes. Scalar.
    Var dot_product(Var a, Var b);

    /// a * b on scalar nodes.
    Var product(Var a, Var b);

    Var tanh_act(Var x);
    Var relu_act(Var x);

    /// x + delta with delta constant (activation perturbations).
    Var add_const(Var x, std::span<const double> delta);

    /// Softmax cross-entropy of a logit vector against one class label. Scalar.
    Var cross_entropy(Var logits, int label);

    /// Shannon entropy (nats) of softmax(logits). Scalar.
    Var entropy_of_softmax(Var logits);

    /// Mean of scalar nodes. Scalar.
    Var mean(std::span<const Var> xs);

    /// sum_i w_i * x_i + bias over scalar nodes. Scalar.
    Var weighted_sum(std::span<const Var> xs, std::span<const double> w, double bias = 0.0);

    /// max(0, x) on a scalar node.
    Var hinge(Var x);

    /// Unbiased MMD^2 estimate with RBF kernel between differentiable sample
    /// nodes xs and constant samples ys. sigma <= 0 selects the median
    /// heuristic over the pooled sample. Scalar.
    Var mmd2_rbf(std::span<const Var> xs, const std::vector<std::vector<double>>& ys,
                 double sigma = 0.0);

    double value(Var v) const;                       // scalar nodes
    const std::vector<double>& values(Var v) const;  // any node

    /// Reverse pass from a scalar root; returns dRoot/dTheta. Throws
    /// NumericFailure naming the first non-finite node, ContractViolation on
    /// a non-scalar root. Adjoints stay queryable until the next backward.
    ParamVector backward(Var root);

    /// Adjoint of a node after backward().
    const std::vector<double>& adjoint(Var v) const;

    /// Resolved kernel bandwidth of an Mmd2Rbf node.
    double mmd_sigma(Var v) const;

private:
    struct Node {
        OpKind kind;
        std::vector<int> parents;
        std::vector<double> value;
        std::vector<int> iaux;
        std::vector<double> daux;
        const double* frozen_w = nullptr;
        const double* frozen_b = nullptr;
        std::vector<std::vector<double>> samples;
    };

    int push(Node n);
    const Node& node(Var v) const;

    const ParamVector* theta_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> adjoints_;
};

} // namespace mft
