#include "mftsim/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mft {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

const char* kind_name(OpKind k) {
    switch (k) {
        case OpKind::Const: return "Const";
        case OpKind::ParamSlice: return "ParamSlice";
        case OpKind::Affine: return "Affine";
        case OpKind::LoraAffine: return "LoraAffine";
        case OpKind::Tanh: return "Tanh";
        case OpKind::Relu: return "Relu";
        case OpKind::AddConst: return "AddConst";
        case OpKind::CrossEntropy: return "CrossEntropy";
        case OpKind::EntropyOfSoftmax: return "EntropyOfSoftmax";
        case OpKind::Mean: return "Mean";
        case OpKind::WeightedSum: return "WeightedSum";
        case OpKind::Hinge: return "Hinge";
        case OpKind::Mmd2Rbf: return "Mmd2Rbf";
        case OpKind::FrozenAffine: return "FrozenAffine";
        case OpKind::SquareNorm: return "SquareNorm";
        case OpKind::DotProduct: return "DotProduct";
        case OpKind::Product: return "Product";
    }
    return "?";
}

} // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(Var v) const {
    require(v.valid() && v.idx < static_cast<int>(nodes_.size()), "tape: invalid var");
    return nodes_[static_cast<std::size_t>(v.idx)];
}

Var Tape::constant(std::vector<double> v) {
    Node n;
    n.kind = OpKind::Const;
    n.value = std::move(v);
    return {push(std::move(n))};
}

Var Tape::constant(std::span<const double> v) {
    return constant(std::vector<double>(v.begin(), v.end()));
}

Var Tape::param_slice(std::size_t offset, std::size_t len) {
    require(offset + len <= theta_->size(), "param_slice: out of range");
    Node n;
    n.kind = OpKind::ParamSlice;
    n.value.assign(theta_->data() + offset, theta_->data() + offset + len);
    n.iaux = {static_cast<int>(offset), static_cast<int>(len)};
    return {push(std::move(n))};
}

Var Tape::affine(std::size_t w_off, std::size_t rows, std::size_t cols, std::size_t b_off, Var x) {
    const auto& xv = node(x).value;
    require(xv.size() == cols, "affine: input length mismatch");
    require(w_off + rows * cols <= theta_->size() && b_off + rows <= theta_->size(),
            "affine: parameter range out of bounds");
    Node n;
    n.kind = OpKind::Affine;
    n.parents = {x.idx};
    n.iaux = {static_cast<int>(w_off), static_cast<int>(rows), static_cast<int>(cols),
              static_cast<int>(b_off)};
    n.value.resize(rows);
    const double* W = theta_->data() + w_off;
    const double* b = theta_->data() + b_off;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = b[r];
        const double* wr = W + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * xv[c];
        n.value[r] = s;
    }
    return {push(std::move(n))};
}

Var Tape::lora_affine(const double* frozen_w, const double* frozen_b, std::size_t rows,
                      std::size_t cols, std::size_t b_off, std::size_t a_off, std::size_t rank,
                      double lora_scale, Var x) {
    const auto& xv = node(x).value;
    require(xv.size() == cols, "lora_affine: input length mismatch");
    require(b_off + rows * rank <= theta_->size() && a_off + rank * cols <= theta_->size(),
            "lora_affine: adapter range out of bounds");
    Node n;
    n.kind = OpKind::LoraAffine;
    n.parents = {x.idx};
    n.iaux = {static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(b_off),
              static_cast<int>(a_off), static_cast<int>(rank)};
    n.daux.resize(1 + rank);
    n.daux[0] = lora_scale;
    n.frozen_w = frozen_w;
    n.frozen_b = frozen_b;
    const double* B = theta_->data() + b_off;
    const double* A = theta_->data() + a_off;
    // u = A x, cached for backward
    for (std::size_t k = 0; k < rank; ++k) {
        double s = 0.0;
        const double* ak = A + k * cols;
        for (std::size_t c = 0; c < cols; ++c) s += ak[c] * xv[c];
        n.daux[1 + k] = s;
    }
    n.value.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = frozen_b[r];
        const double* wr = frozen_w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * xv[c];
        const double* br = B + r * rank;
        double lo = 0.0;
        for (std::size_t k = 0; k < rank; ++k) lo += br[k] * n.daux[1 + k];
        n.value[r] = s + lora_scale * lo;
    }
    return {push(std::move(n))};
}

Var Tape::frozen_affine(const double* w, const double* b, std::size_t rows, std::size_t cols,
                        Var x) {
    const auto& xv = node(x).value;
    require(xv.size() == cols, "frozen_affine: input length mismatch");
    Node n;
    n.kind = OpKind::FrozenAffine;
    n.parents = {x.idx};
    n.iaux = {static_cast<int>(rows), static_cast<int>(cols)};
    n.frozen_w = w;
    n.frozen_b = b;
    n.value.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = b ? b[r] : 0.0;
        const double* wr = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * xv[c];
        n.value[r] = s;
    }
    return {push(std::move(n))};
}

Var Tape::square_norm(Var x) {
    Node n;
    n.kind = OpKind::SquareNorm;
    n.parents = {x.idx};
    double s = 0.0;
    for (double v : node(x).value) s += v * v;
    n.value = {s};
    return {push(std::move(n))};
}

Var Tape::dot_product(Var a, Var b) {
    const auto& av = node(a).value;
    const auto& bv = node(b).value;
    require(av.size() == bv.size(), "dot_product: length mismatch");
    Node n;
    n.kind = OpKind::DotProduct;
    n.parents = {a.idx, b.idx};
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    n.value = {s};
    return {push(std::move(n))};
}

Var Tape::product(Var a, Var b) {
    require(node(a).value.size() == 1 && node(b).value.size() == 1,
            "product: scalar inputs required");
    Node n;
    n.kind = OpKind::Product;
    n.parents = {a.idx, b.idx};
    n.value = {node(a).value[0] * node(b).value[0]};
    return {push(std::move(n))};
}

Var Tape::tanh_act(Var x) {
    Node n;
    n.kind = OpKind::Tanh;
    n.parents = {x.idx};
    const auto& xv = node(x).value;
    n.value.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = std::tanh(xv[i]);
    return {push(std::move(n))};
}

Var Tape::relu_act(Var x) {
    Node n;
    n.kind = OpKind::Relu;
    n.parents = {x.idx};
    const auto& xv = node(x).value;
    n.value.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return {push(std::move(n))};
}

Var Tape::add_const(Var x, std::span<const double> delta) {
    const auto& xv = node(x).value;
    require(xv.size() == delta.size(), "add_const: length mismatch");
    Node n;
    n.kind = OpKind::AddConst;
    n.parents = {x.idx};
    n.value.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) n.value[i] = xv[i] + delta[i];
    return {push(std::move(n))};
}

Var Tape::cross_entropy(Var logits, int label) {
    const auto& z = node(logits).value;
    require(label >= 0 && static_cast<std::size_t>(label) < z.size(),
            "cross_entropy: label out of range");
    Node n;
    n.kind = OpKind::CrossEntropy;
    n.parents = {logits.idx};
    n.iaux = {label};
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    double lse = m + std::log(sum);
    n.daux.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) n.daux[i] = std::exp(z[i] - lse);
    n.value = {lse - z[static_cast<std::size_t>(label)]};
    return {push(std::move(n))};
}

Var Tape::entropy_of_softmax(Var logits) {
    const auto& z = node(logits).value;
    Node n;
    n.kind = OpKind::EntropyOfSoftmax;
    n.parents = {logits.idx};
    double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    double lse = m + std::log(sum);
    n.daux.resize(z.size());
    double h = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double p = std::exp(z[i] - lse);
        n.daux[i] = p;
        h += p * z[i];
    }
    n.value = {lse - h};
    return {push(std::move(n))};
}

Var Tape::mean(std::span<const Var> xs) {
    require(!xs.empty(), "mean: empty argument list");
    Node n;
    n.kind = OpKind::Mean;
    double s = 0.0;
    n.parents.reserve(xs.size());
    for (Var v : xs) {
        require(node(v).value.size() == 1, "mean: parents must be scalar");
        s += node(v).value[0];
        n.parents.push_back(v.idx);
    }
    n.value = {s / static_cast<double>(xs.size())};
    return {push(std::move(n))};
}

Var Tape::weighted_sum(std::span<const Var> xs, std::span<const double> w, double bias) {
    require(xs.size() == w.size(), "weighted_sum: weight count mismatch");
    Node n;
    n.kind = OpKind::WeightedSum;
    double s = bias;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        require(node(xs[i]).value.size() == 1, "weighted_sum: parents must be scalar");
        s += w[i] * node(xs[i]).value[0];
        n.parents.push_back(xs[i].idx);
        n.daux.push_back(w[i]);
    }
    n.value = {s};
    return {push(std::move(n))};
}

Var Tape::hinge(Var x) {
    require(node(x).value.size() == 1, "hinge: scalar input required");
    Node n;
    n.kind = OpKind::Hinge;
    n.parents = {x.idx};
    double v = node(x).value[0];
    n.value = {v > 0.0 ? v : 0.0};
    return {push(std::move(n))};
}

Var Tape::mmd2_rbf(std::span<const Var> xs, const std::vector<std::vector<double>>& ys,
                   double sigma) {
    require(xs.size() >= 2 && ys.size() >= 2, "mmd2_rbf: need at least 2 samples per side");
    std::size_t d = node(xs[0]).value.size();
    for (Var v : xs) require(node(v).value.size() == d, "mmd2_rbf: dimension mismatch in xs");
    for (const auto& y : ys) require(y.size() == d, "mmd2_rbf: dimension mismatch in ys");

    std::size_t m = xs.size(), nn = ys.size();
    if (sigma <= 0.0) {
        // median heuristic over the pooled sample
        std::vector<std::span<const double>> pool;
        pool.reserve(m + nn);
        for (Var v : xs) pool.emplace_back(node(v).value);
        for (const auto& y : ys) pool.emplace_back(y);
        std::vector<double> dists;
        dists.reserve(pool.size() * (pool.size() - 1) / 2);
        for (std::size_t i = 0; i < pool.size(); ++i)
            for (std::size_t j = i + 1; j < pool.size(); ++j)
                dists.push_back(std::sqrt(sq_dist(pool[i], pool[j])));
        auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
        std::nth_element(dists.begin(), mid, dists.end());
        sigma = *mid;
        if (sigma < 1e-12)
            throw DegenerateInput("mmd2_rbf: degenerate bandwidth (all pooled samples identical)");
    }

    Node n;
    n.kind = OpKind::Mmd2Rbf;
    n.parents.reserve(m);
    for (Var v : xs) n.parents.push_back(v.idx);
    n.samples = ys;
    n.daux = {sigma};

    // U-statistic estimator. For equal sample counts the cross term also
    // excludes the diagonal (paired form), which makes MMD^2(X, X) exactly
    // zero up to roundoff.
    const bool paired = (m == nn);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            sxx += std::exp(-sq_dist(nodes_[static_cast<std::size_t>(n.parents[i])].value,
                                     nodes_[static_cast<std::size_t>(n.parents[j])].value) *
                            inv2s2);
    for (std::size_t i = 0; i < nn; ++i)
        for (std::size_t j = i + 1; j < nn; ++j)
            syy += std::exp(-sq_dist(ys[i], ys[j]) * inv2s2);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nn; ++j) {
            if (paired && i == j) continue;
            sxy += std::exp(-sq_dist(nodes_[static_cast<std::size_t>(n.parents[i])].value, ys[j]) *
                            inv2s2);
        }
    double md = static_cast<double>(m), nd = static_cast<double>(nn);
    double cross_pairs = paired ? md * (md - 1.0) : md * nd;
    double v = 2.0 * sxx / (md * (md - 1.0)) + 2.0 * syy / (nd * (nd - 1.0)) -
               2.0 * sxy / cross_pairs;
    n.value = {v};
    return {push(std::move(n))};
}

double Tape::value(Var v) const {
    const auto& nd = node(v);
    require(nd.value.size() == 1, "value: node is not scalar");
    return nd.value[0];
}

const std::vector<double>& Tape::values(Var v) const { return node(v).value; }

const std::vector<double>& Tape::adjoint(Var v) const {
    require(!adjoints_.empty(), "adjoint: backward has not run");
    return adjoints_[static_cast<std::size_t>(v.idx)];
}

double Tape::mmd_sigma(Var v) const {
    const auto& nd = node(v);
    require(nd.kind == OpKind::Mmd2Rbf, "mmd_sigma: not an Mmd2Rbf node");
    return nd.daux[0];
}

ParamVector Tape::backward(Var root) {
    const auto& rn = node(root);
    require(rn.value.size() == 1, "backward: root must be scalar");

    for (std::size_t i = 0; i < nodes_.size(); ++i)
        for (double v : nodes_[i].value)
            if (!std::isfinite(v))
                throw NumericFailure("backward: non-finite value at node " + std::to_string(i) +
                                     " (" + kind_name(nodes_[i].kind) + ")");

    adjoints_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        adjoints_[i].assign(nodes_[i].value.size(), 0.0);
    adjoints_[static_cast<std::size_t>(root.idx)][0] = 1.0;

    ParamVector grad(theta_->size());

    for (int i = root.idx; i >= 0; --i) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        const auto& adj = adjoints_[static_cast<std::size_t>(i)];
        bool live = false;
        for (double a : adj)
            if (a != 0.0) { live = true; break; }
        if (!live) continue;

        switch (n.kind) {
            case OpKind::Const:
                break;
            case OpKind::ParamSlice: {
                std::size_t off = static_cast<std::size_t>(n.iaux[0]);
                for (std::size_t k = 0; k < adj.size(); ++k) grad[off + k] += adj[k];
                break;
            }
            case OpKind::Affine: {
                std::size_t w_off = static_cast<std::size_t>(n.iaux[0]);
                std::size_t rows = static_cast<std::size_t>(n.iaux[1]);
                std::size_t cols = static_cast<std::size_t>(n.iaux[2]);
                std::size_t b_off = static_cast<std::size_t>(n.iaux[3]);
                const auto& xv = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                const double* W = theta_->data() + w_off;
                for (std::size_t r = 0; r < rows; ++r) {
                    double g = adj[r];
                    if (g == 0.0) continue;
                    grad[b_off + r] += g;
                    double* gw = grad.data() + w_off + r * cols;
                    const double* wr = W + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) {
                        gw[c] += g * xv[c];
                        dx[c] += g * wr[c];
                    }
                }
                break;
            }
            case OpKind::LoraAffine: {
                std::size_t rows = static_cast<std::size_t>(n.iaux[0]);
                std::size_t cols = static_cast<std::size_t>(n.iaux[1]);
                std::size_t b_off = static_cast<std::size_t>(n.iaux[2]);
                std::size_t a_off = static_cast<std::size_t>(n.iaux[3]);
                std::size_t rank = static_cast<std::size_t>(n.iaux[4]);
                double s = n.daux[0];
                const double* u = n.daux.data() + 1;  // u = A x
                const auto& xv = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                const double* B = theta_->data() + b_off;
                const double* A = theta_->data() + a_off;
                // t = B^T g
                std::vector<double> t(rank, 0.0);
                for (std::size_t r = 0; r < rows; ++r) {
                    double g = adj[r];
                    if (g == 0.0) continue;
                    const double* br = B + r * rank;
                    for (std::size_t k = 0; k < rank; ++k) t[k] += br[k] * g;
                    // dB_r += s * g * u
                    double* gb = grad.data() + b_off + r * rank;
                    for (std::size_t k = 0; k < rank; ++k) gb[k] += s * g * u[k];
                    // frozen W contribution to dx
                    const double* wr = n.frozen_w + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) dx[c] += g * wr[c];
                }
                for (std::size_t k = 0; k < rank; ++k) {
                    double tk = s * t[k];
                    if (tk == 0.0) continue;
                    double* ga = grad.data() + a_off + k * cols;
                    const double* ak = A + k * cols;
                    for (std::size_t c = 0; c < cols; ++c) {
                        ga[c] += tk * xv[c];
                        dx[c] += tk * ak[c];
                    }
                }
                break;
            }
            case OpKind::FrozenAffine: {
                std::size_t rows = static_cast<std::size_t>(n.iaux[0]);
                std::size_t cols = static_cast<std::size_t>(n.iaux[1]);
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t r = 0; r < rows; ++r) {
                    double g = adj[r];
                    if (g == 0.0) continue;
                    const double* wr = n.frozen_w + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) dx[c] += g * wr[c];
                }
                break;
            }
            case OpKind::SquareNorm: {
                double g = adj[0];
                const auto& xv = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t k = 0; k < xv.size(); ++k) dx[k] += 2.0 * g * xv[k];
                break;
            }
            case OpKind::DotProduct: {
                double g = adj[0];
                const auto& av = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const auto& bv = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                auto& da = adjoints_[static_cast<std::size_t>(n.parents[0])];
                auto& db = adjoints_[static_cast<std::size_t>(n.parents[1])];
                for (std::size_t k = 0; k < av.size(); ++k) {
                    da[k] += g * bv[k];
                    db[k] += g * av[k];
                }
                break;
            }
            case OpKind::Product: {
                double g = adj[0];
                adjoints_[static_cast<std::size_t>(n.parents[0])][0] +=
                    g * nodes_[static_cast<std::size_t>(n.parents[1])].value[0];
                adjoints_[static_cast<std::size_t>(n.parents[1])][0] +=
                    g * nodes_[static_cast<std::size_t>(n.parents[0])].value[0];
                break;
            }
            case OpKind::Tanh: {
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t k = 0; k < adj.size(); ++k)
                    dx[k] += adj[k] * (1.0 - n.value[k] * n.value[k]);
                break;
            }
            case OpKind::Relu: {
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t k = 0; k < adj.size(); ++k)
                    if (n.value[k] > 0.0) dx[k] += adj[k];
                break;
            }
            case OpKind::AddConst: {
                auto& dx = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t k = 0; k < adj.size(); ++k) dx[k] += adj[k];
                break;
            }
            case OpKind::CrossEntropy: {
                double g = adj[0];
                auto& dz = adjoints_[static_cast<std::size_t>(n.parents[0])];
                int label = n.iaux[0];
                for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += g * n.daux[k];
                dz[static_cast<std::size_t>(label)] -= g;
                break;
            }
            case OpKind::EntropyOfSoftmax: {
                double g = adj[0];
                double h = n.value[0];
                auto& dz = adjoints_[static_cast<std::size_t>(n.parents[0])];
                for (std::size_t k = 0; k < dz.size(); ++k) {
                    double p = n.daux[k];
                    if (p > 0.0) dz[k] += g * (-p * (std::log(p) + h));
                }
                break;
            }
            case OpKind::Mean: {
                double g = adj[0] / static_cast<double>(n.parents.size());
                for (int p : n.parents) adjoints_[static_cast<std::size_t>(p)][0] += g;
                break;
            }
            case OpKind::WeightedSum: {
                double g = adj[0];
                for (std::size_t k = 0; k < n.parents.size(); ++k)
                    adjoints_[static_cast<std::size_t>(n.parents[k])][0] += g * n.daux[k];
                break;
            }
            case OpKind::Hinge: {
                if (nodes_[static_cast<std::size_t>(n.parents[0])].value[0] > 0.0)
                    adjoints_[static_cast<std::size_t>(n.parents[0])][0] += adj[0];
                break;
            }
            case OpKind::Mmd2Rbf: {
                double g = adj[0];
                double sigma = n.daux[0];
                double inv_s2 = 1.0 / (sigma * sigma);
                std::size_t m = n.parents.size();
                std::size_t nn = n.samples.size();
                const bool paired = (m == nn);
                double md = static_cast<double>(m), nd = static_cast<double>(nn);
                double cxx = 2.0 / (md * (md - 1.0));
                double cxy = paired ? 2.0 / (md * (md - 1.0)) : 2.0 / (md * nd);
                for (std::size_t i = 0; i < m; ++i) {
                    const auto& xi = nodes_[static_cast<std::size_t>(n.parents[i])].value;
                    auto& dxi = adjoints_[static_cast<std::size_t>(n.parents[i])];
                    for (std::size_t j = 0; j < m; ++j) {
                        if (j == i) continue;
                        const auto& xj = nodes_[static_cast<std::size_t>(n.parents[j])].value;
                        double k = std::exp(-sq_dist(xi, xj) * 0.5 * inv_s2);
                        double c = -g * cxx * k * inv_s2;
                        for (std::size_t d = 0; d < xi.size(); ++d)
                            dxi[d] += c * (xi[d] - xj[d]);
                    }
                    for (std::size_t j = 0; j < nn; ++j) {
                        if (paired && j == i) continue;
                        const auto& yj = n.samples[j];
                        double k = std::exp(-sq_dist(xi, yj) * 0.5 * inv_s2);
                        double c = g * cxy * k * inv_s2;
                        for (std::size_t d = 0; d < xi.size(); ++d)
                            dxi[d] += c * (xi[d] - yj[d]);
                    }
                }
                break;
            }
        }
    }
    return grad;
}

} // namespace mft
