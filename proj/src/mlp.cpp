#include "mftsim/mlp.hpp"

#include <cmath>

#include "mftsim/rng.hpp"

namespace mft {

void MlpSpec::validate() const {
    require(layer_sizes.size() >= 2, "MlpSpec: need at least input and output sizes");
    for (int s : layer_sizes) require(s > 0, "MlpSpec: layer sizes must be positive");
    require(layer_sizes.back() >= 2, "MlpSpec: classification needs >= 2 output classes");
}

std::size_t MlpSpec::param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < n_layers(); ++l)
        n += static_cast<std::size_t>(layer_sizes[l + 1]) *
                 static_cast<std::size_t>(layer_sizes[l]) +
             static_cast<std::size_t>(layer_sizes[l + 1]);
    return n;
}

std::size_t MlpSpec::w_offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l)
        off += static_cast<std::size_t>(layer_sizes[l + 1]) *
                   static_cast<std::size_t>(layer_sizes[l]) +
               static_cast<std::size_t>(layer_sizes[l + 1]);
    return off;
}

std::size_t MlpSpec::b_offset(int layer) const {
    return w_offset(layer) + static_cast<std::size_t>(layer_sizes[layer + 1]) *
                                 static_cast<std::size_t>(layer_sizes[layer]);
}

ParamVector init_params(const MlpSpec& spec) {
    spec.validate();
    ParamVector theta(spec.param_count());
    Rng rng(spec.seed);
    for (int l = 0; l < spec.n_layers(); ++l) {
        int fan_in = spec.layer_sizes[l];
        int fan_out = spec.layer_sizes[l + 1];
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::size_t w = spec.w_offset(l);
        for (std::size_t i = 0; i < static_cast<std::size_t>(fan_in) * fan_out; ++i)
            theta[w + i] = rng.uniform(-a, a);
        // biases stay zero
    }
    return theta;
}

namespace {

Var activate(Tape& tape, const MlpSpec& spec, Var z) {
    return spec.activation == Activation::Tanh ? tape.tanh_act(z) : tape.relu_act(z);
}

void activate_eval(const MlpSpec& spec, std::vector<double>& z) {
    if (spec.activation == Activation::Tanh)
        for (double& v : z) v = std::tanh(v);
    else
        for (double& v : z) v = v > 0.0 ? v : 0.0;
}

} // namespace

ForwardTrace forward_trace_perturbed(Tape& tape, const MlpSpec& spec, std::span<const double> x,
                                     int layer, std::span<const double> delta) {
    require(static_cast<int>(x.size()) == spec.input_dim(), "forward: input dimension mismatch");
    ForwardTrace trace;
    Var h = tape.constant(x);
    for (int l = 0; l < spec.n_layers(); ++l) {
        Var z = tape.affine(spec.w_offset(l), static_cast<std::size_t>(spec.layer_sizes[l + 1]),
                            static_cast<std::size_t>(spec.layer_sizes[l]), spec.b_offset(l), h);
        if (l + 1 == spec.n_layers()) {
            trace.logits = z;
            return trace;
        }
        Var a = activate(tape, spec, z);
        if (l == layer) a = tape.add_const(a, delta);
        trace.hidden.push_back(a);
        h = a;
    }
    return trace;
}

ForwardTrace forward_trace(Tape& tape, const MlpSpec& spec, std::span<const double> x) {
    return forward_trace_perturbed(tape, spec, x, -1, {});
}

Var forward(Tape& tape, const MlpSpec& spec, std::span<const double> x) {
    return forward_trace(tape, spec, x).logits;
}

std::vector<double> forward_eval(const ParamVector& theta, const MlpSpec& spec,
                                 std::span<const double> x) {
    require(static_cast<int>(x.size()) == spec.input_dim(), "forward: input dimension mismatch");
    require(theta.size() == spec.param_count(), "forward: parameter count mismatch");
    std::vector<double> h(x.begin(), x.end());
    for (int l = 0; l < spec.n_layers(); ++l) {
        std::size_t rows = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        std::size_t cols = static_cast<std::size_t>(spec.layer_sizes[l]);
        const double* W = theta.data() + spec.w_offset(l);
        const double* b = theta.data() + spec.b_offset(l);
        std::vector<double> z(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = b[r];
            const double* wr = W + r * cols;
            for (std::size_t c = 0; c < cols; ++c) s += wr[c] * h[c];
            z[r] = s;
        }
        if (l + 1 < spec.n_layers()) activate_eval(spec, z);
        h = std::move(z);
    }
    return h;
}

std::vector<std::vector<double>> hidden_eval(const ParamVector& theta, const MlpSpec& spec,
                                             std::span<const double> x) {
    require(static_cast<int>(x.size()) == spec.input_dim(), "forward: input dimension mismatch");
    std::vector<std::vector<double>> out;
    std::vector<double> h(x.begin(), x.end());
    for (int l = 0; l + 1 < spec.n_layers(); ++l) {
        std::size_t rows = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        std::size_t cols = static_cast<std::size_t>(spec.layer_sizes[l]);
        const double* W = theta.data() + spec.w_offset(l);
        const double* b = theta.data() + spec.b_offset(l);
        std::vector<double> z(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = b[r];
            const double* wr = W + r * cols;
            for (std::size_t c = 0; c < cols; ++c) s += wr[c] * h[c];
            z[r] = s;
        }
        activate_eval(spec, z);
        out.push_back(z);
        h = std::move(z);
    }
    return out;
}

void LowRankAdapter::validate(const MlpSpec& spec) const {
    require(rank > 0, "LowRankAdapter: rank must be positive");
    spec.validate();
}

std::size_t LowRankAdapter::param_count(const MlpSpec& spec) const {
    std::size_t n = 0;
    for (int l = 0; l < spec.n_layers(); ++l)
        n += static_cast<std::size_t>(rank) *
             (static_cast<std::size_t>(spec.layer_sizes[l + 1]) +
              static_cast<std::size_t>(spec.layer_sizes[l]));
    return n;
}

std::size_t LowRankAdapter::b_offset(const MlpSpec& spec, int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l)
        off += static_cast<std::size_t>(rank) *
               (static_cast<std::size_t>(spec.layer_sizes[l + 1]) +
                static_cast<std::size_t>(spec.layer_sizes[l]));
    return off;
}

std::size_t LowRankAdapter::a_offset(const MlpSpec& spec, int layer) const {
    return b_offset(spec, layer) + static_cast<std::size_t>(rank) *
                                       static_cast<std::size_t>(spec.layer_sizes[layer + 1]);
}

ParamVector adapter_init(const LowRankAdapter& adapter, const MlpSpec& spec, std::uint64_t seed) {
    adapter.validate(spec);
    ParamVector p(adapter.param_count(spec));
    Rng rng(seed);
    for (int l = 0; l < spec.n_layers(); ++l) {
        // B stays zero so the adapted model starts exactly at the frozen one.
        int fan_in = spec.layer_sizes[l];
        double a = std::sqrt(6.0 / static_cast<double>(adapter.rank + fan_in));
        std::size_t a_off = adapter.a_offset(spec, l);
        for (std::size_t i = 0;
             i < static_cast<std::size_t>(adapter.rank) * static_cast<std::size_t>(fan_in); ++i)
            p[a_off + i] = rng.uniform(-a, a);
    }
    return p;
}

ForwardTrace adapter_forward_trace(Tape& tape, const ParamVector& frozen,
                                   const LowRankAdapter& adapter, const MlpSpec& spec,
                                   std::span<const double> x) {
    require(static_cast<int>(x.size()) == spec.input_dim(), "forward: input dimension mismatch");
    require(frozen.size() == spec.param_count(), "adapter_forward: frozen size mismatch");
    require(tape.theta().size() == adapter.param_count(spec),
            "adapter_forward: tape must bind adapter parameters");
    ForwardTrace trace;
    Var h = tape.constant(x);
    for (int l = 0; l < spec.n_layers(); ++l) {
        Var z = tape.lora_affine(frozen.data() + spec.w_offset(l),
                                 frozen.data() + spec.b_offset(l),
                                 static_cast<std::size_t>(spec.layer_sizes[l + 1]),
                                 static_cast<std::size_t>(spec.layer_sizes[l]),
                                 adapter.b_offset(spec, l), adapter.a_offset(spec, l),
                                 static_cast<std::size_t>(adapter.rank), adapter.lora_scale(), h);
        if (l + 1 == spec.n_layers()) {
            trace.logits = z;
            return trace;
        }
        Var a = activate(tape, spec, z);
        trace.hidden.push_back(a);
        h = a;
    }
    return trace;
}

Var adapter_forward(Tape& tape, const ParamVector& frozen, const LowRankAdapter& adapter,
                    const MlpSpec& spec, std::span<const double> x) {
    return adapter_forward_trace(tape, frozen, adapter, spec, x).logits;
}

ParamVector merge_adapter(const ParamVector& frozen, const LowRankAdapter& adapter,
                          const MlpSpec& spec, const ParamVector& adapter_params) {
    require(adapter_params.size() == adapter.param_count(spec),
            "merge_adapter: adapter parameter count mismatch");
    ParamVector out = frozen;
    double s = adapter.lora_scale();
    for (int l = 0; l < spec.n_layers(); ++l) {
        std::size_t rows = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        std::size_t cols = static_cast<std::size_t>(spec.layer_sizes[l]);
        std::size_t r = static_cast<std::size_t>(adapter.rank);
        const double* B = adapter_params.data() + adapter.b_offset(spec, l);
        const double* A = adapter_params.data() + adapter.a_offset(spec, l);
        double* W = out.data() + spec.w_offset(l);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < r; ++k) {
                double bik = s * B[i * r + k];
                if (bik == 0.0) continue;
                const double* ak = A + k * cols;
                double* wi = W + i * cols;
                for (std::size_t c = 0; c < cols; ++c) wi[c] += bik * ak[c];
            }
    }
    return out;
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ContractViolation("unknown activation: " + s);
}

} // namespace mft
