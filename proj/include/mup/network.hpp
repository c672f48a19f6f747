#pragma once
// Network definition, mean-field initialization, forward pass.
//
// widths = [n_0, n_1, ..., n_{L+1}], depth L = number of hidden layers.
// weights[ell] has shape n_ell x n_{ell-1} for ell = 1..L+1 (stored 0-based).
// Pre-activations: z^(1) = W^(1) x, z^(ell+1) = W^(ell+1) relu(z^(ell));
// no activation after layer L+1.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mup/matrix.hpp"
#include "mup/rng.hpp"

namespace mup {

enum class InitVariant {
    MeanFieldPaper,    // layer 1 variance 2/n_0
    MeanFieldExactHe,  // layer 1 variance 1/n_0, making E||z^(ell)||^2 = ||x||^2 exact
};

struct NetworkConfig {
    std::vector<int> widths;
    InitVariant init_variant = InitVariant::MeanFieldExactHe;
    std::uint64_t master_seed = 1;

    int depth() const { return static_cast<int>(widths.size()) - 2; }
    int width(int ell) const { return widths[static_cast<size_t>(ell)]; }

    void validate() const {
        if (widths.size() < 3) throw std::invalid_argument("widths needs n_0, one hidden, n_out");
        for (int w : widths)
            if (w < 1) throw std::invalid_argument("zero-width layer");
    }
};

// Multiplies the initializer's variances; a test fixture, never set by the CLI.
struct InitPerturbation {
    double hidden_variance_scale = 1.0;
    double output_variance_scale = 1.0;
};

struct NetworkState {
    std::vector<Matrix> weights;  // weights[ell-1] is W^(ell)

    const Matrix& W(int ell) const { return weights[static_cast<size_t>(ell) - 1]; }
    Matrix& W(int ell) { return weights[static_cast<size_t>(ell) - 1]; }
    int layer_count() const { return static_cast<int>(weights.size()); }  // L+1
};

struct LearningRateSchedule {
    std::vector<double> per_layer;  // length L+1, entry ell-1 applies to W^(ell)

    static LearningRateSchedule global(int depth, double eta) {
        LearningRateSchedule s;
        s.per_layer.assign(static_cast<size_t>(depth) + 1, eta);
        return s;
    }
    double rate(int ell) const { return per_layer[static_cast<size_t>(ell) - 1]; }
};

struct ForwardTrace {
    Vec input;
    std::vector<Vec> preacts;  // preacts[ell-1] is z^(ell), ell = 1..L+1

    const Vec& z(int ell) const { return preacts[static_cast<size_t>(ell) - 1]; }
    int top_layer() const { return static_cast<int>(preacts.size()); }  // L+1
};

inline double relu(double t) { return t > 0.0 ? t : 0.0; }

inline Vec relu_vec(const Vec& v) {
    Vec r(v.size());
    for (size_t i = 0; i < v.size(); ++i) r[i] = relu(v[i]);
    return r;
}

// sigma(z^(k)) with the convention sigma(z^(0)) := x.
inline Vec activation(const ForwardTrace& trace, int k) {
    if (k == 0) return trace.input;
    return relu_vec(trace.z(k));
}

inline double init_variance(const NetworkConfig& cfg, int ell,
                            const InitPerturbation& pert = {}) {
    const int L = cfg.depth();
    const double fan_in = static_cast<double>(cfg.width(ell - 1));
    if (ell == L + 1) {
        const double nL = static_cast<double>(cfg.width(L));
        return pert.output_variance_scale / (nL * nL);
    }
    double v;
    if (ell == 1)
        v = (cfg.init_variant == InitVariant::MeanFieldPaper) ? 2.0 / fan_in : 1.0 / fan_in;
    else
        v = 2.0 / fan_in;
    return pert.hidden_variance_scale * v;
}

inline NetworkState init_network(const NetworkConfig& cfg, Stream& stream,
                                 const InitPerturbation& pert = {}) {
    cfg.validate();
    const int L = cfg.depth();
    NetworkState state;
    state.weights.reserve(static_cast<size_t>(L) + 1);
    for (int ell = 1; ell <= L + 1; ++ell) {
        Matrix w(cfg.width(ell), cfg.width(ell - 1));
        const double sd = std::sqrt(init_variance(cfg, ell, pert));
        for (double& x : w.a) x = sd * stream.next_gaussian();
        state.weights.push_back(std::move(w));
    }
    return state;
}

inline ForwardTrace forward(const NetworkState& state, const Vec& x) {
    if (static_cast<int>(x.size()) != state.W(1).cols)
        throw std::invalid_argument("input length != n_0");
    ForwardTrace t;
    t.input = x;
    t.preacts.reserve(state.weights.size());
    Vec act = x;
    for (int ell = 1; ell <= state.layer_count(); ++ell) {
        Vec z = matvec(state.W(ell), act);
        if (ell < state.layer_count()) act = relu_vec(z);
        t.preacts.push_back(std::move(z));
    }
    return t;
}

// Recomputes layers m+1..top from a given z^(m); the finite-difference oracle
// for interlayer Jacobians perturbs z^(m) and re-runs exactly this.
inline std::vector<Vec> forward_from(const NetworkState& state, const Vec& z_m, int m) {
    std::vector<Vec> out;
    Vec act = relu_vec(z_m);
    for (int ell = m + 1; ell <= state.layer_count(); ++ell) {
        Vec z = matvec(state.W(ell), act);
        if (ell < state.layer_count()) act = relu_vec(z);
        out.push_back(std::move(z));
    }
    return out;
}

}  // namespace mup
