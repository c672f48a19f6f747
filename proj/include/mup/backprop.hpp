#pragma once
// Exact derivatives of the forward map: interlayer Jacobians, per-parameter
// pre-activation gradients (oracle-grade, tiny nets), the loss gradient via
// reverse accumulation, the one-step GD update, and the pre-activation change
// in both actual and linearized form.
//
// Derivative convention at the ReLU kink: sigma'(0) = 0 everywhere.

#include <stdexcept>
#include <vector>

#include "mup/matrix.hpp"
#include "mup/network.hpp"

namespace mup {

struct ParameterCoordinate {
    int layer;  // m in 1..L+1
    int row;
    int col;
};

struct ParameterGradients {
    std::vector<Matrix> grads;  // same shapes as NetworkState.weights

    const Matrix& G(int ell) const { return grads[static_cast<size_t>(ell) - 1]; }
    Matrix& G(int ell) { return grads[static_cast<size_t>(ell) - 1]; }
};

struct LayerJacobian {
    int from_layer;  // m
    int to_layer;    // ell
    Matrix J;        // J(i,a) = dz_i^(ell) / dz_a^(m)
};

enum class DeltaMode { Actual, Linearized };

struct DeltaZResult {
    int layer;
    Vec dz;
    DeltaMode mode;
};

inline std::vector<char> relu_mask(const Vec& z) {
    std::vector<char> d(z.size());
    for (size_t i = 0; i < z.size(); ++i) d[i] = z[i] > 0.0 ? 1 : 0;
    return d;
}

// W^(ell) with the columns of inactive layer-(ell-1) units zeroed, i.e.
// W^(ell) D^(ell-1). One copy serves every Jacobian chain over this trace.
inline Matrix masked_weight(const NetworkState& state, const ForwardTrace& trace, int ell) {
    Matrix wd = state.W(ell);
    const std::vector<char> d = relu_mask(trace.z(ell - 1));
    for (int i = 0; i < wd.rows; ++i) {
        double* r = wd.row(i);
        for (int j = 0; j < wd.cols; ++j)
            if (!d[static_cast<size_t>(j)]) r[j] = 0.0;
    }
    return wd;
}

// J^(m,ell) = W^(ell) D^(ell-1) ... W^(m+1) D^(m), identity at m = ell.
// Built by left-multiplication so J^(m,ell) = J^(m+1,ell) W^(m+1) D^(m) holds
// step by step.
inline LayerJacobian interlayer_jacobian(const NetworkState& state, const ForwardTrace& trace,
                                         int m, int ell) {
    if (m > ell) throw std::invalid_argument("interlayer_jacobian: m > ell");
    Matrix J = Matrix::identity(static_cast<int>(trace.z(ell).size()));
    for (int k = ell; k > m; --k) {
        J = matmul(J, masked_weight(state, trace, k));
    }
    return LayerJacobian{m, ell, std::move(J)};
}

// J^(from,to) v without forming J: push v through the masked layers.
inline Vec forward_vector_push(const NetworkState& state, const ForwardTrace& trace, Vec v,
                               int from, int to) {
    if (from > to) throw std::invalid_argument("forward_vector_push: from > to");
    for (int k = from + 1; k <= to; ++k) {
        const std::vector<char> d = relu_mask(trace.z(k - 1));
        for (size_t j = 0; j < v.size(); ++j)
            if (!d[j]) v[j] = 0.0;
        v = matvec(state.W(k), v);
    }
    return v;
}

// dz^(ell)/dW^(m)_{ab} as a vector over i: J^(m,ell)_{ia} * sigma(z^(m-1))_b.
// Layers above ell cannot influence z^(ell): structured zero, not an error.
inline Vec preactivation_param_gradient(const NetworkState& state, const ForwardTrace& trace,
                                        const ParameterCoordinate& mu, int ell) {
    const int n_ell = static_cast<int>(trace.z(ell).size());
    if (mu.layer > ell) return Vec(n_ell, 0.0);
    const Vec act = activation(trace, mu.layer - 1);
    const double sig_b = act[static_cast<size_t>(mu.col)];
    LayerJacobian jac = interlayer_jacobian(state, trace, mu.layer, ell);
    Vec g(n_ell);
    for (int i = 0; i < n_ell; ++i) g[i] = jac.J(i, mu.row) * sig_b;
    return g;
}

// Gradient of L = (1/2)||z^(L+1) - y||^2 by reverse accumulation:
// delta^(L+1) = z^(L+1) - y, delta^(m) = D^(m) W^(m+1)^T delta^(m+1),
// dL/dW^(m) = delta^(m) sigma(z^(m-1))^T.
inline ParameterGradients loss_gradient(const NetworkState& state, const ForwardTrace& trace,
                                        const Vec& y) {
    const int top = trace.top_layer();
    if (y.size() != trace.z(top).size()) throw std::invalid_argument("y length != n_out");
    ParameterGradients pg;
    pg.grads.resize(static_cast<size_t>(top));

    Vec delta(trace.z(top).size());
    for (size_t k = 0; k < delta.size(); ++k) delta[k] = trace.z(top)[k] - y[k];

    for (int m = top; m >= 1; --m) {
        const Vec act = activation(trace, m - 1);
        Matrix& g = pg.G(m);
        g = Matrix(static_cast<int>(delta.size()), static_cast<int>(act.size()));
        for (int i = 0; i < g.rows; ++i) {
            const double di = delta[static_cast<size_t>(i)];
            double* gi = g.row(i);
            for (int j = 0; j < g.cols; ++j) gi[j] = di * act[static_cast<size_t>(j)];
        }
        if (m > 1) {
            Vec back = matTvec(state.W(m), delta);
            const std::vector<char> d = relu_mask(trace.z(m - 1));
            for (size_t j = 0; j < back.size(); ++j)
                if (!d[j]) back[j] = 0.0;
            delta = std::move(back);
        }
    }
    return pg;
}

inline NetworkState gd_step(const NetworkState& state, const ParameterGradients& grads,
                            const LearningRateSchedule& schedule) {
    NetworkState out = state;
    for (int ell = 1; ell <= state.layer_count(); ++ell) {
        const double eta = schedule.rate(ell);
        Matrix& w = out.W(ell);
        const Matrix& g = grads.G(ell);
        for (size_t k = 0; k < w.a.size(); ++k) w.a[k] -= eta * g.a[k];
    }
    return out;
}

inline DeltaZResult delta_z_actual(const NetworkState& state, const Vec& x, const Vec& y,
                                   const LearningRateSchedule& schedule, int ell) {
    ForwardTrace before = forward(state, x);
    ParameterGradients g = loss_gradient(state, before, y);
    NetworkState stepped = gd_step(state, g, schedule);
    ForwardTrace after = forward(stepped, x);
    Vec dz(before.z(ell).size());
    for (size_t i = 0; i < dz.size(); ++i) dz[i] = after.z(ell)[i] - before.z(ell)[i];
    return DeltaZResult{ell, std::move(dz), DeltaMode::Actual};
}

// (J^(m,from))^T v for every m = from..1: one rolling sweep, no full Jacobians.
inline std::vector<Vec> backward_vector_sweep(const NetworkState& state, const ForwardTrace& trace,
                                              const Vec& v, int from) {
    std::vector<Vec> w(static_cast<size_t>(from));
    Vec cur = v;
    w[static_cast<size_t>(from) - 1] = cur;
    for (int m = from - 1; m >= 1; --m) {
        Vec back = matTvec(state.W(m + 1), cur);
        const std::vector<char> d = relu_mask(trace.z(m));
        for (size_t j = 0; j < back.size(); ++j)
            if (!d[j]) back[j] = 0.0;
        cur = std::move(back);
        w[static_cast<size_t>(m) - 1] = cur;
    }
    return w;
}

// Backward error vectors w^(m) = (J^(m,L+1))^T e for m = L+1..1.
inline std::vector<Vec> backward_error_sweep(const NetworkState& state, const ForwardTrace& trace,
                                             const Vec& e) {
    return backward_vector_sweep(state, trace, e, trace.top_layer());
}

// First-order response of z^(ell) to one GD step against a top-layer error e:
//   tangent = sum_{m<=ell} eta_m s^(m) J^(m,ell) w^(m),   s^(m) = ||sigma(z^(m-1))||^2,
// accumulated forward: acc^(k) = W^(k) D^(k-1) acc^(k-1) + eta_k s^(k) w^(k).
// Exactly linear in a global rate and in e. Needs only O(L) matrix-vector products.
inline Vec linearized_tangent(const NetworkState& state, const ForwardTrace& trace, const Vec& e,
                              const LearningRateSchedule& schedule, int ell) {
    std::vector<Vec> w = backward_error_sweep(state, trace, e);

    Vec acc;  // empty means zero
    double s = 0.0;
    for (int k = 1; k <= ell; ++k) {
        const Vec act = activation(trace, k - 1);
        s = norm2sq(act);
        Vec next;
        if (acc.empty()) {
            next.assign(trace.z(k).size(), 0.0);
        } else {
            const std::vector<char> d = relu_mask(trace.z(k - 1));
            Vec masked = acc;
            for (size_t j = 0; j < masked.size(); ++j)
                if (!d[j]) masked[j] = 0.0;
            next = matvec(state.W(k), masked);
        }
        const double c = schedule.rate(k) * s;
        const Vec& wk = w[static_cast<size_t>(k) - 1];
        for (size_t i = 0; i < next.size(); ++i) next[i] += c * wk[i];
        acc = std::move(next);
    }
    return acc;
}

inline DeltaZResult delta_z_linearized(const NetworkState& state, const ForwardTrace& trace,
                                       const Vec& y, const LearningRateSchedule& schedule,
                                       int ell) {
    const int top = trace.top_layer();
    Vec e(trace.z(top).size());
    for (size_t k = 0; k < e.size(); ++k) e[k] = y[k] - trace.z(top)[k];
    return DeltaZResult{ell, linearized_tangent(state, trace, e, schedule, ell),
                        DeltaMode::Linearized};
}

// Naive reference: explicit sum over every parameter coordinate in layers <= ell
// through preactivation_param_gradient. Tiny nets only.
inline Vec delta_z_linearized_naive(const NetworkState& state, const ForwardTrace& trace,
                                    const Vec& y, const LearningRateSchedule& schedule, int ell) {
    const int top = trace.top_layer();
    Vec e(trace.z(top).size());
    for (size_t k = 0; k < e.size(); ++k) e[k] = y[k] - trace.z(top)[k];
    Vec dz(trace.z(ell).size(), 0.0);
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b) {
                ParameterCoordinate mu{m, a, b};
                Vec g_ell = preactivation_param_gradient(state, trace, mu, ell);
                Vec g_top = preactivation_param_gradient(state, trace, mu, top);
                const double sens = dot(g_top, e);
                const double c = schedule.rate(m) * sens;
                for (size_t i = 0; i < dz.size(); ++i) dz[i] += c * g_ell[i];
            }
    }
    return dz;
}

}  // namespace mup
