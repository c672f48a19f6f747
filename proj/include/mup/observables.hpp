#pragma once
// Single-draw samples of the update-size observables: the squared pre-activation
// change, its pieces (A, B, Btilde, C, Ctilde), per-layer moment profiles, and
// the signed conditional-projection residual. Fast paths use rolling Jacobian
// sweeps; the naive_* twins enumerate parameters one at a time and serve as
// oracles on tiny networks.
//
// Conventions: n_out = n_{L+1}; output coordinate 1 is the reference coordinate;
// s^(m) = ||sigma(z^(m-1))||^2 with sigma(z^(0)) := x.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mup/backprop.hpp"
#include "mup/matrix.hpp"
#include "mup/network.hpp"
#include "mup/rng.hpp"

namespace mup {

enum class ObservableKind {
    A,
    B,
    Btilde,
    C,
    Ctilde,
    DeltaZSq,
    SecondMoment,
    FourthMoment,
    CondProjResidual,
};

enum class EstimatorVariant { Gram, Naive, PreIntegration };

inline const char* observable_name(ObservableKind k) {
    switch (k) {
        case ObservableKind::A: return "A";
        case ObservableKind::B: return "B";
        case ObservableKind::Btilde: return "Btilde";
        case ObservableKind::C: return "C";
        case ObservableKind::Ctilde: return "Ctilde";
        case ObservableKind::DeltaZSq: return "delta_z_sq";
        case ObservableKind::SecondMoment: return "second_moment";
        case ObservableKind::FourthMoment: return "fourth_moment";
        case ObservableKind::CondProjResidual: return "cond_proj_residual";
    }
    return "?";
}

struct Batch {
    Vec x;  // length n_0, i.i.d. N(0,1): E||x||^2/n_0 = 1
    Vec y;  // length n_out, i.i.d. N(0,1/n_out): E||y||^2 = 1
};

struct ObservableSample {
    ObservableKind which;
    int layer;
    double value;
    EstimatorVariant variant;
};

struct ObservableEstimate {
    ObservableKind which;
    int layer;
    double mean;
    double std_error;  // sample sd / sqrt(replicates)
    long replicates;
};

inline Batch sample_batch(int n0, int n_out, Stream& stream) {
    if (n0 < 1 || n_out < 1) throw std::invalid_argument("sample_batch: dimensions < 1");
    Batch b;
    b.x.resize(static_cast<size_t>(n0));
    for (double& v : b.x) v = stream.next_gaussian();
    b.y.resize(static_cast<size_t>(n_out));
    const double sd = 1.0 / std::sqrt(static_cast<double>(n_out));
    for (double& v : b.y) v = sd * stream.next_gaussian();
    return b;
}

// s^(m), defined for m = 1..L+1.
inline double activation_norm_sq(const ForwardTrace& trace, int m) {
    return norm2sq(activation(trace, m - 1));
}

// [ell-1] = ||z^(ell)||^2 for ell = 1..L+1.
inline std::vector<double> second_moment_profile(const ForwardTrace& trace) {
    std::vector<double> p(static_cast<size_t>(trace.top_layer()));
    for (int ell = 1; ell <= trace.top_layer(); ++ell)
        p[static_cast<size_t>(ell) - 1] = norm2sq(trace.z(ell));
    return p;
}

inline std::vector<double> second_moment_profile(const NetworkState& state, const Vec& x) {
    return second_moment_profile(forward(state, x));
}

// [ell-1] = (1/n_ell) sum_j z_j^4 for ell = 1..L+1.
inline std::vector<double> fourth_moment_profile(const ForwardTrace& trace) {
    std::vector<double> p(static_cast<size_t>(trace.top_layer()));
    for (int ell = 1; ell <= trace.top_layer(); ++ell) {
        const Vec& z = trace.z(ell);
        double acc = 0.0;
        for (double v : z) acc += (v * v) * (v * v);
        p[static_cast<size_t>(ell) - 1] = acc / static_cast<double>(z.size());
    }
    return p;
}

inline std::vector<double> fourth_moment_profile(const NetworkState& state, const Vec& x) {
    return fourth_moment_profile(forward(state, x));
}

// M^(m,ell) = s^(m) J^(m,ell) (J^(m,ell))^T; entry (i,j) equals the sum over all
// layer-m parameters of dz_i^(ell)/dW_mu * dz_j^(ell)/dW_mu.
inline Matrix gram_sums(const NetworkState& state, const ForwardTrace& trace, int m, int ell) {
    LayerJacobian jac = interlayer_jacobian(state, trace, m, ell);
    Matrix g = matmulT(jac.J, jac.J);
    const double s = activation_norm_sq(trace, m);
    for (double& v : g.a) v *= s;
    return g;
}

// sum_{m<=ell} eta_m M^(m,ell), built with one rolling sweep
// J^(m-1,ell) = J^(m,ell) W^(m) D^(m-1) and one Gram product per m.
inline Matrix weighted_gram_sum(const NetworkState& state, const ForwardTrace& trace,
                                const LearningRateSchedule& schedule, int ell) {
    const int n = static_cast<int>(trace.z(ell).size());
    Matrix S(n, n);
    Matrix J = Matrix::identity(n);
    for (int m = ell; m >= 1; --m) {
        const double c = schedule.rate(m) * activation_norm_sq(trace, m);
        if (c != 0.0) {
            Matrix G = matmulT(J, J);
            axpy(S, c, G);
        }
        if (m > 1) J = matmul(J, masked_weight(state, trace, m));
    }
    return S;
}

// t_m = s^(m) ||J^(m,ell)||_F^2 = trace M^(m,ell), for m = 1..ell (one sweep).
inline std::vector<double> gram_trace_terms(const NetworkState& state, const ForwardTrace& trace,
                                            int ell) {
    std::vector<double> t(static_cast<size_t>(ell));
    Matrix J = Matrix::identity(static_cast<int>(trace.z(ell).size()));
    for (int m = ell; m >= 1; --m) {
        t[static_cast<size_t>(m) - 1] = activation_norm_sq(trace, m) * frob2(J);
        if (m > 1) J = matmul(J, masked_weight(state, trace, m));
    }
    return t;
}

// g_m = s^(m) <row1 J^(m,ell), row1 J^(m,L+1)>: the layer-m contribution to the
// first-order change of both z_1^(ell) and z_1^(L+1). Two vector sweeps.
inline std::vector<double> preintegration_coefficients(const NetworkState& state,
                                                       const ForwardTrace& trace, int ell) {
    const int top = trace.top_layer();
    Vec e_ell(trace.z(ell).size(), 0.0);
    e_ell[0] = 1.0;
    Vec e_top(trace.z(top).size(), 0.0);
    e_top[0] = 1.0;
    std::vector<Vec> u = backward_vector_sweep(state, trace, e_ell, ell);
    std::vector<Vec> w = backward_vector_sweep(state, trace, e_top, top);
    std::vector<double> g(static_cast<size_t>(ell));
    for (int m = 1; m <= ell; ++m)
        g[static_cast<size_t>(m) - 1] =
            activation_norm_sq(trace, m) *
            dot(u[static_cast<size_t>(m) - 1], w[static_cast<size_t>(m) - 1]);
    return g;
}

// Gram-path B sample:
//   (1/(2 n_L n_ell^2)) || sum_m eta_m M^(m,ell) ||_F^2,
// the form with the layers above ell and the output layer integrated out.
inline ObservableSample sample_B(const NetworkState& state, const ForwardTrace& trace,
                                 const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    Matrix S = weighted_gram_sum(state, trace, schedule, ell);
    const double value = frob2(S) / (2.0 * n_L * n_ell * n_ell);
    return ObservableSample{ObservableKind::B, ell, value, EstimatorVariant::Gram};
}

// Pre-integration A and B from shared coefficients:
//   t = sum_m eta_m g_m,  B-sample = t^2,  A-sample = (z_1^(L+1))^2 t^2.
inline std::pair<ObservableSample, ObservableSample> sample_AB_preintegration(
    const NetworkState& state, const ForwardTrace& trace, const LearningRateSchedule& schedule,
    int ell) {
    std::vector<double> g = preintegration_coefficients(state, trace, ell);
    double t = 0.0;
    for (int m = 1; m <= ell; ++m) t += schedule.rate(m) * g[static_cast<size_t>(m) - 1];
    const double z1 = trace.z(trace.top_layer())[0];
    ObservableSample a{ObservableKind::A, ell, z1 * z1 * t * t, EstimatorVariant::PreIntegration};
    ObservableSample b{ObservableKind::B, ell, t * t, EstimatorVariant::PreIntegration};
    return {a, b};
}

inline ObservableSample sample_A(const NetworkState& state, const ForwardTrace& trace,
                                 const LearningRateSchedule& schedule, int ell) {
    return sample_AB_preintegration(state, trace, schedule, ell).first;
}

inline ObservableSample sample_B_preintegration(const NetworkState& state,
                                                const ForwardTrace& trace,
                                                const LearningRateSchedule& schedule, int ell) {
    return sample_AB_preintegration(state, trace, schedule, ell).second;
}

// C and Btilde share the weighted trace sum T = sum_m eta_m t_m:
//   C-sample      = ||z^(ell)||^2 T / (n_L n_ell^2)
//   Btilde-sample = T^2 / (n_L n_ell^2)
inline std::pair<ObservableSample, ObservableSample> sample_C_and_Btilde(
    const NetworkState& state, const ForwardTrace& trace, const LearningRateSchedule& schedule,
    int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    std::vector<double> t = gram_trace_terms(state, trace, ell);
    double T = 0.0;
    for (int m = 1; m <= ell; ++m) T += schedule.rate(m) * t[static_cast<size_t>(m) - 1];
    const double pref = 1.0 / (n_L * n_ell * n_ell);
    ObservableSample c{ObservableKind::C, ell, norm2sq(trace.z(ell)) * T * pref,
                       EstimatorVariant::Gram};
    ObservableSample bt{ObservableKind::Btilde, ell, T * T * pref, EstimatorVariant::Gram};
    return {c, bt};
}

inline ObservableSample sample_C(const NetworkState& state, const ForwardTrace& trace,
                                 const LearningRateSchedule& schedule, int ell) {
    return sample_C_and_Btilde(state, trace, schedule, ell).first;
}

inline ObservableSample sample_Btilde(const NetworkState& state, const ForwardTrace& trace,
                                      const LearningRateSchedule& schedule, int ell) {
    return sample_C_and_Btilde(state, trace, schedule, ell).second;
}

// Ctilde-sample = (1/(n_L n_ell^2)) sum_m eta_m s^(m) ||(J^(m,ell))^T z^(ell)||^2.
inline ObservableSample sample_Ctilde(const NetworkState& state, const ForwardTrace& trace,
                                      const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    std::vector<Vec> v = backward_vector_sweep(state, trace, trace.z(ell), ell);
    double acc = 0.0;
    for (int m = 1; m <= ell; ++m)
        acc += schedule.rate(m) * activation_norm_sq(trace, m) *
               norm2sq(v[static_cast<size_t>(m) - 1]);
    return ObservableSample{ObservableKind::Ctilde, ell, acc / (n_L * n_ell * n_ell),
                            EstimatorVariant::Gram};
}

// Squared pre-activation change at the reference coordinate.
inline ObservableSample sample_delta_z_sq(const NetworkState& state, const Batch& batch,
                                          const LearningRateSchedule& schedule, int ell,
                                          DeltaMode mode) {
    double d;
    if (mode == DeltaMode::Actual) {
        d = delta_z_actual(state, batch.x, batch.y, schedule, ell).dz[0];
    } else {
        ForwardTrace trace = forward(state, batch.x);
        d = delta_z_linearized(state, trace, batch.y, schedule, ell).dz[0];
    }
    return ObservableSample{ObservableKind::DeltaZSq, ell, d * d, EstimatorVariant::Gram};
}

// Coordinate-averaged variant: same mean by exchangeability, lower variance.
inline ObservableSample sample_delta_z_sq_avg(const NetworkState& state, const Batch& batch,
                                              const LearningRateSchedule& schedule, int ell,
                                              DeltaMode mode) {
    Vec dz;
    if (mode == DeltaMode::Actual) {
        dz = delta_z_actual(state, batch.x, batch.y, schedule, ell).dz;
    } else {
        ForwardTrace trace = forward(state, batch.x);
        dz = delta_z_linearized(state, trace, batch.y, schedule, ell).dz;
    }
    const double value = norm2sq(dz) / static_cast<double>(dz.size());
    return ObservableSample{ObservableKind::DeltaZSq, ell, value, EstimatorVariant::Gram};
}

// Linearized tangent against a unit error at output coordinate 1. For n_out = 1
// the linearized change factorizes as dz^(ell) = (y_1 - z_1^(L+1)) v.
inline Vec unit_error_tangent(const NetworkState& state, const ForwardTrace& trace,
                              const LearningRateSchedule& schedule, int ell) {
    const int top = trace.top_layer();
    Vec e(trace.z(top).size(), 0.0);
    e[0] = 1.0;
    return linearized_tangent(state, trace, e, schedule, ell);
}

// y-integrated linearized estimators: E_y (y_1 - z_1)^2 = (z_1^(L+1))^2 + 1 for
// y_1 ~ N(0,1), so ((z_1)^2 + 1) v_i^2 estimates the same mean as the sampled-y
// (dz_i)^2 with y integrated out analytically. Requires n_out = 1.
inline ObservableSample sample_delta_z_sq_integrated(const NetworkState& state,
                                                     const ForwardTrace& trace,
                                                     const LearningRateSchedule& schedule,
                                                     int ell) {
    const int top = trace.top_layer();
    if (trace.z(top).size() != 1)
        throw std::invalid_argument("sample_delta_z_sq_integrated: needs n_out = 1");
    const Vec v = unit_error_tangent(state, trace, schedule, ell);
    const double z1 = trace.z(top)[0];
    return ObservableSample{ObservableKind::DeltaZSq, ell, (z1 * z1 + 1.0) * v[0] * v[0],
                            EstimatorVariant::PreIntegration};
}

inline ObservableSample sample_delta_z_sq_integrated_avg(const NetworkState& state,
                                                         const ForwardTrace& trace,
                                                         const LearningRateSchedule& schedule,
                                                         int ell) {
    const int top = trace.top_layer();
    if (trace.z(top).size() != 1)
        throw std::invalid_argument("sample_delta_z_sq_integrated_avg: needs n_out = 1");
    const Vec v = unit_error_tangent(state, trace, schedule, ell);
    const double z1 = trace.z(top)[0];
    const double value = (z1 * z1 + 1.0) * norm2sq(v) / static_cast<double>(v.size());
    return ObservableSample{ObservableKind::DeltaZSq, ell, value, EstimatorVariant::PreIntegration};
}

// Signed residual of the projection identity between layers ell and L,
// contracted against the layer-m1/m2 update directions that weight coordinate 1
// at layer ell:
//   value = (s^(m1) s^(m2) / n_L) [ <p1,p2>/n_L - <q1,q2>/n_ell ],
//   q_k = J^(mk,ell) (J^(mk,ell))^T e1,  p_k = J^(ell,L) q_k.
// Identically zero at ell = L; mean zero over weight draws at every ell.
inline ObservableSample cond_projection_residual(const NetworkState& state,
                                                 const ForwardTrace& trace, int m1, int m2,
                                                 int ell) {
    const int L = trace.top_layer() - 1;
    if (ell > L || ell < 1) throw std::invalid_argument("cond_projection_residual: ell");
    if (m1 < 1 || m1 > ell || m2 < 1 || m2 > ell)
        throw std::invalid_argument("cond_projection_residual: m out of range");
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(L).size());
    Vec e1(trace.z(ell).size(), 0.0);
    e1[0] = 1.0;
    std::vector<Vec> u = backward_vector_sweep(state, trace, e1, ell);
    Vec q1 = forward_vector_push(state, trace, u[static_cast<size_t>(m1) - 1], m1, ell);
    Vec q2 = m2 == m1 ? q1
                      : forward_vector_push(state, trace, u[static_cast<size_t>(m2) - 1], m2, ell);
    Vec p1 = forward_vector_push(state, trace, q1, ell, L);
    Vec p2 = m2 == m1 ? p1 : forward_vector_push(state, trace, q2, ell, L);
    const double s1 = activation_norm_sq(trace, m1);
    const double s2 = activation_norm_sq(trace, m2);
    const double value = s1 * s2 / n_L * (dot(p1, p2) / n_L - dot(q1, q2) / n_ell);
    return ObservableSample{ObservableKind::CondProjResidual, ell, value, EstimatorVariant::Gram};
}

// ---- naive enumeration oracles (tiny networks only) ----
// Each loops over every parameter coordinate in layers 1..ell through
// preactivation_param_gradient and applies the defining sums directly.

inline double naive_B(const NetworkState& state, const ForwardTrace& trace,
                      const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    std::vector<Vec> grads;
    std::vector<double> rates;
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b) {
                grads.push_back(preactivation_param_gradient(state, trace, {m, a, b}, ell));
                rates.push_back(schedule.rate(m));
            }
    }
    double acc = 0.0;
    for (size_t i = 0; i < grads.size(); ++i)
        for (size_t j = 0; j < grads.size(); ++j) {
            const double ip = dot(grads[i], grads[j]);
            acc += rates[i] * rates[j] * ip * ip;
        }
    return acc / (2.0 * n_L * n_ell * n_ell);
}

inline double naive_B_preintegration(const NetworkState& state, const ForwardTrace& trace,
                                     const LearningRateSchedule& schedule, int ell) {
    const int top = trace.top_layer();
    double t = 0.0;
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b) {
                Vec g_ell = preactivation_param_gradient(state, trace, {m, a, b}, ell);
                Vec g_top = preactivation_param_gradient(state, trace, {m, a, b}, top);
                t += schedule.rate(m) * g_ell[0] * g_top[0];
            }
    }
    return t * t;
}

inline double naive_A(const NetworkState& state, const ForwardTrace& trace,
                      const LearningRateSchedule& schedule, int ell) {
    const double z1 = trace.z(trace.top_layer())[0];
    return z1 * z1 * naive_B_preintegration(state, trace, schedule, ell);
}

inline double naive_C(const NetworkState& state, const ForwardTrace& trace,
                      const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    double acc = 0.0;
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b)
                acc += schedule.rate(m) *
                       norm2sq(preactivation_param_gradient(state, trace, {m, a, b}, ell));
    }
    return norm2sq(trace.z(ell)) * acc / (n_L * n_ell * n_ell);
}

inline double naive_Btilde(const NetworkState& state, const ForwardTrace& trace,
                           const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    double acc = 0.0;
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b)
                acc += schedule.rate(m) *
                       norm2sq(preactivation_param_gradient(state, trace, {m, a, b}, ell));
    }
    return acc * acc / (n_L * n_ell * n_ell);
}

inline double naive_Ctilde(const NetworkState& state, const ForwardTrace& trace,
                           const LearningRateSchedule& schedule, int ell) {
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(trace.top_layer() - 1).size());
    double acc = 0.0;
    for (int m = 1; m <= ell; ++m) {
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b) {
                const double ip =
                    dot(trace.z(ell),
                        preactivation_param_gradient(state, trace, {m, a, b}, ell));
                acc += schedule.rate(m) * ip * ip;
            }
    }
    return acc / (n_L * n_ell * n_ell);
}

inline double naive_cond_projection_residual(const NetworkState& state, const ForwardTrace& trace,
                                             int m1, int m2, int ell) {
    const int L = trace.top_layer() - 1;
    const double n_ell = static_cast<double>(trace.z(ell).size());
    const double n_L = static_cast<double>(trace.z(L).size());
    // S_X[m] = sum_{mu in layer m} (d z_1^(ell)/d mu) (d z^(X)/d mu)
    auto weighted_sum = [&](int m, int to) {
        Vec s(trace.z(to).size(), 0.0);
        const Matrix& wm = state.W(m);
        for (int a = 0; a < wm.rows; ++a)
            for (int b = 0; b < wm.cols; ++b) {
                Vec g_ell = preactivation_param_gradient(state, trace, {m, a, b}, ell);
                Vec g_to = preactivation_param_gradient(state, trace, {m, a, b}, to);
                axpy(s, g_ell[0], g_to);
            }
        return s;
    };
    Vec sL1 = weighted_sum(m1, L), sL2 = weighted_sum(m2, L);
    Vec sE1 = weighted_sum(m1, ell), sE2 = weighted_sum(m2, ell);
    return (dot(sL1, sL2) / n_L - dot(sE1, sE2) / n_ell) / n_L;
}

}  // namespace mup
