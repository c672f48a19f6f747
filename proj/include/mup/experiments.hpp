#pragma once
// Canonical experiment recipes shared by the command-line tool and the
// release gate. Each recipe builds its plans from one user seed, runs the
// harness, and returns a structured verdict plus the raw cells for reporting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mup/montecarlo.hpp"
#include "mup/theory.hpp"

namespace mup {

enum class CorruptKind { None, GradSignFlip, HiddenVariance, OutputVariance };

inline CorruptKind parse_corrupt(const std::string& s) {
    if (s.empty() || s == "none") return CorruptKind::None;
    if (s == "grad-sign-flip") return CorruptKind::GradSignFlip;
    if (s == "hidden-variance") return CorruptKind::HiddenVariance;
    if (s == "output-variance") return CorruptKind::OutputVariance;
    throw std::invalid_argument("unknown corruption: " + s);
}

inline InitPerturbation perturbation_for(CorruptKind c) {
    InitPerturbation p;
    if (c == CorruptKind::HiddenVariance) p.hidden_variance_scale = 1.5;
    if (c == CorruptKind::OutputVariance) p.output_variance_scale = 1.5;
    return p;
}

namespace detail {

inline double rel_gap(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(want), std::abs(got), 1e-300});
}

inline std::vector<int> uniform_widths(int n, int L, int n_out = 1) {
    std::vector<int> w(static_cast<size_t>(L) + 1, n);
    w.push_back(n_out);
    return w;
}

inline int hidden_depth(const std::vector<int>& widths) {
    if (widths.size() < 3) throw std::invalid_argument("width profile needs n_0, hidden, n_out");
    return static_cast<int>(widths.size()) - 2;
}

inline double loss_value(const NetworkState& state, const Vec& x, const Vec& y) {
    const ForwardTrace t = forward(state, x);
    const Vec& z = t.z(t.top_layer());
    double s = 0.0;
    for (size_t i = 0; i < z.size(); ++i) s += (z[i] - y[i]) * (z[i] - y[i]);
    return 0.5 * s;
}

inline double welch3(double se1, double se2) { return 3.0 * std::sqrt(se1 * se1 + se2 * se2); }

}  // namespace detail

// Probe layers for a depth profile: powers of two from about L/8 up to L.
inline std::vector<int> default_profile_layers(int L) {
    std::vector<int> out;
    for (int v = L; v >= std::max(1, L / 8); v /= 2) out.push_back(v);
    std::reverse(out.begin(), out.end());
    return out;
}

// Probe triples (m1, m2, ell) spread over two interior layers.
inline std::vector<CondProbe> default_cond_probes(int L) {
    const int ea = std::max(1, L / 2);
    const int eb = std::min(L, std::max(1, (3 * L) / 4));
    std::set<std::tuple<int, int, int>> seen;
    std::vector<CondProbe> out;
    auto add = [&](int m1, int m2, int ell) {
        m1 = std::clamp(m1, 1, ell);
        m2 = std::clamp(m2, 1, ell);
        if (m1 > m2) std::swap(m1, m2);
        if (seen.insert({m1, m2, ell}).second) out.push_back({m1, m2, ell});
    };
    add(1, ea / 2, ea);
    add(1, ea, ea);
    add(ea - 1, ea, ea);
    add(ea / 2, ea / 2, ea);
    add(ea / 2, ea / 2 + 1, eb);
    add(1, eb, eb);
    add(eb - 1, eb, eb);
    add(ea, ea, eb);
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference and oracle suites (tiny nets)

struct SuiteResult {
    bool pass = true;
    double worst_rel = 0.0;
    std::uint64_t worst_seed = 0;  // replicate index of the offending net
    int nets = 0;
    double tolerance = 0.0;
};

inline SuiteResult gradient_check_suite(int nets, std::uint64_t seed,
                                        CorruptKind corrupt = CorruptKind::None,
                                        double tol = 1e-6) {
    SuiteResult out;
    out.nets = nets;
    out.tolerance = tol;
    for (int i = 0; i < nets; ++i) {
        Stream s = derive_stream(seed, Purpose::Generic, static_cast<std::uint64_t>(i), 0);
        NetworkConfig cfg;
        const int L = 1 + static_cast<int>(s.next_u64() % 4);
        cfg.widths.push_back(2 + static_cast<int>(s.next_u64() % 5));
        for (int l = 0; l < L; ++l) cfg.widths.push_back(2 + static_cast<int>(s.next_u64() % 5));
        cfg.widths.push_back(1 + static_cast<int>(s.next_u64() % 3));

        NetworkState state;
        Batch batch;
        ForwardTrace trace;
        for (int attempt = 0; attempt < 100; ++attempt) {
            state = init_network(cfg, s);
            batch = sample_batch(cfg.widths.front(), cfg.widths.back(), s);
            trace = forward(state, batch.x);
            double closest = std::numeric_limits<double>::infinity();
            for (int ell = 1; ell <= L; ++ell)
                for (double z : trace.z(ell)) closest = std::min(closest, std::abs(z));
            if (closest > 1e-4) break;  // keep finite differences off the kink
        }

        const ParameterGradients an = loss_gradient(state, trace, batch.y);
        const double h = 1e-6;
        for (int ell = 1; ell <= L + 1; ++ell) {
            const Matrix& w = state.W(ell);
            for (int r = 0; r < w.rows; ++r)
                for (int c = 0; c < w.cols; ++c) {
                    NetworkState pert = state;
                    pert.W(ell)(r, c) += h;
                    const double up = detail::loss_value(pert, batch.x, batch.y);
                    pert.W(ell)(r, c) -= 2.0 * h;
                    const double dn = detail::loss_value(pert, batch.x, batch.y);
                    const double fd = (up - dn) / (2.0 * h);
                    double g = an.G(ell)(r, c);
                    if (corrupt == CorruptKind::GradSignFlip) g = -g;
                    const double rel =
                        std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-3});
                    if (rel > out.worst_rel) {
                        out.worst_rel = rel;
                        out.worst_seed = static_cast<std::uint64_t>(i);
                    }
                }
        }
    }
    out.pass = out.worst_rel <= tol;
    return out;
}

inline SuiteResult oracle_equivalence_suite(int nets, std::uint64_t seed, double tol = 1e-10) {
    SuiteResult out;
    out.nets = nets;
    out.tolerance = tol;
    auto track = [&](double got, double want, int i) {
        const double rel = detail::rel_gap(got, want);
        if (rel > out.worst_rel) {
            out.worst_rel = rel;
            out.worst_seed = static_cast<std::uint64_t>(i);
        }
    };
    for (int i = 0; i < nets; ++i) {
        Stream s = derive_stream(seed, Purpose::Generic, static_cast<std::uint64_t>(i), 1);
        NetworkConfig cfg;
        const int L = 1 + static_cast<int>(s.next_u64() % 3);
        cfg.widths.push_back(2 + static_cast<int>(s.next_u64() % 4));
        for (int l = 0; l < L; ++l) cfg.widths.push_back(2 + static_cast<int>(s.next_u64() % 4));
        cfg.widths.push_back(1 + static_cast<int>(s.next_u64() % 2));
        NetworkState state = init_network(cfg, s);
        Batch batch = sample_batch(cfg.widths.front(), cfg.widths.back(), s);
        ForwardTrace trace = forward(state, batch.x);
        LearningRateSchedule sched;
        for (int m = 0; m <= L; ++m) sched.per_layer.push_back(0.25 + 0.5 * s.next_unit());

        for (int ell = 1; ell <= L; ++ell) {
            track(sample_B(state, trace, sched, ell).value, naive_B(state, trace, sched, ell),
                  i);
            const auto [a, b] = sample_AB_preintegration(state, trace, sched, ell);
            track(a.value, naive_A(state, trace, sched, ell), i);
            track(b.value, naive_B_preintegration(state, trace, sched, ell), i);
            const auto [c, bt] = sample_C_and_Btilde(state, trace, sched, ell);
            track(c.value, naive_C(state, trace, sched, ell), i);
            track(bt.value, naive_Btilde(state, trace, sched, ell), i);
            track(sample_Ctilde(state, trace, sched, ell).value,
                  naive_Ctilde(state, trace, sched, ell), i);
            for (int m1 = 1; m1 <= ell; ++m1)
                for (int m2 = m1; m2 <= ell; ++m2)
                    track(cond_projection_residual(state, trace, m1, m2, ell).value,
                          naive_cond_projection_residual(state, trace, m1, m2, ell), i);
        }
    }
    out.pass = out.worst_rel <= tol;
    return out;
}

// ---------------------------------------------------------------------------
// Initialization profile: for a fixed input, the mean squared pre-activation
// norm must sit on (n_ell / n_0) ||x||^2 at every hidden layer.

struct LayerBand {
    int layer = 0;
    double mean = 0.0;
    double std_error = 0.0;
    double target = 0.0;
    bool within_band = true;
    bool within_rel = true;
};

struct HeProfileResult {
    double input_sq = 0.0;  // ||x||^2
    std::vector<LayerBand> bands;
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

inline HeProfileResult he_profile(const std::vector<int>& widths, long long R,
                                  std::uint64_t seed, InitVariant variant, int workers,
                                  double rel_band = 0.05, const Vec* x_override = nullptr) {
    const int L = detail::hidden_depth(widths);
    const int n0 = widths.front();
    HeProfileResult out;
    Vec x;
    if (x_override) {
        if (static_cast<int>(x_override->size()) != n0)
            throw std::invalid_argument("input file length != n_0");
        x = *x_override;
    } else {
        Stream xs = derive_stream(seed, Purpose::Generic, 0, 0);
        x.resize(static_cast<size_t>(n0));
        for (double& v : x) v = xs.next_gaussian();
    }
    out.input_sq = norm2sq(x);

    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.config.init_variant = variant;
    plan.replicates = R;
    plan.master_seed = seed;
    plan.workers = workers;
    for (int ell = 1; ell <= L; ++ell) plan.layers.push_back(ell);

    auto eval = [&x](const NetworkState& state, const Batch&, const PlanPoint&,
                     const ExperimentPlan& p) {
        const ForwardTrace t = forward(state, x);
        const std::vector<double> prof2 = second_moment_profile(t);
        const std::vector<double> prof4 = fourth_moment_profile(t);
        std::vector<std::pair<CellKey, double>> cells;
        for (int ell : p.layers) {
            cells.push_back(
                {{ObservableKind::SecondMoment, ell, 0}, prof2[static_cast<size_t>(ell) - 1]});
            cells.push_back(
                {{ObservableKind::FourthMoment, ell, 0}, prof4[static_cast<size_t>(ell) - 1]});
        }
        return cells;
    };
    out.cells = run_replicated(plan, eval);
    for (const auto& [key, est] : out.cells) {
        if (key.which != ObservableKind::SecondMoment) continue;
        LayerBand b;
        b.layer = key.layer;
        b.mean = est.mean;
        b.std_error = est.std_error;
        b.target = out.input_sq * widths[static_cast<size_t>(key.layer)] / n0;
        b.within_band = std::abs(est.mean - b.target) <= 3.0 * est.std_error;
        b.within_rel = std::abs(est.mean - b.target) <= rel_band * b.target;
        out.pass = out.pass && b.within_band && b.within_rel;
        out.bands.push_back(b);
    }
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Update-size decomposition: the sampled-target squared update must agree
// with the target-integrated sum of its two constituents, measured on
// independent replicate sets.

struct PairedCheck {
    int layer = 0;
    double lhs_mean = 0.0, lhs_se = 0.0;
    double rhs_mean = 0.0, rhs_se = 0.0;
    bool pass = true;
    bool inconclusive = false;
};

struct DecompositionResult {
    std::vector<PairedCheck> layers;
    bool pass = true;
    bool inconclusive = false;
    ExperimentPlan plan_lhs, plan_rhs;
    std::map<CellKey, ObservableEstimate> cells_lhs, cells_rhs;
};

inline DecompositionResult decomposition_check(const std::vector<int>& widths, long long R,
                                               std::uint64_t seed, int workers,
                                               std::vector<int> layers = {},
                                               InitPerturbation pert = {}) {
    const int L = detail::hidden_depth(widths);
    if (layers.empty()) layers = default_profile_layers(L);
    DecompositionResult out;

    ExperimentPlan lhs;
    lhs.config.widths = widths;
    lhs.eta = 1.0;
    lhs.layers = layers;
    lhs.replicates = R;
    lhs.master_seed = mix64(seed ^ 0x1e35a7bd4f2a9c11ULL);
    lhs.workers = workers;
    lhs.perturbation = pert;
    lhs.requests = {{ObservableKind::DeltaZSq, DeltaMode::Linearized, false, false}};

    ExperimentPlan rhs = lhs;
    rhs.master_seed = mix64(seed ^ 0x9d2c5680aa7f3b02ULL);
    rhs.requests = {{ObservableKind::DeltaZSq, DeltaMode::Linearized, false, true},
                    {ObservableKind::A},
                    {ObservableKind::B}};

    out.cells_lhs = run_replicated(lhs);
    out.cells_rhs = run_replicated(rhs);
    for (int ell : layers) {
        const ObservableEstimate& a = out.cells_lhs.at({ObservableKind::DeltaZSq, ell, 0});
        const ObservableEstimate& b = out.cells_rhs.at({ObservableKind::DeltaZSq, ell, 0});
        PairedCheck pc;
        pc.layer = ell;
        pc.lhs_mean = a.mean;
        pc.lhs_se = a.std_error;
        pc.rhs_mean = b.mean;
        pc.rhs_se = b.std_error;
        const double band = detail::welch3(a.std_error, b.std_error);
        pc.pass = std::abs(a.mean - b.mean) <= band;
        pc.inconclusive = band > 0.5 * std::max({std::abs(a.mean), std::abs(b.mean), 1e-300});
        out.pass = out.pass && pc.pass;
        out.inconclusive = out.inconclusive || pc.inconclusive;
        out.layers.push_back(pc);
    }
    out.plan_lhs = lhs;
    out.plan_rhs = rhs;
    return out;
}

// Paired gap between two routes to the same second-order statistic: the
// quadratic form over the accumulated update matrix, and the readout through
// the sampled output row. The gap has mean zero exactly when the output row
// carries its stated variance, so this is the decomposition sub-check that a
// wrong-variance initialization fixture trips.
struct GramPairingResult {
    std::vector<PairedCheck> layers;
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

inline GramPairingResult gram_pairing_check(const std::vector<int>& widths, long long R,
                                            std::uint64_t seed, int workers,
                                            InitPerturbation pert = {}) {
    const int L = detail::hidden_depth(widths);
    GramPairingResult out;
    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.eta = 1.0;
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x7c1592e3d08b6a45ULL);
    plan.workers = workers;
    plan.perturbation = pert;
    const std::vector<int> probe =
        L > 1 ? std::vector<int>{std::max(1, L / 2), L} : std::vector<int>{1};
    auto eval = [probe](const NetworkState& state, const Batch& batch, const PlanPoint& pt,
                        const ExperimentPlan&) {
        const ForwardTrace trace = forward(state, batch.x);
        std::vector<std::pair<CellKey, double>> cells;
        for (int ell : probe) {
            const double pre =
                sample_AB_preintegration(state, trace, pt.schedule, ell).second.value;
            const double gram = sample_B(state, trace, pt.schedule, ell).value;
            cells.push_back({{ObservableKind::B, ell, 0}, pre - gram});
        }
        return cells;
    };
    out.cells = run_replicated(plan, eval);
    for (const auto& [key, est] : out.cells) {
        PairedCheck pc;
        pc.layer = key.layer;
        pc.lhs_mean = est.mean;
        pc.lhs_se = est.std_error;
        pc.pass = std::abs(est.mean) <= 3.0 * est.std_error;
        out.pass = out.pass && pc.pass;
        out.layers.push_back(pc);
    }
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Conditional projection residuals: zero-mean for every probe triple.

struct CondCheckResult {
    struct ProbeBand {
        CondProbe probe;
        double mean = 0.0;
        double std_error = 0.0;
        bool pass = true;
    };
    std::vector<ProbeBand> probes;
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

inline CondCheckResult cond_projection_check(const std::vector<int>& widths, long long R,
                                             std::uint64_t seed, int workers,
                                             std::vector<CondProbe> probes = {},
                                             InitPerturbation pert = {}) {
    const int L = detail::hidden_depth(widths);
    if (probes.empty()) probes = default_cond_probes(L);
    CondCheckResult out;
    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.eta = 1.0;
    plan.cond_probes = probes;
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x3ad8f0c2b1e97d64ULL);
    plan.workers = workers;
    plan.perturbation = pert;
    out.cells = run_replicated(plan);
    for (size_t i = 0; i < probes.size(); ++i) {
        const ObservableEstimate& est =
            out.cells.at({ObservableKind::CondProjResidual, probes[i].ell, static_cast<int>(i)});
        CondCheckResult::ProbeBand b;
        b.probe = probes[i];
        b.mean = est.mean;
        b.std_error = est.std_error;
        b.pass = std::abs(est.mean) <= 3.0 * est.std_error;
        out.pass = out.pass && b.pass;
        out.probes.push_back(b);
    }
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Width scaling at fixed depth: the output-factor statistic shrinks against
// its companion roughly like 1/n, as does the projected-norm statistic
// against its own companion.

struct WidthScalingResult {
    struct Point {
        int width = 0;
        double a_mean = 0.0, a_se = 0.0;
        double b_mean = 0.0, b_se = 0.0;
        double c_mean = 0.0, ct_mean = 0.0;
        double ab_ratio = 0.0, ctc_ratio = 0.0;
    };
    std::vector<Point> points;
    std::vector<double> ab_successive, ctc_successive;
    bool ab_pass = true;
    bool ctc_pass = true;
    bool inconclusive = false;
    ExperimentPlan plan;
    std::vector<SweepPoint> sweep;
};

inline WidthScalingResult width_scaling(int L, const std::vector<int>& widths, long long R,
                                        std::uint64_t seed, int workers, double lo = 0.35,
                                        double hi = 0.7) {
    WidthScalingResult out;
    ExperimentPlan plan;
    plan.config.widths = detail::uniform_widths(widths.front(), L);
    plan.eta = 1.0;
    plan.requests = {{ObservableKind::A},
                     {ObservableKind::B},
                     {ObservableKind::C},
                     {ObservableKind::Ctilde}};
    plan.layers = {L};
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x58c4d1f7a96e20b3ULL);
    plan.workers = workers;
    plan.axis = SweepAxis::Width;
    for (int w : widths) plan.axis_values.push_back(static_cast<double>(w));

    out.sweep = run_sweep(plan);
    for (size_t i = 0; i < out.sweep.size(); ++i) {
        const auto& cells = out.sweep[i].estimates;
        WidthScalingResult::Point p;
        p.width = widths[i];
        const ObservableEstimate& a = cells.at({ObservableKind::A, L, 0});
        const ObservableEstimate& b = cells.at({ObservableKind::B, L, 0});
        p.a_mean = a.mean;
        p.a_se = a.std_error;
        p.b_mean = b.mean;
        p.b_se = b.std_error;
        p.c_mean = cells.at({ObservableKind::C, L, 0}).mean;
        p.ct_mean = cells.at({ObservableKind::Ctilde, L, 0}).mean;
        p.ab_ratio = p.a_mean / p.b_mean;
        p.ctc_ratio = p.ct_mean / p.c_mean;
        if (p.a_se > 0.25 * std::abs(p.a_mean) || p.b_se > 0.25 * std::abs(p.b_mean))
            out.inconclusive = true;
        out.points.push_back(p);
    }
    for (size_t i = 1; i < out.points.size(); ++i) {
        const double rab = out.points[i].ab_ratio / out.points[i - 1].ab_ratio;
        const double rct = out.points[i].ctc_ratio / out.points[i - 1].ctc_ratio;
        out.ab_successive.push_back(rab);
        out.ctc_successive.push_back(rct);
        out.ab_pass = out.ab_pass && rab >= lo && rab <= hi;
        out.ctc_pass = out.ctc_pass && rct >= lo && rct <= hi;
    }
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Depth profiles within one deep net, and the fitted growth exponents.

struct DepthScalingResult {
    std::vector<std::pair<double, double>> points;  // (layer, mean)
    PowerLawFit fit{};
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

// cubic_stub short-circuits the per-replicate measurement with the constant
// value ell^3, exercising plan plumbing and the fit path alone.
inline DepthScalingResult depth_update_scaling(const std::vector<int>& widths,
                                               std::vector<int> layers, double eta, long long R,
                                               std::uint64_t seed, int workers,
                                               DeltaMode mode = DeltaMode::Actual,
                                               bool cubic_stub = false,
                                               double exponent_target = 3.0, double tol = 0.4,
                                               double r2_min = 0.98) {
    const int L = detail::hidden_depth(widths);
    if (layers.empty()) layers = default_profile_layers(L);
    DepthScalingResult out;
    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.eta = eta;
    plan.requests = {{ObservableKind::DeltaZSq, mode, true, true}};
    plan.layers = layers;
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0xcb0f3e96d5a18472ULL);
    plan.workers = workers;
    if (cubic_stub) {
        auto stub = [](const NetworkState&, const Batch&, const PlanPoint&,
                       const ExperimentPlan& p) {
            std::vector<std::pair<CellKey, double>> cells;
            for (int ell : p.layers)
                cells.push_back({{ObservableKind::DeltaZSq, ell, 0},
                                 static_cast<double>(ell) * ell * ell});
            return cells;
        };
        out.cells = run_replicated(plan, stub);
    } else {
        out.cells = run_replicated(plan);
    }
    for (int ell : layers)
        out.points.push_back({static_cast<double>(ell),
                              out.cells.at({ObservableKind::DeltaZSq, ell, 0}).mean});
    out.fit = fit_power_law(out.points);
    out.pass = std::abs(out.fit.exponent - exponent_target) <= tol && out.fit.r_squared >= r2_min;
    out.plan = plan;
    return out;
}

struct AuxScalingResult {
    std::vector<std::pair<double, double>> c_points, btn_points;  // (layer, mean)
    PowerLawFit c_fit{}, btn_fit{};
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

inline AuxScalingResult aux_depth_scaling(const std::vector<int>& widths,
                                          std::vector<int> layers, double eta, long long R,
                                          std::uint64_t seed, int workers, double c_tol = 0.2,
                                          double btn_tol = 0.3) {
    const int L = detail::hidden_depth(widths);
    if (layers.empty()) layers = default_profile_layers(L);
    AuxScalingResult out;
    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.eta = eta;
    plan.requests = {{ObservableKind::C}, {ObservableKind::Btilde}};
    plan.layers = layers;
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x64b2a90c8f5d3e17ULL);
    plan.workers = workers;
    out.cells = run_replicated(plan);
    for (int ell : layers) {
        out.c_points.push_back({static_cast<double>(ell),
                                out.cells.at({ObservableKind::C, ell, 0}).mean});
        out.btn_points.push_back({static_cast<double>(ell),
                                  out.cells.at({ObservableKind::Btilde, ell, 0}).mean /
                                      widths[static_cast<size_t>(ell)]});
    }
    out.c_fit = fit_power_law(out.c_points);
    out.btn_fit = fit_power_law(out.btn_points);
    out.pass = std::abs(out.c_fit.exponent - 1.0) <= c_tol &&
               std::abs(out.btn_fit.exponent - 2.0) <= btn_tol;
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Critical learning rate versus depth. The unit-rate estimate fixes the
// quadratic coefficient per depth; eta* is its inverse square root,
// optionally refined by bisecting the actual one-step update to unit size.

struct RateLawResult {
    struct Point {
        int depth = 0;
        double mean = 0.0, std_error = 0.0;
        double eta_star = 0.0, eta_star_se = 0.0;
        double eta_star_refined = 0.0;  // 0 when refinement is off
    };
    std::vector<Point> points;
    PowerLawFit fit{};
    bool fitted = false;
    bool pass = true;
    ExperimentPlan plan;
    std::vector<SweepPoint> sweep;
};

// unit_stub replaces the measurement with the constant 1, so eta* = 1 at
// every depth; it exercises the inversion and table plumbing alone.
inline RateLawResult rate_law(int n, const std::vector<int>& depths, long long R,
                              std::uint64_t seed, int workers, bool refine = false,
                              long long refine_R = 200, int refine_iters = 20, double tol = 0.3,
                              bool unit_stub = false) {
    RateLawResult out;
    ExperimentPlan plan;
    plan.config.widths = detail::uniform_widths(n, depths.front());
    plan.eta = 1.0;
    plan.requests = {{ObservableKind::DeltaZSq, DeltaMode::Linearized, true, true}};
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x2f8d61b4c7a0e593ULL);
    plan.workers = workers;
    plan.axis = SweepAxis::Depth;
    for (int L : depths) plan.axis_values.push_back(static_cast<double>(L));

    if (unit_stub) {
        auto stub = [](const NetworkState&, const Batch&, const PlanPoint& pt,
                       const ExperimentPlan&) {
            const int L = static_cast<int>(pt.config.widths.size()) - 2;
            return std::vector<std::pair<CellKey, double>>{
                {{ObservableKind::DeltaZSq, L, 0}, 1.0}};
        };
        out.sweep = run_sweep(plan, stub);
    } else {
        out.sweep = run_sweep(plan);
    }
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < out.sweep.size(); ++i) {
        const int L = depths[i];
        const ObservableEstimate& est =
            out.sweep[i].estimates.at({ObservableKind::DeltaZSq, L, 0});
        RateLawResult::Point p;
        p.depth = L;
        p.mean = est.mean;
        p.std_error = est.std_error;
        p.eta_star = solve_eta_star(est);
        p.eta_star_se = 0.5 * std::pow(est.mean, -1.5) * est.std_error;
        if (refine) {
            auto mean_at = [&](double eta_v) {
                ExperimentPlan rp;
                rp.config.widths = detail::uniform_widths(n, L);
                rp.eta = eta_v;
                rp.requests = {{ObservableKind::DeltaZSq, DeltaMode::Actual, true, true}};
                rp.layers = {L};
                rp.replicates = refine_R;
                rp.master_seed =
                    mix64(seed ^ (0x6a09e667f3bcc909ULL + 2 * static_cast<std::uint64_t>(L)));
                rp.workers = workers;
                return run_replicated(rp).at({ObservableKind::DeltaZSq, L, 0}).mean;
            };
            p.eta_star_refined = refine_eta_star(mean_at, p.eta_star, refine_iters);
        }
        out.points.push_back(p);
        pts.push_back({static_cast<double>(L), refine ? p.eta_star_refined : p.eta_star});
    }
    if (pts.size() >= 3) {
        out.fit = fit_power_law(pts);
        out.fitted = true;
        out.pass = std::abs(out.fit.exponent + 1.5) <= tol;
    }
    out.plan = plan;
    return out;
}

// ---------------------------------------------------------------------------
// Recursion cross-check: the analytic recursion carries the right exponents
// at large width, and once calibrated on layer-1 statistics it tracks the
// measured second-order growth layer by layer.

struct RecursionCheckResult {
    PowerLawFit c_fit{}, btn_fit{}, b_fit{};
    bool analytic_pass = true;
    RecursionConstants calibrated;
    struct LayerCompare {
        int layer = 0;
        double mc_mean = 0.0, mc_se = 0.0;
        double predicted = 0.0;
        double ratio = 0.0;
    };
    std::vector<LayerCompare> layers;
    bool finite_pass = true;
    bool inconclusive = false;
    bool pass = true;
    ExperimentPlan plan;
    std::map<CellKey, ObservableEstimate> cells;
};

inline RecursionCheckResult recursion_crosscheck(const std::vector<int>& widths, long long R,
                                                 std::uint64_t seed, int workers,
                                                 double exp_tol = 0.05,
                                                 double ratio_band = 2.0) {
    const int L = detail::hidden_depth(widths);
    RecursionCheckResult out;

    {  // large-width exponents, unit constants
        const int big_n = 1000000, big_L = 1024;
        std::vector<int> w(static_cast<size_t>(big_L) + 2, big_n);
        w.back() = 1;
        const std::vector<RecursionState> traj =
            evolve_recursion(big_L, w, LearningRateSchedule::global(big_L, 1.0), {});
        std::vector<std::pair<double, double>> cpts, btpts, bpts;
        for (int ell = 64; ell <= big_L; ++ell) {
            const RecursionState& s = traj[static_cast<size_t>(ell) - 1];
            cpts.push_back({static_cast<double>(ell), s.C});
            btpts.push_back({static_cast<double>(ell), s.Btilde / big_n});
            bpts.push_back({static_cast<double>(ell), s.B});
        }
        out.c_fit = fit_power_law(cpts);
        out.btn_fit = fit_power_law(btpts);
        out.b_fit = fit_power_law(bpts);
        out.analytic_pass = std::abs(out.c_fit.exponent - 1.0) <= exp_tol &&
                            std::abs(out.btn_fit.exponent - 2.0) <= exp_tol &&
                            std::abs(out.b_fit.exponent - 3.0) <= exp_tol;
    }

    ExperimentPlan plan;
    plan.config.widths = widths;
    plan.eta = 1.0;
    plan.requests = {{ObservableKind::B, DeltaMode::Linearized, false, true,
                      EstimatorVariant::Gram}};
    for (int ell = 1; ell <= L; ++ell) plan.layers.push_back(ell);
    plan.replicates = R;
    plan.master_seed = mix64(seed ^ 0x417cf2d96b8e03a5ULL);
    plan.workers = workers;
    out.cells = run_replicated(plan);

    ExperimentPlan aux = plan;
    aux.requests = {{ObservableKind::Btilde}, {ObservableKind::C}, {ObservableKind::Ctilde}};
    aux.layers = {1};
    aux.master_seed = mix64(seed ^ 0x8d1e5fa60c49b327ULL);
    const std::map<CellKey, ObservableEstimate> aux_cells = run_replicated(aux);

    const LearningRateSchedule sched = LearningRateSchedule::global(L, plan.eta);
    const std::vector<ObservableEstimate> layer1{
        out.cells.at({ObservableKind::B, 1, 0}),
        aux_cells.at({ObservableKind::Btilde, 1, 0}),
        aux_cells.at({ObservableKind::C, 1, 0}),
        aux_cells.at({ObservableKind::Ctilde, 1, 0}),
    };
    out.calibrated = calibrate_constants(layer1, plan.config.widths, sched);
    const std::vector<RecursionState> traj =
        evolve_recursion(L, plan.config.widths, sched, out.calibrated);
    for (int ell = 1; ell <= L; ++ell) {
        const ObservableEstimate& est = out.cells.at({ObservableKind::B, ell, 0});
        RecursionCheckResult::LayerCompare lc;
        lc.layer = ell;
        lc.mc_mean = est.mean;
        lc.mc_se = est.std_error;
        lc.predicted = traj[static_cast<size_t>(ell) - 1].B;
        lc.ratio = est.mean / lc.predicted;
        if (!(lc.ratio >= 1.0 / ratio_band && lc.ratio <= ratio_band)) out.finite_pass = false;
        if (est.std_error > 0.25 * std::abs(est.mean)) out.inconclusive = true;
        out.layers.push_back(lc);
    }
    out.pass = out.analytic_pass && out.finite_pass;
    out.plan = plan;
    return out;
}

}  // namespace mup
