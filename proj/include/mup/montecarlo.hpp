#pragma once
// Replicated, seeded Monte Carlo execution of observables with streaming
// moment accumulation. Results are bit-identical for a fixed plan regardless
// of worker count: replicate r draws its streams from (master_seed, r,
// axis_index) alone, and the reduction always consumes replicates in
// ascending index order.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mup/backprop.hpp"
#include "mup/network.hpp"
#include "mup/observables.hpp"
#include "mup/rng.hpp"

namespace mup {

// Welford accumulator; merge() is Chan's pairwise combination. Merging is
// associative only up to rounding, which is why the harness never merges:
// it adds per-replicate values in index order.
struct RunningMoments {
    long long count = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++count;
        const double d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean);
    }

    void merge(const RunningMoments& o) {
        if (o.count == 0) return;
        if (count == 0) {
            *this = o;
            return;
        }
        const double d = o.mean - mean;
        const long long n = count + o.count;
        mean += d * static_cast<double>(o.count) / static_cast<double>(n);
        m2 += o.m2 + d * d * (static_cast<double>(count) * static_cast<double>(o.count) /
                              static_cast<double>(n));
        count = n;
    }

    double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
    double std_error() const {
        return count > 0 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }
};

// Result cell address. aux disambiguates cells that share (which, layer):
// conditional-projection probes are (m1, m2, ell) triples, so several probes
// can target the same layer; aux holds the probe index there and is 0
// everywhere else.
struct CellKey {
    ObservableKind which;
    int layer;
    int aux = 0;

    bool operator<(const CellKey& o) const {
        if (which != o.which) return which < o.which;
        if (layer != o.layer) return layer < o.layer;
        return aux < o.aux;
    }
    bool operator==(const CellKey& o) const {
        return which == o.which && layer == o.layer && aux == o.aux;
    }
};

struct ObservableRequest {
    ObservableKind which;
    DeltaMode mode = DeltaMode::Linearized;  // DeltaZSq only
    bool coordinate_average = false;         // average over coordinates instead of coord 1
    bool integrate_target = true;            // linearized DeltaZSq: integrate y analytically
    EstimatorVariant variant = EstimatorVariant::PreIntegration;  // honored for B
};

struct CondProbe {
    int m1;
    int m2;
    int ell;
};

enum class SweepAxis { None, Depth, Width, Rate };

inline const char* sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::None: return "none";
        case SweepAxis::Depth: return "depth";
        case SweepAxis::Width: return "width";
        case SweepAxis::Rate: return "rate";
    }
    return "?";
}

struct ExperimentPlan {
    NetworkConfig config;
    LearningRateSchedule schedule;  // empty: use global(depth, eta)
    double eta = 0.0;
    std::vector<ObservableRequest> requests;
    std::vector<int> layers;  // empty: probe the last hidden layer
    std::vector<CondProbe> cond_probes;
    long long replicates = 2;
    std::uint64_t master_seed = 1;
    SweepAxis axis = SweepAxis::None;
    std::vector<double> axis_values;
    int workers = 1;
    InitPerturbation perturbation;
    double depth_width_bound = 0.25;  // warn when L/n exceeds this

    void validate() const {
        config.validate();
        if (replicates < 2) throw std::invalid_argument("plan: replicates must be >= 2");
        if (workers < 1) throw std::invalid_argument("plan: workers must be >= 1");
        if (axis == SweepAxis::None) {
            if (!axis_values.empty())
                throw std::invalid_argument("plan: axis values given without a sweep axis");
        } else if (axis_values.empty()) {
            throw std::invalid_argument("plan: sweep axis without axis values");
        }
        if (axis == SweepAxis::Depth || axis == SweepAxis::Rate) {
            if (!schedule.per_layer.empty())
                throw std::invalid_argument(
                    "plan: explicit schedule conflicts with a depth/rate sweep; set eta");
        }
        if (!schedule.per_layer.empty() &&
            schedule.per_layer.size() != static_cast<size_t>(config.depth()) + 1)
            throw std::invalid_argument("plan: schedule length != depth + 1");
        for (double v : axis_values) {
            if (axis == SweepAxis::Depth && std::llround(v) < 1)
                throw std::invalid_argument("plan: depth value < 1");
            if (axis == SweepAxis::Width && std::llround(v) < 1)
                throw std::invalid_argument("plan: width value < 1");
            if (axis == SweepAxis::Rate && !(v >= 0.0))
                throw std::invalid_argument("plan: negative rate value");
        }
        std::set<int> seen_layers;
        for (int l : layers) {
            if (l < 1) throw std::invalid_argument("plan: layer < 1");
            if (!seen_layers.insert(l).second)
                throw std::invalid_argument("plan: duplicate probe layer");
        }
        std::set<int> kinds;
        for (const ObservableRequest& r : requests) {
            if (r.which == ObservableKind::CondProjResidual)
                throw std::invalid_argument("plan: conditional probes go in cond_probes");
            if (!kinds.insert(static_cast<int>(r.which)).second)
                throw std::invalid_argument("plan: duplicate observable request");
        }
        for (const CondProbe& p : cond_probes)
            if (p.m1 < 1 || p.m2 < 1 || p.ell < 1 || p.m1 > p.ell || p.m2 > p.ell)
                throw std::invalid_argument("plan: conditional probe out of order");
    }
};

// One materialized point of a (possibly swept) plan.
struct PlanPoint {
    NetworkConfig config;
    LearningRateSchedule schedule;
    double axis_value = 0.0;
};

inline PlanPoint materialize(const ExperimentPlan& plan, size_t axis_index) {
    PlanPoint pt;
    pt.config = plan.config;
    switch (plan.axis) {
        case SweepAxis::None:
            pt.schedule = plan.schedule.per_layer.empty()
                              ? LearningRateSchedule::global(pt.config.depth(), plan.eta)
                              : plan.schedule;
            return pt;
        case SweepAxis::Depth: {
            pt.axis_value = plan.axis_values.at(axis_index);
            const int L = static_cast<int>(std::llround(pt.axis_value));
            std::vector<int> w(static_cast<size_t>(L) + 2, plan.config.widths.at(1));
            w.front() = plan.config.widths.front();
            w.back() = plan.config.widths.back();
            pt.config.widths = std::move(w);
            pt.schedule = LearningRateSchedule::global(L, plan.eta);
            return pt;
        }
        case SweepAxis::Width: {
            pt.axis_value = plan.axis_values.at(axis_index);
            const int n = static_cast<int>(std::llround(pt.axis_value));
            std::vector<int> w(plan.config.widths.size(), n);
            w.back() = plan.config.widths.back();
            pt.config.widths = std::move(w);
            pt.schedule = plan.schedule.per_layer.empty()
                              ? LearningRateSchedule::global(pt.config.depth(), plan.eta)
                              : plan.schedule;
            return pt;
        }
        case SweepAxis::Rate:
            pt.axis_value = plan.axis_values.at(axis_index);
            pt.schedule = LearningRateSchedule::global(pt.config.depth(), pt.axis_value);
            return pt;
    }
    throw std::logic_error("materialize: bad axis");
}

// Hypothesis-style sanity bound, not an error: the depth law is derived in
// the regime L/n small, so flag plans outside it.
inline std::vector<std::string> plan_warnings(const ExperimentPlan& plan) {
    std::vector<std::string> out;
    const size_t points = plan.axis == SweepAxis::None ? 1 : plan.axis_values.size();
    for (size_t i = 0; i < points; ++i) {
        const PlanPoint pt = materialize(plan, i);
        const int L = pt.config.depth();
        int n_min = pt.config.widths.at(1);
        for (int ell = 1; ell <= L; ++ell) n_min = std::min(n_min, pt.config.width(ell));
        if (static_cast<double>(L) / n_min > plan.depth_width_bound)
            out.push_back("depth/width ratio " + std::to_string(static_cast<double>(L) / n_min) +
                          " exceeds " + std::to_string(plan.depth_width_bound) + " at " +
                          sweep_axis_name(plan.axis) + " point " + std::to_string(i) +
                          "; depth-law asymptotics may not apply");
    }
    return out;
}

struct ReplicateResult {
    long long replicate_index = 0;
    std::map<CellKey, double> values;
};

namespace detail {

inline bool wants(const ExperimentPlan& plan, ObservableKind k, const ObservableRequest** req) {
    for (const ObservableRequest& r : plan.requests)
        if (r.which == k) {
            if (req) *req = &r;
            return true;
        }
    return false;
}

}  // namespace detail

// Default evaluator: computes every requested observable from one shared
// forward trace, pairing the estimators that share sweeps (A with B, C with
// Btilde) and running at most one descent step per replicate.
inline std::vector<std::pair<CellKey, double>> evaluate_requests(const NetworkState& state,
                                                                 const Batch& batch,
                                                                 const PlanPoint& point,
                                                                 const ExperimentPlan& plan) {
    std::vector<std::pair<CellKey, double>> out;
    const ForwardTrace trace = forward(state, batch.x);
    const int L = point.config.depth();
    const std::vector<int> layers = plan.layers.empty() ? std::vector<int>{L} : plan.layers;

    const ObservableRequest* req = nullptr;
    if (detail::wants(plan, ObservableKind::SecondMoment, nullptr)) {
        const std::vector<double> p = second_moment_profile(trace);
        for (int ell : layers)
            out.push_back({{ObservableKind::SecondMoment, ell, 0}, p.at(static_cast<size_t>(ell) - 1)});
    }
    if (detail::wants(plan, ObservableKind::FourthMoment, nullptr)) {
        const std::vector<double> p = fourth_moment_profile(trace);
        for (int ell : layers)
            out.push_back({{ObservableKind::FourthMoment, ell, 0}, p.at(static_cast<size_t>(ell) - 1)});
    }

    const bool want_A = detail::wants(plan, ObservableKind::A, nullptr);
    const ObservableRequest* req_B = nullptr;
    const bool want_B = detail::wants(plan, ObservableKind::B, &req_B);
    const bool b_gram = want_B && req_B->variant == EstimatorVariant::Gram;
    const bool want_C = detail::wants(plan, ObservableKind::C, nullptr);
    const bool want_Bt = detail::wants(plan, ObservableKind::Btilde, nullptr);
    const bool want_Ct = detail::wants(plan, ObservableKind::Ctilde, nullptr);
    for (int ell : layers) {
        if (want_A || (want_B && !b_gram)) {
            const auto [a, b] = sample_AB_preintegration(state, trace, point.schedule, ell);
            if (want_A) out.push_back({{ObservableKind::A, ell, 0}, a.value});
            if (want_B && !b_gram) out.push_back({{ObservableKind::B, ell, 0}, b.value});
        }
        if (b_gram)
            out.push_back(
                {{ObservableKind::B, ell, 0}, sample_B(state, trace, point.schedule, ell).value});
        if (want_C || want_Bt) {
            const auto [c, bt] = sample_C_and_Btilde(state, trace, point.schedule, ell);
            if (want_C) out.push_back({{ObservableKind::C, ell, 0}, c.value});
            if (want_Bt) out.push_back({{ObservableKind::Btilde, ell, 0}, bt.value});
        }
        if (want_Ct)
            out.push_back({{ObservableKind::Ctilde, ell, 0},
                           sample_Ctilde(state, trace, point.schedule, ell).value});
    }

    if (detail::wants(plan, ObservableKind::DeltaZSq, &req)) {
        if (req->mode == DeltaMode::Actual) {
            const ParameterGradients g = loss_gradient(state, trace, batch.y);
            const NetworkState stepped = gd_step(state, g, point.schedule);
            const ForwardTrace after = forward(stepped, batch.x);
            for (int ell : layers) {
                const Vec& a = after.z(ell);
                const Vec& b = trace.z(ell);
                double v;
                if (req->coordinate_average) {
                    double s = 0.0;
                    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
                    v = s / static_cast<double>(a.size());
                } else {
                    const double d = a[0] - b[0];
                    v = d * d;
                }
                out.push_back({{ObservableKind::DeltaZSq, ell, 0}, v});
            }
        } else {
            for (int ell : layers) {
                double v;
                if (req->integrate_target) {
                    v = req->coordinate_average
                            ? sample_delta_z_sq_integrated_avg(state, trace, point.schedule, ell)
                                  .value
                            : sample_delta_z_sq_integrated(state, trace, point.schedule, ell)
                                  .value;
                } else {
                    const Vec dz =
                        delta_z_linearized(state, trace, batch.y, point.schedule, ell).dz;
                    v = req->coordinate_average
                            ? norm2sq(dz) / static_cast<double>(dz.size())
                            : dz[0] * dz[0];
                }
                out.push_back({{ObservableKind::DeltaZSq, ell, 0}, v});
            }
        }
    }

    for (size_t i = 0; i < plan.cond_probes.size(); ++i) {
        const CondProbe& p = plan.cond_probes[i];
        out.push_back({{ObservableKind::CondProjResidual, p.ell, static_cast<int>(i)},
                       cond_projection_residual(state, trace, p.m1, p.m2, p.ell).value});
    }
    return out;
}

namespace detail {

// Runs all replicates of one materialized point. Worker w handles replicate
// indices w, w+W, ...; every replicate derives its streams independently, so
// the partition does not affect any value. Errors are reported for the
// smallest failing replicate index to keep failures deterministic too.
template <typename Evaluator>
std::map<CellKey, ObservableEstimate> run_point(const ExperimentPlan& plan, size_t axis_index,
                                                const PlanPoint& point, Evaluator&& eval) {
    const long long R = plan.replicates;
    std::vector<ReplicateResult> results(static_cast<size_t>(R));
    std::vector<std::string> errors(static_cast<size_t>(R));

    const int W = static_cast<int>(std::min<long long>(plan.workers, R));
    auto work = [&](int w) {
        for (long long r = w; r < R; r += W) {
            try {
                Stream ws = derive_stream(plan.master_seed, Purpose::Weights,
                                          static_cast<std::uint64_t>(r),
                                          static_cast<std::uint64_t>(axis_index));
                Stream bs = derive_stream(plan.master_seed, Purpose::Batch,
                                          static_cast<std::uint64_t>(r),
                                          static_cast<std::uint64_t>(axis_index));
                const NetworkState state = init_network(point.config, ws, plan.perturbation);
                const Batch batch =
                    sample_batch(point.config.widths.front(), point.config.widths.back(), bs);
                ReplicateResult rr;
                rr.replicate_index = r;
                for (auto& [key, value] : eval(state, batch, point, plan))
                    rr.values.emplace(key, value);
                results[static_cast<size_t>(r)] = std::move(rr);
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(r)] = e.what()[0] ? e.what() : "unknown error";
            }
        }
    };
    if (W <= 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<size_t>(W));
        for (int w = 0; w < W; ++w) threads.emplace_back(work, w);
        for (std::thread& t : threads) t.join();
    }
    for (long long r = 0; r < R; ++r)
        if (!errors[static_cast<size_t>(r)].empty())
            throw std::runtime_error("replicate " + std::to_string(r) + ": " +
                                     errors[static_cast<size_t>(r)]);

    std::map<CellKey, RunningMoments> acc;
    for (long long r = 0; r < R; ++r)
        for (const auto& [key, value] : results[static_cast<size_t>(r)].values)
            acc[key].add(value);

    std::map<CellKey, ObservableEstimate> out;
    for (const auto& [key, m] : acc)
        out.emplace(key, ObservableEstimate{key.which, key.layer, m.mean, m.std_error(),
                                            static_cast<long>(m.count)});
    return out;
}

inline void emit_warnings(const ExperimentPlan& plan) {
    for (const std::string& w : plan_warnings(plan)) std::cerr << "warning: " << w << "\n";
}

}  // namespace detail

template <typename Evaluator>
std::map<CellKey, ObservableEstimate> run_replicated(const ExperimentPlan& plan,
                                                     Evaluator&& eval) {
    plan.validate();
    if (plan.axis != SweepAxis::None)
        throw std::invalid_argument("run_replicated: plan has a sweep axis; use run_sweep");
    detail::emit_warnings(plan);
    return detail::run_point(plan, 0, materialize(plan, 0), eval);
}

inline std::map<CellKey, ObservableEstimate> run_replicated(const ExperimentPlan& plan) {
    return run_replicated(plan, evaluate_requests);
}

struct SweepPoint {
    double axis_value = 0.0;
    size_t axis_index = 0;
    std::map<CellKey, ObservableEstimate> estimates;
};

template <typename Evaluator>
std::vector<SweepPoint> run_sweep(const ExperimentPlan& plan, Evaluator&& eval) {
    plan.validate();
    if (plan.axis == SweepAxis::None)
        throw std::invalid_argument("run_sweep: plan has no sweep axis");
    detail::emit_warnings(plan);
    std::vector<SweepPoint> out;
    out.reserve(plan.axis_values.size());
    for (size_t i = 0; i < plan.axis_values.size(); ++i) {
        SweepPoint pt;
        pt.axis_index = i;
        const PlanPoint point = materialize(plan, i);
        pt.axis_value = plan.axis_values[i];
        // A rate value only reweights work done after sampling, so rate points
        // share replicate streams; the per-net rate scaling then stays exact.
        const size_t stream_index = plan.axis == SweepAxis::Rate ? 0 : i;
        pt.estimates = detail::run_point(plan, stream_index, point, eval);
        out.push_back(std::move(pt));
    }
    return out;
}

inline std::vector<SweepPoint> run_sweep(const ExperimentPlan& plan) {
    return run_sweep(plan, evaluate_requests);
}

}  // namespace mup
