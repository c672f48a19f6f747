#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <vector>

#include "mup/montecarlo.hpp"

using namespace mup;

namespace {

ExperimentPlan base_plan(int n, int L, long long R) {
    ExperimentPlan p;
    p.config.widths.assign(static_cast<size_t>(L) + 1, n);
    p.config.widths.push_back(1);
    p.eta = 0.5;
    p.replicates = R;
    p.master_seed = 20240811;
    return p;
}

using Cells = std::map<CellKey, ObservableEstimate>;

bool identical(const Cells& a, const Cells& b) {
    if (a.size() != b.size()) return false;
    auto ia = a.begin();
    for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
        if (!(ia->first == ib->first)) return false;
        if (ia->second.mean != ib->second.mean) return false;
        if (ia->second.std_error != ib->second.std_error) return false;
        if (ia->second.replicates != ib->second.replicates) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("running moments match direct formulas") {
    const std::vector<double> xs{1.5, -0.25, 3.0, 0.0, 2.25, -1.0};
    RunningMoments m;
    for (double x : xs) m.add(x);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ssq = 0.0;
    for (double x : xs) ssq += (x - mean) * (x - mean);
    CHECK(m.count == 6);
    CHECK_THAT(m.mean, Catch::Matchers::WithinRel(mean, 1e-14));
    CHECK_THAT(m.variance(), Catch::Matchers::WithinRel(ssq / 5.0, 1e-14));
    CHECK_THAT(m.std_error(), Catch::Matchers::WithinRel(std::sqrt(ssq / 5.0 / 6.0), 1e-14));

    RunningMoments one;
    one.add(7.0);
    CHECK(one.variance() == 0.0);
    CHECK(one.std_error() == 0.0);
}

TEST_CASE("merging split accumulators agrees with a single pass") {
    Stream s(99, 31);
    std::vector<double> xs(257);
    for (double& x : xs) x = s.next_gaussian() + 0.3;

    RunningMoments whole;
    for (double x : xs) whole.add(x);

    RunningMoments a, b, c;
    for (size_t i = 0; i < 100; ++i) a.add(xs[i]);
    for (size_t i = 100; i < 140; ++i) b.add(xs[i]);
    for (size_t i = 140; i < xs.size(); ++i) c.add(xs[i]);

    RunningMoments left = a;
    left.merge(b);
    left.merge(c);
    RunningMoments right = b;
    right.merge(c);
    RunningMoments assoc = a;
    assoc.merge(right);

    for (const RunningMoments* m : {&left, &assoc}) {
        CHECK(m->count == whole.count);
        CHECK_THAT(m->mean, Catch::Matchers::WithinRel(whole.mean, 1e-12));
        CHECK_THAT(m->m2, Catch::Matchers::WithinRel(whole.m2, 1e-12));
    }

    RunningMoments empty;
    RunningMoments d = a;
    d.merge(empty);
    CHECK(d.count == a.count);
    CHECK(d.mean == a.mean);
    empty.merge(a);
    CHECK(empty.count == a.count);
    CHECK(empty.mean == a.mean);
}

TEST_CASE("constant stub observable reduces to mean 1 stderr 0") {
    ExperimentPlan plan = base_plan(4, 2, 2);
    auto stub = [](const NetworkState&, const Batch&, const PlanPoint&, const ExperimentPlan&) {
        return std::vector<std::pair<CellKey, double>>{
            {{ObservableKind::SecondMoment, 1, 0}, 1.0}};
    };
    Cells got = run_replicated(plan, stub);
    REQUIRE(got.size() == 1);
    const ObservableEstimate& e = got.begin()->second;
    CHECK(e.mean == 1.0);
    CHECK(e.std_error == 0.0);
    CHECK(e.replicates == 2);
}

TEST_CASE("plan validation rejects malformed plans") {
    ExperimentPlan p = base_plan(8, 3, 2);
    p.replicates = 1;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.workers = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.axis_values = {4.0};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);  // values without axis

    p = base_plan(8, 3, 2);
    p.axis = SweepAxis::Depth;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);  // axis without values

    p = base_plan(8, 3, 2);
    p.axis = SweepAxis::Rate;
    p.axis_values = {0.1};
    p.schedule = LearningRateSchedule::global(3, 0.1);
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);  // schedule under rate sweep

    p = base_plan(8, 3, 2);
    p.schedule = LearningRateSchedule::global(2, 0.1);
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);  // schedule length mismatch

    p = base_plan(8, 3, 2);
    p.layers = {2, 2};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.requests = {{ObservableKind::B}, {ObservableKind::B}};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.requests = {{ObservableKind::CondProjResidual}};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.cond_probes = {{2, 1, 1}};  // m1 > ell
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    p = base_plan(8, 3, 2);
    p.axis = SweepAxis::Depth;
    p.axis_values = {2.0};
    CHECK_THROWS_AS(run_replicated(p), std::invalid_argument);
    p.axis = SweepAxis::None;
    p.axis_values.clear();
    CHECK_THROWS_AS(run_sweep(p), std::invalid_argument);
}

TEST_CASE("depth-to-width warning fires only past the bound") {
    ExperimentPlan narrow = base_plan(16, 8, 2);  // L/n = 0.5
    CHECK_FALSE(plan_warnings(narrow).empty());

    ExperimentPlan wide = base_plan(64, 8, 2);  // L/n = 0.125
    CHECK(plan_warnings(wide).empty());

    ExperimentPlan swept = base_plan(32, 4, 2);
    swept.axis = SweepAxis::Depth;
    swept.axis_values = {4.0, 16.0};  // second point: 16/32 > 1/4
    std::vector<std::string> w = plan_warnings(swept);
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("point 1") != std::string::npos);
}

TEST_CASE("worker count never changes the reduced estimates") {
    ExperimentPlan plan = base_plan(12, 3, 37);
    plan.requests = {{ObservableKind::B}, {ObservableKind::C},
                     {ObservableKind::DeltaZSq, DeltaMode::Linearized, false, true}};
    plan.layers = {1, 3};
    plan.cond_probes = {{1, 2, 2}, {2, 2, 2}};

    Cells ref = run_replicated(plan);
    for (int w : {2, 5, 64}) {
        ExperimentPlan p = plan;
        p.workers = w;
        INFO("workers = " << w);
        CHECK(identical(ref, run_replicated(p)));
    }
    CHECK(identical(ref, run_replicated(plan)));  // repeat run, same bytes

    ExperimentPlan reseeded = plan;
    reseeded.master_seed += 1;
    CHECK_FALSE(identical(ref, run_replicated(reseeded)));
}

TEST_CASE("built-in evaluator fills every requested cell") {
    ExperimentPlan plan = base_plan(10, 4, 8);
    plan.requests = {{ObservableKind::SecondMoment}, {ObservableKind::FourthMoment},
                     {ObservableKind::A},            {ObservableKind::B},
                     {ObservableKind::C},            {ObservableKind::Btilde},
                     {ObservableKind::Ctilde},
                     {ObservableKind::DeltaZSq, DeltaMode::Linearized, true, true}};
    plan.layers = {1, 2, 4};
    plan.cond_probes = {{1, 1, 2}, {1, 2, 2}, {2, 2, 2}};
    Cells got = run_replicated(plan);
    CHECK(got.size() == 8 * 3 + 3);
    for (const auto& [key, est] : got) {
        CHECK(est.replicates == 8);
        CHECK(std::isfinite(est.mean));
        if (key.which != ObservableKind::CondProjResidual) CHECK(est.mean >= 0.0);
    }
    // probes targeting the same layer occupy distinct cells
    CHECK(got.count({ObservableKind::CondProjResidual, 2, 0}) == 1);
    CHECK(got.count({ObservableKind::CondProjResidual, 2, 1}) == 1);
    CHECK(got.count({ObservableKind::CondProjResidual, 2, 2}) == 1);
}

TEST_CASE("norm profile means stay on the input scale at every layer") {
    ExperimentPlan plan = base_plan(64, 4, 400);
    plan.requests = {{ObservableKind::SecondMoment}};
    plan.layers = {1, 2, 3, 4};
    Cells got = run_replicated(plan);
    for (const auto& [key, est] : got) {
        INFO("layer " << key.layer);
        // E||z||^2 = E||x||^2 = n_0 under the variance-preserving init
        CHECK(std::abs(est.mean - 64.0) <= 3.0 * est.std_error);
    }
}

TEST_CASE("zero-rate actual descent leaves the network unchanged") {
    ExperimentPlan plan = base_plan(8, 3, 5);
    plan.eta = 0.0;
    plan.requests = {{ObservableKind::DeltaZSq, DeltaMode::Actual, true, false}};
    plan.layers = {1, 3};
    for (const auto& [key, est] : run_replicated(plan)) {
        CHECK(est.mean == 0.0);
        CHECK(est.std_error == 0.0);
    }
}

TEST_CASE("depth sweep materializes per-point nets and seeds independently") {
    ExperimentPlan plan = base_plan(10, 4, 6);
    plan.axis = SweepAxis::Depth;
    plan.axis_values = {2.0, 4.0};
    plan.requests = {{ObservableKind::B}};
    // layers left empty: probe the last hidden layer of each point
    std::vector<SweepPoint> pts = run_sweep(plan);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].axis_value == 2.0);
    CHECK(pts[1].axis_value == 4.0);
    REQUIRE(pts[0].estimates.size() == 1);
    REQUIRE(pts[1].estimates.size() == 1);
    CHECK(pts[0].estimates.begin()->first.layer == 2);
    CHECK(pts[1].estimates.begin()->first.layer == 4);
    CHECK(pts[0].estimates.begin()->second.mean != pts[1].estimates.begin()->second.mean);

    PlanPoint p0 = materialize(plan, 0);
    CHECK(p0.config.widths == std::vector<int>{10, 10, 10, 1});
    CHECK(p0.schedule.per_layer.size() == 3);

    ExperimentPlan wplan = base_plan(10, 3, 6);
    wplan.axis = SweepAxis::Width;
    wplan.axis_values = {6.0, 12.0};
    PlanPoint w1 = materialize(wplan, 1);
    CHECK(w1.config.widths == std::vector<int>{12, 12, 12, 12, 1});
}

TEST_CASE("rate sweep scales linearized update power exactly") {
    ExperimentPlan plan = base_plan(12, 3, 24);
    plan.axis = SweepAxis::Rate;
    plan.axis_values = {1.0, 0.5, 0.25};
    plan.eta = 0.0;
    plan.requests = {{ObservableKind::DeltaZSq, DeltaMode::Linearized, false, true}};
    plan.layers = {2};
    std::vector<SweepPoint> pts = run_sweep(plan);
    REQUIRE(pts.size() == 3);
    const double m1 = pts[0].estimates.begin()->second.mean;
    const double mh = pts[1].estimates.begin()->second.mean;
    const double mq = pts[2].estimates.begin()->second.mean;
    CHECK(m1 > 0.0);
    CHECK(mh == 0.25 * m1);
    CHECK(mq == 0.0625 * m1);
}

TEST_CASE("standard error shrinks like the square root of the replicate count") {
    auto se_at = [](long long R) {
        ExperimentPlan plan = base_plan(16, 2, R);
        plan.requests = {{ObservableKind::SecondMoment}};
        plan.layers = {2};
        return run_replicated(plan).begin()->second.std_error;
    };
    const double ratio = se_at(1200) / se_at(300);
    INFO("se ratio " << ratio);
    CHECK(ratio >= 0.375);
    CHECK(ratio <= 0.625);
}

TEST_CASE("replicate failures surface the smallest failing index") {
    ExperimentPlan plan = base_plan(6, 2, 12);
    plan.workers = 4;
    auto flaky = [](const NetworkState&, const Batch&, const PlanPoint&,
                    const ExperimentPlan&) -> std::vector<std::pair<CellKey, double>> {
        static std::atomic<int> calls{0};
        (void)calls;
        return {{{ObservableKind::SecondMoment, 1, 0}, 1.0}};
    };
    (void)flaky;
    int boom_count = 0;
    auto boom = [&](const NetworkState&, const Batch& b, const PlanPoint&,
                    const ExperimentPlan&) -> std::vector<std::pair<CellKey, double>> {
        (void)b;
        ++boom_count;
        throw std::runtime_error("bad sample");
    };
    // the evaluator cannot see the replicate index, so fail every replicate:
    // the reported index must be the smallest one regardless of worker count
    CHECK_THROWS_WITH(run_replicated(plan, boom), Catch::Matchers::StartsWith("replicate 0:"));
    plan.workers = 1;
    CHECK_THROWS_WITH(run_replicated(plan, boom), Catch::Matchers::StartsWith("replicate 0:"));
}

TEST_CASE("weight and batch streams never coincide") {
    for (std::uint64_t r : {0ull, 1ull, 17ull}) {
        Stream ws = derive_stream(42, Purpose::Weights, r, 0);
        Stream bs = derive_stream(42, Purpose::Batch, r, 0);
        bool any_diff = false;
        for (int i = 0; i < 8; ++i) any_diff |= ws.next_u64() != bs.next_u64();
        CHECK(any_diff);
    }
}
