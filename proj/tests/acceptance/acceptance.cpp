// Property acceptance for the one-step update library.  Each numbered check
// prints a single [PASS]/[FAIL] line; the process exits nonzero if any
// requested check fails.  Runtime limits are enforced in-process where a
// check carries one.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mup/experiments.hpp"
#include "mup/report.hpp"

using namespace mup;

namespace {

constexpr std::uint64_t kSeed = 2026;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::vector<int> uniform(int n, int L) { return detail::uniform_widths(n, L); }

double gap_sigmas(const PairedCheck& pc) {
    const double se = std::sqrt(pc.lhs_se * pc.lhs_se + pc.rhs_se * pc.rhs_se);
    const double gap = std::fabs(pc.lhs_mean - pc.rhs_mean);
    if (se == 0.0) return gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return gap / se;
}

Outcome check_gradients() {
    const SuiteResult r = gradient_check_suite(100, kSeed);
    return {r.pass, fmt("worst_rel=%.3e nets=%d tol=1e-06", r.worst_rel, r.nets)};
}

Outcome check_oracle() {
    const SuiteResult r = oracle_equivalence_suite(50, kSeed);
    return {r.pass, fmt("worst_rel=%.3e nets=%d tol=1e-10", r.worst_rel, r.nets)};
}

Outcome check_init_profile() {
    const HeProfileResult r = he_profile(uniform(512, 10), 2000, kSeed,
                                         InitVariant::MeanFieldExactHe, 1);
    double worst = 1.0;
    for (const LayerBand& b : r.bands) {
        const double ratio = b.mean / b.target;
        if (std::fabs(ratio - 1.0) > std::fabs(worst - 1.0)) worst = ratio;
    }
    return {r.pass, fmt("layers=%zu worst_ratio=%.4f band=3se+5%%", r.bands.size(), worst)};
}

Outcome check_decomposition() {
    const DecompositionResult r = decomposition_check(uniform(128, 8), 10000, kSeed, 1);
    double worst = 0.0;
    for (const PairedCheck& pc : r.layers) worst = std::max(worst, gap_sigmas(pc));
    return {r.pass && !r.inconclusive,
            fmt("layers=%zu max_gap_sigmas=%.2f%s", r.layers.size(), worst,
                r.inconclusive ? " inconclusive" : "")};
}

Outcome check_cond_projection() {
    const CondCheckResult r = cond_projection_check(uniform(128, 8), 10000, kSeed, 1);
    double worst = 0.0;
    for (const auto& p : r.probes)
        if (p.std_error > 0.0) worst = std::max(worst, std::fabs(p.mean) / p.std_error);
    return {r.pass && r.probes.size() >= 6,
            fmt("probes=%zu max_sigmas=%.2f", r.probes.size(), worst)};
}

Outcome check_width_scaling() {
    const WidthScalingResult r = width_scaling(8, {64, 128, 256}, 8000, kSeed, 1);
    std::string ratios;
    for (double s : r.ab_successive) ratios += fmt("%s%.3f", ratios.empty() ? "" : ",", s);
    return {r.ab_pass && !r.inconclusive,
            fmt("ab_successive=%s band=[0.35:0.7]%s", ratios.c_str(),
                r.inconclusive ? " inconclusive" : "")};
}

Outcome check_depth_cubic() {
    const DepthScalingResult r =
        depth_update_scaling(uniform(256, 32), {4, 8, 16, 32}, 1e-3, 2500, kSeed, 1);
    return {r.pass, fmt("exponent=%.4f target=3.0+-0.4 r_squared=%.4f", r.fit.exponent,
                        r.fit.r_squared)};
}

Outcome check_aux_exponents() {
    const AuxScalingResult r =
        aux_depth_scaling(uniform(256, 32), {4, 8, 16, 32}, 1e-3, 1024, kSeed, 1);
    return {r.pass, fmt("c_exponent=%.4f (1.0+-0.2) btilde_n_exponent=%.4f (2.0+-0.3)",
                        r.c_fit.exponent, r.btn_fit.exponent)};
}

Outcome check_rate_law() {
    const RateLawResult r = rate_law(256, {8, 16, 32, 64}, 800, kSeed, 1);
    return {r.pass && r.fitted, fmt("exponent=%.4f target=-1.5+-0.3 r_squared=%.4f",
                                    r.fit.exponent, r.fit.r_squared)};
}

Outcome check_recursion() {
    const RecursionCheckResult r = recursion_crosscheck(uniform(128, 8), 1200, kSeed, 1);
    double worst = 1.0;
    for (const auto& lc : r.layers)
        if (std::fabs(std::log(lc.ratio)) > std::fabs(std::log(worst))) worst = lc.ratio;
    return {r.pass && !r.inconclusive,
            fmt("analytic=%.3f/%.3f/%.3f worst_layer_ratio=%.3f band=[0.5:2.0]%s",
                r.c_fit.exponent, r.btn_fit.exponent, r.b_fit.exponent, worst,
                r.inconclusive ? " inconclusive" : "")};
}

std::string render(const std::map<CellKey, ObservableEstimate>& cells,
                   const ExperimentPlan& plan, const std::string& format) {
    Report rep;
    rep.schema = "determinism.v1";
    append_rows(rep, cells, plan);
    std::ostringstream os;
    write_report(os, rep, format);
    return os.str();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome check_determinism() {
    const CondCheckResult c1 = cond_projection_check(uniform(48, 6), 400, kSeed, 1);
    const CondCheckResult c4 = cond_projection_check(uniform(48, 6), 400, kSeed, 4);
    const bool cond_csv = render(c1.cells, c1.plan, "csv") == render(c4.cells, c4.plan, "csv");
    const bool cond_json = render(c1.cells, c1.plan, "json") == render(c4.cells, c4.plan, "json");

    const DepthScalingResult d1 =
        depth_update_scaling(uniform(32, 8), {2, 4, 8}, 1e-3, 300, kSeed, 1);
    const DepthScalingResult d5 =
        depth_update_scaling(uniform(32, 8), {2, 4, 8}, 1e-3, 300, kSeed, 5);
    const std::string a = render(d1.cells, d1.plan, "csv");
    const std::string b = render(d5.cells, d5.plan, "csv");
    std::ofstream("acceptance_det_w1.csv", std::ios::binary) << a;
    std::ofstream("acceptance_det_w5.csv", std::ios::binary) << b;
    const bool files_equal = slurp("acceptance_det_w1.csv") == slurp("acceptance_det_w5.csv") &&
                             !slurp("acceptance_det_w1.csv").empty();
    const bool sweep_equal = a == b && d1.fit.exponent == d5.fit.exponent;

    return {cond_csv && cond_json && sweep_equal && files_equal,
            fmt("cond_csv=%d cond_json=%d sweep_csv=%d files=%d", int(cond_csv), int(cond_json),
                int(sweep_equal), int(files_equal))};
}

struct Criterion {
    const char* name;
    Outcome (*run)();
    double limit_s;  // 0 means no in-process runtime limit
};

const Criterion kCriteria[] = {
    {"gradient_finite_difference", check_gradients, 60.0},
    {"gram_oracle_equivalence", check_oracle, 60.0},
    {"init_norm_profile", check_init_profile, 120.0},
    {"update_decomposition", check_decomposition, 300.0},
    {"conditional_projection", check_cond_projection, 0.0},
    {"width_scaling_a_over_b", check_width_scaling, 0.0},
    {"depth_cubic_law", check_depth_cubic, 600.0},
    {"aux_depth_exponents", check_aux_exponents, 0.0},
    {"critical_rate_law", check_rate_law, 600.0},
    {"recursion_crosscheck", check_recursion, 0.0},
    {"worker_determinism", check_determinism, 0.0},
};

bool run_one(int idx) {
    const Criterion& c = kCriteria[idx - 1];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = c.run();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1fs", secs);
    if (c.limit_s > 0.0) {
        timing += fmt(" limit=%.0fs", c.limit_s);
        if (secs > c.limit_s) {
            out.pass = false;
            out.detail += " over_time_limit";
        }
    }
    std::printf("[%s] %02d %s: %s (%s)\n", out.pass ? "PASS" : "FAIL", idx, c.name,
                out.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    return out.pass;
}

}  // namespace

int main(int argc, char** argv) {
    const int n = static_cast<int>(sizeof kCriteria / sizeof kCriteria[0]);
    if (argc > 1) {
        const int idx = std::atoi(argv[1]);
        if (idx < 1 || idx > n) {
            std::fprintf(stderr, "usage: %s [1..%d]\n", argv[0], n);
            return 2;
        }
        return run_one(idx) ? 0 : 1;
    }
    bool all = true;
    for (int i = 1; i <= n; ++i) all = run_one(i) && all;
    return all ? 0 : 1;
}
