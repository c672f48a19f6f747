// mup: one-step gradient-descent statistics on randomly initialized deep
// ReLU networks under mean-field scaling. Five subcommands cover gradient
// validation, initialization norms, depth/width scaling laws, the critical
// learning-rate law, and the second-order identity suite.

#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mup/cli_config.hpp"
#include "mup/experiments.hpp"
#include "mup/report.hpp"

namespace {

using namespace mup;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Vec read_x_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open input file: " + path);
    Vec x;
    double v;
    while (in >> v) x.push_back(v);
    if (!in.eof()) throw std::invalid_argument("input file holds a non-numeric token: " + path);
    if (x.empty()) throw std::invalid_argument("input file is empty: " + path);
    return x;
}

std::string band_status(bool pass, bool inconclusive) {
    return inconclusive ? "inconclusive" : (pass ? "pass" : "fail");
}

double sigmas(double mean, double se) {
    if (se > 0.0) return std::abs(mean) / se;
    return mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

Report run_check_gradients(const CliConfig& cfg) {
    const CorruptKind corrupt = parse_corrupt(cfg.corrupt);
    if (corrupt == CorruptKind::HiddenVariance || corrupt == CorruptKind::OutputVariance)
        throw std::invalid_argument("check-gradients accepts only the grad-sign-flip fixture");
    const int nets = cfg.nets > 0 ? cfg.nets : 100;
    const int oracle_nets = std::max(1, nets / 2);

    const SuiteResult fd = gradient_check_suite(nets, cfg.seed, corrupt);
    const SuiteResult orc = oracle_equivalence_suite(oracle_nets, cfg.seed);

    Report rep;
    rep.schema = "check-gradients.v1";
    rep.rows.push_back({"none", 0.0, "fd_worst_rel", 0, fd.worst_rel, 0.0,
                        static_cast<long>(fd.nets)});
    rep.rows.push_back({"none", 0.0, "oracle_worst_rel", 0, orc.worst_rel, 0.0,
                        static_cast<long>(orc.nets)});
    rep.checks.push_back({"finite_difference", fd.pass ? "pass" : "fail",
                          fmt("worst_rel=%.3e net_index=%llu nets=%d tol=%.0e", fd.worst_rel,
                              static_cast<unsigned long long>(fd.worst_seed), fd.nets,
                              fd.tolerance)});
    rep.checks.push_back({"oracle_equivalence", orc.pass ? "pass" : "fail",
                          fmt("worst_rel=%.3e net_index=%llu nets=%d tol=%.0e", orc.worst_rel,
                              static_cast<unsigned long long>(orc.worst_seed), orc.nets,
                              orc.tolerance)});
    return rep;
}

Report run_verify_init(const CliConfig& cfg) {
    const std::vector<int> widths = resolve_widths(cfg, 512, 10);
    const long long R = cfg.replicates > 0 ? cfg.replicates : 2000;
    Vec x;
    const Vec* xp = nullptr;
    if (!cfg.x_file.empty()) {
        x = read_x_file(cfg.x_file);
        xp = &x;
    }
    const HeProfileResult res = he_profile(widths, R, cfg.seed, parse_init_variant(cfg.init),
                                           cfg.workers, 0.05, xp);

    Report rep;
    rep.schema = "verify-init.v1";
    append_rows(rep, res.cells, res.plan);
    const LayerBand* worst = nullptr;
    for (const LayerBand& b : res.bands)
        if (!worst || std::abs(b.mean - b.target) / b.target >
                          std::abs(worst->mean - worst->target) / worst->target)
            worst = &b;
    rep.checks.push_back(
        {"init_profile", res.pass ? "pass" : "fail",
         worst ? fmt("input_sq=%.6g worst_layer=%d mean=%.6g target=%.6g ratio=%.4f",
                     res.input_sq, worst->layer, worst->mean, worst->target,
                     worst->mean / worst->target)
               : std::string("no layers probed")});
    return rep;
}

Report run_sweep_depth(const CliConfig& cfg) {
    if (cfg.eta == 0.0)
        throw std::invalid_argument("eta must be positive; zero produces all-zero values");
    const double eta = cfg.eta > 0.0 ? cfg.eta : 1e-3;
    const std::vector<int> widths = resolve_widths(cfg, 256, 32);
    const int L = static_cast<int>(widths.size()) - 2;
    const std::vector<int> layers = cfg.layers.empty() ? default_profile_layers(L) : cfg.layers;
    for (int ell : layers)
        if (ell > L) throw std::invalid_argument("probe layer exceeds depth");
    if (layers.size() < 3)
        throw std::invalid_argument("need at least 3 probe layers for the exponent fit");
    const long long R = cfg.replicates > 0 ? cfg.replicates : (cfg.stub_cubic ? 2 : 2500);

    const DepthScalingResult res =
        depth_update_scaling(widths, layers, eta, R, cfg.seed, cfg.workers, DeltaMode::Actual,
                             cfg.stub_cubic);

    Report rep;
    rep.schema = "sweep-depth.v1";
    append_rows(rep, res.cells, res.plan);
    rep.fits.push_back({"delta_z_sq", res.fit});
    rep.checks.push_back({"depth_cubic", res.pass ? "pass" : "fail",
                          fmt("exponent=%.4f target=3.0 tol=0.4 r_squared=%.4f", res.fit.exponent,
                              res.fit.r_squared)});
    return rep;
}

Report run_solve_lr(const CliConfig& cfg) {
    const int n = !cfg.widths.empty() ? cfg.widths[1] : (cfg.width > 0 ? cfg.width : 256);
    const std::vector<int> depths =
        !cfg.depths.empty() ? cfg.depths
                            : (cfg.depth > 0 ? std::vector<int>{cfg.depth}
                                             : std::vector<int>{8, 16, 32, 64});
    const long long R = cfg.replicates > 0 ? cfg.replicates : 800;

    const RateLawResult res = rate_law(n, depths, R, cfg.seed, cfg.workers, cfg.refine, 200, 20,
                                       0.3, cfg.stub_unit_mean);

    Report rep;
    rep.schema = "solve-lr.v1";
    for (const RateLawResult::Point& p : res.points) {
        rep.rows.push_back({"depth", static_cast<double>(p.depth), "delta_z_sq", p.depth,
                            p.mean, p.std_error, static_cast<long>(R)});
        rep.rows.push_back({"depth", static_cast<double>(p.depth), "eta_star", p.depth,
                            p.eta_star, p.eta_star_se, static_cast<long>(R)});
        if (cfg.refine)
            rep.rows.push_back({"depth", static_cast<double>(p.depth), "eta_star_refined",
                                p.depth, p.eta_star_refined, 0.0, 200});
    }
    if (res.fitted) {
        rep.fits.push_back({cfg.refine ? "eta_star_refined" : "eta_star", res.fit});
        rep.checks.push_back({"rate_exponent", res.pass ? "pass" : "fail",
                              fmt("exponent=%.4f target=-1.5 tol=0.3", res.fit.exponent)});
    }
    return rep;
}

Report run_verify_lemmas(const CliConfig& cfg) {
    const CorruptKind corrupt = parse_corrupt(cfg.corrupt);
    if (corrupt == CorruptKind::GradSignFlip)
        throw std::invalid_argument("verify-lemmas accepts only the variance fixtures");
    const InitPerturbation pert = perturbation_for(corrupt);
    const std::vector<int> widths = resolve_widths(cfg, 128, 8);
    const int L = static_cast<int>(widths.size()) - 2;
    const long long R = cfg.replicates > 0 ? cfg.replicates : 10000;
    const long long R_small = std::min(R, 2000LL);
    const long long R_rec = std::min(R, 1200LL);

    const DecompositionResult dec =
        decomposition_check(widths, R, cfg.seed, cfg.workers, cfg.layers, pert);
    const GramPairingResult gp =
        gram_pairing_check(detail::uniform_widths(32, 4), R_small, cfg.seed, cfg.workers, pert);
    const CondCheckResult cond = cond_projection_check(widths, R, cfg.seed, cfg.workers, {}, pert);
    const int base_n = widths[1];
    const WidthScalingResult ws =
        width_scaling(L, {std::max(8, base_n / 2), base_n, 2 * base_n}, R_small, cfg.seed,
                      cfg.workers);
    const RecursionCheckResult rec = recursion_crosscheck(widths, R_rec, cfg.seed, cfg.workers);

    Report rep;
    rep.schema = "verify-lemmas.v1";
    for (const auto& [key, est] : dec.cells_lhs)
        rep.rows.push_back({"none", 0.0, cell_label(key, dec.plan_lhs) + "_sampled", est.layer,
                            est.mean, est.std_error, est.replicates});
    for (const auto& [key, est] : dec.cells_rhs) {
        const std::string suffix = key.which == ObservableKind::DeltaZSq ? "_integrated" : "";
        rep.rows.push_back({"none", 0.0, cell_label(key, dec.plan_rhs) + suffix, est.layer,
                            est.mean, est.std_error, est.replicates});
    }
    for (const auto& [key, est] : gp.cells)
        rep.rows.push_back(
            {"none", 0.0, "b_pairing_gap", est.layer, est.mean, est.std_error, est.replicates});
    append_rows(rep, cond.cells, cond.plan);
    append_sweep_rows(rep, ws.sweep, ws.plan);
    append_rows(rep, rec.cells, rec.plan);
    for (const RecursionCheckResult::LayerCompare& lc : rec.layers)
        rep.rows.push_back({"none", 0.0, "B_predicted", lc.layer, lc.predicted, 0.0, 0});

    rep.fits.push_back({"C_analytic", rec.c_fit});
    rep.fits.push_back({"Btilde_n_analytic", rec.btn_fit});
    rep.fits.push_back({"B_analytic", rec.b_fit});

    double dec_sigmas = 0.0;
    for (const PairedCheck& pc : dec.layers) {
        const double joint = std::sqrt(pc.lhs_se * pc.lhs_se + pc.rhs_se * pc.rhs_se);
        dec_sigmas = std::max(dec_sigmas, sigmas(pc.lhs_mean - pc.rhs_mean, joint));
    }
    double pair_sigmas = 0.0;
    for (const PairedCheck& pc : gp.layers)
        pair_sigmas = std::max(pair_sigmas, sigmas(pc.lhs_mean, pc.lhs_se));
    rep.checks.push_back({"decomposition", band_status(dec.pass && gp.pass, dec.inconclusive),
                          fmt("max_gap_sigmas=%.2f max_pairing_sigmas=%.2f layers=%zu",
                              dec_sigmas, pair_sigmas, dec.layers.size())});

    double cond_sigmas = 0.0;
    for (const CondCheckResult::ProbeBand& b : cond.probes)
        cond_sigmas = std::max(cond_sigmas, sigmas(b.mean, b.std_error));
    rep.checks.push_back({"cond_projection", cond.pass ? "pass" : "fail",
                          fmt("probes=%zu max_sigmas=%.2f", cond.probes.size(), cond_sigmas)});

    auto ratio_detail = [](const std::vector<double>& r) {
        std::string s = "successive=";
        for (size_t i = 0; i < r.size(); ++i) s += fmt(i ? "/%.3f" : "%.3f", r[i]);
        return s + " band=[0.35:0.7]";
    };
    rep.checks.push_back({"a_width_decay", band_status(ws.ab_pass, ws.inconclusive),
                          ratio_detail(ws.ab_successive)});
    rep.checks.push_back({"ctilde_width_decay", band_status(ws.ctc_pass, ws.inconclusive),
                          ratio_detail(ws.ctc_successive)});

    double worst_ratio = 1.0;
    for (const RecursionCheckResult::LayerCompare& lc : rec.layers)
        if (std::abs(std::log(lc.ratio)) > std::abs(std::log(worst_ratio)))
            worst_ratio = lc.ratio;
    rep.checks.push_back(
        {"recursion_calibration", band_status(rec.pass, rec.inconclusive),
         fmt("analytic_exponents=%.3f/%.3f/%.3f worst_layer_ratio=%.3f band=[0.5:2.0]",
             rec.c_fit.exponent, rec.btn_fit.exponent, rec.b_fit.exponent, worst_ratio)});
    return rep;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "one-step gradient-descent statistics on random deep ReLU networks "
        "under mean-field scaling"};
    app.require_subcommand(1);

    CliConfig cfg;
    std::string config_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--width", cfg.width, "uniform hidden width n");
        sub->add_option("--widths", cfg.widths, "full width profile n0,n1,...,n_out")
            ->delimiter(',');
        sub->add_option("--depth", cfg.depth, "hidden depth L");
        sub->add_option("--eta", cfg.eta, "global learning rate");
        sub->add_option("--replicates", cfg.replicates, "independent nets to average over");
        sub->add_option("--seed", cfg.seed, "master seed (default 1)");
        sub->add_option("--workers", cfg.workers, "worker thread cap (default 1)");
        sub->add_option("--format", cfg.format, "output format: csv (default) or json");
        sub->add_option("--init", cfg.init,
                        "weight scaling: mean-field-exact-he (default) or mean-field-paper");
        sub->add_option("--layers", cfg.layers, "probe layers, e.g. 4,8,16,32")->delimiter(',');
        sub->add_option("--output", cfg.output, "write the report here instead of stdout");
        sub->add_option("--config", config_path,
                        "JSON file of flag values (bare flag names as keys); explicit flags win");
    };

    CLI::App* cg = app.add_subcommand(
        "check-gradients",
        "finite-difference and oracle-equivalence suites on tiny random nets "
        "(defaults: nets=100, oracle nets=nets/2)");
    add_common(cg);
    cg->add_option("--nets", cfg.nets, "random nets in the finite-difference suite (default 100)");
    cg->add_option("--corrupt", cfg.corrupt, "test fixture: grad-sign-flip")
        ->group("Testing fixtures");

    CLI::App* vi = app.add_subcommand(
        "verify-init",
        "per-layer squared-norm profile against its initialization target "
        "(defaults: width=512, depth=10, replicates=2000)");
    add_common(vi);
    vi->add_option("--x-file", cfg.x_file,
                   "read the probe input from this whitespace-separated file (length must be n0)");

    CLI::App* sd = app.add_subcommand(
        "sweep-depth",
        "squared one-step update vs layer inside one deep net, with cubic-law fit "
        "(defaults: width=256, depth=32, layers=4,8,16,32, eta=0.001, replicates=2500)");
    add_common(sd);
    sd->add_flag("--stub-cubic", cfg.stub_cubic,
                 "test fixture: replace the measurement with ell^3")
        ->group("Testing fixtures");

    CLI::App* sl = app.add_subcommand(
        "solve-lr",
        "critical learning rate vs depth from the unit-rate estimate, with power-law fit "
        "(defaults: width=256, depths=8,16,32,64, replicates=800; --eta is ignored)");
    add_common(sl);
    sl->add_option("--depths", cfg.depths, "depth sweep values (default 8,16,32,64)")
        ->delimiter(',');
    sl->add_flag("--refine", cfg.refine,
                 "bisect the actual one-step update to unit size per depth (slow)");
    sl->add_flag("--stub-unit-mean", cfg.stub_unit_mean,
                 "test fixture: replace the measurement with the constant 1")
        ->group("Testing fixtures");

    CLI::App* vl = app.add_subcommand(
        "verify-lemmas",
        "second-order identity suite: decomposition, conditional projection, width decay, "
        "recursion calibration (defaults: width=128, depth=8, replicates=10000; sub-checks "
        "cap their replicates at 2000/1200)");
    add_common(vl);
    vl->add_option("--corrupt", cfg.corrupt,
                   "test fixture: hidden-variance or output-variance (scale 1.5)")
        ->group("Testing fixtures");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();

        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw std::invalid_argument("cannot open config file: " + config_path);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& pe) {
                throw std::invalid_argument(std::string("config file is not valid JSON: ") +
                                            pe.what());
            }
            std::set<std::string> pinned;
            for (const CLI::Option* opt : sub->get_options())
                if (opt->count() > 0) pinned.insert(opt->get_single_name());
            apply_config_json(cfg, j, config_keys_for(name), pinned);
        }
        validate_common(cfg);

        Report rep;
        if (name == "check-gradients")
            rep = run_check_gradients(cfg);
        else if (name == "verify-init")
            rep = run_verify_init(cfg);
        else if (name == "sweep-depth")
            rep = run_sweep_depth(cfg);
        else if (name == "solve-lr")
            rep = run_solve_lr(cfg);
        else
            rep = run_verify_lemmas(cfg);

        std::ofstream fout;
        std::ostream* os = &std::cout;
        if (!cfg.output.empty()) {
            fout.open(cfg.output, std::ios::binary);
            if (!fout) throw std::invalid_argument("cannot open output file: " + cfg.output);
            os = &fout;
        }
        write_report(*os, rep, cfg.format);
        return rep.all_passed() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
