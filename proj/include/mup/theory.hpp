#pragma once
// Analytic side: coupled depth recursions for the update-size components with
// calibratable source constants, power-law fitting, the leading-order c2
// prediction, and the learning-rate solver.
//
// Width conventions: `widths` is the full list n_0..n_{L+1} of a network, so
// the last hidden width is widths[widths.size()-2]. The recursions never touch
// the output width.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mup/network.hpp"
#include "mup/observables.hpp"

namespace mup {

struct RecursionConstants {
    double kappa_B = 1.0;
    double kappa_Btilde = 1.0;
    double kappa_C = 1.0;
    double kappa_Ctilde = 1.0;
    double x_norm4 = 1.0;  // E||x||^4 / n_0^2 of the input distribution
};

struct RecursionState {
    int ell = 0;
    double B = 0.0;
    double Btilde = 0.0;
    double C = 0.0;
    double Ctilde = 0.0;
};

struct PowerLawFit {
    double exponent = 0.0;
    double log_prefactor = 0.0;
    double r_squared = 0.0;
    int points_used = 0;
};

// One coupled update ell-1 -> ell. Source terms are kappa * X * x_norm4 where X
// carries the width and rate factors; the coupling terms are exact. All four
// components are homogeneous in the schedule: rates -> lambda * rates scales
// C, Ctilde by lambda and B, Btilde by lambda^2.
inline RecursionState recursion_step(const RecursionState& prev, const std::vector<int>& widths,
                                     const LearningRateSchedule& schedule,
                                     const RecursionConstants& k) {
    const int ell = prev.ell + 1;
    if (widths.size() < static_cast<size_t>(ell) + 2)
        throw std::invalid_argument("recursion_step: widths do not cover layer ell+1");
    const double n_prev = static_cast<double>(widths[static_cast<size_t>(ell) - 1]);
    const double n_ell = static_cast<double>(widths[static_cast<size_t>(ell)]);
    const double n_L = static_cast<double>(widths[widths.size() - 2]);
    const double eta = schedule.rate(ell);

    const double src_sq = eta * eta * n_prev * n_prev / (n_L * n_ell) * k.x_norm4;
    const double src_B = k.kappa_B * src_sq;
    const double src_Bt = k.kappa_Btilde * src_sq;
    const double src_C = k.kappa_C * eta * n_prev / n_L * k.x_norm4;
    const double src_Ct = k.kappa_Ctilde * eta * n_prev / (n_ell * n_L) * k.x_norm4;

    RecursionState s;
    s.ell = ell;
    s.B = src_B + eta * n_prev / n_ell * prev.C + prev.Btilde / n_ell +
          (1.0 + 1.0 / n_ell) * prev.B;
    s.Btilde = n_ell * (src_Bt + eta * n_prev / n_ell * prev.C) + prev.Btilde +
               2.0 / n_ell * prev.B;
    s.C = src_C + prev.C + prev.Ctilde / n_ell;
    s.Ctilde = src_Ct + prev.C / n_ell + (1.0 + 1.0 / n_ell) * prev.Ctilde;
    return s;
}

// Iterates from the zero state; returns the states at ell = 1..L.
inline std::vector<RecursionState> evolve_recursion(int L, const std::vector<int>& widths,
                                                    const LearningRateSchedule& schedule,
                                                    const RecursionConstants& k) {
    if (L < 1) throw std::invalid_argument("evolve_recursion: L < 1");
    std::vector<RecursionState> out;
    out.reserve(static_cast<size_t>(L));
    RecursionState s;
    for (int ell = 1; ell <= L; ++ell) {
        s = recursion_step(s, widths, schedule, k);
        out.push_back(s);
    }
    return out;
}

// Inverts the four layer-1 source equations (no coupling contributes at ell = 1)
// so the recursion reproduces the measured layer-1 means exactly. x_norm4 <= 0
// selects the standard-Gaussian input moment 1 + 2/n_0.
inline RecursionConstants calibrate_constants(const std::vector<ObservableEstimate>& estimates,
                                              const std::vector<int>& widths,
                                              const LearningRateSchedule& schedule,
                                              double x_norm4 = 0.0) {
    if (widths.size() < 3) throw std::invalid_argument("calibrate_constants: widths");
    const double n0 = static_cast<double>(widths[0]);
    const double n1 = static_cast<double>(widths[1]);
    const double nL = static_cast<double>(widths[widths.size() - 2]);
    if (x_norm4 <= 0.0) x_norm4 = 1.0 + 2.0 / n0;

    auto layer1_mean = [&](ObservableKind kind) {
        for (const ObservableEstimate& e : estimates)
            if (e.which == kind && e.layer == 1) {
                if (!std::isfinite(e.mean) || e.mean <= 0.0)
                    throw std::invalid_argument("calibrate_constants: non-positive estimate");
                return e.mean;
            }
        throw std::invalid_argument("calibrate_constants: missing layer-1 estimate");
    };
    const double eta1 = schedule.rate(1);
    if (eta1 <= 0.0) throw std::invalid_argument("calibrate_constants: zero first-layer rate");

    RecursionConstants k;
    k.x_norm4 = x_norm4;
    k.kappa_B = layer1_mean(ObservableKind::B) * nL * n1 / (eta1 * eta1 * n0 * n0 * x_norm4);
    k.kappa_Btilde = layer1_mean(ObservableKind::Btilde) * nL / (eta1 * eta1 * n0 * n0 * x_norm4);
    k.kappa_C = layer1_mean(ObservableKind::C) * nL / (eta1 * n0 * x_norm4);
    k.kappa_Ctilde = layer1_mean(ObservableKind::Ctilde) * n1 * nL / (eta1 * n0 * x_norm4);
    return k;
}

// Least-squares line through (ln scale, ln value); exponent = slope.
inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) throw std::invalid_argument("fit_power_law: need >= 3 points");
    const double n = static_cast<double>(points.size());
    double sx = 0.0, sy = 0.0;
    std::vector<double> xs, ys;
    xs.reserve(points.size());
    ys.reserve(points.size());
    for (const auto& [scale, value] : points) {
        if (!(scale > 0.0) || !(value > 0.0))
            throw std::invalid_argument("fit_power_law: non-positive point");
        xs.push_back(std::log(scale));
        ys.push_back(std::log(value));
        sx += xs.back();
        sy += ys.back();
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_power_law: degenerate scales");
    PowerLawFit f;
    f.exponent = sxy / sxx;
    f.log_prefactor = my - f.exponent * mx;
    f.points_used = static_cast<int>(points.size());
    if (syy == 0.0) {
        f.r_squared = 1.0;
    } else {
        double ss_res = 0.0;
        for (size_t i = 0; i < xs.size(); ++i) {
            const double r = ys[i] - (f.log_prefactor + f.exponent * xs[i]);
            ss_res += r * r;
        }
        f.r_squared = std::min(1.0, std::max(0.0, 1.0 - ss_res / syy));
    }
    return f;
}

// Leading-order prediction for the squared pre-activation change.
inline double predict_delta_sq(int ell, double eta, double c2) {
    const double l = static_cast<double>(ell);
    return c2 * eta * eta * l * l * l;
}

// The rate for which the linearized squared change at unit rate reaches 1:
// exact root of eta^2 * mean = 1.
inline double solve_eta_star(const ObservableEstimate& estimate_at_unit_rate) {
    const double m = estimate_at_unit_rate.mean;
    if (!std::isfinite(m) || m <= 0.0)
        throw std::invalid_argument("solve_eta_star: non-positive mean");
    return 1.0 / std::sqrt(m);
}

// Optional refinement against the actual-GD mode: bisects mean_at(eta) = 1 on
// [eta0/4, 4 eta0] where eta0 is the linearized solution. The endpoint means
// must straddle 1 and be increasing (empirical monotonicity check).
template <typename F>
double refine_eta_star(F&& mean_at, double eta0, int iters = 24) {
    double lo = 0.25 * eta0, hi = 4.0 * eta0;
    const double f_lo = mean_at(lo), f_hi = mean_at(hi);
    if (!(f_lo < f_hi)) throw std::runtime_error("refine_eta_star: means not increasing");
    if (!(f_lo <= 1.0 && 1.0 <= f_hi)) throw std::runtime_error("refine_eta_star: bracket misses 1");
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mean_at(mid) < 1.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace mup
