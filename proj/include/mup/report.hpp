#pragma once
// Table emission. One schema everywhere: CSV rows
//   axis_name,axis_value,observable,layer,mean,stderr,replicates
// with '#' comment lines for fits and check verdicts, or the same content as
// JSON {rows, fits, checks}. Doubles print as %.17g so equal results are
// byte-equal files.

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mup/montecarlo.hpp"
#include "mup/theory.hpp"

namespace mup {

struct ReportRow {
    std::string axis_name = "none";
    double axis_value = 0.0;
    std::string observable;
    int layer = 0;
    double mean = 0.0;
    double std_error = 0.0;
    long replicates = 0;
};

struct FitReport {
    std::string observable;
    PowerLawFit fit;
};

struct CheckReport {
    std::string name;
    std::string status;  // "pass" | "fail" | "inconclusive"
    std::string detail;
};

struct Report {
    std::string schema;  // e.g. "sweep-depth.v1"; emitted before the header
    std::vector<ReportRow> rows;
    std::vector<FitReport> fits;
    std::vector<CheckReport> checks;

    bool all_passed() const {
        for (const CheckReport& c : checks)
            if (c.status != "pass") return false;
        return true;
    }
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Cell label; conditional probes carry their (m1, m2) pair in the name since
// the layer column already holds ell.
inline std::string cell_label(const CellKey& key, const ExperimentPlan& plan) {
    if (key.which == ObservableKind::CondProjResidual &&
        key.aux < static_cast<int>(plan.cond_probes.size())) {
        const CondProbe& p = plan.cond_probes[static_cast<size_t>(key.aux)];
        return std::string(observable_name(key.which)) + "_" + std::to_string(p.m1) + "_" +
               std::to_string(p.m2);
    }
    return observable_name(key.which);
}

inline void append_rows(Report& rep, const std::map<CellKey, ObservableEstimate>& cells,
                        const ExperimentPlan& plan, const std::string& axis_name = "none",
                        double axis_value = 0.0, const std::string& label_suffix = "") {
    for (const auto& [key, est] : cells)
        rep.rows.push_back({axis_name, axis_value, cell_label(key, plan) + label_suffix,
                            est.layer, est.mean, est.std_error, est.replicates});
}

inline void append_sweep_rows(Report& rep, const std::vector<SweepPoint>& points,
                              const ExperimentPlan& plan) {
    for (const SweepPoint& pt : points)
        append_rows(rep, pt.estimates, plan, sweep_axis_name(plan.axis), pt.axis_value);
}

inline void write_csv(std::ostream& os, const Report& rep) {
    if (!rep.schema.empty()) os << "# schema " << rep.schema << '\n';
    os << "axis_name,axis_value,observable,layer,mean,stderr,replicates\n";
    for (const ReportRow& r : rep.rows)
        os << r.axis_name << ',' << format_double(r.axis_value) << ',' << r.observable << ','
           << r.layer << ',' << format_double(r.mean) << ',' << format_double(r.std_error)
           << ',' << r.replicates << '\n';
    for (const FitReport& f : rep.fits) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "# fit observable=%s exponent=%.4f log_prefactor=%.4f r_squared=%.4f\n",
                      f.observable.c_str(), f.fit.exponent, f.fit.log_prefactor,
                      f.fit.r_squared);
        os << buf;
    }
    for (const CheckReport& c : rep.checks)
        os << "# check " << c.name << " status=" << c.status
           << (c.detail.empty() ? "" : " " + c.detail) << '\n';
}

inline nlohmann::json to_json(const Report& rep) {
    nlohmann::json j;
    j["schema"] = rep.schema;
    j["rows"] = nlohmann::json::array();
    for (const ReportRow& r : rep.rows)
        j["rows"].push_back({{"axis_name", r.axis_name},
                             {"axis_value", r.axis_value},
                             {"observable", r.observable},
                             {"layer", r.layer},
                             {"mean", r.mean},
                             {"stderr", r.std_error},
                             {"replicates", r.replicates}});
    j["fits"] = nlohmann::json::array();
    for (const FitReport& f : rep.fits)
        j["fits"].push_back({{"observable", f.observable},
                             {"exponent", f.fit.exponent},
                             {"log_prefactor", f.fit.log_prefactor},
                             {"r_squared", f.fit.r_squared}});
    j["checks"] = nlohmann::json::array();
    for (const CheckReport& c : rep.checks)
        j["checks"].push_back({{"name", c.name}, {"status", c.status}, {"detail", c.detail}});
    return j;
}

inline void write_json(std::ostream& os, const Report& rep) {
    os << to_json(rep).dump(2) << '\n';
}

inline void write_report(std::ostream& os, const Report& rep, const std::string& format) {
    if (format == "json")
        write_json(os, rep);
    else
        write_csv(os, rep);
}

}  // namespace mup
