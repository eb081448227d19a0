#include "selqa/report_io.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "selqa/format.hpp"

namespace selqa {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json summary_json(const Summary& s) {
    return ordered_json{{"mean", s.mean}, {"sd", s.sd}, {"min", s.min}, {"max", s.max}};
}

ordered_json cov_json(const std::map<double, double>& cov) {
    ordered_json j = ordered_json::object();
    for (const auto& [level, v] : cov) j[format_double(level)] = v;
    return j;
}

ordered_json config_json(const ExperimentConfig& cfg) {
    ordered_json j = ordered_json::object();
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

std::string opt(const std::optional<double>& v) {
    return v ? format_double(*v) : "";
}

}  // namespace

std::string file_stem(std::string_view name) {
    std::string out;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_';
        out += ok ? c : '_';
    }
    return out;
}

std::string report_json(const ExperimentReport& report) {
    ordered_json j;
    j["config"] = config_json(report.config);
    ordered_json test;
    test["size"] = report.test_size;
    test["domains"] = ordered_json::object();
    for (const auto& [domain, count] : report.test_domain_counts) test["domains"][domain] = count;
    j["test"] = test;
    j["best_possible"] = {{"auc", report.best_possible.auc}, {"cov_at_acc", cov_json(report.best_possible.cov_at_acc)}};

    ordered_json methods = ordered_json::array();
    for (const auto& m : report.methods) {
        ordered_json mj;
        mj["name"] = m.spec.name();
        mj["kind"] = std::string(to_string(m.spec.kind));
        mj["training"] = std::string(to_string(m.spec.training));
        mj["variant"] = std::string(to_string(m.spec.variant));
        mj["mask"] = m.spec.mask.to_string();
        mj["skipped"] = m.skipped;
        if (m.skipped) {
            mj["skip_reason"] = m.skip_reason;
            methods.push_back(mj);
            continue;
        }
        mj["auc"] = summary_json(m.auc);
        ordered_json cov = ordered_json::object();
        for (const auto& [level, s] : m.cov_at_acc) cov[format_double(level)] = summary_json(s);
        mj["cov_at_acc"] = cov;
        ordered_json splits = ordered_json::array();
        for (const auto& s : m.splits) {
            ordered_json sj;
            sj["split"] = s.split;
            sj["auc"] = s.metrics.auc;
            sj["cov_at_acc"] = cov_json(s.metrics.cov_at_acc);
            if (!s.selected_config.empty()) sj["selected_config"] = s.selected_config;
            if (s.val_auc) sj["val_auc"] = *s.val_auc;
            splits.push_back(sj);
        }
        mj["splits"] = splits;
        ordered_json pd = ordered_json::object();
        for (const auto& [level, domains] : m.per_domain) {
            ordered_json rows = ordered_json::array();
            for (const auto& d : domains) {
                ordered_json dj{{"domain", d.domain}, {"share", d.share}};
                dj["accuracy"] = d.accuracy ? ordered_json(*d.accuracy) : ordered_json(nullptr);
                rows.push_back(dj);
            }
            pd[format_double(level)] = rows;
        }
        mj["per_domain"] = pd;
        methods.push_back(mj);
    }
    j["methods"] = methods;
    j["calibrator_training"] = {{"pools", report.calibrator_pools},
                                {"unknown_pool_used", report.unknown_pool_in_training}};
    return j.dump(2) + "\n";
}

void write_table1_csv(const ExperimentReport& report, std::ostream& out) {
    out << "method,training,auc_mean,auc_sd";
    for (double level : report.config.acc_levels) {
        out << ",cov@" << format_double(level) << "_mean,cov@" << format_double(level) << "_sd";
    }
    out << '\n';
    for (const auto& m : report.methods) {
        out << m.spec.name() << ',' << to_string(m.spec.training);
        if (m.skipped) {
            out << ",skipped,";
            for (std::size_t i = 0; i < report.config.acc_levels.size(); ++i) out << ",,";
            out << '\n';
            continue;
        }
        out << ',' << format_double(m.auc.mean) << ',' << format_double(m.auc.sd);
        for (double level : report.config.acc_levels) {
            const auto& s = m.cov_at_acc.at(level);
            out << ',' << format_double(s.mean) << ',' << format_double(s.sd);
        }
        out << '\n';
    }
    out << "best-possible,none," << format_double(report.best_possible.auc) << ",0";
    for (double level : report.config.acc_levels) {
        out << ',' << format_double(report.best_possible.cov_at_acc.at(level)) << ",0";
    }
    out << '\n';
}

void write_per_domain_csv(const ExperimentReport& report, std::ostream& out) {
    out << "method,acc_level,domain,share,accuracy\n";
    for (const auto& m : report.methods) {
        for (const auto& [level, domains] : m.per_domain) {
            for (const auto& d : domains) {
                out << m.spec.name() << ',' << format_double(level) << ',' << d.domain << ','
                    << format_double(d.share) << ',' << opt(d.accuracy) << '\n';
            }
        }
    }
}

void write_table4_csv(std::span<const AblationRow> rows, std::span<const double> acc_levels, std::ostream& out) {
    out << "removed,auc_mean,auc_sd";
    for (double level : acc_levels) out << ",cov@" << format_double(level) << "_mean";
    out << '\n';
    for (const auto& row : rows) {
        out << (row.mask.empty() ? std::string("none") : '"' + row.mask.to_string() + '"');
        if (row.result.skipped) {
            out << ",skipped,";
            for (std::size_t i = 0; i < acc_levels.size(); ++i) out << ',';
            out << '\n';
            continue;
        }
        out << ',' << format_double(row.result.auc.mean) << ',' << format_double(row.result.auc.sd);
        for (double level : acc_levels) out << ',' << format_double(row.result.cov_at_acc.at(level).mean);
        out << '\n';
    }
}

void write_fig2_csv(std::span<const LearningCurveRow> rows, std::ostream& out) {
    out << "budget,calibrator_auc_mean,calibrator_auc_sd,maxprob_auc,within_noise\n";
    for (const auto& r : rows) {
        out << r.budget << ',' << format_double(r.calibrator_auc.mean) << ',' << format_double(r.calibrator_auc.sd)
            << ',' << format_double(r.maxprob_auc) << ',' << (r.within_noise ? 1 : 0) << '\n';
    }
}

void write_fig4_csv(const MatrixResult& matrix, std::ostream& out) {
    out << "known,unknown,maxprob_auc,calibrator_auc,best_auc,improvement_pct,oracle_access\n";
    for (const auto& c : matrix.cells) {
        out << c.known << ',' << c.unknown << ',' << format_double(c.maxprob_auc) << ','
            << format_double(c.calibrator_auc) << ',' << format_double(c.best_auc) << ','
            << format_double(c.improvement) << ',' << (c.oracle_access ? 1 : 0) << '\n';
    }
}

void write_fig5_csv(std::span<const AlphaSweepRow> rows, std::ostream& out) {
    out << "alpha,calibrator_auc,maxprob_auc,difference\n";
    for (const auto& r : rows) {
        out << format_double(r.alpha) << ',' << format_double(r.calibrator_auc) << ','
            << format_double(r.maxprob_auc) << ',' << format_double(r.difference) << '\n';
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_experiment_outputs(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "report.json", report_json(report));
    std::ostringstream table1;
    write_table1_csv(report, table1);
    write_text_file(dir / "table1.csv", table1.str());
    std::ostringstream per_domain;
    write_per_domain_csv(report, per_domain);
    write_text_file(dir / "per_domain.csv", per_domain.str());

    for (const auto& m : report.methods) {
        if (m.skipped || m.first_split_scores.empty()) continue;
        const std::string stem = file_stem(m.spec.name());
        std::ostringstream curve;
        write_curve_csv(risk_coverage_curve(m.first_split_scores), curve);
        write_text_file(dir / ("curve_" + stem + ".csv"), curve.str());
        if (m.spec.kind == MethodKind::dropout_neg_var) continue;  // not a probability

        std::map<std::string, std::vector<ScoredRecord>> by_domain;
        for (const auto& s : m.first_split_scores) by_domain[s.domain].push_back(s);
        std::ostringstream all;
        write_reliability_csv(reliability_diagram(m.first_split_scores, report.config.reliability_bins), all);
        write_text_file(dir / ("reliability_" + stem + ".csv"), all.str());
        for (const auto& [domain, scored] : by_domain) {
            std::ostringstream os;
            write_reliability_csv(reliability_diagram(scored, report.config.reliability_bins), os);
            write_text_file(dir / ("reliability_" + stem + "_" + file_stem(domain) + ".csv"), os.str());
        }
    }
}

std::string metrics_json(const SelectiveMetrics& metrics, std::size_t n_records, const std::string& method) {
    ordered_json j;
    j["method"] = method;
    j["n"] = n_records;
    j["auc"] = metrics.auc;
    j["cov_at_acc"] = cov_json(metrics.cov_at_acc);
    return j.dump(2) + "\n";
}

}  // namespace selqa
