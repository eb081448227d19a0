#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "selqa/evaluation.hpp"
#include "selqa/harness.hpp"

namespace selqa {

// File-name-safe form of a method name ("calibrator[top1]" -> "calibrator_top1_").
std::string file_stem(std::string_view name);

std::string report_json(const ExperimentReport& report);

// table1.csv: one row per method plus the best-possible row.
void write_table1_csv(const ExperimentReport& report, std::ostream& out);
// per_domain.csv: method, acc_level, domain, share, accuracy.
void write_per_domain_csv(const ExperimentReport& report, std::ostream& out);
void write_table4_csv(std::span<const AblationRow> rows, std::span<const double> acc_levels, std::ostream& out);
void write_fig2_csv(std::span<const LearningCurveRow> rows, std::ostream& out);
void write_fig4_csv(const MatrixResult& matrix, std::ostream& out);
void write_fig5_csv(std::span<const AlphaSweepRow> rows, std::ostream& out);

// report.json, table1.csv, per_domain.csv, and per-method curve_*.csv /
// reliability_*.csv from the first split's scores.
void write_experiment_outputs(const ExperimentReport& report, const std::filesystem::path& dir);

// Flat metrics document for a single scored set.
std::string metrics_json(const SelectiveMetrics& metrics, std::size_t n_records, const std::string& method);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace selqa
