#pragma once

// CSV / JSON / SVG exports for traces, sensitivity tables, embeddings and
// evaluation reports.

#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"

#include "ewclab/evalanalysis.hpp"
#include "ewclab/fisher.hpp"
#include "ewclab/training.hpp"

namespace ewclab {

enum class Format { Csv, Json, Svg };

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Creates parent directories; failures raise Io naming the path.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

struct Embedding {
    TsneResult result;
    ParamPointSet points;
};

std::string trace_csv(const LossTrace& trace);
nlohmann::json trace_metadata(const LossTrace& trace);
std::string trace_svg(const LossTrace& trace, const std::string& title);
// All sweep traces on one chart; CE solid and EWC dashed, color-matched per lambda.
std::string sweep_svg(std::span<const SweepRun> runs, const std::string& title);

std::string sensitivity_csv(const SensitivityTable& table);
std::string sensitivity_svg(const SensitivityTable& table, const std::string& title);

std::string embedding_csv(const Embedding& e);
std::string embedding_svg(const Embedding& e, const std::string& title);

std::string samples_csv(std::span<const DecodedSample> samples);
nlohmann::json to_json(const AggregateMetric& m);
AggregateMetric aggregate_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

// CSV and SVG for traces write the data rows / plot; JSON writes metadata.
void export_report(const LossTrace& trace, const std::filesystem::path& path, Format format);
void export_report(const SensitivityTable& table, const std::filesystem::path& path, Format format);
void export_report(const Embedding& embedding, const std::filesystem::path& path, Format format);
// CSV writes the decoded-sample table; JSON the whole report.
void export_report(const EvalReport& report, const std::filesystem::path& path, Format format);

} // namespace ewclab
