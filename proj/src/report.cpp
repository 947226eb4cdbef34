#include "ewclab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ewclab/error.hpp"

namespace ewclab {
namespace {

constexpr double kWidth = 720, kHeight = 480, kMargin = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

// Maps data ranges onto the plot area.
struct Frame {
    double x0, x1, y0, y1;

    double px(double x) const { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); }
    double py(double y) const { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

Frame make_frame(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) x1 = x0 + 1.0;
    if (!(y1 > y0)) y1 = y0 + 1.0;
    const double pad = 0.05 * (y1 - y0);
    return {x0, x1, y0 - pad, y1 + pad};
}

std::string svg_open(const std::string& title, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
       << esc(title) << "</text>\n"
       << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
       << kHeight - kMargin << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(xlabel) << "</text>\n"
       << "<text x=\"16\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 16 " << kHeight / 2
       << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << esc(ylabel) << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double yv = f.y0 + (f.y1 - f.y0) * t / 4.0;
        const double xv = f.x0 + (f.x1 - f.x0) * t / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", yv);
        os << "<text x=\"" << kMargin - 4 << "\" y=\"" << f.py(yv) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.3g", xv);
        os << "<text x=\"" << f.px(xv) << "\" y=\"" << kHeight - kMargin + 14
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << buf << "</text>\n";
    }
    return os.str();
}

std::string legend_entry(std::size_t slot, const char* stroke, const std::string& label, bool dashed = false) {
    std::ostringstream os;
    const double y = kMargin + 14.0 * static_cast<double>(slot);
    os << "<line x1=\"" << kWidth - kMargin - 150 << "\" y1=\"" << y << "\" x2=\"" << kWidth - kMargin - 130 << "\" y2=\""
       << y << "\" stroke=\"" << stroke << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"4 3\"" : "")
       << "/>\n<text x=\"" << kWidth - kMargin - 125 << "\" y=\"" << y + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << esc(label) << "</text>\n";
    return os.str();
}

template <class Getter>
std::string polyline(const LossTrace& t, const Frame& f, const char* stroke, bool dashed, Getter get) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\""
       << (dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (const auto& r : t.records) os << f.px(static_cast<double>(r.iteration)) << ',' << f.py(get(r)) << ' ';
    os << "\"/>\n";
    return os.str();
}

std::vector<std::string> distinct_labels(std::span<const std::string> labels) {
    std::vector<std::string> out;
    for (const auto& l : labels)
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
}

std::string op_string(Op op) { return op == Op::Add ? "+" : "-"; }

} // namespace

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string trace_csv(const LossTrace& trace) {
    std::string out = "iteration,ce_loss,ewc_penalty,total_loss\n";
    for (const auto& r : trace.records)
        out += std::to_string(r.iteration) + ',' + format_double(r.ce_loss) + ',' + format_double(r.ewc_penalty) + ',' +
               format_double(r.total_loss) + '\n';
    return out;
}

nlohmann::json trace_metadata(const LossTrace& trace) {
    return {{"lambda", trace.lambda},
            {"seed", trace.seed},
            {"dataset_id", trace.dataset_id},
            {"iterations", trace.records.size()},
            {"wall_clock_seconds", trace.wall_clock_seconds}};
}

std::string trace_svg(const LossTrace& trace, const std::string& title) {
    double ymax = 0.0;
    for (const auto& r : trace.records) ymax = std::max({ymax, r.ce_loss, r.ewc_penalty});
    const Frame f = make_frame(1.0, static_cast<double>(std::max<std::size_t>(trace.records.size(), 2)), 0.0, ymax);
    std::string out = svg_open(title, f, "iteration", "loss");
    out += polyline(trace, f, color(0), false, [](const LossRecord& r) { return r.ce_loss; });
    out += polyline(trace, f, color(1), false, [](const LossRecord& r) { return r.ewc_penalty; });
    out += legend_entry(0, color(0), "CE");
    out += legend_entry(1, color(1), "EWC");
    return out + "</svg>\n";
}

std::string sweep_svg(std::span<const SweepRun> runs, const std::string& title) {
    double ymax = 0.0;
    std::size_t xmax = 2;
    for (const auto& run : runs) {
        xmax = std::max(xmax, run.trace.records.size());
        for (const auto& r : run.trace.records) ymax = std::max({ymax, r.ce_loss, r.ewc_penalty});
    }
    const Frame f = make_frame(1.0, static_cast<double>(xmax), 0.0, ymax);
    std::string out = svg_open(title, f, "iteration", "loss (CE solid, EWC dashed)");
    for (std::size_t i = 0; i < runs.size(); ++i) {
        out += polyline(runs[i].trace, f, color(i), false, [](const LossRecord& r) { return r.ce_loss; });
        out += polyline(runs[i].trace, f, color(i), true, [](const LossRecord& r) { return r.ewc_penalty; });
        char buf[48];
        std::snprintf(buf, sizeof buf, "lambda=%.0e", runs[i].lambda);
        out += legend_entry(i, color(i), buf);
    }
    return out + "</svg>\n";
}

std::string sensitivity_csv(const SensitivityTable& table) {
    std::string out = "flat_index,layer";
    for (const auto& t : table.tasks) out += ",score_" + t;
    out += '\n';
    for (std::size_t r = 0; r < table.indices.size(); ++r) {
        out += std::to_string(table.indices[r]) + ',' + std::to_string(table.layer);
        for (double s : table.scores[r]) out += ',' + format_double(s);
        out += '\n';
    }
    return out;
}

std::string sensitivity_svg(const SensitivityTable& table, const std::string& title) {
    double ymax = 0.0;
    for (const auto& row : table.scores)
        for (double s : row) ymax = std::max(ymax, s);
    const Frame f = make_frame(0.0, static_cast<double>(std::max<std::size_t>(table.indices.size(), 2) - 1), 0.0, ymax);
    std::string out = svg_open(title, f, "vital-parameter rank", "Fisher score");
    for (std::size_t t = 0; t < table.tasks.size(); ++t) {
        std::ostringstream os;
        for (std::size_t r = 0; r < table.indices.size(); ++r)
            os << "<circle cx=\"" << f.px(static_cast<double>(r)) << "\" cy=\"" << f.py(table.scores[r][t])
               << "\" r=\"1.5\" fill=\"" << color(t) << "\" fill-opacity=\"0.6\"/>\n";
        out += os.str();
        out += legend_entry(t, color(t), table.tasks[t]);
    }
    return out + "</svg>\n";
}

std::string embedding_csv(const Embedding& e) {
    if (e.result.coords.size() != 2 * e.points.size()) fail(ErrorKind::InvalidInput, "embedding size mismatch");
    std::string out = "x,y,label,layer\n";
    for (std::size_t i = 0; i < e.points.size(); ++i)
        out += format_double(e.result.coords[2 * i]) + ',' + format_double(e.result.coords[2 * i + 1]) + ',' +
               e.points.labels[i] + ',' + std::to_string(e.points.layer) + '\n';
    return out;
}

std::string embedding_svg(const Embedding& e, const std::string& title) {
    const auto& c = e.result.coords;
    double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    for (std::size_t i = 0; i < e.points.size(); ++i) {
        x0 = std::min(x0, c[2 * i]);
        x1 = std::max(x1, c[2 * i]);
        y0 = std::min(y0, c[2 * i + 1]);
        y1 = std::max(y1, c[2 * i + 1]);
    }
    const Frame f = make_frame(x0, x1, y0, y1);
    std::string out = svg_open(title, f, "t-SNE 1", "t-SNE 2");
    const auto labels = distinct_labels(e.points.labels);
    std::ostringstream os;
    for (std::size_t i = 0; i < e.points.size(); ++i) {
        const auto slot = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), e.points.labels[i]) - labels.begin());
        os << "<circle cx=\"" << f.px(c[2 * i]) << "\" cy=\"" << f.py(c[2 * i + 1]) << "\" r=\"2.5\" fill=\""
           << color(slot) << "\" fill-opacity=\"0.7\"/>\n";
    }
    out += os.str();
    for (std::size_t s = 0; s < labels.size(); ++s) out += legend_entry(s, color(s), labels[s]);
    return out + "</svg>\n";
}

std::string samples_csv(std::span<const DecodedSample> samples) {
    std::string out = "a,op,b,truth,prediction\n";
    for (const auto& s : samples)
        out += std::to_string(s.a) + ',' + op_string(s.op) + ',' + std::to_string(s.b) + ',' + std::to_string(s.truth) +
               ',' + std::to_string(s.prediction) + '\n';
    return out;
}

nlohmann::json to_json(const AggregateMetric& m) { return {{"mean", m.mean}, {"std", m.std}, {"n_runs", m.n_runs}}; }

AggregateMetric aggregate_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n_runs").get<std::size_t>()};
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json held = nlohmann::json::object();
    for (const auto& [task, m] : report.heldout_mlm_loss) held[task] = to_json(m);
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : report.samples)
        samples.push_back({{"a", s.a}, {"op", op_string(s.op)}, {"b", s.b}, {"truth", s.truth}, {"prediction", s.prediction}});
    return {{"ln_rmse", to_json(report.ln_rmse)}, {"heldout_mlm_loss", held}, {"samples", samples}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.ln_rmse = aggregate_from_json(j.at("ln_rmse"));
        for (const auto& [task, m] : j.at("heldout_mlm_loss").items()) r.heldout_mlm_loss[task] = aggregate_from_json(m);
        for (const auto& s : j.at("samples")) {
            const auto op = s.at("op").get<std::string>();
            if (op != "+" && op != "-") fail(ErrorKind::InvalidInput, "sample op must be + or -");
            r.samples.push_back({s.at("a").get<std::int64_t>(), op == "+" ? Op::Add : Op::Sub, s.at("b").get<std::int64_t>(),
                                 s.at("truth").get<std::int64_t>(), s.at("prediction").get<std::int64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidInput, std::string("malformed eval report: ") + e.what());
    }
    return r;
}

void export_report(const LossTrace& trace, const std::filesystem::path& path, Format format) {
    switch (format) {
    case Format::Csv: return write_text_file(path, trace_csv(trace));
    case Format::Json: return write_text_file(path, trace_metadata(trace).dump(2) + '\n');
    case Format::Svg: return write_text_file(path, trace_svg(trace, "CE and EWC loss, lambda=" + format_double(trace.lambda)));
    }
}

void export_report(const SensitivityTable& table, const std::filesystem::path& path, Format format) {
    switch (format) {
    case Format::Csv: return write_text_file(path, sensitivity_csv(table));
    case Format::Svg:
        return write_text_file(path, sensitivity_svg(table, "Parameter sensitivity, layer " + std::to_string(table.layer)));
    case Format::Json: {
        nlohmann::json j = {{"layer", table.layer}, {"tasks", table.tasks}, {"indices", table.indices}, {"scores", table.scores}};
        return write_text_file(path, j.dump(2) + '\n');
    }
    }
}

void export_report(const Embedding& e, const std::filesystem::path& path, Format format) {
    switch (format) {
    case Format::Csv: return write_text_file(path, embedding_csv(e));
    case Format::Svg:
        return write_text_file(path, embedding_svg(e, "Encoder parameter space, layer " + std::to_string(e.points.layer)));
    case Format::Json: {
        nlohmann::json j = {{"layer", e.points.layer}, {"labels", e.points.labels}, {"coords", e.result.coords},
                            {"kl_initial", e.result.kl_initial}, {"kl_final", e.result.kl_final},
                            {"perplexity", e.result.perplexity}};
        return write_text_file(path, j.dump(2) + '\n');
    }
    }
}

void export_report(const EvalReport& report, const std::filesystem::path& path, Format format) {
    switch (format) {
    case Format::Csv: return write_text_file(path, samples_csv(report.samples));
    case Format::Json: return write_text_file(path, to_json(report).dump(2) + '\n');
    case Format::Svg: fail(ErrorKind::InvalidInput, "eval reports have no SVG form");
    }
}

} // namespace ewclab
