#include "selqa/plots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "selqa/format.hpp"
#include "selqa/report_io.hpp"

namespace selqa {

namespace {

constexpr double kWidth = 480, kHeight = 360, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    // two decimals is plenty for pixel coordinates and keeps output stable
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, std::round(v * 100.0) / 100.0, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

std::string escape(const std::string& s) {
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

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw PlotError("missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == ',' && !quoted) {
            out.push_back(cur);
            cur.clear();
        } else cur += c;
    }
    out.push_back(cur);
    return out;
}

Csv read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PlotError("cannot read " + path.string());
    Csv csv;
    std::string line;
    if (!std::getline(in, line)) throw PlotError(path.string() + ": empty file");
    csv.header = split_line(line);
    while (std::getline(in, line)) {
        if (!line.empty()) csv.rows.push_back(split_line(line));
    }
    return csv;
}

std::optional<double> to_num(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

Chart curve_chart(const Csv& csv, const std::string& name) {
    Chart c;
    c.title = "risk-coverage: " + name;
    c.x_label = "coverage";
    c.y_label = "risk";
    Series s{name, {}, {}};
    const auto cx = csv.column("coverage"), cy = csv.column("risk");
    for (const auto& row : csv.rows) {
        const auto x = to_num(row.at(cx)), y = to_num(row.at(cy));
        if (x && y) {
            s.x.push_back(*x);
            s.y.push_back(*y);
        }
    }
    c.series.push_back(std::move(s));
    return c;
}

Chart reliability_chart(const Csv& csv, const std::string& name) {
    Chart c;
    c.title = "reliability: " + name;
    c.x_label = "mean confidence";
    c.y_label = "accuracy";
    c.diagonal = true;
    Series s{name, {}, {}};
    const auto cx = csv.column("mean_conf"), cy = csv.column("accuracy");
    for (const auto& row : csv.rows) {
        const auto x = to_num(row.at(cx)), y = to_num(row.at(cy));
        if (x && y) {
            s.x.push_back(*x);
            s.y.push_back(*y);
        }
    }
    c.series.push_back(std::move(s));
    return c;
}

Chart alpha_chart(const Csv& csv) {
    Chart c;
    c.title = "AUC vs source share";
    c.x_label = "alpha";
    c.y_label = "AUC";
    Series cal{"calibrator", {}, {}}, mp{"maxprob", {}, {}};
    const auto ca = csv.column("alpha"), cc = csv.column("calibrator_auc"), cm = csv.column("maxprob_auc");
    double lo = 1.0, hi = 0.0;
    for (const auto& row : csv.rows) {
        const auto a = to_num(row.at(ca)), y1 = to_num(row.at(cc)), y2 = to_num(row.at(cm));
        if (!a || !y1 || !y2) continue;
        cal.x.push_back(*a);
        cal.y.push_back(*y1);
        mp.x.push_back(*a);
        mp.y.push_back(*y2);
        lo = std::min({lo, *y1, *y2});
        hi = std::max({hi, *y1, *y2});
    }
    if (lo < hi) {
        const double pad = 0.1 * (hi - lo);
        c.y_min = std::max(0.0, lo - pad);
        c.y_max = std::min(1.0, hi + pad);
    }
    c.series = {cal, mp};
    return c;
}

}  // namespace

std::string render_svg(const Chart& chart) {
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    const double xs = chart.x_max > chart.x_min ? chart.x_max - chart.x_min : 1.0;
    const double ys = chart.y_max > chart.y_min ? chart.y_max - chart.y_min : 1.0;
    auto px = [&](double x) { return kLeft + (x - chart.x_min) / xs * pw; };
    auto py = [&](double y) { return kTop + ph - (y - chart.y_min) / ys * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
        << escape(chart.title) << "</text>\n";
    svg << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
        << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = chart.x_min + xs * i / 4.0, fy = chart.y_min + ys * i / 4.0;
        svg << "<text x=\"" << num(px(fx)) << "\" y=\"" << num(kTop + ph + 15)
            << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
        svg << "<text x=\"" << num(kLeft - 5) << "\" y=\"" << num(py(fy) + 4) << "\" text-anchor=\"end\">"
            << num(fy) << "</text>\n";
    }
    svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 10) << "\" text-anchor=\"middle\">"
        << escape(chart.x_label) << "</text>\n";
    svg << "<text x=\"15\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
        << num(kTop + ph / 2) << ")\">" << escape(chart.y_label) << "</text>\n";
    if (chart.diagonal) {
        svg << "<line x1=\"" << num(px(chart.x_min)) << "\" y1=\"" << num(py(chart.x_min)) << "\" x2=\""
            << num(px(chart.x_max)) << "\" y2=\"" << num(py(chart.x_max))
            << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (std::size_t i = 0; i < chart.series.size(); ++i) {
        const auto& s = chart.series[i];
        const char* color = kColors[i % std::size(kColors)];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (k) svg << ' ';
            svg << num(px(s.x[k])) << ',' << num(py(s.y[k]));
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << num(kLeft + pw - 5) << "\" y=\"" << num(kTop + 15 + 14.0 * i)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(s.label) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<std::filesystem::path> render_plots(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw PlotError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> csvs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.path().extension() != ".csv") continue;
        if (name.starts_with("curve_") || name.starts_with("reliability_") || name == "fig5.csv") {
            csvs.push_back(entry.path());
        }
    }
    if (csvs.empty()) throw PlotError("no curve, reliability or fig5 CSVs in " + dir.string());
    std::sort(csvs.begin(), csvs.end());

    std::vector<std::filesystem::path> written;
    for (const auto& path : csvs) {
        const auto stem = path.stem().string();
        const auto csv = read_csv(path);
        Chart chart;
        if (stem.starts_with("curve_")) chart = curve_chart(csv, stem.substr(6));
        else if (stem.starts_with("reliability_")) chart = reliability_chart(csv, stem.substr(12));
        else chart = alpha_chart(csv);
        auto out = path;
        out.replace_extension(".svg");
        write_text_file(out, render_svg(chart));
        written.push_back(out);
    }
    return written;
}

}  // namespace selqa
