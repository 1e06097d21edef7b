#pragma once

// CSV tables (UTF-8, header row, '.' decimal separator, shortest round-trip
// number formatting) and dependency-free SVG plots.

#include "msgm/evalbench.hpp"
#include "msgm/likelihood.hpp"
#include "msgm/numcore.hpp"
#include "msgm/unlearn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace msgm {

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last) throw ValidationError("not a number: '" + s + "'");
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ValidationError("csv: no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }

    std::vector<double> numbers(const std::string& name) const {
        const std::size_t c = column(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(parse_double(r.at(c)));
        return out;
    }

    void add(std::vector<std::string> row) {
        require(row.size() == header.size(), "csv: row width does not match header");
        rows.push_back(std::move(row));
    }

    bool operator==(const CsvTable&) const = default;
};

inline std::string to_csv_string(const CsvTable& t) {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            require(cells[i].find_first_of(",\n\"") == std::string::npos, "csv: cell contains a separator");
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
}

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size()) throw ValidationError("csv: ragged row");
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw ValidationError("csv: missing header");
    return t;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) { write_text(path, to_csv_string(t)); }
inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

// --- table builders ---

inline CsvTable points_table(const Tensor& pts) {
    CsvTable t;
    for (Eigen::Index i = 0; i < pts.cols(); ++i) t.header.push_back("x" + std::to_string(i));
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
        std::vector<std::string> row;
        for (Eigen::Index i = 0; i < pts.cols(); ++i) row.push_back(format_double(pts(r, i)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline Tensor points_from_table(const CsvTable& t) {
    Tensor out(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(t.rows[r][c]);
        }
    }
    return out;
}

inline CsvTable loss_table(const LossCurve& curve) {
    CsvTable t{{"step", "L_g", "L_f", "total"}, {}};
    for (const auto& r : curve) {
        t.rows.push_back({std::to_string(r.step), format_double(r.retain),
                          r.has_forget() ? format_double(r.forget) : std::string(), format_double(r.total)});
    }
    return t;
}

inline LossCurve loss_from_table(const CsvTable& t) {
    const std::size_t cs = t.column("step"), cg = t.column("L_g"), cf = t.column("L_f"), ct = t.column("total");
    LossCurve out;
    for (const auto& r : t.rows) {
        LossRecord rec;
        rec.step = std::stol(r[cs]);
        rec.retain = parse_double(r[cg]);
        rec.forget = r[cf].empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(r[cf]);
        rec.total = parse_double(r[ct]);
        out.push_back(rec);
    }
    return out;
}

inline CsvTable nll_table(const NllReport& rep) {
    CsvTable t{{"split", "point_id", "nll"}, {}};
    auto add = [&](const char* split, const NllResult& r) {
        for (std::size_t i = 0; i < r.nll.size(); ++i) t.rows.push_back({split, std::to_string(i), format_double(r.nll[i])});
    };
    add("D_g", rep.retain);
    add("D_f", rep.forget);
    return t;
}

/// Two-row summary laid out like an NLL results table: one row per test split.
inline CsvTable nll_summary_table(const std::string& method, const NllReport& rep) {
    CsvTable t{{"test", "method", "nll_mean", "std_error"}, {}};
    t.rows.push_back({"D_g", method, format_double(rep.retain.mean), format_double(rep.retain.std_error)});
    t.rows.push_back({"D_f", method, format_double(rep.forget.mean), format_double(rep.forget.std_error)});
    return t;
}

inline CsvTable field_table(const ScoreField& f) {
    CsvTable t{{"x", "y", "u", "v"}, {}};
    for (Eigen::Index k = 0; k < f.nodes.rows(); ++k) {
        t.rows.push_back({format_double(f.nodes(k, 0)), format_double(f.nodes(k, 1)), format_double(f.vectors(k, 0)),
                          format_double(f.vectors(k, 1))});
    }
    return t;
}

struct ResultRow {
    std::string method;
    double ur;
    double nll_g;
    double nll_f;
};

inline CsvTable results_table(const std::vector<ResultRow>& rows) {
    CsvTable t{{"method", "UR", "NLL_Dg", "NLL_Df"}, {}};
    for (const auto& r : rows) t.rows.push_back({r.method, format_double(r.ur), format_double(r.nll_g), format_double(r.nll_f)});
    return t;
}

// --- SVG ---

namespace svg_detail {

constexpr double kSize = 480.0;
constexpr double kPad = 40.0;

inline const char* palette(std::size_t k) {
    static const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b"};
    return colors[k % 6];
}

struct Frame {
    double x0, x1, y0, y1;
    double px(double x) const { return kPad + (x - x0) / (x1 - x0) * (kSize - 2 * kPad); }
    double py(double y) const { return kSize - kPad - (y - y0) / (y1 - y0) * (kSize - 2 * kPad); }
};

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string open(const std::string& title, const Frame& f) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kSize) + "\" height=\"" + num(kSize) +
                    "\" viewBox=\"0 0 " + num(kSize) + " " + num(kSize) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<rect x=\"" + num(kPad) + "\" y=\"" + num(kPad) + "\" width=\"" + num(kSize - 2 * kPad) + "\" height=\"" +
         num(kSize - 2 * kPad) + "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(kSize / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         title + "</text>\n";
    s += "<text x=\"" + num(kPad) + "\" y=\"" + num(kSize - 12) + "\" font-family=\"sans-serif\" font-size=\"10\">" +
         num(f.x0) + "</text>\n";
    s += "<text x=\"" + num(kSize - kPad) + "\" y=\"" + num(kSize - 12) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.x1) + "</text>\n";
    s += "<text x=\"4\" y=\"" + num(kSize - kPad) + "\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.y0) +
         "</text>\n";
    s += "<text x=\"4\" y=\"" + num(kPad + 10) + "\" font-family=\"sans-serif\" font-size=\"10\">" + num(f.y1) +
         "</text>\n";
    return s;
}

} // namespace svg_detail

/// Scatter of the first two coordinates; `labels` (optional) picks colors.
inline std::string scatter_svg(const Tensor& pts, const std::vector<std::size_t>& labels, const Rect& r,
                               const std::string& title) {
    using namespace svg_detail;
    const Frame f{r.x0, r.x1, r.y0, r.y1};
    std::string s = open(title, f);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const double x = pts(i, 0), y = pts(i, 1);
        if (x < r.x0 || x > r.x1 || y < r.y0 || y > r.y1) continue;
        const char* c = labels.empty() ? "#333333" : palette(labels[static_cast<std::size_t>(i)]);
        s += "<circle cx=\"" + num(f.px(x)) + "\" cy=\"" + num(f.py(y)) + "\" r=\"1.2\" fill=\"" + c +
             "\" fill-opacity=\"0.5\"/>\n";
    }
    return s + "</svg>\n";
}

/// Quiver plot; arrows are scaled to a common maximum length per plot.
inline std::string quiver_svg(const ScoreField& field, const std::string& title) {
    using namespace svg_detail;
    const Frame f{field.rect.x0, field.rect.x1, field.rect.y0, field.rect.y1};
    std::string s = open(title, f);
    double max_norm = 0.0;
    for (Eigen::Index k = 0; k < field.vectors.rows(); ++k) max_norm = std::max(max_norm, field.vectors.row(k).norm());
    const double cell = (kSize - 2 * kPad) / std::max(field.nx, field.ny);
    const double scale = max_norm > 0 ? 0.9 * cell / max_norm : 0.0;
    for (Eigen::Index k = 0; k < field.nodes.rows(); ++k) {
        const double x = f.px(field.nodes(k, 0)), y = f.py(field.nodes(k, 1));
        const double u = field.vectors(k, 0) * scale, v = -field.vectors(k, 1) * scale;
        s += "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + u) + "\" y2=\"" + num(y + v) +
             "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        s += "<circle cx=\"" + num(x + u) + "\" cy=\"" + num(y + v) + "\" r=\"1.2\" fill=\"#d62728\"/>\n";
    }
    return s + "</svg>\n";
}

/// L_g (and L_f where present) against step, symlog-free linear axes over the
/// central 98% of values so early transients do not flatten the plot.
inline std::string loss_svg(const LossCurve& curve, const std::string& title) {
    using namespace svg_detail;
    require(!curve.empty(), "loss_svg: empty curve");
    std::vector<double> vals;
    for (const auto& r : curve) {
        vals.push_back(r.retain);
        if (r.has_forget()) vals.push_back(r.forget);
    }
    std::sort(vals.begin(), vals.end());
    double lo = vals[vals.size() / 100], hi = vals[vals.size() - 1 - vals.size() / 100];
    if (hi <= lo) hi = lo + 1.0;
    const Frame f{0.0, static_cast<double>(std::max<long>(1, curve.back().step)), lo, hi};
    std::string s = open(title, f);
    auto poly = [&](bool forget, const char* color) {
        std::string pts;
        const std::size_t stride = std::max<std::size_t>(1, curve.size() / 2000);
        for (std::size_t i = 0; i < curve.size(); i += stride) {
            const double v = forget ? curve[i].forget : curve[i].retain;
            if (std::isnan(v)) continue;
            pts += num(f.px(static_cast<double>(curve[i].step))) + "," + num(f.py(std::clamp(v, lo, hi))) + " ";
        }
        if (!pts.empty()) {
            s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1\" points=\"" + pts + "\"/>\n";
        }
    };
    poly(false, "#1f77b4");
    poly(true, "#d62728");
    return s + "</svg>\n";
}

} // namespace msgm
