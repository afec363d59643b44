#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "colony/error.hpp"
#include "colony/metrics.hpp"

namespace colony {

// RFC 4180: CRLF line endings, quote fields containing comma, quote, or newline.
inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ",";
        out += csv_escape(fields[i]);
    }
    return out + "\r\n";
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + p.string());
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw io_error("short write to " + p.string());
}

// family label + 10 per-digit F1 columns + average
inline std::string table1_csv(const std::vector<std::pair<std::string, f1_row>>& rows) {
    std::string out = csv_line({"Family", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "Avg"});
    for (const auto& [family, f1] : rows) {
        std::vector<std::string> fields{family};
        for (double v : f1.f1) fields.push_back(format_fixed(v, 4));
        fields.push_back(format_fixed(f1.macro, 4));
        out += csv_line(fields);
    }
    return out;
}

struct family_summary {
    std::string family;
    double train_f1 = 0.0, valid_f1 = 0.0, test_f1 = 0.0;
    double duration_seconds = 0.0;
};

inline std::string table2_csv(const std::vector<family_summary>& rows) {
    std::string out = csv_line({"Family", "Train", "Valid", "Test", "Duration_sec"});
    for (const auto& r : rows)
        out += csv_line({r.family, format_fixed(r.train_f1, 4), format_fixed(r.valid_f1, 4),
                         format_fixed(r.test_f1, 4), format_fixed(r.duration_seconds, 1)});
    return out;
}

// Plain SVG 1.1 plot: unit axes, diagonal reference, the curve, AUC label.
inline std::string roc_svg(const roc_curve& curve, const std::string& title) {
    const double W = 420, H = 420, m = 50;
    auto X = [&](double fpr) { return m + fpr * (W - 2 * m); };
    auto Y = [&](double tpr) { return H - m - tpr * (H - 2 * m); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_fixed(W, 0) +
         "\" height=\"" + format_fixed(H, 0) + "\" viewBox=\"0 0 " + format_fixed(W, 0) + " " +
         format_fixed(H, 0) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<line x1=\"" + format_fixed(X(0), 1) + "\" y1=\"" + format_fixed(Y(0), 1) + "\" x2=\"" +
         format_fixed(X(1), 1) + "\" y2=\"" + format_fixed(Y(0), 1) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    s += "<line x1=\"" + format_fixed(X(0), 1) + "\" y1=\"" + format_fixed(Y(0), 1) + "\" x2=\"" +
         format_fixed(X(0), 1) + "\" y2=\"" + format_fixed(Y(1), 1) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    s += "<line x1=\"" + format_fixed(X(0), 1) + "\" y1=\"" + format_fixed(Y(0), 1) + "\" x2=\"" +
         format_fixed(X(1), 1) + "\" y2=\"" + format_fixed(Y(1), 1) +
         "\" stroke=\"#999\" stroke-dasharray=\"4,4\" stroke-width=\"1\"/>\n";
    s += "<path d=\"";
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        s += (i == 0 ? "M" : "L");
        s += format_fixed(X(curve.points[i].fpr), 2) + " " + format_fixed(Y(curve.points[i].tpr), 2);
    }
    s += "\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + format_fixed(W / 2, 0) + "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
    s += "<text x=\"" + format_fixed(X(0.62), 0) + "\" y=\"" + format_fixed(Y(0.08), 0) +
         "\" font-family=\"sans-serif\" font-size=\"13\">AUC = " + format_fixed(curve.auc, 4) +
         "</text>\n";
    s += "<text x=\"" + format_fixed(W / 2, 0) + "\" y=\"" + format_fixed(H - 12, 0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">False positive "
         "rate</text>\n";
    s += "<text x=\"16\" y=\"" + format_fixed(H / 2, 0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 " + format_fixed(H / 2, 0) + ")\">True positive rate</text>\n";
    s += "</svg>\n";
    return s;
}

} // namespace colony
