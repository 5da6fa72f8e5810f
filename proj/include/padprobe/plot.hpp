#pragma once

// Minimal standalone plot writers: SVG bar charts and PGM heat maps.

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace padprobe::plot {

struct Bar {
    std::string label;
    double value = 0.0;
};

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline void write_bar_chart_svg(std::ostream& os, const std::string& title, const std::vector<Bar>& bars) {
    const int bar_w = 36, gap = 12, height = 240, top = 40, bottom = 60;
    const int width = std::max(200, static_cast<int>(bars.size()) * (bar_w + gap) + 80);
    double vmax = 0.0;
    for (const auto& b : bars) vmax = std::max(vmax, b.value);
    if (vmax <= 0.0) vmax = 1.0;

    char buf[256];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height + top + bottom << "\">\n";
    os << "<text x=\"10\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    int x = 50;
    for (const auto& b : bars) {
        const double h = std::max(0.0, b.value) / vmax * height;
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%d\" y=\"%.3f\" width=\"%d\" height=\"%.3f\" fill=\"#4a78b0\"/>\n", x,
                      top + height - h, bar_w, h);
        os << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"9\" "
                      "transform=\"rotate(45 %d %d)\">",
                      x, top + height + 14, x, top + height + 14);
        os << buf << xml_escape(b.label) << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.4g", b.value);
        os << "<text x=\"" << x << "\" y=\"" << static_cast<int>(top + height - h - 4)
           << "\" font-family=\"sans-serif\" font-size=\"9\">" << buf << "</text>\n";
        x += bar_w + gap;
    }
    os << "</svg>\n";
}

/// Binary PGM (P5), values linearly rescaled to 0..255.
inline void write_pgm(std::ostream& os, std::size_t h, std::size_t w, const std::vector<double>& values) {
    double lo = values.empty() ? 0.0 : values[0], hi = lo;
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : values) {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        os.put(static_cast<char>(static_cast<unsigned char>(t * 255.0 + 0.5)));
    }
}

}  // namespace padprobe::plot
