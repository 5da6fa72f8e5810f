#pragma once

// Attention probing: capture image/text attention maps during generation and
// aggregate them into per-token mass histograms and per-token spatial maps.
//
// Aggregation is a flat unweighted mean over every captured
// (step, layer, head, image query) cell.

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "padprobe/backend.hpp"
#include "padprobe/plot.hpp"

namespace padprobe {

inline std::vector<AttentionRecord> record_attention(const Backend& backend, const PaddedPrompt& prompt,
                                                     std::uint64_t seed, const CaptureFilter& filter = {}) {
    if (!backend.capabilities().attention_capture)
        fail(ErrorCode::UnsupportedCapture, "backend '" + backend.id() + "' cannot capture attention");
    CaptureOptions capture{true, filter};
    return backend.generate(backend.encode(prompt), seed, capture).attention;
}

/// Largest deviation of any row sum from 1; negative entries count as failure
/// (returns infinity).
inline double stochasticity_error(const AttentionRecord& rec) {
    double worst = 0.0;
    for (std::size_t r = 0; r < rec.map.rows(); ++r) {
        double sum = 0.0;
        for (float v : rec.map.row(r)) {
            if (!(v >= 0.0f)) return INFINITY;
            sum += v;
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
}

namespace detail {

inline std::vector<std::size_t> text_key_columns(const AttentionRecord& rec) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < rec.key_kind.size(); ++c)
        if (rec.key_kind[c] == TokenKind::Text) cols.push_back(c);
    return cols;
}

inline std::vector<std::size_t> image_query_rows(const AttentionRecord& rec) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < rec.query_kind.size(); ++r)
        if (rec.query_kind[r] == TokenKind::Image) rows.push_back(r);
    return rows;
}

inline void check_labels(const AttentionRecord& rec) {
    if (rec.query_kind.size() != rec.map.rows() || rec.key_kind.size() != rec.map.cols())
        fail(ErrorCode::LabelMismatch, "attention record labels do not match map shape");
}

}  // namespace detail

/// Mean attention paid by image queries to each of the prompt's N text keys.
inline std::vector<double> token_attention_mass(const std::vector<AttentionRecord>& records,
                                                const PaddedPrompt& prompt) {
    if (records.empty()) fail(ErrorCode::EmptyInput, "no attention records");
    const std::size_t n = prompt.size();
    std::vector<double> sums(n, 0.0);
    std::size_t cells = 0;
    for (const auto& rec : records) {
        detail::check_labels(rec);
        const auto cols = detail::text_key_columns(rec);
        if (cols.size() != n)
            fail(ErrorCode::LabelMismatch, "record has " + std::to_string(cols.size()) +
                                               " text keys, prompt has " + std::to_string(n));
        for (std::size_t q : detail::image_query_rows(rec)) {
            for (std::size_t t = 0; t < n; ++t) sums[t] += rec.map(q, cols[t]);
            ++cells;
        }
    }
    if (cells == 0) fail(ErrorCode::EmptyInput, "records contain no image queries");
    for (double& s : sums) s /= static_cast<double>(cells);
    return sums;
}

struct SpatialMap {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<double> values;  // row-major h x w

    double at(std::size_t r, std::size_t c) const { return values[r * w + c]; }
};

/// Mean over records of the attention each image patch pays to `token`,
/// reshaped row-major onto an h x w grid.
inline SpatialMap token_spatial_map(const std::vector<AttentionRecord>& records, std::size_t token,
                                    std::size_t h, std::size_t w) {
    if (records.empty()) fail(ErrorCode::EmptyInput, "no attention records");
    SpatialMap out{h, w, std::vector<double>(h * w, 0.0)};
    for (const auto& rec : records) {
        detail::check_labels(rec);
        const auto rows = detail::image_query_rows(rec);
        if (rows.size() != h * w)
            fail(ErrorCode::GridMismatch, std::to_string(rows.size()) + " image queries do not fill a " +
                                              std::to_string(h) + "x" + std::to_string(w) + " grid");
        const auto cols = detail::text_key_columns(rec);
        if (token >= cols.size())
            fail(ErrorCode::LabelMismatch, "token index " + std::to_string(token) + " out of range");
        for (std::size_t i = 0; i < rows.size(); ++i) out.values[i] += rec.map(rows[i], cols[token]);
    }
    for (double& v : out.values) v /= static_cast<double>(records.size());
    return out;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline void write_histogram_csv(std::ostream& os, const std::vector<double>& mass, const PaddedPrompt& prompt) {
    os << "token_index,token_text,segment_label,mass\n";
    char buf[64];
    for (std::size_t t = 0; t < mass.size(); ++t) {
        const std::string text = prompt.pieces().empty() ? std::to_string(prompt.tokens()[t]) : prompt.pieces()[t];
        std::snprintf(buf, sizeof buf, "%.9g", mass[t]);
        os << t << ',' << csv_field(text) << ',' << to_string(prompt.segments()[t]) << ',' << buf << '\n';
    }
}

/// Histogram plot. With `trim_keep`, only the first and last `trim_keep`
/// tokens are drawn and the middle run is collapsed into one gap marker.
inline void write_histogram_svg(std::ostream& os, const std::vector<double>& mass, const PaddedPrompt& prompt,
                                std::optional<std::size_t> trim_keep = std::nullopt) {
    std::vector<plot::Bar> bars;
    auto label = [&](std::size_t t) {
        return std::to_string(t) + ":" +
               (prompt.pieces().empty() ? std::to_string(prompt.tokens()[t]) : prompt.pieces()[t]);
    };
    const std::size_t n = mass.size();
    if (trim_keep && 2 * *trim_keep < n) {
        for (std::size_t t = 0; t < *trim_keep; ++t) bars.push_back({label(t), mass[t]});
        bars.push_back({"...", 0.0});
        for (std::size_t t = n - *trim_keep; t < n; ++t) bars.push_back({label(t), mass[t]});
    } else {
        for (std::size_t t = 0; t < n; ++t) bars.push_back({label(t), mass[t]});
    }
    plot::write_bar_chart_svg(os, "attention mass per text token", bars);
}

}  // namespace padprobe
