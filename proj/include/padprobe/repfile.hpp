#pragma once

// Binary rep files ("PPRB").
//
//   magic      4 bytes  "PPRB"
//   version    u32      1 = encoded representation, 2 = feature matrix
//   N          u32      rows
//   d          u32      columns
//   k          u32      PROMPT row count (0 for feature files)
//   encoder_id u32 byte length + UTF-8 bytes
//   layer      i32      -1 when absent
//   segments   N bytes  (version 1 only) 0=BOS 1=PROMPT 2=EOS 3=PAD
//   body       N*d binary32, row-major
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "padprobe/reptypes.hpp"

namespace padprobe::repfile {

inline constexpr std::array<char, 4> kMagic{'P', 'P', 'R', 'B'};
inline constexpr std::uint32_t kRepVersion = 1;
inline constexpr std::uint32_t kFeatureVersion = 2;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T> && (sizeof(T) == 4));
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
}

template <class T>
T get_le(std::istream& is) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4))
        fail(ErrorCode::ParseError, "rep file truncated");
    const std::uint32_t bits = std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) |
                               (std::uint32_t{bytes[2]} << 16) | (std::uint32_t{bytes[3]} << 24);
    T value;
    std::memcpy(&value, &bits, 4);
    return value;
}

struct Header {
    std::uint32_t version = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t k = 0;
    std::string encoder_id;
    std::int32_t layer = -1;
};

inline void write_header(std::ostream& os, const Header& h) {
    os.write(kMagic.data(), 4);
    put_le(os, h.version);
    put_le(os, h.rows);
    put_le(os, h.cols);
    put_le(os, h.k);
    put_le(os, static_cast<std::uint32_t>(h.encoder_id.size()));
    os.write(h.encoder_id.data(), static_cast<std::streamsize>(h.encoder_id.size()));
    put_le(os, h.layer);
}

inline Header read_header(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic)
        fail(ErrorCode::ParseError, "not a rep file (bad magic)");
    Header h;
    h.version = get_le<std::uint32_t>(is);
    if (h.version != kRepVersion && h.version != kFeatureVersion)
        fail(ErrorCode::ParseError, "unsupported rep file version " + std::to_string(h.version));
    h.rows = get_le<std::uint32_t>(is);
    h.cols = get_le<std::uint32_t>(is);
    h.k = get_le<std::uint32_t>(is);
    const auto id_len = get_le<std::uint32_t>(is);
    if (id_len > (1u << 20)) fail(ErrorCode::ParseError, "encoder id length implausible");
    h.encoder_id.resize(id_len);
    if (id_len && !is.read(h.encoder_id.data(), id_len))
        fail(ErrorCode::ParseError, "rep file truncated in encoder id");
    h.layer = get_le<std::int32_t>(is);
    return h;
}

inline void write_body(std::ostream& os, const Matrix& m) {
    for (float v : m.data()) put_le(os, v);
}

inline Matrix read_body(std::istream& is, std::uint32_t rows, std::uint32_t cols) {
    std::vector<float> data(static_cast<std::size_t>(rows) * cols);
    for (float& v : data) v = get_le<float>(is);
    if (is.peek() != std::char_traits<char>::eof())
        fail(ErrorCode::ParseError, "trailing bytes after rep file body");
    return Matrix(rows, cols, std::move(data));
}

}  // namespace detail

inline void write_rep(std::ostream& os, const EncodedRep& rep) {
    detail::Header h{kRepVersion, static_cast<std::uint32_t>(rep.n()),
                     static_cast<std::uint32_t>(rep.d()), static_cast<std::uint32_t>(rep.k()),
                     rep.encoder_id(), rep.layer().value_or(-1)};
    detail::write_header(os, h);
    for (Segment s : rep.segments()) os.put(static_cast<char>(s));
    detail::write_body(os, rep.matrix());
}

/// The source tag is not stored; a loaded rep is FULL when it has PROMPT rows
/// and CLEAN otherwise.
inline EncodedRep read_rep(std::istream& is) {
    const auto h = detail::read_header(is);
    if (h.version != kRepVersion) fail(ErrorCode::ParseError, "expected a representation file");
    std::vector<Segment> segments(h.rows);
    for (auto& s : segments) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) fail(ErrorCode::ParseError, "rep file truncated");
        if (c < 0 || c > 3) fail(ErrorCode::ParseError, "invalid segment label " + std::to_string(c));
        s = static_cast<Segment>(c);
    }
    Matrix m = detail::read_body(is, h.rows, h.cols);
    const auto k = static_cast<std::uint32_t>(std::count(segments.begin(), segments.end(), Segment::Prompt));
    if (k != h.k) fail(ErrorCode::ParseError, "header k disagrees with segment map");
    padprobe::detail::check_segment_order(segments);
    std::optional<std::int32_t> layer;
    if (h.layer >= 0) layer = h.layer;
    return EncodedRep(std::move(m), std::move(segments), k > 0 ? RepSource::Full : RepSource::Clean,
                      h.encoder_id, layer);
}

struct FeatureMatrix {
    Matrix vectors;
    std::string extractor_id;
};

inline void write_features(std::ostream& os, const Matrix& vectors, const std::string& extractor_id) {
    detail::Header h{kFeatureVersion, static_cast<std::uint32_t>(vectors.rows()),
                     static_cast<std::uint32_t>(vectors.cols()), 0, extractor_id, -1};
    detail::write_header(os, h);
    detail::write_body(os, vectors);
}

inline FeatureMatrix read_features(std::istream& is) {
    const auto h = detail::read_header(is);
    if (h.version != kFeatureVersion) fail(ErrorCode::ParseError, "expected a feature file");
    return {detail::read_body(is, h.rows, h.cols), h.encoder_id};
}

inline void save_rep(const std::filesystem::path& path, const EncodedRep& rep) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    write_rep(os, rep);
    if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

inline EncodedRep load_rep(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    return read_rep(is);
}

inline void save_features(const std::filesystem::path& path, const Matrix& vectors,
                          const std::string& extractor_id) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    write_features(os, vectors, extractor_id);
    if (!os) fail(ErrorCode::IoError, "write failed: " + path.string());
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    return read_features(is);
}

}  // namespace padprobe::repfile
