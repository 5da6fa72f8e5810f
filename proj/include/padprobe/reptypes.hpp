#pragma once

// Core domain types: padded prompts, encoded representations, keep-masks and
// intervention descriptors. All of them validate on construction and are
// immutable afterwards.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "padprobe/error.hpp"
#include "padprobe/matrix.hpp"

namespace padprobe {

enum class Segment : std::uint8_t { Bos = 0, Prompt = 1, Eos = 2, Pad = 3 };

constexpr std::string_view to_string(Segment s) noexcept {
    switch (s) {
        case Segment::Bos: return "BOS";
        case Segment::Prompt: return "PROMPT";
        case Segment::Eos: return "EOS";
        case Segment::Pad: return "PAD";
    }
    return "?";
}

using TokenId = std::int32_t;

namespace detail {

// Labels must read BOS?, PROMPT*, EOS?, PAD* from left to right.
inline void check_segment_order(std::span<const Segment> segments) {
    int phase = 0;  // 0 before BOS, 1 after BOS/in prompt, 2 after EOS, 3 in pads
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment s = segments[i];
        int next = phase;
        switch (s) {
            case Segment::Bos: next = (i == 0) ? 1 : -1; break;
            case Segment::Prompt: next = (phase <= 1) ? 1 : -1; break;
            case Segment::Eos: next = (phase <= 1) ? 2 : -1; break;
            case Segment::Pad: next = 3; break;
        }
        if (next < 0)
            fail(ErrorCode::InvalidPrompt,
                 "segment labels out of order at index " + std::to_string(i));
        phase = next;
    }
}

}  // namespace detail

/// A tokenized prompt padded to a fixed length with trailing pads.
///
/// `pieces` optionally carries a printable form of each token; it is only used
/// for reporting (attention histograms) and may be empty.
class PaddedPrompt {
public:
    PaddedPrompt(std::vector<TokenId> tokens, std::vector<Segment> segments, std::string text,
                 TokenId pad_token_id, std::vector<std::string> pieces = {})
        : tokens_(std::move(tokens)),
          segments_(std::move(segments)),
          text_(std::move(text)),
          pad_token_id_(pad_token_id),
          pieces_(std::move(pieces)) {
        if (tokens_.empty()) fail(ErrorCode::InvalidPrompt, "prompt length must be >= 1");
        if (tokens_.size() != segments_.size())
            fail(ErrorCode::InvalidPrompt, "token and segment counts differ");
        if (!pieces_.empty() && pieces_.size() != tokens_.size())
            fail(ErrorCode::InvalidPrompt, "piece count differs from token count");
        detail::check_segment_order(segments_);
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (segments_[i] == Segment::Pad && tokens_[i] != pad_token_id_)
                fail(ErrorCode::InvalidPrompt,
                     "PAD index " + std::to_string(i) + " does not hold the pad token");
            if (segments_[i] == Segment::Prompt) ++k_;
        }
    }

    /// Builds a prompt of `k` placeholder tokens padded to `n`, with optional
    /// BOS/EOS. Token ids are 3.. for prompt tokens, 1 for BOS, 2 for EOS.
    static PaddedPrompt synthetic(std::size_t k, std::size_t n, bool bos = true, bool eos = true,
                                  TokenId pad_id = 0) {
        const std::size_t specials = (bos ? 1 : 0) + (eos ? 1 : 0);
        if (k + specials > n) fail(ErrorCode::InvalidPrompt, "prompt does not fit in length");
        std::vector<TokenId> tokens;
        std::vector<Segment> segments;
        if (bos) { tokens.push_back(1); segments.push_back(Segment::Bos); }
        for (std::size_t i = 0; i < k; ++i) {
            tokens.push_back(static_cast<TokenId>(3 + i));
            segments.push_back(Segment::Prompt);
        }
        if (eos) { tokens.push_back(2); segments.push_back(Segment::Eos); }
        while (tokens.size() < n) { tokens.push_back(pad_id); segments.push_back(Segment::Pad); }
        return PaddedPrompt(std::move(tokens), std::move(segments), {}, pad_id);
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t k() const noexcept { return k_; }
    std::span<const TokenId> tokens() const noexcept { return tokens_; }
    std::span<const Segment> segments() const noexcept { return segments_; }
    const std::string& text() const noexcept { return text_; }
    TokenId pad_token_id() const noexcept { return pad_token_id_; }
    const std::vector<std::string>& pieces() const noexcept { return pieces_; }

    std::size_t pad_count() const noexcept {
        return static_cast<std::size_t>(std::count(segments_.begin(), segments_.end(), Segment::Pad));
    }

    friend bool operator==(const PaddedPrompt&, const PaddedPrompt&) = default;

private:
    std::vector<TokenId> tokens_;
    std::vector<Segment> segments_;
    std::string text_;
    TokenId pad_token_id_ = 0;
    std::vector<std::string> pieces_;
    std::size_t k_ = 0;
};

enum class RepSource : std::uint8_t { Full, Clean, Mixed };

constexpr std::string_view to_string(RepSource s) noexcept {
    switch (s) {
        case RepSource::Full: return "FULL";
        case RepSource::Clean: return "CLEAN";
        case RepSource::Mixed: return "MIXED";
    }
    return "?";
}

/// N x d encoder output with the segment map of the prompt it came from.
class EncodedRep {
public:
    EncodedRep(Matrix matrix, std::vector<Segment> segments, RepSource source,
               std::string encoder_id, std::optional<std::int32_t> layer = std::nullopt)
        : matrix_(std::move(matrix)),
          segments_(std::move(segments)),
          source_(source),
          encoder_id_(std::move(encoder_id)),
          layer_(layer) {
        if (matrix_.rows() != segments_.size())
            fail(ErrorCode::ShapeMismatch, "representation rows differ from segment map length");
        if (matrix_.cols() == 0) fail(ErrorCode::ShapeMismatch, "representation width must be > 0");
        if (source_ == RepSource::Clean &&
            std::find(segments_.begin(), segments_.end(), Segment::Prompt) != segments_.end())
            fail(ErrorCode::InvalidPrompt, "a CLEAN representation cannot contain PROMPT rows");
    }

    const Matrix& matrix() const noexcept { return matrix_; }
    std::size_t n() const noexcept { return matrix_.rows(); }
    std::size_t d() const noexcept { return matrix_.cols(); }
    std::span<const Segment> segments() const noexcept { return segments_; }
    RepSource source() const noexcept { return source_; }
    const std::string& encoder_id() const noexcept { return encoder_id_; }
    std::optional<std::int32_t> layer() const noexcept { return layer_; }
    std::size_t k() const noexcept {
        return static_cast<std::size_t>(std::count(segments_.begin(), segments_.end(), Segment::Prompt));
    }

    friend bool operator==(const EncodedRep&, const EncodedRep&) = default;

private:
    Matrix matrix_;
    std::vector<Segment> segments_;
    RepSource source_;
    std::string encoder_id_;
    std::optional<std::int32_t> layer_;
};

/// A canonical keep-mask family: full, prompt, pads, clean, eos, pads-seg:i/n.
struct Condition {
    enum class Kind : std::uint8_t { Full, Prompt, Pads, Clean, Eos, PadsSegment };

    Kind kind = Kind::Full;
    std::uint32_t segment = 0;
    std::uint32_t segments = 0;

    static Condition full() { return {Kind::Full}; }
    static Condition prompt() { return {Kind::Prompt}; }
    static Condition pads() { return {Kind::Pads}; }
    static Condition clean() { return {Kind::Clean}; }
    static Condition eos() { return {Kind::Eos}; }
    static Condition pads_segment(std::uint32_t i, std::uint32_t n) {
        if (n == 0 || i >= n)
            fail(ErrorCode::UnknownCondition,
                 "pads-seg requires 0 <= i < n, got " + std::to_string(i) + "/" + std::to_string(n));
        return {Kind::PadsSegment, i, n};
    }

    std::string name() const {
        switch (kind) {
            case Kind::Full: return "full";
            case Kind::Prompt: return "prompt";
            case Kind::Pads: return "pads";
            case Kind::Clean: return "clean";
            case Kind::Eos: return "eos";
            case Kind::PadsSegment:
                return "pads-seg:" + std::to_string(segment) + "/" + std::to_string(segments);
        }
        return "?";
    }

    friend bool operator==(const Condition&, const Condition&) = default;
};

namespace detail {

inline std::optional<std::uint32_t> parse_u32(std::string_view s) {
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Accepts the canonical names plus `pads-seg:i/n` and `pads_seg(i,n)`.
inline Condition parse_condition(std::string_view name) {
    if (name == "full") return Condition::full();
    if (name == "prompt") return Condition::prompt();
    if (name == "pads") return Condition::pads();
    if (name == "clean") return Condition::clean();
    if (name == "eos") return Condition::eos();

    std::string_view i_str, n_str;
    if (name.starts_with("pads-seg:")) {
        auto body = name.substr(9);
        auto slash = body.find('/');
        if (slash != std::string_view::npos) {
            i_str = body.substr(0, slash);
            n_str = body.substr(slash + 1);
        }
    } else if (name.starts_with("pads_seg(") && name.ends_with(")")) {
        auto body = name.substr(9, name.size() - 10);
        auto comma = body.find(',');
        if (comma != std::string_view::npos) {
            i_str = body.substr(0, comma);
            n_str = body.substr(comma + 1);
        }
    }
    auto i = detail::parse_u32(i_str);
    auto n = detail::parse_u32(n_str);
    if (i && n) return Condition::pads_segment(*i, *n);
    fail(ErrorCode::UnknownCondition, "unknown condition '" + std::string(name) + "'");
}

struct KeepMask {
    std::vector<bool> keep;
    std::string name;

    std::size_t size() const noexcept { return keep.size(); }
    std::size_t kept() const noexcept {
        return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
    }
    KeepMask complement() const {
        KeepMask out{keep, "not(" + name + ")"};
        out.keep.flip();
        return out;
    }

    friend bool operator==(const KeepMask&, const KeepMask&) = default;
};

/// Half-open range [first, last) of positions within the pad run covered by
/// chunk `i` of `n`. Remainders go to the earliest chunks.
inline std::pair<std::size_t, std::size_t> pad_chunk_range(std::size_t pad_count, std::size_t i,
                                                           std::size_t n) {
    const std::size_t base = pad_count / n;
    const std::size_t rem = pad_count % n;
    const std::size_t first = i * base + std::min(i, rem);
    return {first, first + base + (i < rem ? 1 : 0)};
}

inline KeepMask make_keep_mask(std::span<const Segment> segments, const Condition& cond) {
    KeepMask mask{std::vector<bool>(segments.size(), false), cond.name()};
    const auto pad_count =
        static_cast<std::size_t>(std::count(segments.begin(), segments.end(), Segment::Pad));

    switch (cond.kind) {
        case Condition::Kind::Full:
            mask.keep.assign(segments.size(), true);
            break;
        case Condition::Kind::Clean:
            break;
        case Condition::Kind::Prompt:
            for (std::size_t i = 0; i < segments.size(); ++i)
                mask.keep[i] = segments[i] != Segment::Pad;
            break;
        case Condition::Kind::Pads:
            if (pad_count == 0) fail(ErrorCode::NoPadsAvailable, "prompt has no PAD indices");
            for (std::size_t i = 0; i < segments.size(); ++i)
                mask.keep[i] = segments[i] == Segment::Pad;
            break;
        case Condition::Kind::Eos: {
            auto it = std::find(segments.begin(), segments.end(), Segment::Eos);
            if (it == segments.end()) fail(ErrorCode::NoEos, "tokenizer emits no EOS token");
            mask.keep[static_cast<std::size_t>(it - segments.begin())] = true;
            break;
        }
        case Condition::Kind::PadsSegment: {
            if (cond.segments == 0 || cond.segment >= cond.segments)
                fail(ErrorCode::UnknownCondition, "invalid pads-seg indices");
            if (pad_count == 0 || pad_count < cond.segments)
                fail(ErrorCode::NoPadsAvailable,
                     std::to_string(pad_count) + " PAD indices cannot form " +
                         std::to_string(cond.segments) + " segments");
            auto [first, last] = pad_chunk_range(pad_count, cond.segment, cond.segments);
            std::size_t ordinal = 0;
            for (std::size_t i = 0; i < segments.size(); ++i) {
                if (segments[i] != Segment::Pad) continue;
                mask.keep[i] = ordinal >= first && ordinal < last;
                ++ordinal;
            }
            break;
        }
    }
    return mask;
}

inline KeepMask make_keep_mask(const PaddedPrompt& prompt, const Condition& cond) {
    return make_keep_mask(prompt.segments(), cond);
}

inline KeepMask make_keep_mask(const PaddedPrompt& prompt, std::string_view name) {
    return make_keep_mask(prompt.segments(), parse_condition(name));
}

inline void validate_rep_pair(const EncodedRep& a, const EncodedRep& b) {
    if (a.n() != b.n() || a.d() != b.d())
        fail(ErrorCode::ShapeMismatch, "representation shapes differ: " + std::to_string(a.n()) +
                                           "x" + std::to_string(a.d()) + " vs " +
                                           std::to_string(b.n()) + "x" + std::to_string(b.d()));
    if (a.encoder_id() != b.encoder_id())
        fail(ErrorCode::EncoderMismatch,
             "encoder ids differ: '" + a.encoder_id() + "' vs '" + b.encoder_id() + "'");
    if (a.layer() != b.layer()) fail(ErrorCode::LayerMismatch, "representation layers differ");
}

enum class Method : std::uint8_t { Ite, Idp };

constexpr std::string_view to_string(Method m) noexcept { return m == Method::Ite ? "ite" : "idp"; }

inline Method parse_method(std::string_view s) {
    if (s == "ite" || s == "ITE") return Method::Ite;
    if (s == "idp" || s == "IDP") return Method::Idp;
    fail(ErrorCode::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

struct InterventionDescriptor {
    Method method = Method::Ite;
    KeepMask keep_mask;
    std::string backend_id;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> extra;
};

}  // namespace padprobe
