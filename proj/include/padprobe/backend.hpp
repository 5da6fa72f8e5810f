#pragma once

// Pipeline abstraction shared by the toy backends and external adapters.
//
// A backend tokenizes, encodes and generates. Generation is exposed as a
// stepwise GenerationContext so that interventions can rewrite the text rows
// entering every attention block; `generate` is the run-to-completion path.

#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "padprobe/detail/hash.hpp"
#include "padprobe/reptypes.hpp"

namespace padprobe {

enum class BackendKind : std::uint8_t { ToyXattn, ToyMmdit, External };

constexpr std::string_view to_string(BackendKind k) noexcept {
    switch (k) {
        case BackendKind::ToyXattn: return "toy_xattn";
        case BackendKind::ToyMmdit: return "toy_mmdit";
        case BackendKind::External: return "external";
    }
    return "?";
}

inline BackendKind parse_backend_kind(std::string_view s) {
    if (s == "toy_xattn" || s == "TOY_XATTN") return BackendKind::ToyXattn;
    if (s == "toy_mmdit" || s == "TOY_MMDIT") return BackendKind::ToyMmdit;
    if (s == "external" || s == "EXTERNAL") return BackendKind::External;
    fail(ErrorCode::ConfigError, "unknown backend kind '" + std::string(s) + "'");
}

struct BackendConfig {
    std::string id = "toy";
    BackendKind kind = BackendKind::ToyMmdit;
    std::size_t n = 16;             // fixed prompt length
    std::size_t d = 8;              // text width
    std::size_t image_tokens = 16;
    std::size_t layers = 2;
    std::size_t steps = 4;
    std::uint64_t weight_seed = 0;
    std::optional<double> lora_alpha;
    bool special_tokens = true;     // tokenizer emits BOS/EOS
    double qk_gain = 1.0;           // multiplies attention logits; 0 gives uniform maps
    std::map<std::string, std::string> external;

    void validate() const {
        if (n < 1 || d < 1 || layers < 1 || steps < 1)
            fail(ErrorCode::ConfigError, "N, d, layers and steps must all be >= 1");
        if (kind != BackendKind::External && image_tokens < 1)
            fail(ErrorCode::ConfigError, "image_tokens must be >= 1");
        if (special_tokens && n < 2)
            fail(ErrorCode::ConfigError, "N must leave room for BOS and EOS");
        if (lora_alpha && (*lora_alpha < 0.0 || *lora_alpha > 1.0))
            fail(ErrorCode::ConfigError, "lora_alpha must lie in [0, 1]");
    }

    /// Canonical key=value serialization; the id is excluded so that renaming
    /// a registry entry does not change provenance.
    std::string canonical() const {
        auto real = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        std::string s;
        s += "kind=" + std::string(to_string(kind));
        s += ";N=" + std::to_string(n);
        s += ";d=" + std::to_string(d);
        s += ";image_tokens=" + std::to_string(image_tokens);
        s += ";layers=" + std::to_string(layers);
        s += ";steps=" + std::to_string(steps);
        s += ";weight_seed=" + std::to_string(weight_seed);
        s += ";lora_alpha=" + (lora_alpha ? real(*lora_alpha) : std::string("none"));
        s += ";special_tokens=" + std::string(special_tokens ? "1" : "0");
        s += ";qk_gain=" + real(qk_gain);
        for (const auto& [key, value] : external) s += ";external." + key + "=" + value;
        return s;
    }

    std::string hash() const { return detail::hex64(detail::fnv1a64(canonical())); }
};

struct Capabilities {
    bool encoder_output_conditioning = false;
    bool per_layer_text_stream = false;  // text rows evolve per block (MM-DiT)
    bool static_text_stream = false;     // text rows never change (cross-attention)
    bool attention_capture = false;
    bool lora_scaling = false;
};

/// One or more encoder streams for a single prompt. Stream 0 is the stream
/// that enters attention; all streams share the prompt's segment map.
struct Conditioning {
    std::vector<EncodedRep> streams;

    const EncodedRep& primary() const {
        if (streams.empty()) fail(ErrorCode::BackendError, "conditioning has no streams");
        return streams.front();
    }
    std::size_t n() const { return primary().n(); }
};

enum class TokenKind : std::uint8_t { Text, Image };

struct AttentionRecord {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    Matrix map;  // queries x keys, row-stochastic
    std::vector<TokenKind> query_kind;
    std::vector<TokenKind> key_kind;
};

struct CaptureFilter {
    std::optional<std::set<std::size_t>> steps;
    std::optional<std::set<std::size_t>> layers;
    std::optional<std::set<std::size_t>> heads;

    bool accepts(std::size_t step, std::size_t layer, std::size_t head) const {
        return (!steps || steps->count(step)) && (!layers || layers->count(layer)) &&
               (!heads || heads->count(head));
    }
};

struct CaptureOptions {
    bool attention = false;
    CaptureFilter filter;
};

struct GenerationResult {
    std::vector<float> features;  // unit-normalized image feature vector
    Matrix latent;                // final image rows
    std::uint64_t seed = 0;
    std::string backend_id;
    std::string config_hash;
    std::vector<AttentionRecord> attention;
    std::optional<InterventionDescriptor> descriptor;
};

struct BlockPosition {
    std::size_t step = 0;
    std::size_t layer = 0;
    friend auto operator<=>(const BlockPosition&, const BlockPosition&) = default;
};

/// A single in-flight generation, advanced one attention block at a time.
///
/// Before each `advance()`, `text_stream()` holds the text rows that will
/// enter the next block; callers may overwrite rows to intervene.
class GenerationContext {
public:
    virtual ~GenerationContext() = default;

    virtual bool done() const = 0;
    virtual BlockPosition position() const = 0;
    virtual Matrix& text_stream() = 0;
    virtual const Matrix& image_stream() const = 0;
    virtual void advance() = 0;
    virtual GenerationResult finish() = 0;
};

class Backend {
public:
    Backend(BackendConfig config, Capabilities caps)
        : config_(std::move(config)), caps_(caps), hash_(config_.hash()) {}
    virtual ~Backend() = default;

    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    const BackendConfig& config() const noexcept { return config_; }
    const std::string& id() const noexcept { return config_.id; }
    const std::string& config_hash() const noexcept { return hash_; }
    const Capabilities& capabilities() const noexcept { return caps_; }

    virtual PaddedPrompt tokenize(std::string_view text) const = 0;
    virtual Conditioning encode(const PaddedPrompt& prompt) const = 0;

    /// Encoding of the empty prompt: pads only, plus BOS/EOS if the tokenizer
    /// forces them.
    virtual Conditioning encode_clean() const {
        Conditioning c = encode(tokenize(""));
        for (auto& s : c.streams)
            s = EncodedRep(s.matrix(), {s.segments().begin(), s.segments().end()}, RepSource::Clean,
                           s.encoder_id(), s.layer());
        return c;
    }

    /// Starts a stepwise generation. Callers must hold `exclusive()`.
    virtual std::unique_ptr<GenerationContext> begin(const Conditioning&, std::uint64_t /*seed*/,
                                                     const CaptureOptions& = {}) const {
        fail(ErrorCode::UnsupportedCapability, "backend '" + id() + "' has no stepwise generation");
    }

    /// Run-to-completion generation, serialized per handle.
    GenerationResult generate(const Conditioning& cond, std::uint64_t seed,
                              const CaptureOptions& capture = {}) const {
        auto lock = exclusive();
        return generate_unlocked(cond, seed, capture);
    }

    std::unique_lock<std::mutex> exclusive() const { return std::unique_lock(generation_mutex_); }

    /// Returns a handle with adapter weights scaled by `alpha`.
    virtual std::shared_ptr<const Backend> with_lora_scale(double /*alpha*/) const {
        fail(ErrorCode::UnsupportedCapability, "backend '" + id() + "' does not support LoRA scaling");
    }

protected:
    virtual GenerationResult generate_unlocked(const Conditioning& cond, std::uint64_t seed,
                                               const CaptureOptions& capture) const {
        auto ctx = begin(cond, seed, capture);
        while (!ctx->done()) ctx->advance();
        return ctx->finish();
    }

private:
    BackendConfig config_;
    Capabilities caps_;
    std::string hash_;
    mutable std::mutex generation_mutex_;
};

using BackendHandle = std::shared_ptr<const Backend>;

}  // namespace padprobe
