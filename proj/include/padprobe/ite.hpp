#pragma once

// Intervention at the text-encoder output: keep the masked rows of the full
// prompt's encoding, replace the rest with rows of the clean-pads encoding,
// and generate from the mixture.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "padprobe/backend.hpp"

namespace padprobe {

/// Process-wide cache of clean-pads encodings keyed by (config hash, N).
class CleanRepCache {
public:
    static CleanRepCache& global() {
        static CleanRepCache cache;
        return cache;
    }

    std::shared_ptr<const Conditioning> get(const Backend& backend) {
        const auto key = std::make_pair(backend.config_hash(), backend.config().n);
        {
            std::lock_guard lock(mutex_);
            if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        }
        auto clean = std::make_shared<const Conditioning>(backend.encode_clean());
        std::lock_guard lock(mutex_);
        return entries_.try_emplace(key, std::move(clean)).first->second;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

    void clear() {
        std::lock_guard lock(mutex_);
        entries_.clear();
    }

private:
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::size_t>, std::shared_ptr<const Conditioning>> entries_;
};

inline Conditioning encode_clean(const Backend& backend, std::size_t n,
                                 CleanRepCache& cache = CleanRepCache::global()) {
    if (n != backend.config().n)
        fail(ErrorCode::LengthMismatch, "clean length " + std::to_string(n) + " != backend N " +
                                            std::to_string(backend.config().n));
    return *cache.get(backend);
}

/// Row i comes from `full` when mask.keep[i], otherwise from `clean`.
inline EncodedRep construct_mixed(const EncodedRep& full, const EncodedRep& clean, const KeepMask& mask) {
    validate_rep_pair(full, clean);
    if (mask.size() != full.n())
        fail(ErrorCode::ShapeMismatch, "keep mask length " + std::to_string(mask.size()) +
                                           " != representation rows " + std::to_string(full.n()));
    Matrix out = full.matrix();
    for (std::size_t i = 0; i < full.n(); ++i) {
        if (mask.keep[i]) continue;
        auto src = clean.matrix().row(i);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return EncodedRep(std::move(out), {full.segments().begin(), full.segments().end()}, RepSource::Mixed,
                      full.encoder_id(), full.layer());
}

struct IteOptions {
    // Encoder ids to intervene on; unset means every stream.
    std::optional<std::set<std::string>> streams;
};

inline bool stream_selected(const IteOptions& options, const EncodedRep& rep) {
    return !options.streams || options.streams->count(rep.encoder_id()) > 0;
}

inline Conditioning construct_mixed(const Conditioning& full, const Conditioning& clean,
                                    const KeepMask& mask, const IteOptions& options = {}) {
    if (full.streams.size() != clean.streams.size())
        fail(ErrorCode::ShapeMismatch, "full and clean conditioning have different stream counts");
    Conditioning out;
    for (std::size_t s = 0; s < full.streams.size(); ++s) {
        const auto& f = full.streams[s];
        if (stream_selected(options, f)) {
            out.streams.push_back(construct_mixed(f, clean.streams[s], mask));
        } else {
            validate_rep_pair(f, clean.streams[s]);
            out.streams.push_back(EncodedRep(f.matrix(), {f.segments().begin(), f.segments().end()},
                                             RepSource::Mixed, f.encoder_id(), f.layer()));
        }
    }
    return out;
}

struct IteResult {
    Conditioning full;
    Conditioning clean;
    Conditioning mixed;
    GenerationResult generation;
    InterventionDescriptor descriptor;
};

inline InterventionDescriptor make_descriptor(Method method, const Backend& backend, KeepMask mask,
                                              std::uint64_t seed) {
    InterventionDescriptor d{method, std::move(mask), backend.id(), seed, {}};
    d.extra["condition"] = d.keep_mask.name;
    d.extra["config_hash"] = backend.config_hash();
    if (backend.config().lora_alpha) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *backend.config().lora_alpha);
        d.extra["lora_alpha"] = buf;
    }
    return d;
}

inline IteResult ite_generate(const Backend& backend, const PaddedPrompt& prompt, const Condition& condition,
                              std::uint64_t seed, const IteOptions& options = {}) {
    if (!backend.capabilities().encoder_output_conditioning)
        fail(ErrorCode::UnsupportedCapability,
             "backend '" + backend.id() + "' does not accept encoder-output conditioning");
    KeepMask mask = make_keep_mask(prompt, condition);
    Conditioning full = backend.encode(prompt);
    Conditioning clean = encode_clean(backend, prompt.size());
    Conditioning mixed = construct_mixed(full, clean, mask, options);

    // The full condition bypasses mixing so it matches standard generation exactly.
    GenerationResult gen = condition.kind == Condition::Kind::Full ? backend.generate(full, seed)
                                                                    : backend.generate(mixed, seed);
    auto descriptor = make_descriptor(Method::Ite, backend, std::move(mask), seed);
    gen.descriptor = descriptor;
    return {std::move(full), std::move(clean), std::move(mixed), std::move(gen), std::move(descriptor)};
}

inline IteResult ite_generate(const Backend& backend, const PaddedPrompt& prompt, std::string_view condition,
                              std::uint64_t seed, const IteOptions& options = {}) {
    return ite_generate(backend, prompt, parse_condition(condition), seed, options);
}

inline std::vector<IteResult> pad_segment_sweep(const Backend& backend, const PaddedPrompt& prompt,
                                                std::size_t n_segments, std::uint64_t seed,
                                                const IteOptions& options = {}) {
    if (n_segments == 0) fail(ErrorCode::UnknownCondition, "segment count must be >= 1");
    if (prompt.pad_count() == 0 || prompt.pad_count() < n_segments)
        fail(ErrorCode::NoPadsAvailable, std::to_string(prompt.pad_count()) + " PAD indices cannot form " +
                                             std::to_string(n_segments) + " segments");
    std::vector<IteResult> out;
    out.reserve(n_segments);
    for (std::size_t i = 0; i < n_segments; ++i)
        out.push_back(ite_generate(
            backend, prompt,
            Condition::pads_segment(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(n_segments)),
            seed, options));
    return out;
}

}  // namespace padprobe
