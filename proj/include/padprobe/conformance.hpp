#pragma once

// Capability self-test for backend handles. Failures become report entries;
// nothing here throws for a misbehaving adapter.

#include <cmath>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "padprobe/attnprobe.hpp"
#include "padprobe/backend.hpp"

namespace padprobe {

enum class CheckStatus : std::uint8_t { Pass, Fail, Gap };

constexpr std::string_view to_string(CheckStatus s) noexcept {
    switch (s) {
        case CheckStatus::Pass: return "pass";
        case CheckStatus::Fail: return "fail";
        case CheckStatus::Gap: return "gap";
    }
    return "?";
}

struct ConformanceEntry {
    std::string capability;
    CheckStatus status = CheckStatus::Pass;
    std::string detail;
};

struct ConformanceReport {
    std::string backend_id;
    std::string config_hash;
    std::vector<ConformanceEntry> entries;

    bool passed() const {
        for (const auto& e : entries)
            if (e.status == CheckStatus::Fail) return false;
        return true;
    }
    const ConformanceEntry* find(std::string_view capability) const {
        for (const auto& e : entries)
            if (e.capability == capability) return &e;
        return nullptr;
    }
};

inline void write_conformance(std::ostream& os, const ConformanceReport& r) {
    os << "backend " << r.backend_id << " config " << r.config_hash << '\n';
    for (const auto& e : r.entries)
        os << "  " << e.capability << ": " << to_string(e.status) << (e.detail.empty() ? "" : " - ") << e.detail
           << '\n';
    os << (r.passed() ? "conformance: pass" : "conformance: fail") << '\n';
}

namespace detail {

template <class Fn>
ConformanceEntry run_check(std::string capability, Fn&& fn) {
    try {
        std::string detail = fn();
        return {std::move(capability), CheckStatus::Pass, std::move(detail)};
    } catch (const Error& e) {
        return {std::move(capability), CheckStatus::Fail, std::string(e.code_name()) + ": " + e.what()};
    } catch (const std::exception& e) {
        return {std::move(capability), CheckStatus::Fail, e.what()};
    }
}

[[noreturn]] inline void check_failed(const std::string& why) { fail(ErrorCode::BackendError, why); }

}  // namespace detail

inline ConformanceReport adapter_conformance(const Backend& backend) {
    ConformanceReport report{backend.id(), backend.config_hash(), {}};
    const auto& caps = backend.capabilities();
    const auto& cfg = backend.config();
    const std::string probe_text = "a small red house beside a quiet lake";
    constexpr std::uint64_t seed = 1;

    report.entries.push_back(detail::run_check("shape", [&] {
        const auto prompt = backend.tokenize(probe_text);
        if (prompt.size() != cfg.n) detail::check_failed("tokenizer length != N");
        const auto cond = backend.encode(prompt);
        if (cond.streams.empty()) detail::check_failed("encode produced no streams");
        for (const auto& s : cond.streams)
            if (s.n() != cfg.n) detail::check_failed("stream '" + s.encoder_id() + "' has wrong row count");
        if (cond.primary().d() != cfg.d) detail::check_failed("primary stream width != d");
        const auto clean = backend.encode_clean();
        if (clean.primary().k() != 0) detail::check_failed("clean encoding contains PROMPT rows");
        return std::string("N=") + std::to_string(cfg.n) + " d=" + std::to_string(cfg.d) +
               " streams=" + std::to_string(cond.streams.size());
    }));

    report.entries.push_back(detail::run_check("determinism", [&] {
        const auto prompt = backend.tokenize(probe_text);
        const auto a = backend.encode(prompt);
        const auto b = backend.encode(prompt);
        for (std::size_t s = 0; s < a.streams.size(); ++s)
            if (!(a.streams[s] == b.streams[s])) detail::check_failed("encode is not deterministic");
        const auto g1 = backend.generate(a, seed);
        const auto g2 = backend.generate(a, seed);
        if (g1.features != g2.features) detail::check_failed("generate is not deterministic under a fixed seed");
        return std::string("encode and generate bit-reproducible");
    }));

    if (caps.encoder_output_conditioning) {
        report.entries.push_back(detail::run_check("encoder_output_conditioning", [&] {
            const auto g = backend.generate(backend.encode_clean(), seed);
            if (g.features.empty()) detail::check_failed("generation returned no features");
            for (float v : g.features)
                if (!std::isfinite(v)) detail::check_failed("non-finite feature value");
            return std::string("generation from supplied conditioning");
        }));
    } else {
        report.entries.push_back({"encoder_output_conditioning", CheckStatus::Gap, "not advertised; ITE unavailable"});
    }

    if (caps.attention_capture) {
        report.entries.push_back(detail::run_check("attention_capture", [&] {
            const auto recs = record_attention(backend, backend.tokenize(probe_text), seed);
            if (recs.empty()) detail::check_failed("no attention records captured");
            double worst = 0.0;
            for (const auto& r : recs) {
                if (r.query_kind.size() != r.map.rows() || r.key_kind.size() != r.map.cols())
                    detail::check_failed("record labels do not match map shape");
                worst = std::max(worst, stochasticity_error(r));
            }
            if (!(worst <= 1e-5))
                detail::check_failed("attention rows are not stochastic (max row-sum error " + std::to_string(worst) + ")");
            return std::to_string(recs.size()) + " records row-stochastic";
        }));
    } else {
        report.entries.push_back({"attention_capture", CheckStatus::Gap, "not advertised; attn probing unavailable"});
    }

    if (caps.per_layer_text_stream || caps.static_text_stream) {
        report.entries.push_back(detail::run_check(caps.per_layer_text_stream ? "per_layer_text_stream" : "static_text_stream", [&] {
            const auto cond = backend.encode(backend.tokenize(probe_text));
            auto lock = backend.exclusive();
            auto ctx = backend.begin(cond, seed);
            std::size_t blocks = 0;
            bool changed = false;
            while (!ctx->done()) {
                const Matrix& text = ctx->text_stream();
                if (text.rows() != cfg.n) detail::check_failed("text stream has wrong row count");
                if (!(text == cond.primary().matrix())) changed = true;
                ctx->advance();
                ++blocks;
            }
            if (blocks != cfg.steps * cfg.layers)
                detail::check_failed("visited " + std::to_string(blocks) + " blocks, expected steps*layers");
            if (caps.static_text_stream && changed) detail::check_failed("static text stream changed during diffusion");
            return std::to_string(blocks) + " blocks" + (caps.per_layer_text_stream ? "" : ", text constant");
        }));
    } else {
        report.entries.push_back({"per_layer_text_stream", CheckStatus::Gap,
                                  "not advertised; IDP calls fail with E_UNSUPPORTED_PLAN"});
    }

    if (caps.lora_scaling) {
        report.entries.push_back(detail::run_check("lora_scaling", [&] {
            std::set<std::string> hashes;
            for (double alpha : {1.0, 0.5, 0.25}) hashes.insert(backend.with_lora_scale(alpha)->config_hash());
            if (hashes.size() != 3) detail::check_failed("alpha sweep does not yield distinct config hashes");
            if (!cfg.lora_alpha) {
                const auto base = backend.encode(backend.tokenize(probe_text));
                const auto zero = backend.with_lora_scale(0.0);
                const auto scaled = zero->encode(zero->tokenize(probe_text));
                if (backend.generate(base, seed).features != zero->generate(scaled, seed).features)
                    detail::check_failed("alpha=0 does not reproduce the base model");
            }
            return std::string("alpha sweep hashes distinct");
        }));
    } else {
        report.entries.push_back({"lora_scaling", CheckStatus::Gap, "not advertised"});
    }
    return report;
}

}  // namespace padprobe
