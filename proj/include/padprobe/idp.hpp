#pragma once

// Intervention inside the diffusion process. Two generations advance in
// lockstep: the intervened stream (full prompt) and a donor stream (clean
// pads). Before each selected attention block, text rows outside the keep
// mask are overwritten with the donor's rows at that same block.

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "padprobe/ite.hpp"

namespace padprobe {

enum class LatentPolicy : std::uint8_t { SharedInitialLatent, Independent };

struct IdpPlan {
    IdpPlan() = default;
    explicit IdpPlan(KeepMask mask, std::optional<std::set<BlockPosition>> points = std::nullopt,
                     LatentPolicy policy = LatentPolicy::SharedInitialLatent)
        : keep_mask(std::move(mask)), replace_points(std::move(points)), latent_policy(policy) {}

    KeepMask keep_mask;
    // Blocks at which replacement happens; unset means every (step, layer).
    std::optional<std::set<BlockPosition>> replace_points;
    LatentPolicy latent_policy = LatentPolicy::SharedInitialLatent;

    bool replaces_at(BlockPosition p) const { return !replace_points || replace_points->count(p) > 0; }

    /// Every (step, layer) with step in [step_first, step_last] and layer in
    /// [layer_first, layer_last], inclusive.
    static std::set<BlockPosition> grid(std::size_t step_first, std::size_t step_last,
                                        std::size_t layer_first, std::size_t layer_last) {
        std::set<BlockPosition> points;
        for (std::size_t s = step_first; s <= step_last; ++s)
            for (std::size_t l = layer_first; l <= layer_last; ++l) points.insert({s, l});
        return points;
    }
};

struct IdpOptions {
    IteOptions streams;
    CaptureOptions capture;
    // Called at every block after replacement, before the block runs.
    std::function<void(BlockPosition, const Matrix& intervened, const Matrix& donor)> observer;
};

inline constexpr std::uint64_t kIndependentLatentTag = 0x696e646570;

inline std::uint64_t donor_seed(std::uint64_t seed, LatentPolicy policy) {
    return policy == LatentPolicy::SharedInitialLatent ? seed : detail::mix(seed, kIndependentLatentTag);
}

inline void check_idp_support(const Backend& backend) {
    const auto& caps = backend.capabilities();
    if (!caps.per_layer_text_stream && !caps.static_text_stream)
        fail(ErrorCode::UnsupportedPlan,
             "backend '" + backend.id() + "' exposes no per-layer text stream for IDP");
}

inline GenerationResult idp_generate(const Backend& backend, const PaddedPrompt& prompt, const IdpPlan& plan,
                                     std::uint64_t seed, const IdpOptions& options = {}) {
    check_idp_support(backend);
    const auto& cfg = backend.config();
    if (plan.keep_mask.size() != prompt.size())
        fail(ErrorCode::ShapeMismatch, "keep mask length differs from prompt length");
    if (plan.replace_points)
        for (const auto& p : *plan.replace_points)
            if (p.step >= cfg.steps || p.layer >= cfg.layers)
                fail(ErrorCode::UnsupportedPlan,
                     "replace point (" + std::to_string(p.step) + "," + std::to_string(p.layer) +
                         ") outside the " + std::to_string(cfg.steps) + "x" + std::to_string(cfg.layers) +
                         " grid");

    const Conditioning full = backend.encode(prompt);
    const Conditioning clean = encode_clean(backend, prompt.size());
    if (full.streams.size() != clean.streams.size())
        fail(ErrorCode::ShapeMismatch, "full and clean conditioning have different stream counts");
    for (std::size_t s = 0; s < full.streams.size(); ++s) validate_rep_pair(full.streams[s], clean.streams[s]);

    // Streams that never enter attention get the mask once, at the input.
    Conditioning input = full;
    for (std::size_t s = 1; s < full.streams.size(); ++s)
        if (stream_selected(options.streams, full.streams[s]))
            input.streams[s] = construct_mixed(full.streams[s], clean.streams[s], plan.keep_mask);
    const bool replace_primary = stream_selected(options.streams, full.primary());

    auto lock = backend.exclusive();
    auto intervened = backend.begin(input, seed, options.capture);
    auto donor = backend.begin(clean, donor_seed(seed, plan.latent_policy));

    const auto& keep = plan.keep_mask.keep;
    while (!intervened->done()) {
        const BlockPosition pos = intervened->position();
        Matrix& text = intervened->text_stream();
        const Matrix& donor_text = donor->text_stream();
        if (replace_primary && plan.replaces_at(pos)) {
            for (std::size_t i = 0; i < keep.size(); ++i) {
                if (keep[i]) continue;
                auto src = donor_text.row(i);
                std::copy(src.begin(), src.end(), text.row(i).begin());
            }
        }
        if (options.observer) options.observer(pos, text, donor_text);
        intervened->advance();
        donor->advance();
    }

    GenerationResult result = intervened->finish();
    result.descriptor = make_descriptor(Method::Idp, backend, plan.keep_mask, seed);
    result.descriptor->extra["latent_policy"] =
        plan.latent_policy == LatentPolicy::SharedInitialLatent ? "shared" : "independent";
    return result;
}

struct LeakageEntry {
    std::size_t step = 0;
    std::size_t layer = 0;
    double pad_row_delta_norm = 0.0;
};

struct LeakageReport {
    std::vector<LeakageEntry> entries;

    bool any_positive() const {
        for (const auto& e : entries)
            if (e.pad_row_delta_norm > 0.0) return true;
        return false;
    }
    bool all_zero() const {
        for (const auto& e : entries)
            if (e.pad_row_delta_norm != 0.0) return false;
        return true;
    }
};

/// Runs IDP with keep=pads and measures, at each block, how far the kept
/// pad rows have moved away from the donor's pad rows.
inline LeakageReport register_leakage_probe(const Backend& backend, const PaddedPrompt& prompt,
                                            std::uint64_t seed) {
    if (!backend.capabilities().per_layer_text_stream)
        fail(ErrorCode::UnsupportedPlan,
             "leakage probe needs an MM-DiT-style backend; '" + backend.id() + "' has a static text stream");
    IdpPlan plan{make_keep_mask(prompt, Condition::pads())};
    LeakageReport report;
    IdpOptions options;
    const auto segments = prompt.segments();
    options.observer = [&](BlockPosition pos, const Matrix& text, const Matrix& donor) {
        double ss = 0.0;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (segments[i] != Segment::Pad) continue;
            for (std::size_t c = 0; c < text.cols(); ++c) {
                const double diff = static_cast<double>(text(i, c)) - donor(i, c);
                ss += diff * diff;
            }
        }
        report.entries.push_back({pos.step, pos.layer, std::sqrt(ss)});
    };
    idp_generate(backend, prompt, plan, seed, options);
    return report;
}

inline void write_leakage_csv(std::ostream& os, const LeakageReport& report) {
    os << "step,layer,pad_row_delta_norm\n";
    char buf[64];
    for (const auto& e : report.entries) {
        std::snprintf(buf, sizeof buf, "%.9g", e.pad_row_delta_norm);
        os << e.step << ',' << e.layer << ',' << buf << '\n';
    }
}

}  // namespace padprobe
