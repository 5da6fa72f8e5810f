// Test adapter loaded through dlopen. Behaviour is picked by external.mode:
//   ok                wraps a toy MM-DiT, supports LoRA scaling
//   broken_attention  attention rows scaled so they no longer sum to 1
//   generate_only     no stepwise generation, no text-stream capability
//   throw             constructor fails

#include <memory>
#include <stdexcept>

#include "padprobe/registry.hpp"

namespace {

using namespace padprobe;

BackendConfig toy_config(const BackendConfig& cfg, std::uint64_t seed_offset) {
    BackendConfig t = cfg;
    t.kind = BackendKind::ToyMmdit;
    t.external.clear();
    t.lora_alpha.reset();
    t.weight_seed = cfg.weight_seed + seed_offset;
    return t;
}

Backend* create(const BackendConfig& cfg) {
    const auto it = cfg.external.find("mode");
    const std::string mode = it == cfg.external.end() ? "ok" : it->second;
    if (mode == "throw") throw std::runtime_error("fake adapter refused to start");

    std::shared_ptr<const ToyBackend> base = ToyBackend::create(toy_config(cfg, 0));
    std::shared_ptr<const ToyBackend> lora = ToyBackend::create(toy_config(cfg, 1000));

    Capabilities caps;
    caps.encoder_output_conditioning = true;
    caps.attention_capture = mode != "generate_only";
    caps.per_layer_text_stream = mode != "generate_only";
    caps.lora_scaling = mode == "ok";

    AdapterCallbacks cb;
    cb.tokenize = [base](std::string_view text) { return base->tokenize(text); };
    cb.encode = [base](const PaddedPrompt& p) { return base->encode(p); };
    const auto alpha = cfg.lora_alpha;
    cb.generate = [base, lora, alpha, mode](const Conditioning& c, std::uint64_t seed, const CaptureOptions& cap) {
        GenerationResult r = base->generate(c, seed, cap);
        if (mode == "broken_attention")
            for (auto& rec : r.attention)
                for (float& v : rec.map.data()) v *= 1.5f;
        if (alpha && *alpha != 0.0) {
            const auto other = lora->generate(c, seed).features;
            std::vector<float> blend(r.features.size());
            for (std::size_t i = 0; i < blend.size(); ++i)
                blend[i] = static_cast<float>((1.0 - *alpha) * r.features[i] + *alpha * other[i]);
            r.features = linalg::normalized(blend);
        }
        return r;
    };
    if (mode != "generate_only")
        cb.begin = [base](const Conditioning& c, std::uint64_t seed, const CaptureOptions& cap) {
            return base->begin(c, seed, cap);
        };
    if (mode == "ok")
        cb.with_lora_scale = [cfg](double a) -> std::shared_ptr<const Backend> {
            BackendConfig scaled = cfg;
            scaled.lora_alpha = a;
            return std::shared_ptr<const Backend>(create(scaled));
        };
    return new CallbackAdapter(cfg, caps, std::move(cb));
}

}  // namespace

extern "C" padprobe::Backend* padprobe_create_adapter(const padprobe::BackendConfig& cfg) { return create(cfg); }
