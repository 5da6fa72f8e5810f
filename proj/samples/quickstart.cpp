// Runs every condition on one prompt with both toy backends and prints how
// close each intervened image is to the unmodified one.

#include <cstdio>

#include "padprobe/padprobe.hpp"

int main(int argc, char** argv) {
    using namespace padprobe;
    const std::string text = argc > 1 ? argv[1] : "a red house beside a quiet lake";
    const std::uint64_t seed = 7;

    for (const char* id : {"toy-xattn", "toy-mmdit"}) {
        const auto backend = BackendRegistry::builtin().make(id);
        const auto prompt = backend->tokenize(text);
        const auto reference = backend->generate(backend->encode(prompt), seed);
        std::printf("%s  k=%zu pads=%zu\n", id, prompt.k(), prompt.pad_count());
        for (const char* name : {"full", "prompt", "pads", "eos", "clean"}) {
            const auto cond = parse_condition(name);
            const auto ite = ite_generate(*backend, prompt, cond, seed).generation;
            const auto idp = idp_generate(*backend, prompt, IdpPlan(make_keep_mask(prompt, cond)), seed);
            std::printf("  %-7s ite %.4f  idp %.4f\n", name, clip_score_image_ref(ite.features, reference.features),
                        clip_score_image_ref(idp.features, reference.features));
        }
        if (backend->capabilities().per_layer_text_stream) {
            const auto leak = register_leakage_probe(*backend, prompt, seed);
            double peak = 0.0;
            for (const auto& e : leak.entries) peak = std::max(peak, e.pad_row_delta_norm);
            std::printf("  pad-row leakage peak %.4f\n", peak);
        }
    }
}
