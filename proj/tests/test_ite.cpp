#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace padprobe;

namespace {

EncodedRep column_rep(std::initializer_list<float> values, RepSource src, const std::vector<Segment>& segs) {
    return EncodedRep(Matrix(values.size(), 1, std::vector<float>(values)), segs, src, "toy");
}

}  // namespace

TEST(ConstructMixed, HandFixtures) {
    const std::vector<Segment> segs{Segment::Prompt, Segment::Prompt, Segment::Pad, Segment::Pad};
    const std::vector<Segment> clean_segs(4, Segment::Pad);
    const auto full = column_rep({1, 2, 3, 4}, RepSource::Full, segs);
    const auto clean = column_rep({9, 9, 9, 9}, RepSource::Clean, clean_segs);
    auto values = [](const EncodedRep& r) { return r.matrix().values(); };
    EXPECT_EQ(values(construct_mixed(full, clean, KeepMask{{true, true, false, false}, "prompt"})),
              (std::vector<float>{1, 2, 9, 9}));
    EXPECT_EQ(values(construct_mixed(full, clean, KeepMask{{false, false, true, true}, "pads"})),
              (std::vector<float>{9, 9, 3, 4}));
    const auto all = construct_mixed(full, clean, KeepMask{{true, true, true, true}, "full"});
    EXPECT_EQ(all.matrix(), full.matrix());
    EXPECT_EQ(all.source(), RepSource::Mixed);
    EXPECT_PADPROBE_ERROR(construct_mixed(full, clean, KeepMask{{true}, "x"}), ErrorCode::ShapeMismatch);
}

TEST(ConstructMixed, MatchesRowOracle) {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
        const std::vector<Segment> segs(n, Segment::Pad);
        const auto f = testutil::random_matrix(rng, n, d);
        const auto c = testutil::random_matrix(rng, n, d);
        KeepMask mask;
        for (std::size_t i = 0; i < n; ++i) mask.keep.push_back(rng() & 1);
        const auto mixed = construct_mixed(EncodedRep(f, segs, RepSource::Full, "e"),
                                           EncodedRep(c, segs, RepSource::Clean, "e"), mask);
        ASSERT_EQ(mixed.matrix(), oracle::mix_rows(f, c, mask.keep));
    }
}

TEST(IteGenerate, FullAndCleanIdentities) {
    for (auto b : {std::shared_ptr<const ToyBackend>(testutil::xattn()), testutil::mmdit()}) {
        const auto p = b->tokenize("a small red house beside a lake");
        const auto plain = b->generate(b->encode(p), 7);
        EXPECT_EQ(ite_generate(*b, p, Condition::full(), 7).generation.features, plain.features);
        const auto clean = b->generate(b->encode_clean(), 7);
        EXPECT_EQ(ite_generate(*b, p, Condition::clean(), 7).generation.features, clean.features);
    }
}

TEST(IteGenerate, PromptVersusPads) {
    auto b = testutil::mmdit();
    const auto p = b->tokenize("blue river stone");
    ASSERT_EQ(p.k(), 3u);
    const auto a = ite_generate(*b, p, Condition::prompt(), 7);
    const auto c = ite_generate(*b, p, Condition::pads(), 7);
    EXPECT_NE(a.generation.features, c.generation.features);
    EXPECT_EQ(a.descriptor.keep_mask.kept() + c.descriptor.keep_mask.kept(), p.size());
    EXPECT_EQ(a.descriptor.method, Method::Ite);
    EXPECT_EQ(a.descriptor.extra.at("condition"), "prompt");
    EXPECT_EQ(a.descriptor.extra.at("config_hash"), b->config_hash());
    ASSERT_TRUE(a.generation.descriptor);
    EXPECT_EQ(a.generation.descriptor->seed, 7u);
}

TEST(IteGenerate, CleanCacheHit) {
    CleanRepCache cache;
    auto b = testutil::xattn(42);
    const auto first = encode_clean(*b, 16, cache);
    EXPECT_EQ(cache.size(), 1u);
    const auto second = encode_clean(*b, 16, cache);
    EXPECT_EQ(cache.size(), 1u);
    EXPECT_EQ(first.primary(), second.primary());
}

TEST(PadSegmentSweep, Results) {
    auto b = testutil::xattn();
    const auto p = b->tokenize("cat");
    ASSERT_EQ(p.pad_count(), 13u);
    const auto results = pad_segment_sweep(*b, p, 5, 1);
    ASSERT_EQ(results.size(), 5u);
    const std::size_t sizes[] = {3, 3, 3, 2, 2};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(results[i].descriptor.keep_mask.kept(), sizes[i]);
    const auto full = PaddedPrompt::synthetic(14, 16);
    EXPECT_PADPROBE_ERROR(pad_segment_sweep(*b, full, 5, 1), ErrorCode::NoPadsAvailable);
}

TEST(IteGenerate, PerStreamOverride) {
    // Two-stream adapter: stream 0 is the toy encoder, stream 1 a second
    // toy encoder with different weights.
    auto main_enc = testutil::mmdit(0);
    auto aux_enc = testutil::mmdit(9);
    AdapterCallbacks cb;
    cb.tokenize = [main_enc](std::string_view t) { return main_enc->tokenize(t); };
    cb.encode = [main_enc, aux_enc](const PaddedPrompt& p) {
        Conditioning c = main_enc->encode(p);
        c.streams.push_back(aux_enc->encode(p).primary());
        return c;
    };
    cb.begin = [main_enc](const Conditioning& c, std::uint64_t s, const CaptureOptions& cap) {
        return main_enc->begin(c, s, cap);
    };
    Capabilities caps;
    caps.encoder_output_conditioning = true;
    caps.per_layer_text_stream = true;
    BackendConfig cfg = testutil::toy(BackendKind::External);
    cfg.id = "two-stream";
    cfg.external["adapter"] = "inline";
    const CallbackAdapter adapter(cfg, caps, cb);

    const auto p = adapter.tokenize("night sky");
    const std::string aux_id = aux_enc->encoder_id() + "";
    ASSERT_NE(aux_id, main_enc->encoder_id());
    IteOptions only_aux;
    only_aux.streams = std::set<std::string>{aux_id};
    const auto r = ite_generate(adapter, p, Condition::clean(), 4, only_aux);
    EXPECT_EQ(r.mixed.streams[0].matrix(), r.full.streams[0].matrix());
    EXPECT_EQ(r.mixed.streams[1].matrix(), r.clean.streams[1].matrix());
    EXPECT_EQ(r.generation.features, adapter.generate(r.full, 4).features);

    const auto every = ite_generate(adapter, p, Condition::clean(), 4);
    EXPECT_EQ(every.mixed.streams[0].matrix(), every.clean.streams[0].matrix());
    EXPECT_EQ(every.mixed.streams[1].matrix(), every.clean.streams[1].matrix());
}
