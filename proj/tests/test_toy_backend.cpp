#include <numeric>
#include <random>

#include "test_util.hpp"

using namespace padprobe;

TEST(ToyTokenizer, LayoutAndTruncation) {
    auto b = testutil::mmdit();
    const auto p = b->tokenize("A red, House!");
    EXPECT_EQ(p.size(), 16u);
    EXPECT_EQ(p.k(), 3u);
    EXPECT_EQ(p.segments()[0], Segment::Bos);
    EXPECT_EQ(p.segments()[4], Segment::Eos);
    EXPECT_EQ(p.pad_count(), 11u);
    EXPECT_EQ(p.pieces()[1], "a");
    EXPECT_EQ(p.pieces()[5], "<pad>");
    EXPECT_EQ(b->tokenize("a red house").tokens()[2], p.tokens()[2]);

    std::string long_text;
    for (int i = 0; i < 40; ++i) long_text += "word ";
    const auto t = b->tokenize(long_text);
    EXPECT_EQ(t.size(), 16u);
    EXPECT_EQ(t.k(), 14u);
    EXPECT_EQ(t.pad_count(), 0u);
}

TEST(ToyTokenizer, NoSpecialTokens) {
    auto cfg = testutil::toy(BackendKind::ToyMmdit);
    cfg.special_tokens = false;
    const auto b = ToyBackend::create(cfg);
    const auto p = b->tokenize("red house");
    EXPECT_EQ(p.segments()[0], Segment::Prompt);
    EXPECT_EQ(p.pad_count(), 14u);
    EXPECT_EQ(b->encode_clean().primary().k(), 0u);
}

TEST(ToyEncoder, DeterministicAndShaped) {
    auto b = testutil::xattn();
    const auto p = b->tokenize("a small boat");
    const auto a = b->encode(p).primary();
    const auto c = b->encode(p).primary();
    EXPECT_EQ(a.matrix(), c.matrix());
    EXPECT_EQ(a.n(), 16u);
    EXPECT_EQ(a.d(), 8u);
    EXPECT_EQ(a.source(), RepSource::Full);
}

TEST(ToyEncoder, CleanDiffersOnPromptRows) {
    auto b = testutil::mmdit();
    const auto clean = b->encode_clean().primary();
    EXPECT_EQ(clean, b->encode_clean().primary());
    EXPECT_EQ(clean.source(), RepSource::Clean);
    const auto p = b->tokenize("three glass birds");
    const auto full = b->encode(p).primary();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool same = std::equal(full.matrix().row(i).begin(), full.matrix().row(i).end(), clean.matrix().row(i).begin());
        if (p.segments()[i] == Segment::Prompt) {
            EXPECT_FALSE(same) << "row " << i;
        }
        if (p.segments()[i] == Segment::Bos) {
            EXPECT_TRUE(same) << "causal BOS row should match";
        }
    }
}

TEST(ToyEncoder, CausalPrefix) {
    auto b = testutil::mmdit();
    const auto p1 = b->tokenize("red house by the lake");
    const auto p2 = b->tokenize("red house in the lake");
    std::size_t j = 0;
    while (p1.tokens()[j] == p2.tokens()[j]) ++j;
    ASSERT_EQ(j, 3u);
    const auto a = b->encode(p1).primary().matrix();
    const auto c = b->encode(p2).primary().matrix();
    for (std::size_t r = 0; r < j; ++r)
        EXPECT_TRUE(std::equal(a.row(r).begin(), a.row(r).end(), c.row(r).begin())) << "row " << r;
    EXPECT_FALSE(std::equal(a.row(j).begin(), a.row(j).end(), c.row(j).begin()));
}

TEST(ToyEncoder, AllPadPromptEqualsClean) {
    auto b = testutil::xattn();
    EXPECT_EQ(b->encode(b->tokenize("")).primary().matrix(), b->encode_clean().primary().matrix());
    EXPECT_EQ(encode_clean(*b, 16).primary(), b->encode_clean().primary());
    EXPECT_PADPROBE_ERROR(encode_clean(*b, 8), ErrorCode::LengthMismatch);
    EXPECT_PADPROBE_ERROR(b->encode(PaddedPrompt::synthetic(2, 8)), ErrorCode::LengthMismatch);
}

TEST(ToyGenerate, DeterministicUnitFeatures) {
    for (auto kind : {BackendKind::ToyXattn, BackendKind::ToyMmdit}) {
        const auto b = ToyBackend::create(testutil::toy(kind));
        const auto cond = b->encode(b->tokenize("a cat under the moon"));
        const auto g1 = b->generate(cond, 5);
        const auto g2 = b->generate(cond, 5);
        EXPECT_EQ(g1.features, g2.features);
        EXPECT_EQ(g1.latent, g2.latent);
        EXPECT_NEAR(linalg::norm(g1.features), 1.0, 1e-6);
        EXPECT_NE(g1.features, b->generate(cond, 6).features);
        EXPECT_EQ(g1.config_hash, b->config_hash());
    }
}

TEST(ToyGenerate, DimensionCheck) {
    auto b = testutil::mmdit();
    const std::vector<Segment> segs(16, Segment::Pad);
    Conditioning wrong{{EncodedRep(Matrix(16, 4), segs, RepSource::Clean, "x")}};
    EXPECT_PADPROBE_ERROR(b->generate(wrong, 1), ErrorCode::DimensionMismatch);
}

// Cross-attention sums over keys, so permuting text rows permutes keys and
// values together and leaves the output unchanged up to summation order.
TEST(ToyGenerate, XattnKeyPermutationInvariance) {
    auto b = testutil::xattn();
    const auto p = b->tokenize("a bright storm over the field");
    const auto cond = b->encode(p);
    const auto& m = cond.primary().matrix();
    std::vector<std::size_t> perm(m.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), shuffled.row(r).begin());
    const std::vector<Segment> segs(m.rows(), Segment::Prompt);
    Conditioning permuted{{EncodedRep(shuffled, segs, RepSource::Full, cond.primary().encoder_id())}};
    const auto a = b->generate(cond, 9);
    const auto c = b->generate(permuted, 9);
    for (std::size_t i = 0; i < a.features.size(); ++i) EXPECT_NEAR(a.features[i], c.features[i], 1e-5);
}

TEST(ToyGenerate, WeightSeedChangesEverything) {
    auto a = testutil::mmdit(0);
    auto b = testutil::mmdit(1);
    EXPECT_NE(a->config_hash(), b->config_hash());
    EXPECT_NE(a->encode_clean().primary().matrix(), b->encode_clean().primary().matrix());
}

TEST(ToyGenerate, StepwiseVisitsEveryBlock) {
    auto b = testutil::mmdit();
    const auto cond = b->encode(b->tokenize("stone bridge"));
    auto lock = b->exclusive();
    auto ctx = b->begin(cond, 2);
    std::vector<BlockPosition> seen;
    while (!ctx->done()) {
        seen.push_back(ctx->position());
        ctx->advance();
    }
    ASSERT_EQ(seen.size(), b->config().steps * b->config().layers);
    EXPECT_EQ(seen.front(), (BlockPosition{0, 0}));
    EXPECT_EQ(seen.back(), (BlockPosition{3, 1}));
    EXPECT_PADPROBE_ERROR(ctx->advance(), ErrorCode::BackendError);
    const auto stepped = ctx->finish();
    lock.unlock();
    EXPECT_EQ(stepped.features, b->generate(cond, 2).features);
}
