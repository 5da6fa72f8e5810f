#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace padprobe;

TEST(RepFile, RoundTripFull) {
    auto b = testutil::mmdit();
    const auto rep = b->encode(b->tokenize("a red house")).primary();
    std::stringstream ss;
    repfile::write_rep(ss, rep);
    const auto back = repfile::read_rep(ss);
    EXPECT_EQ(back, rep);
}

TEST(RepFile, RoundTripCleanWithLayer) {
    const std::vector<Segment> segs{Segment::Bos, Segment::Eos, Segment::Pad, Segment::Pad};
    Matrix m(4, 3);
    for (std::size_t i = 0; i < 12; ++i) m.data()[i] = static_cast<float>(i) * 0.25f - 1.0f;
    const EncodedRep rep(m, segs, RepSource::Clean, "enc/x", 7);
    std::stringstream ss;
    repfile::write_rep(ss, rep);
    EXPECT_EQ(repfile::read_rep(ss), rep);
}

TEST(RepFile, LittleEndianHeader) {
    const std::vector<Segment> segs{Segment::Pad};
    const EncodedRep rep(Matrix(1, 2, 1.0f), segs, RepSource::Clean, "e");
    std::stringstream ss;
    repfile::write_rep(ss, rep);
    const std::string bytes = ss.str();
    ASSERT_GE(bytes.size(), 8u);
    EXPECT_EQ(bytes.substr(0, 4), "PPRB");
    EXPECT_EQ(bytes[4], '\x01');
    EXPECT_EQ(bytes[5], '\x00');
}

TEST(RepFile, RejectsGarbage) {
    std::stringstream bad("NOPE and more bytes here");
    EXPECT_PADPROBE_ERROR(repfile::read_rep(bad), ErrorCode::ParseError);
    std::stringstream empty;
    EXPECT_PADPROBE_ERROR(repfile::read_rep(empty), ErrorCode::ParseError);
}

TEST(RepFile, TruncatedBody) {
    auto b = testutil::xattn();
    std::stringstream ss;
    repfile::write_rep(ss, b->encode_clean().primary());
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 5);
    std::stringstream cut(bytes);
    EXPECT_PADPROBE_ERROR(repfile::read_rep(cut), ErrorCode::ParseError);
}

TEST(RepFile, FeaturesRoundTripAndKindCheck) {
    Matrix f(3, 4);
    for (std::size_t i = 0; i < 12; ++i) f.data()[i] = static_cast<float>(i);
    std::stringstream ss;
    repfile::write_features(ss, f, "pool");
    const auto back = repfile::read_features(ss);
    EXPECT_EQ(back.vectors, f);
    EXPECT_EQ(back.extractor_id, "pool");

    std::stringstream rep_bytes;
    repfile::write_rep(rep_bytes, testutil::mmdit()->encode_clean().primary());
    EXPECT_PADPROBE_ERROR(repfile::read_features(rep_bytes), ErrorCode::ParseError);
}

TEST(RepFile, SaveLoadPath) {
    const auto dir = testutil::temp_dir("repfile");
    auto b = testutil::mmdit();
    const auto rep = b->encode(b->tokenize("two cats")).primary();
    repfile::save_rep(dir / "x.rep", rep);
    EXPECT_EQ(repfile::load_rep(dir / "x.rep"), rep);
    EXPECT_PADPROBE_ERROR(repfile::load_rep(dir / "missing.rep"), ErrorCode::IoError);
    std::filesystem::remove_all(dir);
}
