#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace padprobe;

namespace {

ExperimentPlan small_plan(const std::string& conditions = "full,prompt,pads,clean") {
    const std::vector<PromptRecord> prompts{{"p1", "Complex", "a red house beside a quiet lake"},
                                            {"p2", "Quantity", "three small birds"}};
    auto cfg = testutil::toy(BackendKind::ToyMmdit);
    return build_plan(prompts, 2, parse_conditions(conditions), cfg.id, 0, cfg.hash());
}

BackendFactory factory(BackendKind kind = BackendKind::ToyMmdit) {
    return [kind] { return make_backend(testutil::toy(kind)); };
}

ExperimentReport without_wall_time(ExperimentReport r) {
    r.wall_time_s.reset();
    return r;
}

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) ++n;
    return n;
}

}  // namespace

TEST(Runner, ReportCardinality) {
    EncoderPoolExtractor ex;
    const auto out = run_plan(small_plan(), factory(), &ex);
    ASSERT_EQ(out.report.rows.size(), 4u);
    for (const auto& row : out.report.rows) {
        EXPECT_EQ(row.n, 4u) << row.condition;
        EXPECT_EQ(row.n_failed, 0u);
        EXPECT_TRUE(row.mean_clip_text);
        EXPECT_TRUE(row.kid_vs_full);
    }
    EXPECT_EQ(out.report.row("full").kid_vs_full, 0.0);
    EXPECT_EQ(out.report.row("full").mean_clip_image_ref, 1.0);
    EXPECT_GE(*out.report.row("clean").kid_vs_full, *out.report.row("full").kid_vs_full);
    EXPECT_EQ(out.executed, 16u);
    EXPECT_TRUE(out.report.wall_time_s);
}

TEST(Runner, ResumeIsBitIdentical) {
    EncoderPoolExtractor ex;
    const auto plan = small_plan();
    const auto reference = run_plan(plan, factory(), &ex);

    const auto dir = testutil::temp_dir("resume");
    RunOptions opts;
    opts.out_dir = dir;
    opts.max_cells = 5;
    const auto first = run_plan(plan, factory(), &ex, opts);
    EXPECT_EQ(first.executed, 5u);
    EXPECT_EQ(line_count(dir / "manifest.jsonl"), 5u);
    opts.max_cells.reset();
    const auto second = run_plan(plan, factory(), &ex, opts);
    EXPECT_EQ(second.executed, 11u);
    EXPECT_EQ(second.skipped, 5u);
    EXPECT_EQ(without_wall_time(second.report), without_wall_time(reference.report));

    const auto third = run_plan(plan, factory(), &ex, opts);
    EXPECT_EQ(third.executed, 0u);
    EXPECT_EQ(without_wall_time(third.report), without_wall_time(reference.report));

    // Report rebuilt from disk alone.
    const auto entries = read_manifest(dir / "manifest.jsonl", plan_hash(plan));
    EXPECT_EQ(build_report(plan, entries, "ite", plan.config_hash), without_wall_time(reference.report));
    std::filesystem::remove_all(dir);
}

TEST(Runner, WorkerCountDoesNotChangeReport) {
    EncoderPoolExtractor ex;
    const auto plan = small_plan();
    RunOptions one, two;
    two.workers = 2;
    EXPECT_EQ(without_wall_time(run_plan(plan, factory(), &ex, one).report),
              without_wall_time(run_plan(plan, factory(), &ex, two).report));
}

TEST(Runner, IdpMethod) {
    EncoderPoolExtractor ex;
    RunOptions opts;
    opts.method = Method::Idp;
    const auto out = run_plan(small_plan(), factory(), &ex, opts);
    EXPECT_EQ(out.report.method, "idp");
    EXPECT_EQ(out.report.row("full").kid_vs_full, 0.0);

    auto xplan = small_plan();
    xplan.config_hash = testutil::toy(BackendKind::ToyXattn).hash();
    const auto ite = run_plan(xplan, factory(BackendKind::ToyXattn), &ex);
    const auto idp = run_plan(xplan, factory(BackendKind::ToyXattn), &ex, opts);
    for (std::size_t i = 0; i < ite.report.rows.size(); ++i)
        EXPECT_EQ(ite.report.rows[i].mean_clip_text, idp.report.rows[i].mean_clip_text);
}

TEST(Runner, ManifestIntegrity) {
    const auto dir = testutil::temp_dir("integrity");
    EncoderPoolExtractor ex;
    const auto plan = small_plan();
    RunOptions opts;
    opts.out_dir = dir;
    opts.max_cells = 2;
    run_plan(plan, factory(), &ex, opts);
    {
        std::ifstream is(dir / "manifest.jsonl");
        std::string first;
        std::getline(is, first);
        std::ofstream os(dir / "manifest.jsonl", std::ios::app);
        os << first << '\n';
    }
    EXPECT_PADPROBE_ERROR(read_manifest(dir / "manifest.jsonl"), ErrorCode::IntegrityError);
    EXPECT_PADPROBE_ERROR(run_plan(plan, factory(), &ex, opts), ErrorCode::IntegrityError);

    const auto other = small_plan("full,clean");
    EXPECT_PADPROBE_ERROR(run_plan(other, factory(), &ex, opts), ErrorCode::IntegrityError);
    std::filesystem::remove_all(dir);
}

TEST(Runner, WrongBackendConfig) {
    EncoderPoolExtractor ex;
    EXPECT_PADPROBE_ERROR(run_plan(small_plan(), factory(BackendKind::ToyXattn), &ex), ErrorCode::IntegrityError);
    EXPECT_PADPROBE_ERROR(run_plan(small_plan(), factory(), nullptr), ErrorCode::ExtractorError);
}

TEST(Runner, FailedCellsAreLoggedAndRetried) {
    const auto dir = testutil::temp_dir("failures");
    EncoderPoolExtractor ex;
    // 14 words fill N=16 exactly; pads-seg cannot be formed for that prompt.
    const std::vector<PromptRecord> prompts{
        {"short", "Complex", "a cat"},
        {"long", "Complex", "one two three four five six seven eight nine ten eleven twelve thirteen fourteen"}};
    const auto cfg = testutil::toy(BackendKind::ToyMmdit);
    const auto plan = build_plan(prompts, 1, parse_conditions("full,pads-seg:0/2"), cfg.id, 0, cfg.hash());
    RunOptions opts;
    opts.out_dir = dir;
    const auto out = run_plan(plan, factory(), &ex, opts);
    ASSERT_EQ(out.failures.size(), 1u);
    EXPECT_EQ(out.failures[0].cell_id, "long/0/pads-seg:0/2");
    EXPECT_EQ(out.failures[0].code, "E_NO_PADS_AVAILABLE");
    EXPECT_EQ(out.report.row("pads-seg:0/2").n, 1u);
    EXPECT_EQ(out.report.row("pads-seg:0/2").n_failed, 1u);
    EXPECT_EQ(line_count(dir / "failures.jsonl"), 1u);
    EXPECT_EQ(line_count(dir / "manifest.jsonl"), 3u);

    const auto again = run_plan(plan, factory(), &ex, opts);
    EXPECT_EQ(again.executed, 0u);
    EXPECT_EQ(again.failures.size(), 1u);

    opts.fail_fast = true;
    std::filesystem::remove_all(dir);
    EXPECT_PADPROBE_ERROR(run_plan(plan, factory(), &ex, opts), ErrorCode::NoPadsAvailable);
    std::filesystem::remove_all(dir);
}

TEST(Runner, WorkersEnvOverride) {
    ::setenv("PADPROBE_WORKERS", "3", 1);
    EXPECT_EQ(effective_workers(1), 3u);
    ::setenv("PADPROBE_WORKERS", "zero", 1);
    EXPECT_EQ(effective_workers(2), 2u);
    ::unsetenv("PADPROBE_WORKERS");
    EXPECT_EQ(effective_workers(0), 1u);
}

TEST(Segments, FiveRows) {
    EncoderPoolExtractor ex;
    const auto rows = segment_report(small_plan(), 5, factory(), &ex);
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(rows[i].segment, i);
        EXPECT_EQ(rows[i].n, 4u);
        EXPECT_EQ(rows[i].condition, "pads-seg:" + std::to_string(i) + "/5");
    }
    EXPECT_PADPROBE_ERROR(segment_report(small_plan(), 12, factory(), &ex), ErrorCode::NoPadsAvailable);
}

TEST(Report, JsonRoundTripAndCsv) {
    EncoderPoolExtractor ex;
    auto report = run_plan(small_plan(), factory(), &ex).report;
    report.kid_display_multiplier = 1000.0;
    EXPECT_EQ(report_from_json(report_to_json(report)), report);

    std::ostringstream csv;
    write_report_csv(csv, report);
    const std::string s = csv.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "condition,mean_clip_text,std_clip_text,mean_clip_image_ref,kid_vs_full,n");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
}

TEST(Report, Emit) {
    const auto dir = testutil::temp_dir("emit");
    EncoderPoolExtractor ex;
    const auto report = run_plan(small_plan(), factory(), &ex).report;
    EXPECT_EQ(emit_report(report, ReportFormat::Json, dir).front().filename(), "report.json");
    EXPECT_EQ(emit_report(report, ReportFormat::Csv, dir).front().filename(), "report.csv");
    EXPECT_EQ(emit_report(report, ReportFormat::Plots, dir).size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(dir / "clip_text.svg"));

    ExperimentReport empty;
    EXPECT_PADPROBE_ERROR(emit_report(empty, ReportFormat::Plots, dir), ErrorCode::IoError);
    EXPECT_PADPROBE_ERROR(parse_report_format("xml"), ErrorCode::InvalidArgument);
    std::filesystem::remove_all(dir);
}

TEST(Report, MissingFullLeavesImageMetricsEmpty) {
    EncoderPoolExtractor ex;
    const auto out = run_plan(small_plan("prompt,clean"), factory(), &ex);
    EXPECT_FALSE(out.report.row("clean").kid_vs_full);
    EXPECT_FALSE(out.report.row("clean").mean_clip_image_ref);
    EXPECT_TRUE(out.report.row("clean").mean_clip_text);
}
