#pragma once

// Experiment orchestration: executes every (prompt, replicate, condition) cell
// of a plan, appends results to a JSON-lines manifest, and derives per-condition
// CLIP/KID statistics from the manifest.
//
// The manifest only ever grows. A cell id may appear once; completed cells are
// skipped when a run is resumed. Failed cells go to failures.jsonl and are
// retried on the next run.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "padprobe/dataset.hpp"
#include "padprobe/idp.hpp"
#include "padprobe/metrics.hpp"
#include "padprobe/plot.hpp"
#include "padprobe/version.hpp"

namespace padprobe {

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual std::vector<float> image_features(const GenerationResult& result) const = 0;
    virtual std::vector<float> text_features(const Backend& backend, const PaddedPrompt& prompt) const = 0;
};

/// Image feature: the generation's pooled latent. Text feature: mean of the
/// non-pad rows of the prompt's primary encoding. Both unit-normalized.
class EncoderPoolExtractor final : public FeatureExtractor {
public:
    std::string id() const override { return "encoder-pool"; }

    std::vector<float> image_features(const GenerationResult& result) const override {
        if (result.features.empty()) fail(ErrorCode::ExtractorError, "generation carries no features");
        return linalg::normalized(result.features);
    }

    std::vector<float> text_features(const Backend& backend, const PaddedPrompt& prompt) const override {
        const auto cond = backend.encode(prompt);
        const auto& rep = cond.primary();
        std::vector<double> acc(rep.d(), 0.0);
        std::size_t rows = 0;
        for (std::size_t i = 0; i < rep.n(); ++i) {
            if (rep.segments()[i] == Segment::Pad) continue;
            for (std::size_t c = 0; c < rep.d(); ++c) acc[c] += rep.matrix()(i, c);
            ++rows;
        }
        if (rows == 0) fail(ErrorCode::ExtractorError, "prompt has no non-pad rows");
        std::vector<float> out(acc.size());
        for (std::size_t c = 0; c < acc.size(); ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(rows));
        return linalg::normalized(out);
    }
};

struct ManifestEntry {
    std::string plan_hash;
    std::string cell_id;
    std::string prompt_id;
    std::size_t replicate = 0;
    std::string condition;
    std::uint64_t seed = 0;
    std::string method;
    double clip_text = 0.0;
    std::vector<float> features;
};

inline nlohmann::json to_json(const ManifestEntry& e) {
    return {{"plan_hash", e.plan_hash}, {"cell_id", e.cell_id},     {"prompt_id", e.prompt_id},
            {"replicate", e.replicate}, {"condition", e.condition}, {"seed", e.seed},
            {"method", e.method},       {"clip_text", e.clip_text}, {"features", e.features}};
}

inline ManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    ManifestEntry e;
    e.plan_hash = j.at("plan_hash").get<std::string>();
    e.cell_id = j.at("cell_id").get<std::string>();
    e.prompt_id = j.at("prompt_id").get<std::string>();
    e.replicate = j.at("replicate").get<std::size_t>();
    e.condition = j.at("condition").get<std::string>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.method = j.at("method").get<std::string>();
    e.clip_text = j.at("clip_text").get<double>();
    e.features = j.at("features").get<std::vector<float>>();
    return e;
}

/// Reads a manifest, rejecting duplicate cell ids and foreign plan hashes.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                                const std::optional<std::string>& expected_plan_hash = {}) {
    std::vector<ManifestEntry> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream is(path);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        ManifestEntry e;
        try {
            e = manifest_entry_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorCode::IntegrityError,
                 "manifest line " + std::to_string(lineno) + " is malformed: " + ex.what());
        }
        if (expected_plan_hash && e.plan_hash != *expected_plan_hash)
            fail(ErrorCode::IntegrityError, "manifest line " + std::to_string(lineno) + " belongs to plan " +
                                                e.plan_hash + ", expected " + *expected_plan_hash);
        if (!seen.insert(e.cell_id).second)
            fail(ErrorCode::IntegrityError, "duplicate cell id '" + e.cell_id + "' in manifest");
        out.push_back(std::move(e));
    }
    return out;
}

/// Single serialization point for manifest appends; one line per write.
class ManifestWriter {
public:
    explicit ManifestWriter(const std::filesystem::path& path) : os_(path, std::ios::app) {
        if (!os_) fail(ErrorCode::IoError, "cannot open " + path.string() + " for appending");
    }

    void append(const nlohmann::json& line) {
        const std::string text = line.dump() + "\n";
        std::lock_guard lock(mutex_);
        os_.write(text.data(), static_cast<std::streamsize>(text.size()));
        os_.flush();
        if (!os_) fail(ErrorCode::IoError, "manifest append failed");
    }

private:
    std::mutex mutex_;
    std::ofstream os_;
};

struct ConditionStats {
    std::string condition;
    std::optional<double> mean_clip_text;
    std::optional<double> std_clip_text;
    std::optional<double> mean_clip_image_ref;
    std::optional<double> kid_vs_full;
    std::size_t n = 0;
    std::size_t n_failed = 0;

    friend bool operator==(const ConditionStats&, const ConditionStats&) = default;
};

struct ExperimentReport {
    std::string method;
    std::vector<ConditionStats> rows;
    std::string plan_hash;
    std::string backend_config_hash;
    std::string toolkit_version = kVersion;
    std::optional<double> wall_time_s;  // only set by the run that produced it
    double kid_display_multiplier = 1.0;

    const ConditionStats& row(const std::string& condition) const {
        for (const auto& r : rows)
            if (r.condition == condition) return r;
        fail(ErrorCode::InvalidArgument, "report has no condition '" + condition + "'");
    }

    friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

struct ReportOptions {
    KidConfig kid;
    // Display-only factor for KID (e.g. 1000); raw values are always kept.
    double kid_display_multiplier = 1.0;
};

/// Statistics derived purely from the plan and the manifest entries, in plan
/// order; independent of execution order.
inline ExperimentReport build_report(const ExperimentPlan& plan, const std::vector<ManifestEntry>& entries,
                                     const std::string& method, const std::string& backend_config_hash,
                                     const ReportOptions& options = {}) {
    std::map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : entries) by_id[e.cell_id] = &e;

    ExperimentReport report;
    report.method = method;
    report.plan_hash = plan_hash(plan);
    report.backend_config_hash = backend_config_hash;
    report.kid_display_multiplier = options.kid_display_multiplier;

    const Condition full = Condition::full();
    const bool has_full = std::find(plan.conditions.begin(), plan.conditions.end(), full) != plan.conditions.end();

    auto lookup = [&](std::size_t i, std::size_t r, const Condition& c) -> const ManifestEntry* {
        auto it = by_id.find(ExperimentPlan::cell_id(plan.prompts[i], r, c));
        return it == by_id.end() ? nullptr : it->second;
    };

    for (const auto& cond : plan.conditions) {
        ConditionStats row;
        row.condition = cond.name();
        std::vector<double> clip_text, clip_ref;
        std::vector<float> gen_rows, ref_rows;
        std::size_t dim = 0, paired = 0;
        for (std::size_t i = 0; i < plan.prompts.size(); ++i) {
            for (std::size_t r = 0; r < plan.seeds_per_prompt; ++r) {
                const ManifestEntry* e = lookup(i, r, cond);
                if (!e) continue;
                clip_text.push_back(e->clip_text);
                if (!has_full) continue;
                const ManifestEntry* f = lookup(i, r, full);
                if (!f) continue;
                clip_ref.push_back(clip_score_image_ref(e->features, f->features));
                dim = e->features.size();
                gen_rows.insert(gen_rows.end(), e->features.begin(), e->features.end());
                ref_rows.insert(ref_rows.end(), f->features.begin(), f->features.end());
                ++paired;
            }
        }
        row.n = clip_text.size();
        row.n_failed = plan.prompts.size() * plan.seeds_per_prompt - row.n;
        if (!clip_text.empty()) {
            const auto agg = aggregate(clip_text);
            row.mean_clip_text = agg.mean;
            row.std_clip_text = agg.std;
        }
        if (!clip_ref.empty()) row.mean_clip_image_ref = aggregate(clip_ref).mean;
        if (paired >= 2)
            row.kid_vs_full = kid(Matrix(paired, dim, std::move(gen_rows)), Matrix(paired, dim, std::move(ref_rows)),
                                  options.kid);
        report.rows.push_back(std::move(row));
    }
    return report;
}

using BackendFactory = std::function<BackendHandle()>;

struct RunOptions {
    Method method = Method::Ite;
    std::size_t workers = 1;
    std::filesystem::path out_dir;  // empty: keep results in memory only
    std::optional<std::size_t> max_cells;  // stop after this many new cells
    LatentPolicy latent_policy = LatentPolicy::SharedInitialLatent;
    double clip_scale = 1.0;
    bool fail_fast = false;
    ReportOptions report;
};

struct CellFailure {
    std::string cell_id;
    std::string code;
    std::string message;
};

struct RunOutcome {
    ExperimentReport report;
    std::vector<ManifestEntry> entries;
    std::vector<CellFailure> failures;
    std::size_t executed = 0;
    std::size_t skipped = 0;
};

/// PADPROBE_WORKERS, when set to a positive integer, overrides `requested`.
inline std::size_t effective_workers(std::size_t requested) {
    if (const char* env = std::getenv("PADPROBE_WORKERS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return v;
    }
    return std::max<std::size_t>(requested, 1);
}

inline ManifestEntry run_cell(const Backend& backend, const FeatureExtractor& extractor, const ExperimentPlan& plan,
                              const std::string& hash, const PlanCell& cell, const RunOptions& options) {
    const auto& prompt_rec = plan.prompts[cell.prompt_index];
    const auto& cond = plan.conditions[cell.condition_index];
    const PaddedPrompt prompt = backend.tokenize(prompt_rec.text);
    GenerationResult gen;
    if (options.method == Method::Ite) {
        gen = ite_generate(backend, prompt, cond, cell.seed).generation;
    } else {
        IdpPlan idp(make_keep_mask(prompt, cond), std::nullopt, options.latent_policy);
        gen = idp_generate(backend, prompt, idp, cell.seed);
    }
    const auto image = extractor.image_features(gen);
    const auto text = extractor.text_features(backend, prompt);
    if (image.size() != text.size())
        fail(ErrorCode::ExtractorError, "image and text features have different dimensions");
    ManifestEntry e;
    e.plan_hash = hash;
    e.cell_id = cell.id;
    e.prompt_id = prompt_rec.id;
    e.replicate = cell.replicate;
    e.condition = cond.name();
    e.seed = cell.seed;
    e.method = std::string(to_string(options.method));
    e.clip_text = clip_score(image, text, options.clip_scale);
    e.features = image;
    return e;
}

inline RunOutcome run_plan(const ExperimentPlan& plan, const BackendFactory& factory,
                           const FeatureExtractor* extractor, const RunOptions& options = {}) {
    if (!extractor) fail(ErrorCode::ExtractorError, "no feature extractor configured");
    const auto started = std::chrono::steady_clock::now();
    const std::size_t workers = std::max<std::size_t>(options.workers, 1);

    std::vector<BackendHandle> handles;
    for (std::size_t w = 0; w < workers; ++w) handles.push_back(factory());
    const Backend& probe = *handles.front();
    if (!plan.config_hash.empty() && plan.config_hash != probe.config_hash())
        fail(ErrorCode::IntegrityError, "plan was built for backend config " + plan.config_hash + ", got " +
                                            probe.config_hash());
    if (options.method == Method::Idp) check_idp_support(probe);
    if (options.method == Method::Ite && !probe.capabilities().encoder_output_conditioning)
        fail(ErrorCode::UnsupportedCapability, "backend does not accept encoder-output conditioning");

    const std::string hash = plan_hash(plan);
    RunOutcome outcome;
    std::unique_ptr<ManifestWriter> manifest;
    std::unique_ptr<ManifestWriter> failure_log;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        const auto plan_path = options.out_dir / "plan.json";
        if (std::filesystem::exists(plan_path)) {
            if (plan_hash(load_plan(plan_path)) != hash)
                fail(ErrorCode::IntegrityError, "output directory holds a different plan");
        } else {
            save_plan(plan_path, plan);
        }
        outcome.entries = read_manifest(options.out_dir / "manifest.jsonl", hash);
        for (const auto& e : outcome.entries)
            if (e.method != to_string(options.method))
                fail(ErrorCode::IntegrityError, "manifest was produced with method " + e.method);
        manifest = std::make_unique<ManifestWriter>(options.out_dir / "manifest.jsonl");
        failure_log = std::make_unique<ManifestWriter>(options.out_dir / "failures.jsonl");
    }

    std::set<std::string> done;
    for (const auto& e : outcome.entries) done.insert(e.cell_id);
    std::vector<PlanCell> pending;
    for (auto& cell : plan.cells()) {
        if (done.count(cell.id)) ++outcome.skipped;
        else pending.push_back(std::move(cell));
    }
    if (options.max_cells && pending.size() > *options.max_cells) pending.resize(*options.max_cells);

    std::mutex results_mutex;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;

    auto work = [&](std::size_t w) {
        const Backend& backend = *handles[w];
        for (std::size_t idx = next++; idx < pending.size() && !abort; idx = next++) {
            const auto& cell = pending[idx];
            try {
                ManifestEntry e = run_cell(backend, *extractor, plan, hash, cell, options);
                if (manifest) manifest->append(to_json(e));
                std::lock_guard lock(results_mutex);
                outcome.entries.push_back(std::move(e));
                ++outcome.executed;
            } catch (const Error& err) {
                // Integrity and I/O problems invalidate the whole run.
                if (options.fail_fast || err.code() == ErrorCode::IoError ||
                    err.code() == ErrorCode::IntegrityError) {
                    std::lock_guard lock(results_mutex);
                    if (!fatal) fatal = std::current_exception();
                    abort = true;
                    return;
                }
                CellFailure f{cell.id, std::string(err.code_name()), err.what()};
                if (failure_log)
                    failure_log->append({{"plan_hash", hash}, {"cell_id", f.cell_id}, {"code", f.code},
                                         {"message", f.message}});
                std::lock_guard lock(results_mutex);
                outcome.failures.push_back(std::move(f));
            }
        }
    };

    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    if (fatal) std::rethrow_exception(fatal);

    outcome.report = build_report(plan, outcome.entries, std::string(to_string(options.method)),
                                  probe.config_hash(), options.report);
    outcome.report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return outcome;
}

struct SegmentStats {
    std::size_t segment = 0;
    std::string condition;
    double mean_clip_text = 0.0;
    double std_clip_text = 0.0;
    std::size_t n = 0;
};

/// Mean/std CLIP for each pads-seg:i/n condition, i ascending, run with ITE.
inline std::vector<SegmentStats> segment_report(const ExperimentPlan& plan, std::size_t n_segments,
                                                const BackendFactory& factory, const FeatureExtractor* extractor,
                                                RunOptions options = {}) {
    if (n_segments == 0) fail(ErrorCode::UnknownCondition, "segment count must be >= 1");
    {
        const auto backend = factory();
        for (const auto& p : plan.prompts) {
            const auto pads = backend->tokenize(p.text).pad_count();
            if (pads < n_segments)
                fail(ErrorCode::NoPadsAvailable, "prompt '" + p.id + "' has " + std::to_string(pads) +
                                                     " PAD indices, fewer than " + std::to_string(n_segments));
        }
    }
    ExperimentPlan seg_plan = plan;
    seg_plan.conditions.clear();
    for (std::size_t i = 0; i < n_segments; ++i)
        seg_plan.conditions.push_back(
            Condition::pads_segment(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(n_segments)));
    options.method = Method::Ite;
    options.out_dir.clear();
    const auto outcome = run_plan(seg_plan, factory, extractor, options);

    std::vector<SegmentStats> out;
    for (std::size_t i = 0; i < n_segments; ++i) {
        const auto& row = outcome.report.rows[i];
        out.push_back({i, row.condition, row.mean_clip_text.value_or(NAN), row.std_clip_text.value_or(NAN), row.n});
    }
    return out;
}

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    auto& rows = j["conditions"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json o{{"condition", row.condition},
                         {"mean_clip_text", detail::optional_json(row.mean_clip_text)},
                         {"std_clip_text", detail::optional_json(row.std_clip_text)},
                         {"mean_clip_image_ref", detail::optional_json(row.mean_clip_image_ref)},
                         {"kid_vs_full", detail::optional_json(row.kid_vs_full)},
                         {"n", row.n},
                         {"n_failed", row.n_failed}};
        if (r.kid_display_multiplier != 1.0 && row.kid_vs_full)
            o["kid_vs_full_display"] = *row.kid_vs_full * r.kid_display_multiplier;
        rows.push_back(std::move(o));
    }
    j["kid_display_multiplier"] = r.kid_display_multiplier;
    j["provenance"] = {{"plan_hash", r.plan_hash},
                       {"backend_config_hash", r.backend_config_hash},
                       {"toolkit_version", r.toolkit_version}};
    if (r.wall_time_s) j["provenance"]["wall_time_s"] = *r.wall_time_s;
    return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    try {
        ExperimentReport r;
        r.method = j.at("method").get<std::string>();
        for (const auto& o : j.at("conditions")) {
            ConditionStats row;
            row.condition = o.at("condition").get<std::string>();
            row.mean_clip_text = detail::optional_from(o, "mean_clip_text");
            row.std_clip_text = detail::optional_from(o, "std_clip_text");
            row.mean_clip_image_ref = detail::optional_from(o, "mean_clip_image_ref");
            row.kid_vs_full = detail::optional_from(o, "kid_vs_full");
            row.n = o.at("n").get<std::size_t>();
            row.n_failed = o.value("n_failed", std::size_t{0});
            r.rows.push_back(std::move(row));
        }
        r.kid_display_multiplier = j.value("kid_display_multiplier", 1.0);
        const auto& p = j.at("provenance");
        r.plan_hash = p.at("plan_hash").get<std::string>();
        r.backend_config_hash = p.at("backend_config_hash").get<std::string>();
        r.toolkit_version = p.at("toolkit_version").get<std::string>();
        r.wall_time_s = detail::optional_from(p, "wall_time_s");
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("malformed report: ") + e.what());
    }
}

inline void write_report_csv(std::ostream& os, const ExperimentReport& r) {
    os << "condition,mean_clip_text,std_clip_text,mean_clip_image_ref,kid_vs_full,n\n";
    auto num = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        return std::string(buf);
    };
    for (const auto& row : r.rows)
        os << row.condition << ',' << num(row.mean_clip_text) << ',' << num(row.std_clip_text) << ','
           << num(row.mean_clip_image_ref) << ',' << num(row.kid_vs_full) << ',' << row.n << '\n';
}

enum class ReportFormat : std::uint8_t { Json, Csv, Plots };

inline ReportFormat parse_report_format(std::string_view s) {
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "plots") return ReportFormat::Plots;
    fail(ErrorCode::InvalidArgument, "unknown report format '" + std::string(s) + "'");
}

/// Writes the report into `dir` and returns the files written.
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, ReportFormat format,
                                                      const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

    auto open = [](const std::filesystem::path& p) {
        std::ofstream os(p, std::ios::binary);
        if (!os) fail(ErrorCode::IoError, "cannot open " + p.string() + " for writing");
        return os;
    };
    std::vector<std::filesystem::path> written;
    switch (format) {
        case ReportFormat::Json: {
            const auto p = dir / "report.json";
            auto os = open(p);
            os << report_to_json(report).dump(2) << '\n';
            written.push_back(p);
            break;
        }
        case ReportFormat::Csv: {
            const auto p = dir / "report.csv";
            auto os = open(p);
            write_report_csv(os, report);
            written.push_back(p);
            break;
        }
        case ReportFormat::Plots: {
            std::vector<plot::Bar> clip_bars, kid_bars;
            for (const auto& row : report.rows) {
                if (row.mean_clip_text) clip_bars.push_back({row.condition, *row.mean_clip_text});
                if (row.kid_vs_full)
                    kid_bars.push_back({row.condition, *row.kid_vs_full * report.kid_display_multiplier});
            }
            if (clip_bars.empty()) fail(ErrorCode::IoError, "cannot plot an empty report: no condition has scores");
            const auto clip_path = dir / "clip_text.svg";
            {
                auto os = open(clip_path);
                plot::write_bar_chart_svg(os, "mean CLIP score (text) per condition", clip_bars);
            }
            written.push_back(clip_path);
            if (!kid_bars.empty()) {
                const auto kid_path = dir / "kid_vs_full.svg";
                auto os = open(kid_path);
                plot::write_bar_chart_svg(os, "KID vs full per condition", kid_bars);
                written.push_back(kid_path);
            }
            break;
        }
    }
    return written;
}

}  // namespace padprobe
