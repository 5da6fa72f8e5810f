// Acceptance gate: one line per criterion, exit status 1 if any fails.
// Criterion 10 runs only when PADPROBE_ACCEPTANCE_BACKEND names an external
// backend in the registry (PADPROBE_REGISTRY); otherwise it is skipped.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "padprobe/padprobe.hpp"

using namespace padprobe;

namespace {

enum class Outcome { Pass, Fail, Skip };

struct Verdict {
    Outcome outcome;
    std::string detail;
};

Verdict pass(std::string d) { return {Outcome::Pass, std::move(d)}; }
Verdict failed(std::string d) { return {Outcome::Fail, std::move(d)}; }

const char* kWords[] = {"red",   "house", "lake",  "cat",   "blue",  "dog",    "tree",  "sky",
                        "small", "old",   "river", "glass", "paint", "stone",  "bird",  "night",
                        "moon",  "three", "cars",  "under", "above", "bright", "storm", "field"};

std::string random_text(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
    std::uniform_int_distribution<std::size_t> len(min_words, max_words);
    std::string s;
    for (std::size_t i = 0, n = len(rng); i < n; ++i) s += (i ? " " : "") + std::string(kWords[rng() % std::size(kWords)]);
    return s;
}

BackendHandle toy(BackendKind kind) {
    BackendConfig c;
    c.id = kind == BackendKind::ToyXattn ? "toy-xattn" : "toy-mmdit";
    c.kind = kind;
    return make_backend(c);
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Matrix m(r, c);
    for (float& v : m.data()) v = u(rng);
    return m;
}

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> g;
    std::vector<double> v(d);
    double ss = 0.0;
    for (double& x : v) {
        x = g(rng);
        ss += x * x;
    }
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(ss));
    return out;
}

Verdict mixing_identities() {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng() % 32, d = 1 + rng() % 16;
        const std::vector<Segment> segs(n, Segment::Pad);
        const EncodedRep full(random_matrix(rng, n, d), segs, RepSource::Full, "e");
        const EncodedRep clean(random_matrix(rng, n, d), segs, RepSource::Clean, "e");
        if (!(construct_mixed(full, clean, KeepMask{std::vector<bool>(n, true), "full"}).matrix() == full.matrix()))
            return failed("full keep differs at case " + std::to_string(t));
        if (!(construct_mixed(full, clean, KeepMask{std::vector<bool>(n, false), "clean"}).matrix() == clean.matrix()))
            return failed("empty keep differs at case " + std::to_string(t));
    }
    return pass("1000 cases");
}

Verdict idp_collapse() {
    const auto b = toy(BackendKind::ToyMmdit);
    const auto clean_cond = b->encode_clean();
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const std::uint64_t seed = rng();
        const auto p = b->tokenize(random_text(rng, 1, 12));
        const auto plain = b->generate(b->encode(p), seed);
        if (idp_generate(*b, p, IdpPlan(make_keep_mask(p, Condition::full())), seed).features != plain.features)
            return failed("keep=full differs for seed " + std::to_string(seed));
        if (idp_generate(*b, p, IdpPlan(make_keep_mask(p, Condition::clean())), seed).features !=
            b->generate(clean_cond, seed).features)
            return failed("keep=clean differs for seed " + std::to_string(seed));
    }
    return pass("100 seeds");
}

Verdict xattn_equivalence() {
    const auto b = toy(BackendKind::ToyXattn);
    std::mt19937_64 rng(3);
    std::size_t checked = 0;
    for (int t = 0; t < 50; ++t) {
        const std::uint64_t seed = rng();
        const auto p = b->tokenize(random_text(rng, 1, 12));
        std::vector<Condition> conds{Condition::full(), Condition::prompt(), Condition::pads(), Condition::clean(),
                                     Condition::eos()};
        if (p.pad_count() >= 2) conds.push_back(Condition::pads_segment(1, 2));
        for (const auto& c : conds) {
            const auto idp = idp_generate(*b, p, IdpPlan(make_keep_mask(p, c)), seed);
            const auto ite = ite_generate(*b, p, c, seed).generation;
            if (idp.features != ite.features || !(idp.latent == ite.latent))
                return failed(c.name() + " differs for seed " + std::to_string(seed));
            ++checked;
        }
    }
    return pass(std::to_string(checked) + " (prompt, condition) pairs");
}

Verdict register_leakage() {
    const auto b = toy(BackendKind::ToyMmdit);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 100; ++t) {
        const std::uint64_t seed = rng();
        const auto p = b->tokenize(random_text(rng, 1, 12));
        if (!register_leakage_probe(*b, p, seed).any_positive())
            return failed("no positive delta for seed " + std::to_string(seed));
        if (!register_leakage_probe(*b, b->tokenize(""), seed).all_zero())
            return failed("nonzero delta for k=0, seed " + std::to_string(seed));
    }
    return pass("100/100 positive, 100/100 zero");
}

Verdict kid_correctness() {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const auto x = random_matrix(rng, 2 + rng() % 63, 1 + rng() % 32);
        if (kid(x, x) != 0.0) return failed("kid(X,X) != 0");
    }
    const double hand = kid(Matrix(2, 1, std::vector<float>{0, 0}), Matrix(2, 1, std::vector<float>{1, 1}));
    if (std::abs(hand - 7.0) > 1e-12) return failed("hand example gave " + std::to_string(hand));
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t f = 1 + rng() % 32;
        const auto x = random_matrix(rng, 2 + rng() % 63, f);
        const auto y = random_matrix(rng, 2 + rng() % 63, f);
        const double expect = oracle::kid_bruteforce(oracle::to_rows(x), oracle::to_rows(y), 1.0 / f);
        worst = std::max(worst, std::abs(kid(x, y) - expect));
    }
    if (worst > 1e-10) return failed("max deviation from brute force " + std::to_string(worst));
    char buf[64];
    std::snprintf(buf, sizeof buf, "200 pairs, max deviation %.1e", worst);
    return pass(buf);
}

Verdict clip_bounds() {
    const std::vector<float> v{0.6f, 0.8f}, e1{1, 0}, e2{0, 1}, neg{-0.6f, -0.8f};
    if (clip_score(v, v) != 1.0 || clip_score(e1, e2) != 0.0 || clip_score(v, neg) != 0.0)
        return failed("trivial fixtures");
    std::mt19937_64 rng(6);
    for (int t = 0; t < 10000; ++t) {
        const std::size_t d = 1 + rng() % 64;
        const auto a = random_unit(rng, d), b = random_unit(rng, d);
        const double s = clip_score(a, b);
        if (!(s >= 0.0 && s <= 1.0)) return failed("out of range: " + std::to_string(s));
        if (s != clip_score(b, a)) return failed("asymmetric pair");
    }
    return pass("10000 pairs + 3 fixtures");
}

Verdict attention_stochasticity() {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    std::size_t records = 0;
    for (int t = 0; t < 20; ++t) {
        const auto b = toy(t % 2 ? BackendKind::ToyXattn : BackendKind::ToyMmdit);
        const auto p = b->tokenize(random_text(rng, 0, 12));
        const auto recs = record_attention(*b, p, rng());
        for (const auto& r : recs) worst = std::max(worst, stochasticity_error(r));
        records += recs.size();
        if (token_attention_mass(recs, p) != oracle::attention_mass(recs, p.size()))
            return failed("mass differs from re-aggregation on run " + std::to_string(t));
    }
    if (worst > 1e-5) return failed("row-sum error " + std::to_string(worst));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu records, max row-sum error %.1e", records, worst);
    return pass(buf);
}

Verdict plan_integrity() {
    const std::vector<PromptRecord> prompts{{"p1", "Complex", "a red house beside a quiet lake"},
                                            {"p2", "Quantity", "three small birds"}};
    const auto backend = toy(BackendKind::ToyMmdit);
    const auto plan = build_plan(prompts, 2, parse_conditions("full,prompt,pads,clean"), backend->id(), 0,
                                 backend->config_hash());
    if (plan.total_generations() != 16) return failed("cardinality " + std::to_string(plan.total_generations()));
    const BackendFactory factory = [] { return toy(BackendKind::ToyMmdit); };
    EncoderPoolExtractor ex;
    auto reference = run_plan(plan, factory, &ex).report;
    if (reference.rows.size() != 4) return failed("expected 4 rows");
    for (const auto& r : reference.rows)
        if (r.n != 4) return failed(r.condition + " has n=" + std::to_string(r.n));
    if (reference.row("full").kid_vs_full != 0.0) return failed("kid_vs_full(full) != 0");

    const auto dir = std::filesystem::temp_directory_path() / ("padprobe-acceptance-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    RunOptions opts;
    opts.out_dir = dir;
    opts.max_cells = 7;
    run_plan(plan, factory, &ex, opts);
    opts.max_cells.reset();
    auto resumed = run_plan(plan, factory, &ex, opts).report;
    std::filesystem::remove_all(dir);
    reference.wall_time_s.reset();
    resumed.wall_time_s.reset();
    if (!(report_to_json(resumed) == report_to_json(reference)) || !(resumed == reference))
        return failed("resumed report differs");
    return pass("16 cells, 4x n=4, resume bit-identical");
}

Verdict segment_algebra() {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 8 + rng() % 120;
        const std::size_t k = rng() % (n - 6);
        const auto p = PaddedPrompt::synthetic(k, n, rng() & 1, rng() & 1);
        const auto pads = make_keep_mask(p, Condition::pads());
        for (std::uint32_t parts : {2u, 3u, 5u}) {
            std::vector<int> cover(n, 0);
            for (std::uint32_t i = 0; i < parts; ++i) {
                const auto m = make_keep_mask(p, Condition::pads_segment(i, parts));
                const std::vector<Segment> segs(p.segments().begin(), p.segments().end());
                if (m.keep != oracle::pad_chunk_keep(segs, i, parts)) return failed("chunk oracle mismatch");
                for (std::size_t j = 0; j < n; ++j) cover[j] += m.keep[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                if (cover[j] != (pads.keep[j] ? 1 : 0)) return failed("segments do not partition the pads mask");
        }
    }
    const auto p = PaddedPrompt::synthetic(3, 105);
    for (std::uint32_t i = 0; i < 5; ++i)
        if (make_keep_mask(p, Condition::pads_segment(i, 5)).kept() != 20) return failed("100/5 case");
    return pass("500 prompts x n in {2,3,5}; 100 pads -> 5 x 20");
}

Verdict adapter_smoke() {
    const char* id = std::getenv("PADPROBE_ACCEPTANCE_BACKEND");
    if (!id) return {Outcome::Skip, "no adapter configured (set PADPROBE_ACCEPTANCE_BACKEND)"};
    const char* reg_path = std::getenv("PADPROBE_REGISTRY");
    const auto reg = reg_path ? BackendRegistry::load(reg_path) : BackendRegistry::builtin();
    const auto& cfg = reg.get(id);
    if (cfg.kind != BackendKind::External) return {Outcome::Skip, std::string(id) + " is not an external adapter"};
    std::vector<PromptRecord> prompts;
    const char* texts[] = {"a red house beside a quiet lake", "three small birds on a wire",
                           "an astronaut riding a horse", "a bowl of ramen in watercolor style",
                           "two cats sleeping under a lamp", "a castle made of glass at night",
                           "a close-up of a bee on a sunflower", "a city street seen from above",
                           "a robot painting a portrait", "four apples and a banana on a table",
                           "a foggy forest at dawn", "a dragon made of clouds",
                           "a vintage car in the desert", "a lighthouse during a storm",
                           "a child reading under a tree", "a teapot shaped like an elephant",
                           "a snowy mountain reflected in a lake", "a neon sign reading open",
                           "a sailboat on a calm sea", "an owl wearing glasses"};
    for (std::size_t i = 0; i < std::size(texts); ++i)
        prompts.push_back({"a" + std::to_string(i), "Complex", texts[i]});
    const auto backend = reg.make(id);
    const auto plan = build_plan(prompts, 2, parse_conditions("prompt,pads,clean"), id, 0, backend->config_hash());
    EncoderPoolExtractor ex;
    const auto report = run_plan(plan, [&] { return reg.make(id); }, &ex).report;
    const double p = report.row("prompt").mean_clip_text.value_or(NAN);
    const double pads = report.row("pads").mean_clip_text.value_or(NAN);
    const double clean = report.row("clean").mean_clip_text.value_or(NAN);
    char buf[128];
    std::snprintf(buf, sizeof buf, "prompt %.4f, pads %.4f, clean %.4f", p, pads, clean);
    return p >= pads && pads >= clean ? pass(buf) : failed(buf);
}

}  // namespace

int main() {
    struct Criterion {
        int number;
        const char* name;
        double budget_s;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "mixing identities", 5, mixing_identities},
        {2, "IDP collapse identities (MM-DiT)", 30, idp_collapse},
        {3, "cross-attention IDP == ITE", 60, xattn_equivalence},
        {4, "register leakage", 30, register_leakage},
        {5, "KID correctness", 10, kid_correctness},
        {6, "CLIP-score bounds and symmetry", 5, clip_bounds},
        {7, "attention stochasticity and aggregation", 10, attention_stochasticity},
        {8, "plan/report integrity", 60, plan_integrity},
        {9, "segment algebra", 5, segment_algebra},
        {10, "adapter smoke ordering", 0, adapter_smoke},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = failed(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (v.outcome == Outcome::Pass && c.budget_s > 0 && secs > c.budget_s) {
            std::ostringstream os;
            os << "over time budget of " << c.budget_s << " s; " << v.detail;
            v = failed(os.str());
        }
        const char* tag = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Fail ? "FAIL" : "SKIP";
        std::printf("%s  %2d  %-42s %7.3fs  %s\n", tag, c.number, c.name, secs, v.detail.c_str());
        if (v.outcome == Outcome::Fail) ++failures;
    }
    std::printf("%s\n", failures ? "acceptance: FAIL" : "acceptance: PASS");
    return failures ? 1 : 0;
}
