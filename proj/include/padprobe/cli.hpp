#pragma once

// Command-line front end. `parse_and_dispatch` is the whole program; the
// `padprobe` executable only forwards argv and the standard streams.
//
// Exit codes: 0 success, 1 domain error, 2 usage error. Errors are printed as
//   error[E_CODE]: message
//
// Shared settings resolve as flags > environment > config file > defaults:
//   registry   --registry   PADPROBE_REGISTRY   registry=
//   backend    --backend    PADPROBE_BACKEND    backend=
//   out dir    --out-dir    PADPROBE_OUT_DIR    out_dir=
//   log level  --log-level  PADPROBE_LOG_LEVEL  log_level=
//   seed       --seed       PADPROBE_SEED       seed=
// The config file is named by --config or PADPROBE_CONFIG.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "padprobe/attnprobe.hpp"
#include "padprobe/conformance.hpp"
#include "padprobe/dataset.hpp"
#include "padprobe/idp.hpp"
#include "padprobe/registry.hpp"
#include "padprobe/repfile.hpp"
#include "padprobe/runner.hpp"
#include "padprobe/version.hpp"

namespace padprobe::cli {

enum class LogLevel : std::uint8_t { Error, Warn, Info, Debug };

inline LogLevel parse_log_level(std::string_view s) {
    if (s == "error") return LogLevel::Error;
    if (s == "warn" || s == "warning") return LogLevel::Warn;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    fail(ErrorCode::ConfigError, "unknown log level '" + std::string(s) + "'");
}

struct CliConfig {
    std::optional<std::filesystem::path> registry;
    std::optional<std::string> backend;  // unset: the registry default
    std::filesystem::path out_dir = ".";
    LogLevel log_level = LogLevel::Warn;
    std::uint64_t seed = 0;
};

/// Values supplied on the command line; unset means "not given".
struct CliFlags {
    std::optional<std::string> config;
    std::optional<std::string> registry;
    std::optional<std::string> backend;
    std::optional<std::string> out_dir;
    std::optional<std::string> log_level;
    std::optional<std::uint64_t> seed;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
    if (const char* v = std::getenv(name)) return std::string(v);
    return std::nullopt;
}

inline std::map<std::string, std::string> parse_config_file(std::string_view text) {
    std::map<std::string, std::string> out;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string body = detail::trim(std::string_view(line).substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::ConfigError, "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        if (key != "registry" && key != "backend" && key != "out_dir" && key != "log_level" && key != "seed")
            fail(ErrorCode::ConfigError, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        out[key] = detail::trim(std::string_view(body).substr(eq + 1));
    }
    return out;
}

inline CliConfig resolve_config(const CliFlags& flags, const EnvLookup& env = process_env) {
    std::map<std::string, std::string> file;
    std::optional<std::string> config_path = flags.config ? flags.config : env("PADPROBE_CONFIG");
    if (config_path) {
        std::ifstream is(*config_path);
        if (!is) fail(ErrorCode::ConfigError, "cannot open config file " + *config_path);
        std::stringstream ss;
        ss << is.rdbuf();
        file = parse_config_file(ss.str());
    }
    auto pick = [&](const std::optional<std::string>& flag, const char* env_name,
                    const char* key) -> std::optional<std::string> {
        if (flag) return flag;
        if (auto v = env(env_name)) return v;
        if (auto it = file.find(key); it != file.end()) return it->second;
        return std::nullopt;
    };

    CliConfig c;
    if (auto v = pick(flags.registry, "PADPROBE_REGISTRY", "registry")) c.registry = *v;
    c.backend = pick(flags.backend, "PADPROBE_BACKEND", "backend");
    if (auto v = pick(flags.out_dir, "PADPROBE_OUT_DIR", "out_dir")) c.out_dir = *v;
    if (auto v = pick(flags.log_level, "PADPROBE_LOG_LEVEL", "log_level")) c.log_level = parse_log_level(*v);
    std::optional<std::string> seed_text = flags.seed ? std::optional(std::to_string(*flags.seed))
                                                      : pick(std::nullopt, "PADPROBE_SEED", "seed");
    if (seed_text) c.seed = detail::parse_u64_value(*seed_text, "seed");
    return c;
}

inline BackendRegistry load_registry(const CliConfig& c) {
    return c.registry ? BackendRegistry::load(*c.registry) : BackendRegistry::builtin();
}

/// Toolkit version plus the resolved default backend's config hash, or
/// "unavailable" when the registry cannot be read.
inline std::string version_info(const CliConfig& c) {
    std::string out = std::string("padprobe ") + kVersion;
    try {
        const auto reg = load_registry(c);
        const std::string id = c.backend.value_or(reg.default_id());
        out += " (backend " + id + ", config " + reg.get(id).hash() + ")";
    } catch (const Error&) {
        out += " (backend unavailable, config unavailable)";
    }
    return out;
}

namespace detail {

inline std::string read_prompt_arg(const std::string& arg) {
    if (!arg.starts_with("@")) return arg;
    std::ifstream is(arg.substr(1));
    if (!is) fail(ErrorCode::IoError, "cannot open prompt file " + arg.substr(1));
    std::stringstream ss;
    ss << is.rdbuf();
    std::string text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
}

/// Parses "a..b" (inclusive) or a single index "a".
inline std::pair<std::size_t, std::size_t> parse_range(const std::string& s) {
    const auto dots = s.find("..");
    auto num = [&](std::string_view t) {
        auto v = padprobe::detail::parse_u32(t);
        if (!v) fail(ErrorCode::InvalidArgument, "bad range '" + s + "'");
        return static_cast<std::size_t>(*v);
    };
    if (dots == std::string::npos) {
        const auto v = num(s);
        return {v, v};
    }
    const auto a = num(std::string_view(s).substr(0, dots));
    const auto b = num(std::string_view(s).substr(dots + 2));
    if (a > b) fail(ErrorCode::InvalidArgument, "empty range '" + s + "'");
    return {a, b};
}

inline std::string fmt_real(double v, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, int digits = 6) {
    return v ? fmt_real(*v, digits) : std::string("-");
}

inline std::string feature_summary(const std::vector<float>& f) {
    std::string s = "[";
    for (std::size_t i = 0; i < f.size(); ++i) s += (i ? " " : "") + fmt_real(f[i], 6);
    return s + "]";
}

inline void write_latent_pgm(const std::filesystem::path& path, const Matrix& latent) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    std::vector<double> values(latent.data().begin(), latent.data().end());
    plot::write_pgm(os, latent.rows(), latent.cols(), values);
}

inline nlohmann::json descriptor_json(const InterventionDescriptor& d) {
    nlohmann::json keep = nlohmann::json::array();
    for (bool b : d.keep_mask.keep) keep.push_back(b);
    return {{"method", to_string(d.method)},
            {"keep_mask", {{"name", d.keep_mask.name}, {"keep", keep}}},
            {"backend_id", d.backend_id},
            {"seed", d.seed},
            {"extra", d.extra}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

inline std::pair<std::size_t, std::size_t> default_grid(std::size_t image_tokens) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(image_tokens))));
    if (side * side == image_tokens) return {side, side};
    return {1, image_tokens};
}

}  // namespace detail

class Program {
public:
    Program(std::ostream& out, std::ostream& err, EnvLookup env) : out_(out), err_(err), env_(std::move(env)) {}

    int run(const std::vector<std::string>& args) {
        CLI::App app{"padprobe: causal interventions on padding tokens in text-to-image pipelines", "padprobe"};
        app.set_help_all_flag("--help-all", "Show help for every subcommand");
        app.require_subcommand(1);
        // global options may also follow the subcommand
        app.fallthrough();
        bool show_version = false;
        app.add_flag("--version", show_version, "Print version and exit");
        app.add_option("--config", flags_.config, "Config file (key = value)");
        app.add_option("--registry", flags_.registry, "Backend registry file");
        app.add_option("--log-level", flags_.log_level, "error|warn|info|debug");

        register_commands(app);

        std::vector<std::string> storage = args;
        storage.insert(storage.begin(), "padprobe");
        std::vector<char*> argv;
        for (auto& s : storage) argv.push_back(s.data());

        try {
            // --version without a subcommand is allowed.
            if (args.size() == 1 && args[0] == "--version") {
                out_ << version_info(resolve_config(flags_, env_)) << '\n';
                return 0;
            }
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::CallForHelp& e) {
            app.exit(e, out_, err_);
            return 0;
        } catch (const CLI::CallForAllHelp& e) {
            app.exit(e, out_, err_);
            return 0;
        } catch (const CLI::ParseError& e) {
            err_ << "error[E_USAGE]: " << e.what() << '\n';
            err_ << "run 'padprobe --help' for usage\n";
            return 2;
        }

        try {
            config_ = resolve_config(flags_, env_);
            if (show_version) {
                out_ << version_info(config_) << '\n';
                return 0;
            }
            action_();
            return 0;
        } catch (const Error& e) {
            err_ << "error[" << e.code_name() << "]: " << e.what() << '\n';
            return 1;
        } catch (const std::exception& e) {
            err_ << "error[E_INTERNAL]: " << e.what() << '\n';
            return 1;
        }
    }

private:
    void log(LogLevel level, const std::string& msg) {
        static constexpr const char* names[] = {"error", "warn", "info", "debug"};
        if (static_cast<int>(level) <= static_cast<int>(config_.log_level))
            err_ << names[static_cast<int>(level)] << ": " << msg << '\n';
    }

    BackendHandle backend() {
        const auto reg = load_registry(config_);
        return reg.make(config_.backend.value_or(reg.default_id()));
    }

    std::uint64_t seed_or_default(const std::optional<std::uint64_t>& s) const { return s.value_or(config_.seed); }

    std::filesystem::path out_dir_for(const std::optional<std::string>& flag_dir) const {
        return flag_dir ? std::filesystem::path(*flag_dir) : config_.out_dir;
    }

    void add_common(CLI::App* sub, bool with_out_dir) {
        sub->add_option("--backend", flags_.backend, "Backend id from the registry");
        sub->add_option("--seed", flags_.seed, "Generation seed");
        if (with_out_dir) sub->add_option("--out-dir", flags_.out_dir, "Output directory");
    }

    void register_commands(CLI::App& app) {
        // version
        auto* version = app.add_subcommand("version", "Print toolkit version and backend config hash");
        version->add_option("--backend", flags_.backend, "Backend id from the registry");
        version->callback([this] { action_ = [this] { out_ << version_info(config_) << '\n'; }; });

        // encode
        auto* encode = app.add_subcommand("encode", "Encode a prompt and write a rep file");
        encode->add_option("--backend", flags_.backend, "Backend id from the registry");
        encode->add_option("--prompt", opt_.prompt, "Prompt text or @file")->required();
        encode->add_option("--out", opt_.out, "Output rep file")->required();
        encode->add_flag("--clean", opt_.clean, "Encode the clean-pads sequence instead");
        encode->callback([this] { action_ = [this] { cmd_encode(); }; });

        // ite
        auto* ite = app.add_subcommand("ite", "Intervention at the text-encoder output");
        add_common(ite, true);
        ite->add_option("--prompt", opt_.prompt, "Prompt text or @file")->required();
        ite->add_option("--condition", opt_.condition,
                        "full|prompt|pads|clean|eos|pads-seg:<i>/<n>")->required();
        ite->add_option("--streams", opt_.streams, "Comma-separated encoder ids to intervene on (default all)");
        ite->callback([this] { action_ = [this] { cmd_ite(); }; });

        // idp
        auto* idp = app.add_subcommand("idp", "Intervention inside the diffusion process");
        add_common(idp, true);
        idp->add_option("--prompt", opt_.prompt, "Prompt text or @file")->required();
        idp->add_option("--condition", opt_.condition,
                        "full|prompt|pads|clean|eos|pads-seg:<i>/<n>")->required();
        idp->add_option("--steps-subset", opt_.steps_subset, "Replace only at steps a..b (inclusive)");
        idp->add_option("--layers-subset", opt_.layers_subset, "Replace only at layers a..b (inclusive)");
        idp->add_flag("--independent-latents", opt_.independent, "Give the clean stream its own initial latent");
        idp->add_flag("--leakage", opt_.leakage, "Also run the register-leakage probe (leakage.csv)");
        idp->callback([this] { action_ = [this] { cmd_idp(); }; });

        // attn
        auto* attn = app.add_subcommand("attn", "Capture image-text attention and aggregate it");
        add_common(attn, false);
        attn->add_option("--prompt", opt_.prompt, "Prompt text or @file")->required();
        attn->add_option("--hist", opt_.hist, "Histogram CSV output")->required();
        attn->add_option("--token", opt_.token, "Token index for a spatial map");
        attn->add_option("--map", opt_.map, "Spatial map output (PGM)");
        attn->add_option("--grid", opt_.grid, "Spatial grid HxW (default: square of image tokens)");
        attn->add_option("--steps", opt_.steps_subset, "Only capture steps a..b");
        attn->add_option("--layers", opt_.layers_subset, "Only capture layers a..b");
        attn->add_option("--plot", opt_.plot, "Histogram plot output (SVG)");
        attn->add_option("--trim-middle", opt_.trim, "Plot only the first and last K tokens");
        attn->callback([this] { action_ = [this] { cmd_attn(); }; });

        // metrics
        auto* metrics = app.add_subcommand("metrics", "Metric kernels over feature files");
        metrics->require_subcommand(1);
        auto* kid = metrics->add_subcommand("kid", "KID between two feature files");
        kid->add_option("--ref-features", opt_.ref_features, "Reference feature file")->required();
        kid->add_option("--gen-features", opt_.gen_features, "Generated feature file")->required();
        kid->add_option("--subset-size", opt_.subset_size, "Subset size");
        kid->add_option("--n-subsets", opt_.n_subsets, "Number of subsets");
        kid->add_option("--seed", flags_.seed, "Subset sampling seed");
        kid->add_option("--degree", opt_.degree, "Polynomial kernel degree (default 3)");
        kid->add_option("--gamma", opt_.gamma, "Kernel gamma (default 1/f)");
        kid->add_option("--coef0", opt_.coef0, "Kernel coef0 (default 1)");
        kid->add_option("--display-multiplier", opt_.kid_multiplier, "Also print KID times this factor");
        kid->callback([this] { action_ = [this] { cmd_kid(); }; });
        auto* clip = metrics->add_subcommand("clip", "Row-wise CLIP scores between two feature files");
        clip->add_option("--image-features", opt_.ref_features, "Image feature file")->required();
        clip->add_option("--text-features", opt_.gen_features, "Text (or reference image) feature file")->required();
        clip->add_option("--scale", opt_.clip_scale, "Score scale (default 1)");
        clip->callback([this] { action_ = [this] { cmd_clip(); }; });

        // plan
        auto* plan = app.add_subcommand("plan", "Build an experiment plan from a prompt CSV");
        plan->add_option("--backend", flags_.backend, "Backend id from the registry");
        plan->add_option("--prompts", opt_.prompts, "Prompt CSV (id,category,prompt)")->required();
        plan->add_option("--seeds-per-prompt", opt_.seeds_per_prompt, "Seeds per prompt (default 10)");
        plan->add_option("--conditions", opt_.conditions, "Comma-separated conditions (default full,prompt,pads,clean)");
        plan->add_option("--plan-seed", flags_.seed, "Plan seed");
        plan->add_option("--out", opt_.out, "Plan JSON output")->required();
        plan->callback([this] { action_ = [this] { cmd_plan(); }; });

        // run
        auto* run = app.add_subcommand("run", "Execute a plan (resumable)");
        run->add_option("--plan", opt_.plan, "Plan JSON")->required();
        run->add_option("--method", opt_.method, "ite|idp")->required();
        run->add_option("--workers", opt_.workers, "Worker count (PADPROBE_WORKERS overrides)");
        run->add_option("--out-dir", flags_.out_dir, "Output directory");
        run->add_option("--max-cells", opt_.max_cells, "Stop after this many new cells");
        run->add_flag("--independent-latents", opt_.independent, "IDP: independent clean-stream latents");
        run->callback([this] { action_ = [this] { cmd_run(); }; });

        // report
        auto* report = app.add_subcommand("report", "Build a report from a run manifest");
        report->add_option("--manifest", opt_.manifest, "manifest.jsonl from a run")->required();
        report->add_option("--format", opt_.format, "json|csv|plots")->required();
        report->add_option("--out-dir", opt_.report_dir, "Output directory (default: manifest's directory)");
        report->add_option("--kid-multiplier", opt_.kid_multiplier, "Display multiplier for KID");
        report->callback([this] { action_ = [this] { cmd_report(); }; });

        // segments
        auto* segments = app.add_subcommand("segments", "Per-segment CLIP statistics for pad segments");
        segments->add_option("--plan", opt_.plan, "Plan JSON")->required();
        segments->add_option("--n-segments", opt_.n_segments, "Number of pad segments (default 5)");
        segments->add_option("--workers", opt_.workers, "Worker count (PADPROBE_WORKERS overrides)");
        segments->callback([this] { action_ = [this] { cmd_segments(); }; });

        // conformance
        auto* conf = app.add_subcommand("conformance", "Run the capability self-test for a backend");
        conf->add_option("--backend", flags_.backend, "Backend id from the registry");
        conf->callback([this] { action_ = [this] { cmd_conformance(); }; });
    }

    void cmd_encode() {
        auto b = backend();
        const auto cond = opt_.clean ? encode_clean(*b, b->config().n) : b->encode(b->tokenize(detail::read_prompt_arg(opt_.prompt)));
        const auto& rep = cond.primary();
        repfile::save_rep(opt_.out, rep);
        out_ << "encoded " << rep.n() << "x" << rep.d() << " k=" << rep.k() << " source=" << to_string(rep.source())
             << " encoder=" << rep.encoder_id() << '\n';
        out_ << "wrote " << std::filesystem::path(opt_.out).filename().string() << '\n';
    }

    void report_generation(const PaddedPrompt& prompt, const KeepMask& mask, const GenerationResult& gen) {
        out_ << "backend " << gen.backend_id << " config " << gen.config_hash << '\n';
        out_ << "prompt k=" << prompt.k() << " N=" << prompt.size() << " pads=" << prompt.pad_count() << '\n';
        out_ << "condition " << mask.name << " keeps " << mask.kept() << "/" << mask.size() << " rows\n";
        out_ << "seed " << gen.seed << '\n';
        out_ << "features " << detail::feature_summary(gen.features) << '\n';
    }

    void write_generation(const std::filesystem::path& dir, const GenerationResult& gen, const std::string& extractor) {
        detail::write_latent_pgm(dir / "image.pgm", gen.latent);
        repfile::save_features(dir / "features.bin", Matrix(1, gen.features.size(), gen.features), extractor);
        detail::write_json(dir / "descriptor.json", detail::descriptor_json(*gen.descriptor));
    }

    void cmd_ite() {
        auto b = backend();
        const auto prompt = b->tokenize(detail::read_prompt_arg(opt_.prompt));
        const auto cond = parse_condition(opt_.condition);
        IteOptions options;
        if (opt_.streams) {
            std::set<std::string> ids;
            std::stringstream ss(*opt_.streams);
            for (std::string id; std::getline(ss, id, ',');)
                if (!id.empty()) ids.insert(id);
            options.streams = ids;
        }
        const auto result = ite_generate(*b, prompt, cond, seed_or_default(flags_.seed), options);
        const auto dir = out_dir_for(flags_.out_dir);
        std::filesystem::create_directories(dir);
        repfile::save_rep(dir / "full.rep", result.full.primary());
        repfile::save_rep(dir / "clean.rep", result.clean.primary());
        repfile::save_rep(dir / "mixed.rep", result.mixed.primary());
        write_generation(dir, result.generation, "toy-latent-pool");
        report_generation(prompt, result.descriptor.keep_mask, result.generation);
        out_ << "wrote full.rep clean.rep mixed.rep image.pgm features.bin descriptor.json\n";
    }

    void cmd_idp() {
        auto b = backend();
        const auto prompt = b->tokenize(detail::read_prompt_arg(opt_.prompt));
        IdpPlan plan(make_keep_mask(prompt, parse_condition(opt_.condition)));
        plan.latent_policy = opt_.independent ? LatentPolicy::Independent : LatentPolicy::SharedInitialLatent;
        if (opt_.steps_subset || opt_.layers_subset) {
            const auto& cfg = b->config();
            const auto steps = opt_.steps_subset ? detail::parse_range(*opt_.steps_subset)
                                                 : std::pair<std::size_t, std::size_t>{0, cfg.steps - 1};
            const auto layers = opt_.layers_subset ? detail::parse_range(*opt_.layers_subset)
                                                   : std::pair<std::size_t, std::size_t>{0, cfg.layers - 1};
            plan.replace_points = IdpPlan::grid(steps.first, steps.second, layers.first, layers.second);
        }
        const std::uint64_t seed = seed_or_default(flags_.seed);
        const auto gen = idp_generate(*b, prompt, plan, seed);
        const auto dir = out_dir_for(flags_.out_dir);
        std::filesystem::create_directories(dir);
        write_generation(dir, gen, "toy-latent-pool");
        report_generation(prompt, plan.keep_mask, gen);
        out_ << "replace points "
             << (plan.replace_points ? std::to_string(plan.replace_points->size())
                                     : std::to_string(b->config().steps * b->config().layers))
             << " latent " << (opt_.independent ? "independent" : "shared") << '\n';
        std::string files = "image.pgm features.bin descriptor.json";
        if (opt_.leakage) {
            const auto leak = register_leakage_probe(*b, prompt, seed);
            std::ofstream os(dir / "leakage.csv");
            if (!os) fail(ErrorCode::IoError, "cannot write leakage.csv");
            write_leakage_csv(os, leak);
            out_ << "leakage max " << detail::fmt_real([&] {
                double m = 0.0;
                for (const auto& e : leak.entries) m = std::max(m, e.pad_row_delta_norm);
                return m;
            }()) << (leak.any_positive() ? " (pads carry prompt information)" : " (no leakage)") << '\n';
            files += " leakage.csv";
        }
        out_ << "wrote " << files << '\n';
    }

    void cmd_attn() {
        auto b = backend();
        const auto prompt = b->tokenize(detail::read_prompt_arg(opt_.prompt));
        CaptureFilter filter;
        auto to_set = [](std::pair<std::size_t, std::size_t> r) {
            std::set<std::size_t> s;
            for (std::size_t i = r.first; i <= r.second; ++i) s.insert(i);
            return s;
        };
        if (opt_.steps_subset) filter.steps = to_set(detail::parse_range(*opt_.steps_subset));
        if (opt_.layers_subset) filter.layers = to_set(detail::parse_range(*opt_.layers_subset));
        const auto records = record_attention(*b, prompt, seed_or_default(flags_.seed), filter);
        const auto mass = token_attention_mass(records, prompt);
        {
            std::ofstream os(opt_.hist);
            if (!os) fail(ErrorCode::IoError, "cannot open " + opt_.hist);
            write_histogram_csv(os, mass, prompt);
        }
        out_ << "captured " << records.size() << " attention records\n";
        std::size_t top = 0;
        for (std::size_t t = 1; t < mass.size(); ++t)
            if (mass[t] > mass[top]) top = t;
        out_ << "max mass token " << top << " (" << to_string(prompt.segments()[top]) << ") "
             << detail::fmt_real(mass[top]) << '\n';
        std::vector<std::string> wrote{std::filesystem::path(opt_.hist).filename().string()};
        if (opt_.plot) {
            std::ofstream os(*opt_.plot);
            if (!os) fail(ErrorCode::IoError, "cannot open " + *opt_.plot);
            write_histogram_svg(os, mass, prompt, opt_.trim);
            wrote.push_back(std::filesystem::path(*opt_.plot).filename().string());
        }
        if (opt_.map) {
            if (!opt_.token) fail(ErrorCode::InvalidArgument, "--map requires --token");
            auto [h, w] = detail::default_grid(b->config().image_tokens);
            if (opt_.grid) {
                const auto x = opt_.grid->find('x');
                auto hv = x == std::string::npos ? std::nullopt : padprobe::detail::parse_u32(std::string_view(*opt_.grid).substr(0, x));
                auto wv = x == std::string::npos ? std::nullopt : padprobe::detail::parse_u32(std::string_view(*opt_.grid).substr(x + 1));
                if (!hv || !wv) fail(ErrorCode::InvalidArgument, "--grid expects HxW");
                h = *hv;
                w = *wv;
            }
            const auto map = token_spatial_map(records, *opt_.token, h, w);
            std::ofstream os(*opt_.map, std::ios::binary);
            if (!os) fail(ErrorCode::IoError, "cannot open " + *opt_.map);
            plot::write_pgm(os, map.h, map.w, map.values);
            out_ << "spatial map token " << *opt_.token << " grid " << h << "x" << w << '\n';
            wrote.push_back(std::filesystem::path(*opt_.map).filename().string());
        }
        out_ << "wrote";
        for (const auto& f : wrote) out_ << ' ' << f;
        out_ << '\n';
    }

    void cmd_kid() {
        const auto ref = repfile::load_features(opt_.ref_features);
        const auto gen = repfile::load_features(opt_.gen_features);
        KidConfig cfg;
        if (opt_.degree) cfg.kernel_degree = *opt_.degree;
        cfg.kernel_gamma = opt_.gamma;
        if (opt_.coef0) cfg.kernel_coef0 = *opt_.coef0;
        cfg.subset_size = opt_.subset_size;
        cfg.n_subsets = opt_.n_subsets;
        cfg.seed = seed_or_default(flags_.seed);
        const double value = kid(gen.vectors, ref.vectors, cfg);
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.17g", value);
        out_ << "kid " << buf << '\n';
        if (opt_.kid_multiplier) {
            std::snprintf(buf, sizeof buf, "%.17g", value * *opt_.kid_multiplier);
            out_ << "kid_display " << buf << " (x" << *opt_.kid_multiplier << ")\n";
        }
    }

    void cmd_clip() {
        const auto img = repfile::load_features(opt_.ref_features);
        const auto txt = repfile::load_features(opt_.gen_features);
        if (img.vectors.rows() != txt.vectors.rows())
            fail(ErrorCode::DimensionMismatch, "feature files have different row counts");
        std::vector<double> scores;
        for (std::size_t r = 0; r < img.vectors.rows(); ++r) {
            scores.push_back(clip_score(img.vectors.row(r), txt.vectors.row(r), opt_.clip_scale.value_or(1.0)));
            out_ << "row " << r << " " << detail::fmt_real(scores.back()) << '\n';
        }
        const auto agg = aggregate(scores);
        out_ << "mean " << detail::fmt_real(agg.mean) << " std " << detail::fmt_real(agg.std) << " n " << agg.n << '\n';
    }

    void cmd_plan() {
        std::vector<std::string> warnings;
        auto prompts = load_prompts(opt_.prompts, &warnings);
        for (const auto& w : warnings) log(LogLevel::Warn, w);
        const auto reg = load_registry(config_);
        const std::string id = config_.backend.value_or(reg.default_id());
        const auto conditions = parse_conditions(opt_.conditions.value_or("full,prompt,pads,clean"));
        const auto plan = build_plan(std::move(prompts), opt_.seeds_per_prompt.value_or(10), conditions, id,
                                     seed_or_default(flags_.seed), reg.get(id).hash());
        save_plan(opt_.out, plan);
        out_ << "plan " << plan.prompts.size() << " prompts x " << plan.seeds_per_prompt << " seeds x "
             << plan.conditions.size() << " conditions = " << plan.total_generations() << " generations\n";
        out_ << "plan hash " << plan_hash(plan) << " backend " << plan.backend_id << '\n';
        out_ << "wrote " << std::filesystem::path(opt_.out).filename().string() << '\n';
    }

    void print_report(const ExperimentReport& r) {
        out_ << "condition            clip_text   std        clip_ref   kid_vs_full  n\n";
        for (const auto& row : r.rows) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%-20s %-11s %-10s %-10s %-12s %zu\n", row.condition.c_str(),
                          detail::fmt_opt(row.mean_clip_text).c_str(), detail::fmt_opt(row.std_clip_text).c_str(),
                          detail::fmt_opt(row.mean_clip_image_ref).c_str(),
                          detail::fmt_opt(row.kid_vs_full, 8).c_str(), row.n);
            out_ << buf;
        }
    }

    BackendFactory factory_for(const ExperimentPlan& plan) {
        const auto reg = load_registry(config_);
        const BackendConfig cfg = reg.get(plan.backend_id);
        return [cfg] { return make_backend(cfg); };
    }

    void cmd_run() {
        const auto plan = load_plan(opt_.plan);
        RunOptions options;
        options.method = parse_method(opt_.method);
        options.workers = effective_workers(opt_.workers.value_or(1));
        options.out_dir = out_dir_for(flags_.out_dir);
        options.max_cells = opt_.max_cells;
        options.latent_policy = opt_.independent ? LatentPolicy::Independent : LatentPolicy::SharedInitialLatent;
        EncoderPoolExtractor extractor;
        log(LogLevel::Info, "running with " + std::to_string(options.workers) + " workers");
        const auto outcome = run_plan(plan, factory_for(plan), &extractor, options);
        out_ << "cells executed " << outcome.executed << " skipped " << outcome.skipped << " failed "
             << outcome.failures.size() << " of " << plan.total_generations() << '\n';
        for (const auto& f : outcome.failures) log(LogLevel::Warn, f.cell_id + ": " + f.code + " " + f.message);
        print_report(outcome.report);
        out_ << "wrote plan.json manifest.jsonl\n";
    }

    void cmd_report() {
        const std::filesystem::path manifest_path(opt_.manifest);
        const auto dir = manifest_path.parent_path().empty() ? std::filesystem::path(".") : manifest_path.parent_path();
        const auto plan = load_plan(dir / "plan.json");
        const auto entries = read_manifest(manifest_path, plan_hash(plan));
        const std::string method = entries.empty() ? std::string("unknown") : entries.front().method;
        ReportOptions options;
        options.kid_display_multiplier = opt_.kid_multiplier.value_or(1.0);
        const auto report = build_report(plan, entries, method, plan.config_hash, options);
        const auto files = emit_report(report, parse_report_format(opt_.format),
                                       opt_.report_dir ? std::filesystem::path(*opt_.report_dir) : dir);
        print_report(report);
        out_ << "wrote";
        for (const auto& f : files) out_ << ' ' << f.filename().string();
        out_ << '\n';
    }

    void cmd_segments() {
        const auto plan = load_plan(opt_.plan);
        RunOptions options;
        options.workers = effective_workers(opt_.workers.value_or(1));
        EncoderPoolExtractor extractor;
        const auto rows = segment_report(plan, opt_.n_segments.value_or(5), factory_for(plan), &extractor, options);
        out_ << "segment condition        mean_clip  std        n\n";
        for (const auto& r : rows) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%-7zu %-16s %-10s %-10s %zu\n", r.segment, r.condition.c_str(),
                          detail::fmt_real(r.mean_clip_text).c_str(), detail::fmt_real(r.std_clip_text).c_str(), r.n);
            out_ << buf;
        }
    }

    void cmd_conformance() {
        const auto report = adapter_conformance(*backend());
        write_conformance(out_, report);
        if (!report.passed()) fail(ErrorCode::BackendError, "conformance failed for backend '" + report.backend_id + "'");
    }

    struct Options {
        std::string prompt;
        std::string out;
        bool clean = false;
        std::string condition;
        std::optional<std::string> streams;
        std::optional<std::string> steps_subset;
        std::optional<std::string> layers_subset;
        bool independent = false;
        bool leakage = false;
        std::string hist;
        std::optional<std::size_t> token;
        std::optional<std::string> map;
        std::optional<std::string> grid;
        std::optional<std::string> plot;
        std::optional<std::size_t> trim;
        std::string ref_features;
        std::string gen_features;
        std::optional<std::size_t> subset_size;
        std::optional<std::size_t> n_subsets;
        std::optional<unsigned> degree;
        std::optional<double> gamma;
        std::optional<double> coef0;
        std::optional<double> kid_multiplier;
        std::optional<double> clip_scale;
        std::string prompts;
        std::optional<std::size_t> seeds_per_prompt;
        std::optional<std::string> conditions;
        std::string plan;
        std::string method;
        std::optional<std::size_t> workers;
        std::optional<std::size_t> max_cells;
        std::string manifest;
        std::string format;
        std::optional<std::string> report_dir;
        std::optional<std::size_t> n_segments;
    };

    std::ostream& out_;
    std::ostream& err_;
    EnvLookup env_;
    CliFlags flags_;
    CliConfig config_;
    Options opt_;
    std::function<void()> action_;
};

inline int parse_and_dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr, EnvLookup env = process_env) {
    Program program(out, err, std::move(env));
    return program.run(args);
}

}  // namespace padprobe::cli
