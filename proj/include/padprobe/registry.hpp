#pragma once

// Backend registry (INI-style key=value file) and external adapter loading.
//
//   default = toy-mmdit          # optional, before any section
//   [my-backend]
//   kind = toy_mmdit | toy_xattn | external
//   n = 16                       # fixed prompt length
//   d = 8
//   image_tokens = 16
//   layers = 2
//   steps = 4
//   weight_seed = 0
//   lora_alpha = 0.5             # optional
//   special_tokens = true
//   qk_gain = 1.0
//   adapter = flux_adapter       # external: shared object name
//   external.<key> = <value>     # passed through to the adapter
//
// External adapters are shared objects found in the directories listed in
// PADPROBE_BACKEND_DIR (colon-separated). Each exports
//
//   extern "C" padprobe::Backend* padprobe_create_adapter(const padprobe::BackendConfig&);

#include <dlfcn.h>

#include <charconv>
#include <cstdlib>
#include <optional>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>

#include "padprobe/toy_backend.hpp"

namespace padprobe {

/// Backend assembled from callbacks; the contract for out-of-tree runtimes.
struct AdapterCallbacks {
    std::function<PaddedPrompt(std::string_view)> tokenize;
    std::function<Conditioning(const PaddedPrompt&)> encode;
    // Optional when `begin` is provided.
    std::function<GenerationResult(const Conditioning&, std::uint64_t, const CaptureOptions&)> generate;
    // Stepwise generation; required for IDP.
    std::function<std::unique_ptr<GenerationContext>(const Conditioning&, std::uint64_t, const CaptureOptions&)> begin;
    std::function<std::shared_ptr<const Backend>(double)> with_lora_scale;
};

class CallbackAdapter final : public Backend {
public:
    CallbackAdapter(BackendConfig config, Capabilities caps, AdapterCallbacks callbacks)
        : Backend(std::move(config), caps), cb_(std::move(callbacks)) {
        if (!cb_.tokenize || !cb_.encode || (!cb_.generate && !cb_.begin))
            fail(ErrorCode::ConfigError, "adapter must provide tokenize, encode and generate or begin");
    }

    PaddedPrompt tokenize(std::string_view text) const override { return cb_.tokenize(text); }
    Conditioning encode(const PaddedPrompt& prompt) const override { return cb_.encode(prompt); }

    std::unique_ptr<GenerationContext> begin(const Conditioning& cond, std::uint64_t seed,
                                             const CaptureOptions& capture = {}) const override {
        if (!cb_.begin) return Backend::begin(cond, seed, capture);
        return cb_.begin(cond, seed, capture);
    }

    std::shared_ptr<const Backend> with_lora_scale(double alpha) const override {
        if (!capabilities().lora_scaling || !cb_.with_lora_scale) return Backend::with_lora_scale(alpha);
        return cb_.with_lora_scale(alpha);
    }

protected:
    GenerationResult generate_unlocked(const Conditioning& cond, std::uint64_t seed,
                                       const CaptureOptions& capture) const override {
        if (cb_.generate) return cb_.generate(cond, seed, capture);
        return Backend::generate_unlocked(cond, seed, capture);
    }

private:
    AdapterCallbacks cb_;
};

inline BackendHandle set_lora_scale(const BackendHandle& handle, double alpha) {
    if (!handle->capabilities().lora_scaling)
        fail(ErrorCode::UnsupportedCapability, "backend '" + handle->id() + "' does not support LoRA scaling");
    if (alpha < 0.0 || alpha > 1.0) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
    return handle->with_lora_scale(alpha);
}

using AdapterFactory = Backend* (*)(const BackendConfig&);
inline constexpr const char* kAdapterSymbol = "padprobe_create_adapter";

inline std::vector<std::filesystem::path> adapter_search_dirs() {
    std::vector<std::filesystem::path> dirs;
    const char* env = std::getenv("PADPROBE_BACKEND_DIR");
    if (!env) return dirs;
    std::string_view list(env);
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto colon = list.find(':', start);
        const auto item = list.substr(start, colon == std::string_view::npos ? std::string_view::npos : colon - start);
        if (!item.empty()) dirs.emplace_back(item);
        if (colon == std::string_view::npos) break;
        start = colon + 1;
    }
    return dirs;
}

inline std::optional<std::filesystem::path> find_adapter(const std::string& name) {
    for (const auto& dir : adapter_search_dirs())
        for (const auto& file : {"lib" + name + ".so", name + ".so", name + ".dylib", "lib" + name + ".dylib"})
            if (std::filesystem::exists(dir / file)) return dir / file;
    return std::nullopt;
}

inline BackendHandle load_external_backend(const BackendConfig& config) {
    const auto it = config.external.find("adapter");
    if (it == config.external.end() || it->second.empty())
        fail(ErrorCode::ConfigError, "external backend '" + config.id + "' names no adapter");
    const auto path = find_adapter(it->second);
    if (!path)
        fail(ErrorCode::BackendError, "adapter '" + it->second + "' not found in PADPROBE_BACKEND_DIR");

    void* lib = ::dlopen(path->c_str(), RTLD_NOW | RTLD_LOCAL);
    if (!lib) fail(ErrorCode::BackendError, std::string("dlopen failed: ") + ::dlerror());
    std::shared_ptr<void> keep_alive(lib, [](void* h) { ::dlclose(h); });
    auto factory = reinterpret_cast<AdapterFactory>(::dlsym(lib, kAdapterSymbol));
    if (!factory) fail(ErrorCode::BackendError, path->string() + " does not export " + kAdapterSymbol);

    Backend* raw = nullptr;
    try {
        raw = factory(config);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(ErrorCode::BackendError, std::string("adapter construction failed: ") + e.what());
    }
    if (!raw) fail(ErrorCode::BackendError, "adapter factory returned null");
    // The library must outlive the object its code created.
    return BackendHandle(raw, [keep_alive](const Backend* b) { delete b; });
}

inline BackendHandle make_backend(const BackendConfig& config) {
    if (config.kind == BackendKind::External) return load_external_backend(config);
    return ToyBackend::create(config);
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

inline std::uint64_t parse_u64_value(const std::string& v, const std::string& key) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
        fail(ErrorCode::ConfigError, "key '" + key + "' expects an unsigned integer, got '" + v + "'");
    return out;
}

inline double parse_real_value(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
        fail(ErrorCode::ConfigError, "key '" + key + "' expects a real number, got '" + v + "'");
    return out;
}

inline bool parse_bool_value(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorCode::ConfigError, "key '" + key + "' expects a boolean, got '" + v + "'");
}

inline void apply_key(BackendConfig& c, const std::string& key, const std::string& value) {
    if (key == "kind") c.kind = parse_backend_kind(value);
    else if (key == "n" || key == "N") c.n = parse_u64_value(value, key);
    else if (key == "d") c.d = parse_u64_value(value, key);
    else if (key == "image_tokens") c.image_tokens = parse_u64_value(value, key);
    else if (key == "layers") c.layers = parse_u64_value(value, key);
    else if (key == "steps") c.steps = parse_u64_value(value, key);
    else if (key == "weight_seed") c.weight_seed = parse_u64_value(value, key);
    else if (key == "lora_alpha") c.lora_alpha = parse_real_value(value, key);
    else if (key == "special_tokens") c.special_tokens = parse_bool_value(value, key);
    else if (key == "qk_gain") c.qk_gain = parse_real_value(value, key);
    else if (key == "adapter") c.external["adapter"] = value;
    else if (key.starts_with("external.") && key.size() > 9) c.external[key.substr(9)] = value;
    else fail(ErrorCode::ConfigError, "unknown backend key '" + key + "'");
}

}  // namespace detail

class BackendRegistry {
public:
    /// Registry holding the two toy backends at their default scale.
    static BackendRegistry builtin() {
        BackendRegistry r;
        BackendConfig x;
        x.id = "toy-xattn";
        x.kind = BackendKind::ToyXattn;
        BackendConfig m;
        m.id = "toy-mmdit";
        m.kind = BackendKind::ToyMmdit;
        r.entries_[x.id] = x;
        r.entries_[m.id] = m;
        r.default_id_ = "toy-mmdit";
        return r;
    }

    /// Parses registry text on top of the builtin entries.
    static BackendRegistry parse(std::string_view text) {
        BackendRegistry r = builtin();
        std::istringstream is{std::string(text)};
        std::string line;
        std::size_t lineno = 0;
        BackendConfig* current = nullptr;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            const std::string body = detail::trim(std::string_view(line).substr(0, hash));
            if (body.empty()) continue;
            const std::string where = "registry line " + std::to_string(lineno) + ": ";
            if (body.front() == '[') {
                if (body.back() != ']' || body.size() < 3) fail(ErrorCode::ConfigError, where + "malformed section");
                const std::string id = detail::trim(std::string_view(body).substr(1, body.size() - 2));
                BackendConfig fresh;
                fresh.id = id;
                current = &(r.entries_[id] = fresh);
                continue;
            }
            const auto eq = body.find('=');
            if (eq == std::string::npos) fail(ErrorCode::ConfigError, where + "expected key = value");
            const std::string key = detail::trim(std::string_view(body).substr(0, eq));
            const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
            if (!current) {
                if (key != "default") fail(ErrorCode::ConfigError, where + "only 'default' may precede sections");
                r.default_id_ = value;
                continue;
            }
            try {
                detail::apply_key(*current, key, value);
            } catch (const Error& e) {
                fail(ErrorCode::ConfigError, where + e.what());
            }
        }
        for (const auto& [id, cfg] : r.entries_) {
            try {
                cfg.validate();
            } catch (const Error& e) {
                fail(ErrorCode::ConfigError, "backend '" + id + "': " + e.what());
            }
        }
        if (!r.entries_.count(r.default_id_))
            fail(ErrorCode::ConfigError, "default backend '" + r.default_id_ + "' is not defined");
        return r;
    }

    static BackendRegistry load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) fail(ErrorCode::ConfigError, "cannot open registry " + path.string());
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str());
    }

    const std::string& default_id() const noexcept { return default_id_; }
    const std::map<std::string, BackendConfig>& entries() const noexcept { return entries_; }

    const BackendConfig& get(const std::string& id) const {
        auto it = entries_.find(id);
        if (it == entries_.end()) fail(ErrorCode::ConfigError, "unknown backend '" + id + "'");
        return it->second;
    }

    BackendHandle make(const std::string& id) const { return make_backend(get(id)); }

private:
    std::map<std::string, BackendConfig> entries_;
    std::string default_id_;
};

}  // namespace padprobe
