#pragma once

// Prompt-set ingestion (RFC 4180 CSV with header id,category,prompt),
// experiment plans with stable per-(prompt, replicate) seeds, and an optional
// client boundary for externally generated prompt candidates.

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "padprobe/detail/hash.hpp"
#include "padprobe/reptypes.hpp"

namespace padprobe {

inline constexpr std::array<std::string_view, 8> kCategories = {
    "Fine-grained Detail", "Imagination", "Simple Detail", "Style and Format",
    "Complex", "Linguistic Structures", "Perspective", "Quantity",
};

inline bool is_known_category(std::string_view c) {
    for (auto k : kCategories)
        if (k == c) return true;
    return false;
}

struct PromptRecord {
    std::string id;
    std::string category;
    std::string text;
    bool unreviewed = false;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

namespace csv {

/// Splits RFC 4180 text into records. Accepts LF or CRLF line endings.
inline std::vector<std::vector<std::string>> parse(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    std::size_t line = 1;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                    if (i + 1 < text.size() && text[i + 1] != ',' && text[i + 1] != '\n' && text[i + 1] != '\r')
                        fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": text after closing quote");
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started || !field.empty())
                    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": stray quote");
                quoted = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') break;
                fail(ErrorCode::ParseError, "line " + std::to_string(line) + ": bare carriage return");
            case '\n':
                end_row();
                ++line;
                break;
            default:
                field += c;
                field_started = true;
        }
    }
    if (quoted) fail(ErrorCode::ParseError, "unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

inline std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos && !s.empty() && s.front() != ' ' && s.back() != ' ')
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace csv

inline std::vector<PromptRecord> parse_prompts(std::string_view text, std::vector<std::string>* warnings = nullptr) {
    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
    const auto rows = csv::parse(text);
    if (rows.empty()) fail(ErrorCode::ParseError, "prompt file is empty");
    const std::vector<std::string> header{"id", "category", "prompt"};
    if (rows.front() != header) fail(ErrorCode::ParseError, "prompt CSV header must be id,category,prompt");

    std::vector<PromptRecord> out;
    std::set<std::string> ids;
    std::unordered_map<std::string, std::string> texts;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].empty()) continue;  // blank line
        const std::string where = "row " + std::to_string(r + 1);
        if (row.size() != 3) fail(ErrorCode::ParseError, where + ": expected 3 fields, got " + std::to_string(row.size()));
        PromptRecord rec{row[0], row[1], row[2]};
        if (rec.id.empty()) fail(ErrorCode::ParseError, where + ": empty id");
        if (rec.text.empty()) fail(ErrorCode::ParseError, where + ": empty prompt text");
        if (!is_known_category(rec.category))
            fail(ErrorCode::UnknownCategory, where + ": unknown category '" + rec.category + "'");
        if (!ids.insert(rec.id).second) fail(ErrorCode::DuplicateId, where + ": duplicate id '" + rec.id + "'");
        if (auto [it, fresh] = texts.try_emplace(rec.text, rec.id); !fresh && warnings)
            warnings->push_back("duplicate prompt text in '" + rec.id + "' and '" + it->second + "'");
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<PromptRecord> load_prompts(const std::filesystem::path& path,
                                              std::vector<std::string>* warnings = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_prompts(ss.str(), warnings);
}

inline void write_prompts(std::ostream& os, const std::vector<PromptRecord>& records) {
    os << "id,category,prompt\n";
    for (const auto& r : records)
        os << csv::quote_if_needed(r.id) << ',' << csv::quote_if_needed(r.category) << ','
           << csv::quote_if_needed(r.text) << '\n';
}

inline std::string prompts_to_csv(const std::vector<PromptRecord>& records) {
    std::ostringstream os;
    write_prompts(os, records);
    return os.str();
}

struct PlanCell {
    std::size_t prompt_index = 0;
    std::size_t replicate = 0;
    std::size_t condition_index = 0;
    std::uint64_t seed = 0;
    std::string id;
};

struct ExperimentPlan {
    std::vector<PromptRecord> prompts;
    std::size_t seeds_per_prompt = 0;
    std::vector<Condition> conditions;
    std::string backend_id;
    std::string config_hash;  // may be empty when built without a resolved backend
    std::uint64_t plan_seed = 0;
    std::vector<std::vector<std::uint64_t>> seeds;  // [prompt][replicate]

    std::size_t total_generations() const { return prompts.size() * seeds_per_prompt * conditions.size(); }

    static std::string cell_id(const PromptRecord& p, std::size_t replicate, const Condition& c) {
        return p.id + "/" + std::to_string(replicate) + "/" + c.name();
    }

    /// Prompt-major, then replicate, then condition.
    std::vector<PlanCell> cells() const {
        std::vector<PlanCell> out;
        out.reserve(total_generations());
        for (std::size_t i = 0; i < prompts.size(); ++i)
            for (std::size_t r = 0; r < seeds_per_prompt; ++r)
                for (std::size_t c = 0; c < conditions.size(); ++c)
                    out.push_back({i, r, c, seeds[i][r], cell_id(prompts[i], r, conditions[c])});
        return out;
    }
};

/// seed(prompt, replicate) depends only on the plan seed, the prompt id and the
/// replicate index, so adding prompts never shifts existing seeds.
inline std::uint64_t derive_seed(std::uint64_t plan_seed, std::string_view prompt_id, std::size_t replicate) {
    return detail::mix(plan_seed, detail::fnv1a64(prompt_id), replicate);
}

inline ExperimentPlan build_plan(std::vector<PromptRecord> prompts, std::size_t seeds_per_prompt,
                                 std::vector<Condition> conditions, std::string backend_id,
                                 std::uint64_t plan_seed = 0, std::string config_hash = {}) {
    if (prompts.empty()) fail(ErrorCode::EmptyInput, "plan needs at least one prompt");
    if (seeds_per_prompt < 1) fail(ErrorCode::InvalidArgument, "seeds_per_prompt must be >= 1");
    if (conditions.empty()) fail(ErrorCode::UnknownCondition, "plan needs at least one condition");
    std::set<std::string> names;
    for (const auto& c : conditions)
        if (!names.insert(c.name()).second) fail(ErrorCode::InvalidArgument, "duplicate condition " + c.name());
    std::set<std::string> ids;
    for (const auto& p : prompts) {
        if (p.unreviewed)
            fail(ErrorCode::Unreviewed, "prompt '" + p.id + "' has not been reviewed; mark it reviewed first");
        if (!ids.insert(p.id).second) fail(ErrorCode::DuplicateId, "duplicate id '" + p.id + "'");
    }

    ExperimentPlan plan{std::move(prompts), seeds_per_prompt, std::move(conditions), std::move(backend_id),
                        std::move(config_hash), plan_seed, {}};
    std::set<std::uint64_t> used;
    for (const auto& p : plan.prompts) {
        auto& row = plan.seeds.emplace_back();
        for (std::size_t r = 0; r < seeds_per_prompt; ++r) {
            const auto s = derive_seed(plan_seed, p.id, r);
            if (!used.insert(s).second) fail(ErrorCode::IntegrityError, "seed collision in plan");
            row.push_back(s);
        }
    }
    return plan;
}

inline std::vector<Condition> parse_conditions(std::string_view list) {
    std::vector<Condition> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto item = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        if (!item.empty()) out.push_back(parse_condition(item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline nlohmann::json plan_to_json(const ExperimentPlan& plan) {
    nlohmann::json j;
    j["backend_id"] = plan.backend_id;
    j["config_hash"] = plan.config_hash;
    j["plan_seed"] = plan.plan_seed;
    j["seeds_per_prompt"] = plan.seeds_per_prompt;
    auto& conds = j["conditions"] = nlohmann::json::array();
    for (const auto& c : plan.conditions) conds.push_back(c.name());
    auto& prompts = j["prompts"] = nlohmann::json::array();
    for (std::size_t i = 0; i < plan.prompts.size(); ++i) {
        const auto& p = plan.prompts[i];
        prompts.push_back({{"id", p.id}, {"category", p.category}, {"prompt", p.text}, {"seeds", plan.seeds[i]}});
    }
    return j;
}

inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
    try {
        ExperimentPlan plan;
        plan.backend_id = j.at("backend_id").get<std::string>();
        plan.config_hash = j.value("config_hash", std::string{});
        plan.plan_seed = j.at("plan_seed").get<std::uint64_t>();
        plan.seeds_per_prompt = j.at("seeds_per_prompt").get<std::size_t>();
        for (const auto& c : j.at("conditions")) plan.conditions.push_back(parse_condition(c.get<std::string>()));
        for (const auto& p : j.at("prompts")) {
            PromptRecord rec{p.at("id").get<std::string>(), p.at("category").get<std::string>(),
                             p.at("prompt").get<std::string>()};
            if (!is_known_category(rec.category))
                fail(ErrorCode::UnknownCategory, "unknown category '" + rec.category + "'");
            plan.prompts.push_back(std::move(rec));
            plan.seeds.push_back(p.at("seeds").get<std::vector<std::uint64_t>>());
            if (plan.seeds.back().size() != plan.seeds_per_prompt)
                fail(ErrorCode::ParseError, "seed table row length differs from seeds_per_prompt");
        }
        if (plan.prompts.empty()) fail(ErrorCode::ParseError, "plan has no prompts");
        return plan;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("malformed plan: ") + e.what());
    }
}

inline std::string plan_hash(const ExperimentPlan& plan) {
    return detail::hex64(detail::fnv1a64(plan_to_json(plan).dump()));
}

inline void save_plan(const std::filesystem::path& path, const ExperimentPlan& plan) {
    std::ofstream os(path);
    if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os << plan_to_json(plan).dump(2) << '\n';
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("plan is not valid JSON: ") + e.what());
    }
    return plan_from_json(j);
}

/// External text-generation service used to propose new prompts. Implementors
/// throw Error(ServiceUnavailable) when the service cannot be reached.
class AugmentationService {
public:
    virtual ~AugmentationService() = default;
    virtual std::string complete(const std::string& instruction, const std::string& source_csv) = 0;
};

/// Sends the source prompts as CSV and parses a prompt CSV back. Returned
/// records are tagged unreviewed; build_plan rejects them until reviewed.
inline std::vector<PromptRecord> augmentation_client(AugmentationService* service,
                                                     const std::vector<PromptRecord>& source,
                                                     const std::string& instruction) {
    if (!service) fail(ErrorCode::ServiceUnavailable, "no augmentation service configured");
    const std::string response = service->complete(instruction, prompts_to_csv(source));
    std::vector<PromptRecord> out;
    try {
        out = parse_prompts(response);
    } catch (const Error& e) {
        fail(ErrorCode::MalformedResponse, std::string("service response is not a prompt CSV: ") + e.what());
    }
    for (auto& r : out) r.unreviewed = true;
    return out;
}

inline std::vector<PromptRecord> mark_reviewed(std::vector<PromptRecord> records) {
    for (auto& r : records) r.unreviewed = false;
    return records;
}

}  // namespace padprobe
