#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "healer/context.hpp"

namespace healer {

inline constexpr const char* kErrorOpenTag = "<error>";
inline constexpr const char* kErrorCloseTag = "</error>";
inline constexpr const char* kCodeOpenTag = "<code>";
inline constexpr const char* kCodeCloseTag = "</code>";

struct PromptPair {
    std::string system_text;
    std::string user_text;
    std::string language_name;
    std::vector<std::string> forbidden_keywords;
};

struct PromptTemplates {
    // Whole system-prompt template with {Language}/{Keywords} placeholders.
    std::string system_template;
    static PromptTemplates defaults();
    static PromptTemplates from_file(const std::filesystem::path& path);
};

enum class Extraction { OK, MISSING_TAGS, EMPTY };

struct HandlingCode {
    std::string raw_response;
    std::string code;
    Extraction extraction = Extraction::MISSING_TAGS;
};

std::string render_system_prompt(const PromptTemplates& templates,
                                 const std::string& language_name,
                                 const std::vector<std::string>& keywords);

std::string render_user_prompt(const ErrorContext& ctx,
                               const StateBudgets& budgets, PythonRuntime& rt);

PromptPair build_prompt_pair(const ErrorContext& ctx,
                             const PromptTemplates& templates,
                             const std::string& language_name,
                             const std::vector<std::string>& keywords,
                             const StateBudgets& budgets, PythonRuntime& rt);

HandlingCode extract_handling_code(const std::string& raw_response);

// First forbidden keyword appearing as a whole lexical token, if any.
std::optional<std::string> check_forbidden(
    PythonRuntime& rt, const std::string& code,
    const std::vector<std::string>& keywords);

std::vector<std::string> default_forbidden_keywords();

}  // namespace healer
