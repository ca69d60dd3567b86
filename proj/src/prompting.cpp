#include "healer/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "healer/errors.hpp"

namespace healer {

namespace {

constexpr const char* kSystemTemplate =
    "You are an intelligent {Language} expert.\n"
    "The user will provide you with a piece of buggy {Language} code, along "
    "with an error message and program state.\n"
    "Your task is to generate correct lines to replace the lines where the "
    "errors occur.\n"
    "However, you can NOT change the rest of the code except the erroneous "
    "lines.\n"
    "The erroneous lines will be wrapped with <error> and </error>.\n"
    "You can use any built-in functions or libraries in the generated lines.\n"
    "You can also use the variables in the program state.\n"
    "\n"
    "Your code should achieve two goals:\n"
    "1) Survive the error to ensure no more execptions will be raised, such "
    "as correcting wrong values in the program state, initializing undefined "
    "variables, or importing missing libraries;\n"
    "2) Maintain the same functionality as the original code.\n"
    "\n"
    "The code MUST be written in {Language} and should not omit any details.\n"
    "The code MUST be complete and correct in syntax.\n"
    "The code will be executed so its indentation should start from the first "
    "column.\n"
    "You are NOT allowed to use these keywords: {Keywords}.\n"
    "You MUST put <code></code> on the boundary of the generated code.\n"
    "Do not write anything else in your response.\n"
    "\n"
    "Here is one example:\n"
    "\n"
    "Source Code:\n"
    "x = 10\n"
    "<error>\n"
    "y = x + z\n"
    "</error>\n"
    "print(y)\n"
    "\n"
    "Error Message:\n"
    "NameError: name 'z' is not defined\n"
    "\n"
    "Program State:\n"
    "x: int = 10\n"
    "\n"
    "Answer:\n"
    "<code>\n"
    "z = 0\n"
    "y = x + z\n"
    "</code>";

void replace_all(std::string& text, const std::string& needle,
                 const std::string& replacement) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), replacement);
        pos += replacement.size();
    }
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            if (pos < text.size()) lines.push_back(text.substr(pos));
            break;
        }
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return lines;
}

std::set<std::string> identifier_set(PythonRuntime& rt, const std::string& text) {
    auto tokens = rt.name_tokens(text);
    std::set<std::string> names;
    if (tokens) {
        names.insert(tokens->begin(), tokens->end());
        return names;
    }
    // Fragment does not tokenize; fall back to a plain identifier scan.
    static const std::regex ident(R"([A-Za-z_][A-Za-z0-9_]*)");
    for (auto it = std::sregex_iterator(text.begin(), text.end(), ident);
         it != std::sregex_iterator(); ++it) {
        names.insert(it->str());
    }
    return names;
}

std::string state_line(const StateSnapshot::Entry& entry) {
    return entry.name + ": " + entry.value.type_name + " = " +
           entry.value.rendering;
}

// Relevance to the error site: 0 = named in the tagged lines, 1 = named
// elsewhere in the source, 2 = neither. Overflow drops class 2 first, then 1,
// then (only if a pathological budget demands it) class 0, latest-captured
// entries first within a class.
std::vector<StateSnapshot::Entry> apply_total_budget(
    const ErrorContext& ctx, const StateBudgets& budgets, PythonRuntime& rt) {
    std::vector<StateSnapshot::Entry> kept = ctx.snapshot.entries;
    if (kept.empty()) return kept;

    long total = 0;
    for (size_t i = 0; i < kept.size(); ++i) {
        total += rt.char_len(state_line(kept[i]));
        if (i + 1 < kept.size()) total += 1;  // joining newline
    }
    if (total <= budgets.total_chars) return kept;

    auto lines = split_lines(ctx.source);
    std::string tagged;
    for (int ln = ctx.span.start_line; ln <= ctx.span.end_line; ++ln) {
        if (ln >= 1 && ln <= static_cast<int>(lines.size())) {
            tagged += lines[ln - 1];
            tagged.push_back('\n');
        }
    }
    auto tagged_names = identifier_set(rt, tagged);
    auto source_names = identifier_set(rt, ctx.source);

    auto priority_of = [&](const std::string& name) {
        if (tagged_names.count(name)) return 0;
        if (source_names.count(name)) return 1;
        return 2;
    };

    for (int klass = 2; klass >= 0 && total > budgets.total_chars; --klass) {
        for (auto it = kept.rbegin();
             it != kept.rend() && total > budgets.total_chars;) {
            if (priority_of(it->name) != klass) {
                ++it;
                continue;
            }
            total -= rt.char_len(state_line(*it));
            if (kept.size() > 1) total -= 1;
            it = decltype(it)(kept.erase(std::next(it).base()));
        }
    }
    return kept;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
    return PromptTemplates{kSystemTemplate};
}

PromptTemplates PromptTemplates::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read template file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return PromptTemplates{buf.str()};
}

std::string render_system_prompt(const PromptTemplates& templates,
                                 const std::string& language_name,
                                 const std::vector<std::string>& keywords) {
    std::string text = templates.system_template;
    std::string joined;
    if (keywords.empty()) {
        joined = "none";
    } else {
        for (size_t i = 0; i < keywords.size(); ++i) {
            if (i) joined += ", ";
            joined += keywords[i];
        }
    }
    replace_all(text, "{Language}", language_name);
    replace_all(text, "{Keywords}", joined);
    return text;
}

std::string render_user_prompt(const ErrorContext& ctx,
                               const StateBudgets& budgets, PythonRuntime& rt) {
    std::string out = "Source Code:\n";
    auto lines = split_lines(ctx.source);
    int total_lines = static_cast<int>(lines.size());
    int start = std::clamp(ctx.span.start_line, 1, std::max(total_lines, 1));
    int end = std::clamp(ctx.span.end_line, start, std::max(total_lines, 1));
    for (int ln = 1; ln <= total_lines; ++ln) {
        if (ln == start) {
            out += kErrorOpenTag;
            out.push_back('\n');
        }
        out += lines[ln - 1];
        out.push_back('\n');
        if (ln == end) {
            out += kErrorCloseTag;
            out.push_back('\n');
        }
    }
    if (total_lines == 0) {
        out += kErrorOpenTag;
        out.push_back('\n');
        out += kErrorCloseTag;
        out.push_back('\n');
    }

    out += "\nError Message:\n";
    out += ctx.error_type + ": " + ctx.error_message + "\n";

    out += "\nProgram State:";
    auto kept = apply_total_budget(ctx, budgets, rt);
    if (kept.empty()) {
        out += "\n(empty)";
    } else {
        for (const auto& entry : kept) {
            out.push_back('\n');
            out += state_line(entry);
        }
    }
    return out;
}

PromptPair build_prompt_pair(const ErrorContext& ctx,
                             const PromptTemplates& templates,
                             const std::string& language_name,
                             const std::vector<std::string>& keywords,
                             const StateBudgets& budgets, PythonRuntime& rt) {
    PromptPair pair;
    pair.system_text = render_system_prompt(templates, language_name, keywords);
    pair.user_text = render_user_prompt(ctx, budgets, rt);
    pair.language_name = language_name;
    pair.forbidden_keywords = keywords;
    return pair;
}

HandlingCode extract_handling_code(const std::string& raw_response) {
    HandlingCode out;
    out.raw_response = raw_response;
    size_t open = raw_response.find(kCodeOpenTag);
    if (open == std::string::npos) return out;
    size_t body = open + std::string(kCodeOpenTag).size();
    size_t close = raw_response.find(kCodeCloseTag, body);
    if (close == std::string::npos) return out;

    std::string interior = raw_response.substr(body, close - body);
    size_t first = interior.find_first_not_of("\r\n");
    if (first == std::string::npos) {
        out.extraction = Extraction::EMPTY;
        return out;
    }
    size_t last = interior.find_last_not_of("\r\n");
    out.code = interior.substr(first, last - first + 1);
    out.extraction =
        out.code.find_first_not_of(" \t\r\n") == std::string::npos
            ? Extraction::EMPTY
            : Extraction::OK;
    return out;
}

std::optional<std::string> check_forbidden(
    PythonRuntime& rt, const std::string& code,
    const std::vector<std::string>& keywords) {
    if (keywords.empty()) return std::nullopt;
    auto tokens = rt.name_tokens(code);
    if (tokens) {
        std::set<std::string> names(tokens->begin(), tokens->end());
        for (const auto& kw : keywords) {
            if (names.count(kw)) return kw;
        }
        return std::nullopt;
    }
    // Unparseable code: conservative word-boundary scan (may flag string
    // literals; a rejected response only costs one healing attempt).
    for (const auto& kw : keywords) {
        std::regex pattern("\\b" + kw + "\\b");
        if (std::regex_search(code, pattern)) return kw;
    }
    return std::nullopt;
}

std::vector<std::string> default_forbidden_keywords() {
    return {"input", "exit", "quit", "breakpoint"};
}

}  // namespace healer
