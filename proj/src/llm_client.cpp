#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "healer/llm_client.hpp"

#include <httplib.h>
#include <json.hpp>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <regex>
#include <thread>

#include "healer/digest.hpp"
#include "healer/errors.hpp"
#include "healer/log.hpp"

namespace healer {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start)
        .count();
}

json record_to_json(const CompletionRecord& rec) {
    json j{{"prompt_digest", rec.prompt_digest},
           {"response", rec.response},
           {"latency_ms", rec.latency_ms}};
    if (rec.token_usage) {
        j["token_usage"] = {{"prompt_tokens", rec.token_usage->prompt_tokens},
                            {"completion_tokens",
                             rec.token_usage->completion_tokens}};
    } else {
        j["token_usage"] = nullptr;
    }
    if (rec.cost_estimate) {
        j["cost_estimate"] = *rec.cost_estimate;
    } else {
        j["cost_estimate"] = nullptr;
    }
    return j;
}

CompletionRecord record_from_json(const json& j) {
    CompletionRecord rec;
    rec.prompt_digest = j.at("prompt_digest").get<std::string>();
    rec.response = j.at("response").get<std::string>();
    rec.latency_ms = j.value("latency_ms", 0.0);
    if (j.contains("token_usage") && !j["token_usage"].is_null()) {
        rec.token_usage = TokenUsage{
            j["token_usage"].value("prompt_tokens", 0L),
            j["token_usage"].value("completion_tokens", 0L)};
    }
    if (j.contains("cost_estimate") && !j["cost_estimate"].is_null())
        rec.cost_estimate = j["cost_estimate"].get<double>();
    return rec;
}

// Process-wide limiter shared by all clients; sized per configured rate.
void rate_limit(double per_min) {
    if (per_min <= 0) return;
    static std::mutex mu;
    static std::deque<Clock::time_point> sent;
    std::unique_lock<std::mutex> lock(mu);
    const auto window = std::chrono::seconds(60);
    for (;;) {
        auto now = Clock::now();
        while (!sent.empty() && now - sent.front() > window) sent.pop_front();
        if (sent.size() < static_cast<size_t>(per_min)) {
            sent.push_back(now);
            return;
        }
        auto wake = sent.front() + window;
        lock.unlock();
        std::this_thread::sleep_until(wake);
        lock.lock();
    }
}

std::string substitute_captures(const std::string& tmpl,
                                const std::smatch& match) {
    std::string out = tmpl;
    for (int i = 9; i >= 0; --i) {
        std::string placeholder = "{" + std::to_string(i) + "}";
        std::string value =
            i < static_cast<int>(match.size()) ? match[i].str() : "";
        size_t pos = 0;
        while ((pos = out.find(placeholder, pos)) != std::string::npos) {
            out.replace(pos, placeholder.size(), value);
            pos += value.size();
        }
    }
    return out;
}

}  // namespace

RecordStore::RecordStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec && !std::filesystem::is_directory(dir_))
        throw IoError("cannot create record store " + dir_.string());
}

void RecordStore::put(const CompletionRecord& record) {
    auto target = dir_ / (record.prompt_digest + ".json");
    auto tmp = dir_ / (record.prompt_digest + ".tmp" +
                       std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << record_to_json(record).dump(2) << "\n";
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into " + target.string());
    }
}

std::optional<CompletionRecord> RecordStore::get(
    const std::string& digest) const {
    auto target = dir_ / (digest + ".json");
    std::ifstream in(target, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        json j = json::parse(in);
        return record_from_json(j);
    } catch (const std::exception& e) {
        log::warn("unreadable record " + target.string() + ": " + e.what());
        return std::nullopt;
    }
}

void record_completion(RecordStore& store, const CompletionRecord& record) {
    store.put(record);
}

std::optional<CompletionRecord> lookup_completion(const RecordStore& store,
                                                  const std::string& digest) {
    return store.get(digest);
}

StubRules StubRules::defaults() {
    StubRules rules;
    rules.rules.push_back(
        {R"(name '(\w+)' is not defined)", "<code>{1} = 0</code>"});
    return rules;
}

StubRules StubRules::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read stub rules " + path.string());
    StubRules rules;
    try {
        json j = json::parse(in);
        for (const auto& item : j.value("rules", json::array())) {
            rules.rules.push_back({item.at("pattern").get<std::string>(),
                                   item.at("response").get<std::string>()});
        }
        const json overrides = j.value("overrides", json::object());
        for (const auto& [key, value] : overrides.items())
            rules.overrides[key] = value.get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError("bad stub rules " + path.string() + ": " + e.what());
    }
    return rules;
}

LlmClient::LlmClient(BackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.backend == BackendKind::REMOTE) {
        if (cfg_.endpoint_url.empty() || cfg_.model_name.empty())
            throw ConfigError("remote backend needs endpoint_url and model_name");
    }
    if (cfg_.backend == BackendKind::REPLAY) {
        if (cfg_.replay_dir.empty())
            throw ConfigError("replay backend needs a replay directory");
        replay_store_ = std::make_unique<RecordStore>(cfg_.replay_dir);
    }
    if (cfg_.backend == BackendKind::STUB) {
        stub_rules_ = cfg_.stub_rules_path.empty()
                          ? StubRules::defaults()
                          : StubRules::from_file(cfg_.stub_rules_path);
    }
    if (!cfg_.record_dir.empty())
        record_store_ = std::make_unique<RecordStore>(cfg_.record_dir);
}

LlmClient::~LlmClient() = default;

CompletionOutcome LlmClient::complete(const PromptPair& pair) {
    std::string digest = prompt_digest(cfg_.model_name, cfg_.temperature,
                                       pair.system_text, pair.user_text);
    CompletionOutcome outcome;
    switch (cfg_.backend) {
        case BackendKind::REMOTE:
            outcome = complete_remote(pair, digest);
            break;
        case BackendKind::REPLAY:
            outcome = complete_replay(digest);
            break;
        case BackendKind::STUB:
            outcome = complete_stub(pair, digest);
            break;
    }
    if (outcome.status == LlmStatus::OK && record_store_ &&
        cfg_.backend != BackendKind::REPLAY) {
        try {
            record_store_->put(outcome.record);
        } catch (const std::exception& e) {
            log::warn(std::string("record store write failed: ") + e.what());
        }
    }
    return outcome;
}

CompletionOutcome LlmClient::complete_remote(const PromptPair& pair,
                                             const std::string& digest) {
    CompletionOutcome out;
    out.record.prompt_digest = digest;

    const char* key = std::getenv(cfg_.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
        out.status = LlmStatus::MISSING_CREDENTIALS;
        out.detail = "environment variable " + cfg_.api_key_env_var + " unset";
        return out;
    }

    // Split scheme://host:port from the request path.
    size_t scheme = cfg_.endpoint_url.find("://");
    size_t path_pos = scheme == std::string::npos
                          ? cfg_.endpoint_url.find('/')
                          : cfg_.endpoint_url.find('/', scheme + 3);
    std::string base = path_pos == std::string::npos
                           ? cfg_.endpoint_url
                           : cfg_.endpoint_url.substr(0, path_pos);
    std::string path =
        path_pos == std::string::npos ? "/" : cfg_.endpoint_url.substr(path_pos);

    json body{{"model", cfg_.model_name},
              {"messages",
               json::array({{{"role", "system"}, {"content", pair.system_text}},
                            {{"role", "user"}, {"content", pair.user_text}}})},
              {"temperature", cfg_.temperature}};
    std::string payload = body.dump();

    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            double backoff_s = 0.25 * static_cast<double>(1 << (attempt - 1));
            std::this_thread::sleep_for(
                std::chrono::duration<double>(backoff_s));
        }
        rate_limit(cfg_.rate_limit_per_min);

        httplib::Client cli(base);
        auto timeout = std::chrono::duration<double>(cfg_.request_timeout_s);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        httplib::Headers headers{
            {"Authorization", std::string("Bearer ") + key}};

        auto start = Clock::now();
        auto res = cli.Post(path, headers, payload, "application/json");
        double elapsed = ms_since(start);

        if (!res) {
            out.detail = "transport error: " + httplib::to_string(res.error());
            continue;  // retryable
        }
        if (res->status >= 500) {
            out.detail = "server error " + std::to_string(res->status);
            continue;  // retryable
        }
        if (res->status != 200) {
            out.status = LlmStatus::LLM_REFUSED;
            out.detail = "status " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200);
            return out;
        }
        try {
            json reply = json::parse(res->body);
            out.record.response = reply.at("choices")
                                      .at(0)
                                      .at("message")
                                      .at("content")
                                      .get<std::string>();
            if (reply.contains("usage")) {
                out.record.token_usage = TokenUsage{
                    reply["usage"].value("prompt_tokens", 0L),
                    reply["usage"].value("completion_tokens", 0L)};
            }
        } catch (const std::exception& e) {
            out.status = LlmStatus::LLM_REFUSED;
            out.detail = std::string("malformed completion response: ") +
                         e.what();
            return out;
        }
        out.record.latency_ms = elapsed;
        out.status = LlmStatus::OK;
        return out;
    }
    out.status = LlmStatus::LLM_UNAVAILABLE;
    if (out.detail.empty()) out.detail = "retries exhausted";
    return out;
}

CompletionOutcome LlmClient::complete_replay(const std::string& digest) {
    CompletionOutcome out;
    out.record.prompt_digest = digest;
    auto hit = replay_store_->get(digest);
    if (!hit) {
        out.status = LlmStatus::LLM_UNAVAILABLE;
        out.detail = "no recorded completion for digest " + digest;
        return out;
    }
    out.record = *hit;
    out.record.latency_ms = 0.0;  // replay convention
    out.status = LlmStatus::OK;
    return out;
}

CompletionOutcome LlmClient::complete_stub(const PromptPair& pair,
                                           const std::string& digest) {
    CompletionOutcome out;
    out.record.prompt_digest = digest;
    auto start = Clock::now();

    std::string response;
    bool matched = false;
    if (!cfg_.instance_tag.empty()) {
        auto it = stub_rules_.overrides.find(cfg_.instance_tag);
        if (it != stub_rules_.overrides.end()) {
            response = it->second;
            matched = true;
        }
    }
    if (!matched) {
        for (const auto& rule : stub_rules_.rules) {
            std::smatch m;
            std::regex pattern(rule.pattern);
            if (std::regex_search(pair.user_text, m, pattern)) {
                response = substitute_captures(rule.response, m);
                matched = true;
                break;
            }
        }
    }
    // No matching rule: an empty response, which the extraction stage then
    // reports as MISSING_TAGS.
    out.record.response = response;
    out.record.latency_ms = ms_since(start);
    out.status = LlmStatus::OK;
    return out;
}

}  // namespace healer
