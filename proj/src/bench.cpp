#include "healer/bench.hpp"

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "healer/errors.hpp"
#include "healer/json_io.hpp"
#include "healer/log.hpp"

namespace healer {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double round1(double value) { return std::round(value * 10.0) / 10.0; }

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    if (n == 0) return 0.0;
    return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

RunResult run_one(const BenchmarkInstance& instance, const HealerConfig& cfg,
                  PythonRuntime& rt) {
    HealerConfig instance_cfg = cfg;
    instance_cfg.backend.instance_tag = instance.id;
    RunResult result;
    try {
        Engine engine(rt, instance_cfg);
        result = engine.run_healed(instance.source, instance.stdin_payload,
                                   instance.id);
    } catch (const SourceSyntaxError& e) {
        result.program_id = instance.id;
        result.proceeded = false;
        result.termination_error = TerminationError{"SyntaxError", e.what()};
    } catch (const std::exception& e) {
        result.program_id = instance.id;
        result.proceeded = false;
        result.termination_error = TerminationError{"InternalError", e.what()};
    }
    result.correct = result.proceeded &&
                     normalize_output(result.stdout_text) ==
                         normalize_output(instance.expected_stdout);
    return result;
}

bool write_line(int fd, const std::string& line) {
    size_t done = 0;
    while (done < line.size()) {
        ssize_t n = ::write(fd, line.data() + done, line.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        done += static_cast<size_t>(n);
    }
    return true;
}

std::vector<RunResult> evaluate_forked(
    const std::vector<BenchmarkInstance>& corpus, const HealerConfig& cfg,
    PythonRuntime& rt, int workers) {
    py::module_ os = py::module_::import("os");

    struct Worker {
        pid_t pid = -1;
        int fd = -1;
        std::string buffer;
        bool open = true;
    };
    std::vector<Worker> pool;

    for (int w = 0; w < workers; ++w) {
        int fds[2];
        if (::pipe(fds) != 0) throw IoError("pipe failed for bench worker");
        // Forking through the interpreter runs its at-fork hooks, which
        // reinitialize interpreter locks in the child.
        pid_t pid = os.attr("fork")().cast<pid_t>();
        if (pid == 0) {
            ::close(fds[0]);
            for (auto& other : pool) ::close(other.fd);
            for (size_t i = static_cast<size_t>(w); i < corpus.size();
                 i += static_cast<size_t>(workers)) {
                RunResult result = run_one(corpus[i], cfg, rt);
                std::string line = run_result_to_json(result).dump();
                line.push_back('\n');
                write_line(fds[1], line);
            }
            ::close(fds[1]);
            os.attr("_exit")(0);  // no interpreter teardown in the child
        }
        ::close(fds[1]);
        pool.push_back(Worker{pid, fds[0], {}, true});
    }

    std::vector<RunResult> results;
    auto drain_buffer = [&](Worker& worker) {
        size_t pos = 0;
        size_t nl;
        while ((nl = worker.buffer.find('\n', pos)) != std::string::npos) {
            std::string line = worker.buffer.substr(pos, nl - pos);
            pos = nl + 1;
            if (line.empty()) continue;
            results.push_back(run_result_from_json(json::parse(line)));
        }
        worker.buffer.erase(0, pos);
    };

    int open_count = workers;
    while (open_count > 0) {
        std::vector<pollfd> pfds;
        for (const auto& worker : pool) {
            if (worker.open) pfds.push_back({worker.fd, POLLIN, 0});
        }
        int rc = ::poll(pfds.data(), pfds.size(), 10000);
        if (rc < 0 && errno != EINTR)
            throw IoError("poll failed while gathering bench results");
        for (auto& pfd : pfds) {
            if (!(pfd.revents & (POLLIN | POLLHUP))) continue;
            auto it = std::find_if(pool.begin(), pool.end(), [&](Worker& w) {
                return w.fd == pfd.fd;
            });
            char chunk[65536];
            ssize_t n = ::read(pfd.fd, chunk, sizeof(chunk));
            if (n > 0) {
                it->buffer.append(chunk, static_cast<size_t>(n));
                drain_buffer(*it);
            } else if (n == 0 || (n < 0 && errno != EINTR)) {
                drain_buffer(*it);
                ::close(it->fd);
                it->open = false;
                --open_count;
            }
        }
    }
    for (auto& worker : pool) {
        int status = 0;
        ::waitpid(worker.pid, &status, 0);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
            log::warn("bench worker " + std::to_string(worker.pid) +
                      " exited abnormally");
    }
    return results;
}

std::string benchmark_prefix(const std::string& id) {
    size_t slash = id.find('/');
    return slash == std::string::npos ? id : id.substr(0, slash);
}

}  // namespace

std::string normalize_output(const std::string& text) {
    std::vector<std::string> lines;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        size_t end = nl == std::string::npos ? text.size() : nl;
        std::string line = text.substr(pos, end - pos);
        size_t last = line.find_last_not_of(" \t\r");
        line.erase(last == std::string::npos ? 0 : last + 1);
        lines.push_back(std::move(line));
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    std::string out;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

std::vector<BenchmarkInstance> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus " + path.string());
    std::vector<BenchmarkInstance> corpus;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw CorpusParseError(std::string("bad corpus line: ") + e.what(),
                                   line_no);
        }
        BenchmarkInstance instance;
        try {
            instance.id = j.at("id").get<std::string>();
            instance.source = j.at("source").get<std::string>();
            instance.stdin_payload = j.at("stdin").get<std::string>();
            instance.expected_stdout = j.at("expected_stdout").get<std::string>();
        } catch (const std::exception& e) {
            throw CorpusParseError(std::string("missing corpus field: ") +
                                       e.what(),
                                   line_no);
        }
        if (j.contains("error_type"))
            instance.error_type_hint = j["error_type"].get<std::string>();
        if (!seen.insert(instance.id).second)
            throw DuplicateIdError(instance.id);
        corpus.push_back(std::move(instance));
    }
    return corpus;
}

std::vector<RunResult> evaluate(const std::vector<BenchmarkInstance>& corpus,
                                const HealerConfig& cfg, PythonRuntime& rt,
                                int workers) {
    std::vector<RunResult> results;
    if (workers <= 1 || corpus.size() <= 1) {
        results.reserve(corpus.size());
        for (const auto& instance : corpus)
            results.push_back(run_one(instance, cfg, rt));
    } else {
        results = evaluate_forked(
            corpus, cfg, rt,
            std::min<int>(workers, static_cast<int>(corpus.size())));
    }
    std::sort(results.begin(), results.end(),
              [](const RunResult& a, const RunResult& b) {
                  return a.program_id < b.program_id;
              });
    return results;
}

MetricsReport report(const std::vector<RunResult>& results, Grouping grouping,
                     int fold_floor) {
    MetricsReport metrics;
    metrics.grouping = grouping;

    auto group_key = [&](const RunResult& result) -> std::string {
        switch (grouping) {
            case Grouping::OVERALL:
                return "OVERALL";
            case Grouping::BY_ERROR_TYPE:
                return result.traces.empty() ? "NoError"
                                             : result.traces.front().error_type;
            case Grouping::BY_BENCHMARK:
                return benchmark_prefix(result.program_id);
        }
        return "OVERALL";
    };

    for (const auto& result : results) {
        GroupMetrics& group = metrics.per_group[group_key(result)];
        group.n += 1;
        if (result.proceeded) group.proceed_count += 1;
        if (result.correct && *result.correct) group.correct_count += 1;
    }

    if (fold_floor > 0 && grouping == Grouping::BY_ERROR_TYPE) {
        GroupMetrics folded;
        for (auto it = metrics.per_group.begin();
             it != metrics.per_group.end();) {
            if (it->first != "Others" && it->second.n < fold_floor) {
                folded.n += it->second.n;
                folded.proceed_count += it->second.proceed_count;
                folded.correct_count += it->second.correct_count;
                it = metrics.per_group.erase(it);
            } else {
                ++it;
            }
        }
        if (folded.n > 0) {
            GroupMetrics& others = metrics.per_group["Others"];
            others.n += folded.n;
            others.proceed_count += folded.proceed_count;
            others.correct_count += folded.correct_count;
        }
    }

    for (auto& [key, group] : metrics.per_group) {
        if (group.n > 0) {
            group.proceed_pct = round1(100.0 * group.proceed_count / group.n);
            group.correct_pct = round1(100.0 * group.correct_count / group.n);
        }
    }
    return metrics;
}

std::string render_report_table(const MetricsReport& metrics) {
    size_t width = 5;
    for (const auto& [key, group] : metrics.per_group)
        width = std::max(width, key.size());
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-*s %6s %8s %8s %9s %9s\n",
                  static_cast<int>(width), "group", "n", "proceed", "correct",
                  "proceed%", "correct%");
    out << buf;
    for (const auto& [key, group] : metrics.per_group) {
        std::snprintf(buf, sizeof(buf), "%-*s %6ld %8ld %8ld %9.1f %9.1f\n",
                      static_cast<int>(width), key.c_str(), group.n,
                      group.proceed_count, group.correct_count,
                      group.proceed_pct, group.correct_pct);
        out << buf;
    }
    return out.str();
}

long export_tuning_dataset(const std::vector<RunResult>& results,
                           const std::filesystem::path& out_path) {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write dataset " + out_path.string());
    long written = 0;
    for (const auto& result : results) {
        if (!result.correct || !*result.correct) continue;
        const HealingTrace* healed = nullptr;
        for (const auto& trace : result.traces) {
            if (trace.verdict == Verdict::HEALED) {
                healed = &trace;
                break;
            }
        }
        if (healed == nullptr) continue;
        // Assistant content mirrors the generation format the model is asked
        // to produce.
        json sample{
            {"messages",
             json::array(
                 {{{"role", "system"}, {"content", healed->system_text}},
                  {{"role", "user"}, {"content", healed->user_text}},
                  {{"role", "assistant"},
                   {"content", "<code>\n" + healed->code + "\n</code>"}}})},
            {"instance_id", result.program_id}};
        out << sample.dump() << "\n";
        ++written;
    }
    return written;
}

OverheadReport measure_wrapper_overhead(PythonRuntime& rt, long iterations,
                                        int reps) {
    OverheadReport report;
    report.iterations = iterations;
    report.reps = std::max(reps, 1);

    std::string count = std::to_string(iterations);
    std::string bare_src = "for _i in range(" + count + "):\n    x = 1\n";
    std::string wrapped_src =
        "for _i in range(" + count + "):\n"
        "    try:\n"
        "        x = 1\n"
        "    except Exception as __healer_e:\n"
        "        if not __healer_handle__(0, __healer_e, globals(), "
        "locals()):\n"
        "            raise\n";

    py::object bare_code = rt.compile_source(bare_src, "<bare>", "exec");
    py::object wrapped_code =
        rt.compile_source(wrapped_src, "<wrapped>", "exec");

    py::dict ns;
    ns["__builtins__"] = py::module_::import("builtins");
    ns["__healer_handle__"] =
        py::cpp_function([](int, py::object, py::dict, py::dict) {
            return false;
        });

    auto time_one = [&](const py::object& code) {
        auto start = Clock::now();
        PyObject* result =
            PyEval_EvalCode(code.ptr(), ns.ptr(), ns.ptr());
        if (result == nullptr) throw py::error_already_set();
        Py_DECREF(result);
        return std::chrono::duration<double, std::milli>(Clock::now() - start)
            .count();
    };

    std::vector<double> bare_times;
    std::vector<double> wrapped_times;
    for (int rep = 0; rep < report.reps; ++rep) {
        bare_times.push_back(time_one(bare_code));
        wrapped_times.push_back(time_one(wrapped_code));
    }
    report.bare_ms = median(bare_times);
    report.wrapped_ms = median(wrapped_times);
    report.delta_ms = report.wrapped_ms - report.bare_ms;
    return report;
}

LatencyReport measure_healing_latency(const std::vector<RunResult>& results) {
    std::map<std::string, std::vector<double>> by_model;
    for (const auto& result : results) {
        for (const auto& trace : result.traces) {
            if (trace.replayed) continue;  // latency 0 by convention
            by_model[trace.model_name].push_back(trace.llm_latency_ms);
        }
    }
    LatencyReport report;
    for (auto& [model, values] : by_model) {
        LatencyStats stats;
        stats.count = static_cast<long>(values.size());
        double sum = 0.0;
        for (double v : values) sum += v;
        stats.mean_ms = values.empty() ? 0.0 : sum / values.size();
        stats.median_ms = median(values);
        report[model] = stats;
    }
    return report;
}

}  // namespace healer
