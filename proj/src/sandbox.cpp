#include "healer/sandbox.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include <chrono>
#include <cstring>
#include <mutex>

#include "healer/log.hpp"
#include "healer/prompting.hpp"

namespace healer {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start)
        .count();
}

py::dict build_seed_namespace(PythonRuntime& rt, const StateSnapshot& seed) {
    py::dict ns;
    for (const auto& entry : seed.entries) {
        if (entry.value.status == SerializationStatus::FULL) {
            auto it = seed.full_copies.find(entry.name);
            if (it == seed.full_copies.end()) continue;
            auto copy = rt.try_deepcopy(it->second);
            ns[entry.name.c_str()] = copy ? *copy : it->second;
        } else {
            // Shared by handle so handling code can repair objects that do
            // not serialize.
            auto it = seed.origin_handles.find(entry.name);
            if (it != seed.origin_handles.end())
                ns[entry.name.c_str()] = it->second;
        }
    }
    return ns;
}

SandboxResult run_in_process(PythonRuntime& rt, const std::string& code,
                             const StateSnapshot& seed, double timeout_s,
                             const StateBudgets& budgets) {
    SandboxResult result;
    auto start = Clock::now();

    py::object code_obj;
    try {
        code_obj = rt.compile_source(code, "<handling>", "exec");
    } catch (py::error_already_set& err) {
        ErrorDescriptor desc = describe_error(err);
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = desc.type;
        result.error_message = desc.message;
        result.elapsed_ms = ms_since(start);
        return result;
    }

    py::dict ns = build_seed_namespace(rt, seed);
    py::dict box;
    py::object thread = rt.helpers()["_spawn_sandbox"](code_obj, ns, box);

    // Thread.join releases the interpreter lock while it waits, so the
    // worker can run.
    thread.attr("join")(timeout_s);
    if (thread.attr("is_alive")().cast<bool>()) {
        unsigned long ident = thread.attr("ident").cast<unsigned long>();
        PyThreadState_SetAsyncExc(ident, PyExc_TimeoutError);
        thread.attr("join")(0.2);  // best-effort grace; worker is abandoned
        result.outcome = SandboxOutcome::TIMEOUT;
        result.elapsed_ms = ms_since(start);
        if (thread.attr("is_alive")().cast<bool>())
            log::warn("sandbox worker still running after timeout; abandoned");
        return result;
    }
    result.elapsed_ms = ms_since(start);

    std::string outcome = box.contains("outcome")
                              ? box["outcome"].cast<std::string>()
                              : std::string();
    if (outcome == "ok") {
        result.outcome = SandboxOutcome::SUCCESS;
        result.new_snapshot =
            capture_namespace(rt, ns, seed.captured_at_unit, budgets);
    } else if (outcome == "raised") {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = box["etype"].cast<std::string>();
        result.error_message = box["emsg"].cast<std::string>();
    } else {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = "SandboxFailure";
        result.error_message = "worker finished without reporting an outcome";
    }
    return result;
}

// Child protocol: one 4-byte big-endian length-prefixed JSON frame each way.
constexpr const char* kSubprocessRunner = R"PY(
import ast, io, json, struct, sys

_EXCLUDED = {'__builtins__', '__name__', '__doc__', '__package__',
             '__loader__', '__spec__', '__file__', '__annotations__',
             '__cached__'}

header = sys.stdin.buffer.read(4)
frame = json.loads(sys.stdin.buffer.read(struct.unpack('>I', header)[0]))
_reply_out = sys.stdout.buffer
sys.stdout = sys.stderr = io.StringIO()
sys.stdin = io.StringIO()
ns = {}
for name, rendering in frame['seed'].items():
    try:
        ns[name] = ast.literal_eval(rendering)
    except Exception:
        pass
try:
    exec(compile(frame['code'], '<handling>', 'exec'), ns)
    bindings, opaque = {}, []
    for name, value in ns.items():
        if name in _EXCLUDED or name.startswith('__healer_'):
            continue
        try:
            r = repr(value)
            parsed = ast.literal_eval(r)
            ok = type(parsed) is type(value) and parsed == value
        except Exception:
            ok = False
        if ok:
            bindings[name] = r
        else:
            opaque.append(name)
    reply = {'outcome': 'ok', 'bindings': bindings, 'opaque': opaque}
except BaseException as e:
    reply = {'outcome': 'raised', 'error_type': type(e).__name__,
             'error_message': str(e)}
data = json.dumps(reply).encode()
_reply_out.write(struct.pack('>I', len(data)))
_reply_out.write(data)
_reply_out.flush()
)PY";

// The embedded interpreter reports the host binary as sys.executable, so a
// real interpreter has to be found for subprocess isolation.
std::string resolve_python_exe() {
    static std::string cached;
    static std::once_flag once;
    std::call_once(once, [] {
        try {
            py::module_ sys = py::module_::import("sys");
            std::string exe = sys.attr("executable").cast<std::string>();
            auto base = std::filesystem::path(exe).filename().string();
            if (base.rfind("python", 0) == 0 &&
                std::filesystem::exists(exe)) {
                cached = exe;
                return;
            }
            py::module_ sysconfig = py::module_::import("sysconfig");
            py::object bindir = sysconfig.attr("get_config_var")("BINDIR");
            if (!bindir.is_none()) {
                auto candidate = std::filesystem::path(
                                     bindir.cast<std::string>()) /
                                 "python3";
                if (std::filesystem::exists(candidate)) {
                    cached = candidate.string();
                    return;
                }
            }
        } catch (...) {
        }
        if (std::filesystem::exists("/usr/bin/python3")) {
            cached = "/usr/bin/python3";
            return;
        }
        cached = "python3";  // PATH lookup
    });
    return cached;
}

bool write_all(int fd, const char* data, size_t len) {
    size_t done = 0;
    while (done < len) {
        ssize_t n = ::write(fd, data + done, len - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        done += static_cast<size_t>(n);
    }
    return true;
}

// Reads exactly len bytes, honoring the deadline; false on timeout or EOF.
bool read_all_deadline(int fd, char* data, size_t len,
                       Clock::time_point deadline, bool* timed_out) {
    size_t done = 0;
    while (done < len) {
        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - Clock::now());
        if (remaining.count() <= 0) {
            *timed_out = true;
            return false;
        }
        struct pollfd pfd{fd, POLLIN, 0};
        int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        if (rc == 0) {
            *timed_out = true;
            return false;
        }
        ssize_t n = ::read(fd, data + done, len - done);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        done += static_cast<size_t>(n);
    }
    return true;
}

SandboxResult run_subprocess(PythonRuntime& rt, const std::string& code,
                             const StateSnapshot& seed, double timeout_s,
                             const StateBudgets& budgets) {
    SandboxResult result;
    auto start = Clock::now();

    json seed_json = json::object();
    for (const auto& entry : seed.entries) {
        if (entry.value.status != SerializationStatus::FULL) {
            log::warn("subprocess sandbox drops non-literal binding '" +
                      entry.name + "'");
            continue;
        }
        auto it = seed.full_copies.find(entry.name);
        if (it == seed.full_copies.end()) continue;
        // Recomputed so truncation never corrupts the seed.
        auto rendering = rt.try_repr(it->second);
        if (rendering) seed_json[entry.name] = *rendering;
    }
    std::string frame =
        json{{"seed", seed_json}, {"code", code}, {"timeout_s", timeout_s}}
            .dump();

    std::string exe = resolve_python_exe();

    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = "SandboxFailure";
        result.error_message = "pipe creation failed";
        return result;
    }

    pid_t pid = ::fork();
    if (pid < 0) {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = "SandboxFailure";
        result.error_message = "fork failed";
        return result;
    }
    if (pid == 0) {
        ::dup2(to_child[0], 0);
        ::dup2(from_child[1], 1);
        ::close(to_child[0]);
        ::close(to_child[1]);
        ::close(from_child[0]);
        ::close(from_child[1]);
        ::execlp(exe.c_str(), exe.c_str(), "-c", kSubprocessRunner,
                 static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);

    std::string reply_body;
    bool timed_out = false;
    bool io_ok = false;
    {
        py::gil_scoped_release release;
        auto deadline = start + std::chrono::duration_cast<Clock::duration>(
                                    std::chrono::duration<double>(timeout_s));
        unsigned char header[4];
        uint32_t frame_len = static_cast<uint32_t>(frame.size());
        header[0] = (frame_len >> 24) & 0xff;
        header[1] = (frame_len >> 16) & 0xff;
        header[2] = (frame_len >> 8) & 0xff;
        header[3] = frame_len & 0xff;
        bool sent = write_all(to_child[1],
                              reinterpret_cast<const char*>(header), 4) &&
                    write_all(to_child[1], frame.data(), frame.size());
        ::close(to_child[1]);

        if (sent) {
            char reply_header[4];
            if (read_all_deadline(from_child[0], reply_header, 4, deadline,
                                  &timed_out)) {
                uint32_t reply_len =
                    (static_cast<uint32_t>(
                         static_cast<unsigned char>(reply_header[0]))
                     << 24) |
                    (static_cast<uint32_t>(
                         static_cast<unsigned char>(reply_header[1]))
                     << 16) |
                    (static_cast<uint32_t>(
                         static_cast<unsigned char>(reply_header[2]))
                     << 8) |
                    static_cast<uint32_t>(
                        static_cast<unsigned char>(reply_header[3]));
                if (reply_len < (1u << 26)) {
                    reply_body.resize(reply_len);
                    io_ok = read_all_deadline(from_child[0],
                                              reply_body.data(), reply_len,
                                              deadline, &timed_out);
                }
            }
        }
        ::close(from_child[0]);
        if (timed_out || !io_ok) ::kill(pid, SIGKILL);
        int status = 0;
        ::waitpid(pid, &status, 0);
    }
    result.elapsed_ms = ms_since(start);

    if (timed_out) {
        result.outcome = SandboxOutcome::TIMEOUT;
        return result;
    }
    if (!io_ok) {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = "SandboxFailure";
        result.error_message = "sandbox interpreter produced no reply";
        return result;
    }

    json reply;
    try {
        reply = json::parse(reply_body);
    } catch (const std::exception& e) {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = "SandboxFailure";
        result.error_message = std::string("bad reply frame: ") + e.what();
        return result;
    }
    if (reply.value("outcome", "") == "raised") {
        result.outcome = SandboxOutcome::RAISED;
        result.error_type = reply.value("error_type", "Exception");
        result.error_message = reply.value("error_message", "");
        return result;
    }

    result.outcome = SandboxOutcome::SUCCESS;
    StateSnapshot& snap = result.new_snapshot;
    snap.captured_at_unit = seed.captured_at_unit;
    const json reply_bindings = reply.value("bindings", json::object());
    for (const auto& [name, rendering] : reply_bindings.items()) {
        try {
            py::object value = rt.literal_parse(rendering.get<std::string>());
            SerializedValue sv = serialize_value(rt, value, budgets);
            snap.entries.push_back({name, sv});
            snap.full_copies[name] = value;
            snap.origin_handles[name] = value;
        } catch (py::error_already_set& err) {
            err.discard_as_unraisable("healer subprocess binding");
            log::warn("dropping unparseable sandbox binding '" + name + "'");
        }
    }
    for (const auto& name : reply.value("opaque", json::array()))
        log::warn("subprocess sandbox returned opaque binding '" +
                  name.get<std::string>() + "'; dropped");
    return result;
}

py::object object_for(const StateSnapshot& snap,
                      const StateSnapshot::Entry& entry) {
    if (entry.value.status == SerializationStatus::FULL) {
        auto it = snap.full_copies.find(entry.name);
        if (it != snap.full_copies.end()) return it->second;
    }
    auto it = snap.origin_handles.find(entry.name);
    if (it != snap.origin_handles.end()) return it->second;
    return py::object();
}

// Structural equality where the runtime defines it, else rendering equality.
bool values_equal(const py::object& a, const py::object& b,
                  const SerializedValue& sa, const SerializedValue& sb) {
    if (a && b) {
        int rc = PyObject_RichCompareBool(a.ptr(), b.ptr(), Py_EQ);
        if (rc >= 0) return rc == 1;
        PyErr_Clear();
    }
    return sa.rendering == sb.rendering && sa.type_name == sb.type_name;
}

}  // namespace

SandboxResult execute_handling(PythonRuntime& rt, const std::string& code,
                               const StateSnapshot& seed, double timeout_s,
                               Isolation isolation,
                               const std::vector<std::string>& forbidden,
                               const StateBudgets& budgets) {
    // Defensive re-check; the engine screens before calling.
    if (auto violation = check_forbidden(rt, code, forbidden)) {
        SandboxResult result;
        result.outcome = SandboxOutcome::FORBIDDEN;
        result.error_type = "ForbiddenKeyword";
        result.error_message = *violation;
        return result;
    }
    return isolation == Isolation::SUBPROCESS
               ? run_subprocess(rt, code, seed, timeout_s, budgets)
               : run_in_process(rt, code, seed, timeout_s, budgets);
}

StateDiff diff_states(PythonRuntime& rt, const StateSnapshot& before,
                      const StateSnapshot& after) {
    StateDiff diff;
    for (const auto& entry : after.entries) {
        const SerializedValue* prior = before.find(entry.name);
        py::object obj = object_for(after, entry);
        if (prior == nullptr) {
            diff.added.push_back(
                {entry.name, entry.value,
                 obj ? std::optional<py::object>(obj) : std::nullopt});
            continue;
        }
        bool renderings_match = entry.value.rendering == prior->rendering &&
                                entry.value.type_name == prior->type_name;
        const StateSnapshot::Entry* before_entry = nullptr;
        for (const auto& be : before.entries) {
            if (be.name == entry.name) {
                before_entry = &be;
                break;
            }
        }
        py::object prior_obj =
            before_entry ? object_for(before, *before_entry) : py::object();
        bool equal = values_equal(prior_obj, obj, *prior, entry.value);
        if (!equal || !renderings_match) {
            diff.changed.push_back(
                {entry.name, entry.value,
                 obj ? std::optional<py::object>(obj) : std::nullopt});
        }
    }
    for (const auto& entry : before.entries) {
        if (after.find(entry.name) == nullptr)
            diff.removed.push_back(entry.name);
    }
    return diff;
}

MergeReport merge_diff(PythonRuntime& rt, py::dict live, const StateDiff& diff,
                       RemovedPolicy policy) {
    MergeReport report;
    auto apply = [&](const StateDiff::Item& item) {
        py::object obj;
        if (item.handle) {
            if (item.value.status == SerializationStatus::FULL) {
                // Copy so later program mutation cannot reach back into the
                // snapshot's stored value.
                auto copy = rt.try_deepcopy(*item.handle);
                obj = copy ? *copy : *item.handle;
            } else {
                obj = *item.handle;  // handle identity is the contract here
            }
        } else if (item.value.status == SerializationStatus::FULL &&
                   !item.value.truncated) {
            try {
                obj = rt.literal_parse(item.value.rendering);
            } catch (py::error_already_set& err) {
                err.discard_as_unraisable("healer merge materialize");
            }
        }
        if (!obj) {
            report.failed.push_back(item.name);
            return;
        }
        try {
            live[item.name.c_str()] = obj;
            report.applied.push_back(item.name);
        } catch (py::error_already_set& err) {
            err.discard_as_unraisable("healer merge bind");
            report.failed.push_back(item.name);
        }
    };
    for (const auto& item : diff.changed) apply(item);
    for (const auto& item : diff.added) apply(item);
    if (policy == RemovedPolicy::DELETE) {
        for (const auto& name : diff.removed) {
            if (live.contains(name.c_str())) {
                PyDict_DelItemString(live.ptr(), name.c_str());
                report.applied.push_back(name);
            }
        }
    }
    return report;
}

}  // namespace healer
