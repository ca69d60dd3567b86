#include <doctest.h>
#include <pybind11/embed.h>

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "healer/context.hpp"
#include "healer/sandbox.hpp"
#include "test_support.hpp"

namespace py = pybind11;
using healer::capture_namespace;
using healer::diff_states;
using healer::execute_handling;
using healer::Isolation;
using healer::merge_diff;
using healer::PythonRuntime;
using healer::RemovedPolicy;
using healer::SandboxOutcome;
using healer::StateBudgets;

namespace {

healer::StateSnapshot snapshot_of(PythonRuntime& rt, const py::dict& ns) {
    return capture_namespace(rt, ns, 0, StateBudgets{});
}

}  // namespace

TEST_CASE("in-process handling runs against seeded state") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("x = 3\nmsg = 'hi'\n", ns, ns);
    auto seed = snapshot_of(rt, ns);

    auto result = execute_handling(rt, "y = x + 1\nmsg = msg * 2", seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);
    CHECK(result.elapsed_ms >= 0.0);
    CHECK(result.new_snapshot.find("y")->rendering == "4");
    CHECK(result.new_snapshot.find("msg")->rendering == "'hihi'");

    // the live namespace and the seed snapshot stay untouched
    CHECK(ns["x"].cast<int>() == 3);
    CHECK(ns["msg"].cast<std::string>() == "hi");
    CHECK(seed.find("msg")->rendering == "'hi'");
    CHECK(seed.find("y") == nullptr);
}

TEST_CASE("FULL seeds are value-isolated from the live program") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("data = [1, 2]\n", ns, ns);
    auto seed = snapshot_of(rt, ns);

    auto result = execute_handling(rt, "data.append(99)", seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);
    CHECK(result.new_snapshot.find("data")->rendering == "[1, 2, 99]");
    CHECK(py::len(ns["data"]) == 2);  // live list untouched
    CHECK(py::len(seed.full_copies.at("data")) == 2);  // reusable seed
}

TEST_CASE("raising handling code reports the error") {
    PythonRuntime rt;
    py::dict ns;
    auto seed = snapshot_of(rt, ns);

    auto raised = execute_handling(rt, "raise ValueError('still broken')",
                                   seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    CHECK(raised.outcome == SandboxOutcome::RAISED);
    CHECK(raised.error_type == "ValueError");
    CHECK(raised.error_message == "still broken");

    auto bad_syntax = execute_handling(rt, "def f(:", seed, 5.0,
                                       Isolation::IN_PROCESS_NAMESPACE, {},
                                       StateBudgets{});
    CHECK(bad_syntax.outcome == SandboxOutcome::RAISED);
    CHECK(bad_syntax.error_type == "SyntaxError");
}

TEST_CASE("forbidden keywords are rejected before execution") {
    PythonRuntime rt;
    py::dict ns;
    ns["marker"] = py::int_(1);
    auto seed = snapshot_of(rt, ns);

    auto result = execute_handling(rt, "marker = 2\nvalue = input()", seed,
                                   5.0, Isolation::IN_PROCESS_NAMESPACE,
                                   {"input"}, StateBudgets{});
    CHECK(result.outcome == SandboxOutcome::FORBIDDEN);
    CHECK(result.error_type == "ForbiddenKeyword");
    CHECK(result.error_message == "input");
    CHECK(ns["marker"].cast<int>() == 1);
}

TEST_CASE("in-process timeout interrupts a runaway loop") {
    PythonRuntime rt;
    py::dict ns;
    auto seed = snapshot_of(rt, ns);

    auto start = std::chrono::steady_clock::now();
    auto result = execute_handling(rt, "while True:\n    pass", seed, 0.5,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    CHECK(result.outcome == SandboxOutcome::TIMEOUT);
    CHECK(result.elapsed_ms >= 500.0);
    CHECK(wall_s < 5.0);
}

TEST_CASE("in-process sandbox shares REPR_ONLY objects by handle") {
    PythonRuntime rt;
    py::dict ns;
    py::exec(
        "class Box:\n"
        "    def __init__(self):\n"
        "        self.value = 1\n"
        "box = Box()\n",
        ns, ns);
    auto seed = snapshot_of(rt, ns);
    REQUIRE(seed.origin_handles.count("box") == 1);

    auto result = execute_handling(rt, "box.value = 7", seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);
    CHECK(ns["box"].attr("value").cast<int>() == 7);  // shared identity
}

TEST_CASE("sandbox stdout stays out of the program's stream") {
    PythonRuntime rt;
    py::module_ sys = py::module_::import("sys");
    py::object saved = sys.attr("stdout");
    py::object sink = py::module_::import("io").attr("StringIO")();
    sys.attr("stdout") = sink;

    py::dict ns;
    auto seed = snapshot_of(rt, ns);
    auto result = execute_handling(rt, "print('leaky')\nx = 1", seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    sys.attr("stdout") = saved;

    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);
    CHECK(sink.attr("getvalue")().cast<std::string>().empty());
    CHECK(result.new_snapshot.find("x")->rendering == "1");
}

TEST_CASE("subprocess isolation executes seeded handling code") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("x = 10\nwords = ['a', 'b']\n", ns, ns);
    auto seed = snapshot_of(rt, ns);

    auto result = execute_handling(rt, "y = x * 2\nwords.append('c')", seed,
                                   10.0, Isolation::SUBPROCESS, {},
                                   StateBudgets{});
    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);
    CHECK(result.new_snapshot.find("y")->rendering == "20");
    CHECK(result.new_snapshot.find("words")->rendering == "['a', 'b', 'c']");
    CHECK(py::len(ns["words"]) == 2);
}

TEST_CASE("subprocess survives prints and reports raises") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("x = 1\n", ns, ns);
    auto seed = snapshot_of(rt, ns);

    auto printy = execute_handling(rt, "print('hello child')\ny = x + 1",
                                   seed, 10.0, Isolation::SUBPROCESS, {},
                                   StateBudgets{});
    REQUIRE(printy.outcome == SandboxOutcome::SUCCESS);
    CHECK(printy.new_snapshot.find("y")->rendering == "2");

    auto raised = execute_handling(rt, "raise KeyError('gone')", seed, 10.0,
                                   Isolation::SUBPROCESS, {}, StateBudgets{});
    CHECK(raised.outcome == SandboxOutcome::RAISED);
    CHECK(raised.error_type == "KeyError");
}

TEST_CASE("subprocess enforces the deadline with a kill") {
    PythonRuntime rt;
    py::dict ns;
    auto seed = snapshot_of(rt, ns);

    auto start = std::chrono::steady_clock::now();
    auto result = execute_handling(rt, "import time\ntime.sleep(30)", seed,
                                   0.5, Isolation::SUBPROCESS, {},
                                   StateBudgets{});
    double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    CHECK(result.outcome == SandboxOutcome::TIMEOUT);
    CHECK(wall_s < 10.0);
}

TEST_CASE("subprocess seeding drops non-literal state") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("n = 5\nblob = object()\n", ns, ns);
    auto seed = snapshot_of(rt, ns);

    // blob is unavailable in the child: referencing it is a NameError there
    auto result = execute_handling(rt, "probe = blob", seed, 10.0,
                                   Isolation::SUBPROCESS, {}, StateBudgets{});
    CHECK(result.outcome == SandboxOutcome::RAISED);
    CHECK(result.error_type == "NameError");

    auto fine = execute_handling(rt, "probe = n + 1", seed, 10.0,
                                 Isolation::SUBPROCESS, {}, StateBudgets{});
    REQUIRE(fine.outcome == SandboxOutcome::SUCCESS);
    CHECK(fine.new_snapshot.find("probe")->rendering == "6");
}

TEST_CASE("diff_states classifies added, changed and removed names") {
    PythonRuntime rt;
    py::dict before_ns;
    py::exec("a = 1\nb = 'keep'\nc = [1]\ngone = True\n", before_ns,
             before_ns);
    py::dict after_ns;
    py::exec("a = 2\nb = 'keep'\nc = [1, 5]\nfresh = 'new'\n", after_ns,
             after_ns);

    auto diff = diff_states(rt, snapshot_of(rt, before_ns),
                            snapshot_of(rt, after_ns));

    REQUIRE(diff.added.size() == 1);
    CHECK(diff.added[0].name == "fresh");
    REQUIRE(diff.changed.size() == 2);
    CHECK(diff.changed[0].name == "a");
    CHECK(diff.changed[1].name == "c");
    REQUIRE(diff.removed.size() == 1);
    CHECK(diff.removed[0] == "gone");
}

TEST_CASE("diff_states treats equal values of different type as changed") {
    PythonRuntime rt;
    py::dict before_ns;
    before_ns["v"] = py::int_(1);
    py::dict after_ns;
    after_ns["v"] = py::float_(1.0);  // compares equal, renders differently

    auto diff = diff_states(rt, snapshot_of(rt, before_ns),
                            snapshot_of(rt, after_ns));
    REQUIRE(diff.changed.size() == 1);
    CHECK(diff.changed[0].name == "v");
}

TEST_CASE("an identical after-state produces an empty diff") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("x = 1\ny = [2, 3]\n", ns, ns);
    auto diff =
        diff_states(rt, snapshot_of(rt, ns), snapshot_of(rt, ns));
    CHECK(diff.empty());
}

TEST_CASE("merge_diff applies bindings and honors the removed policy") {
    PythonRuntime rt;
    py::dict before_ns;
    py::exec("a = 1\ndead = 9\n", before_ns, before_ns);
    py::dict after_ns;
    py::exec("a = 5\nb = 'born'\n", after_ns, after_ns);
    auto diff = diff_states(rt, snapshot_of(rt, before_ns),
                            snapshot_of(rt, after_ns));

    py::dict live_keep;
    py::exec("a = 1\ndead = 9\n", live_keep, live_keep);
    auto keep = merge_diff(rt, live_keep, diff, RemovedPolicy::KEEP);
    CHECK(keep.ok());
    CHECK(live_keep["a"].cast<int>() == 5);
    CHECK(live_keep["b"].cast<std::string>() == "born");
    CHECK(live_keep.contains("dead"));

    py::dict live_del;
    py::exec("a = 1\ndead = 9\n", live_del, live_del);
    auto del = merge_diff(rt, live_del, diff, RemovedPolicy::DELETE);
    CHECK(del.ok());
    CHECK_FALSE(live_del.contains("dead"));
}

TEST_CASE("merged FULL values are isolated from the sandbox namespace") {
    PythonRuntime rt;
    py::dict ns;
    py::exec("data = [1]\n", ns, ns);
    auto seed = snapshot_of(rt, ns);
    auto result = execute_handling(rt, "data = data + [2]", seed, 5.0,
                                   Isolation::IN_PROCESS_NAMESPACE, {},
                                   StateBudgets{});
    REQUIRE(result.outcome == SandboxOutcome::SUCCESS);

    auto diff = diff_states(rt, seed, result.new_snapshot);
    py::dict live;
    live["data"] = ns["data"];
    auto report = merge_diff(rt, live, diff, RemovedPolicy::KEEP);
    REQUIRE(report.ok());
    CHECK(py::repr(live["data"]).cast<std::string>() == "[1, 2]");
}

TEST_CASE("merge failures are reported per name without aborting") {
    PythonRuntime rt;
    healer::StateDiff diff;
    healer::StateDiff::Item broken;
    broken.name = "clipped";
    broken.value.status = healer::SerializationStatus::FULL;
    broken.value.rendering = "[1, 2,";  // truncated, unparseable
    broken.value.truncated = true;
    diff.added.push_back(broken);

    healer::StateDiff::Item fine;
    fine.name = "ok_value";
    fine.value.status = healer::SerializationStatus::FULL;
    fine.value.rendering = "41";
    fine.handle = py::int_(41);
    diff.added.push_back(fine);

    py::dict live;
    auto report = merge_diff(rt, live, diff, RemovedPolicy::KEEP);
    CHECK_FALSE(report.ok());
    REQUIRE(report.failed.size() == 1);
    CHECK(report.failed[0] == "clipped");
    CHECK(live["ok_value"].cast<int>() == 41);
}

TEST_CASE("diff then merge reproduces the sandbox state on random programs") {
    PythonRuntime rt;
    std::mt19937 rng(987123);
    std::uniform_int_distribution<int> var_count(1, 4);
    std::uniform_int_distribution<int> kind_pick(0, 3);
    std::uniform_int_distribution<int> int_pick(-50, 50);
    std::uniform_int_distribution<int> action_count(1, 4);

    const char* var_names[] = {"v0", "v1", "v2", "v3"};

    for (int trial = 0; trial < 200; ++trial) {
        CAPTURE(trial);
        // random literal-valued before-state
        py::dict live;
        int vars = var_count(rng);
        for (int v = 0; v < vars; ++v) {
            switch (kind_pick(rng)) {
                case 0: live[var_names[v]] = py::int_(int_pick(rng)); break;
                case 1:
                    live[var_names[v]] =
                        py::str("s" + std::to_string(int_pick(rng)));
                    break;
                case 2: {
                    py::list items;
                    items.append(py::int_(int_pick(rng)));
                    live[var_names[v]] = items;
                    break;
                }
                case 3: live[var_names[v]] = py::bool_(trial % 2 == 0); break;
            }
        }
        auto seed = snapshot_of(rt, live);

        // random mutation script over the same names
        std::string code;
        int actions = action_count(rng);
        for (int a = 0; a < actions; ++a) {
            const char* name = var_names[kind_pick(rng)];
            int roll = kind_pick(rng);
            if (roll == 0) {
                code += std::string(name) + " = " +
                        std::to_string(int_pick(rng)) + "\n";
            } else if (roll == 1) {
                code += std::string(name) + " = '" +
                        std::to_string(int_pick(rng)) + "'\n";
            } else if (roll == 2) {
                code += std::string(name) + " = [" +
                        std::to_string(int_pick(rng)) + ", " +
                        std::to_string(int_pick(rng)) + "]\n";
            } else {
                code += std::string("try:\n    del ") + name +
                        "\nexcept NameError:\n    pass\n";
            }
        }

        auto result =
            execute_handling(rt, code, seed, 5.0,
                             Isolation::IN_PROCESS_NAMESPACE, {},
                             StateBudgets{});
        REQUIRE(result.outcome == SandboxOutcome::SUCCESS);

        auto diff = diff_states(rt, seed, result.new_snapshot);
        auto report = merge_diff(rt, live, diff, RemovedPolicy::DELETE);
        REQUIRE(report.ok());

        // merged live state must equal the sandbox's final namespace
        for (const auto& entry : result.new_snapshot.entries) {
            REQUIRE(live.contains(entry.name));
            CHECK(py::repr(live[entry.name.c_str()]).cast<std::string>() ==
                  entry.value.rendering);
        }
        for (const auto& name : diff.removed)
            CHECK_FALSE(live.contains(name));
    }
}
