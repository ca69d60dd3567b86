#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>
#include <pybind11/embed.h>

#include <cstdlib>

int main(int argc, char** argv) {
    setenv("PYTHONHASHSEED", "0", 1);
    pybind11::scoped_interpreter interpreter;
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
