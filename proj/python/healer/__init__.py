"""Self-healing execution of Python programs."""

from ._core import (
    ConfigError,
    SourceSyntaxError,
    __version__,
    check_forbidden,
    extract_handling_code,
    instrument,
    measure_wrapper_overhead,
    parse_units,
    render_system_prompt,
    run_healed,
)

__all__ = [
    "ConfigError",
    "SourceSyntaxError",
    "__version__",
    "check_forbidden",
    "extract_handling_code",
    "instrument",
    "measure_wrapper_overhead",
    "parse_units",
    "render_system_prompt",
    "run_healed",
]
