import json
import time
from pathlib import Path

import pytest

from sanasim.cli import execute
from sanasim.config import from_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(1, 11)

_cache: dict = {}
WALL: dict = {}  # (config, seed) -> wall-clock seconds of the cached run
_criteria: list = []


def load_config(name: str, seed: int, **overrides):
    doc = json.loads((CONFIGS / f"{name}.json").read_text())
    doc["seed"] = seed
    for k, v in overrides.items():
        doc[k] = v
    return from_dict(doc)


def run_cached(name: str, seed: int):
    """(simulation, metrics) for a reference config; each pair is computed once per session."""
    key = (name, seed)
    if key not in _cache:
        t0 = time.perf_counter()
        _cache[key] = execute(load_config(name, seed))
        WALL[key] = time.perf_counter() - t0
    return _cache[key]


@pytest.fixture
def reference_run():
    return run_cached


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    detail = getattr(item.module, "DETAILS", {}).get(n, "")
    _criteria.append((n, title, "PASS" if rep.passed else "FAIL", detail))
    line = f"criterion {n:>2} {title}: {'PASS' if rep.passed else 'FAIL'}"
    rep.sections.append(("criterion", line + (f" ({detail})" if detail else "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, verdict, detail in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:>2} {title}: {verdict}" + (f" ({detail})" if detail else ""))
