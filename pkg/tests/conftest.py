from __future__ import annotations

from functools import lru_cache

import pytest

from sdgame.chain import build_kernel
from sdgame.dpp import solve_game
from sdgame.families import builtin_config, spec_from_config
from sdgame.model import build_grid

BUILTINS = ["constant", "example81", "heat", "matching-pennies", "single-player"]

_CRITERIA: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@lru_cache(maxsize=None)
def setup(family: str, resolution: tuple | None = None, **params):
    cfg = builtin_config(family, **params)
    spec = spec_from_config(cfg)
    res = list(resolution) if resolution else cfg["grid"]["resolution"]
    grid = build_grid(spec, resolution=res)
    return spec, grid, build_kernel(spec, grid)


@lru_cache(maxsize=None)
def solved(family: str, resolution: tuple | None = None):
    spec, grid, kernel = setup(family, resolution)
    lo = solve_game(spec, grid, kernel, "lower")
    up = solve_game(spec, grid, kernel, "upper")
    return spec, grid, kernel, lo, up


@pytest.fixture
def small_example81():
    return setup("example81", (31, 31))
