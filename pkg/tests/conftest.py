from __future__ import annotations

import textwrap
from pathlib import Path

import pytest

from flagtune.flagspace import FlagSpace, parse_catalog

FIXTURES = Path(__file__).parent / "fixtures"

MOCK_INI = """\
[build]
compiler = flagtune-mockcc
fixed_args = --seed {mock_seed}
sources = prog.c
output = prog.elf
backend = {backend}
workdir = work
timeout = {timeout}

[flags]
catalog = {catalog}

[ga]
population_size = {population}
seed = {seed}

[stop]
max_iterations = {max_iterations}
plateau_threshold = {plateau}
"""


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def write_config(tmp_path):
    """Write a mock-backend session config and return its path."""

    def write(name="tune.ini", **overrides):
        values = dict(mock_seed=7, backend="synthetic", timeout=30, catalog="builtin:mock16",
                      population=20, seed=1, max_iterations=30, plateau="off")
        values.update(overrides)
        path = tmp_path / name
        path.write_text(MOCK_INI.format(**values))
        if values["backend"] == "subprocess":
            (tmp_path / "work").mkdir(exist_ok=True)
            (tmp_path / "work" / "prog.c").write_text("int main(void) { return 0; }\n")
        return path

    return write


@pytest.fixture
def tiny_catalog():
    text = textwrap.dedent("""\
        level -O0
        level -O2
        flag -fa -fno-a
        flag -fb -fno-b
        flag -fc
        flag -fd
        requires -fa -fb
        conflicts -fc -fd
        clause +-fa --fc
    """)
    return parse_catalog(text)


@pytest.fixture
def four_flags() -> FlagSpace:
    return FlagSpace.build(["-O0", "-O1"], ["-fa", ("-fb", "-fno-b"), "-fc", "-fd"])


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
