from __future__ import annotations

import csv
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from flagtune.analysis import (
    ScoreSeries,
    emit_report,
    flag_potency,
    format_fitness,
    jaccard,
    normalize_drops,
    pearson,
    precision_at_1,
)
from flagtune.errors import CorruptLog, UndefinedInput
from flagtune.flagspace import Chromosome, ConstraintSet, FlagSpace
from flagtune.ga import Engine, GaConfig, TerminationCriteria
from flagtune.store import SessionHeader, SessionStore


# -- potency -------------------------------------------------------------------


def test_normalize_examples():
    assert normalize_drops([0.2, 0.1, 0.1]) == ([50.0, 25.0, 25.0], False)
    assert normalize_drops([0.0, 0.0]) == ([0.0, 0.0], True)
    assert normalize_drops([0.1, -0.05]) == ([100.0, 0.0], False)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=30))
def test_normalized_sum(drops):
    percents, degenerate = normalize_drops(drops)
    if any(d > 0 for d in drops):
        assert not degenerate
        assert math.fsum(percents) == pytest.approx(100.0, abs=1e-6)
    else:
        assert degenerate and not any(percents)


def weighted_scorer(weights):
    def score(c: Chromosome) -> float:
        return sum(w for w, on in zip(weights, c.genes) if on)
    return score


def test_flag_potency_attribution():
    space = FlagSpace.build(["-O0"], ["-fa", "-fb", "-fc", "-fd"])
    best = Chromosome.of(0, [True, True, True, False])
    report = flag_potency(best, weighted_scorer([0.2, 0.1, 0.1, 5.0]), space, scorer_name="weights")
    assert report.base_score == pytest.approx(0.4)
    assert [(e.flag, round(e.potency, 9)) for e in report.entries] == [("-fa", 50.0), ("-fb", 25.0), ("-fc", 25.0)]
    assert report.residual is None and not report.degenerate
    text = report.format()
    assert "weights" in text and "clamped" in text


def test_flag_potency_clamps_competing_flags():
    space = FlagSpace.build(["-O0"], ["-fa", "-fb"])
    report = flag_potency(Chromosome.of(0, [True, True]), weighted_scorer([0.1, -0.05]), space)
    assert [e.potency for e in report.entries] == [100.0, 0.0]
    assert report.entries[1].raw_drop == 0.0


def test_flag_potency_degenerate():
    space = FlagSpace.build(["-O0"], ["-fa", "-fb"])
    report = flag_potency(Chromosome.of(0, [True, True]), lambda c: 1.0, space)
    assert report.degenerate and all(e.potency == 0 for e in report.entries)


def test_flag_potency_uses_repair():
    space = FlagSpace.build(["-O0"], ["-fa", "-fb"])
    cs = ConstraintSet.from_lists(implications=[(0, 1)])
    seen = []

    def scorer(c):
        seen.append(c.genes)
        return float(sum(c.genes))

    flag_potency(Chromosome.of(0, [True, True]), scorer, space, cs)
    # dropping -fb breaks -fa -> -fb, so -fa goes too
    assert (False, False) in seen


def test_flag_potency_marks_failures_unevaluated():
    space = FlagSpace.build(["-O0"], ["-fa", "-fb"])

    def scorer(c):
        if c.genes == (False, True):
            raise RuntimeError("graph extraction failed")
        return float(sum(c.genes))

    report = flag_potency(Chromosome.of(0, [True, True]), scorer, space)
    assert report.unevaluated == ["-fa"]
    assert "unevaluated" in report.format()


def test_flag_potency_top_ten_and_residual():
    space = FlagSpace.build(["-O0"], [f"-f{i}" for i in range(14)])
    weights = [float(i + 1) for i in range(14)]
    report = flag_potency(Chromosome.of(0, [True] * 14), weighted_scorer(weights), space, jobs=3)
    assert len(report.entries) == 10
    assert report.entries[0].flag == "-f13"
    assert report.residual.flag == "other flags (4)"
    total = math.fsum(e.potency for e in report.entries) + report.residual.potency
    assert total == pytest.approx(100.0, abs=1e-6)
    assert report.residual.potency == pytest.approx(100 * 10 / 105)


# -- jaccard / pearson / precision ------------------------------------------------


def test_jaccard_examples():
    assert jaccard({"a", "b"}, {"b", "c"}) == 1 / 3
    assert jaccard({"a"}, {"a"}) == 1.0
    assert jaccard({"a"}, {"b"}) == 0.0
    with pytest.raises(UndefinedInput):
        jaccard(set(), set())


@given(st.sets(st.integers(0, 20)), st.sets(st.integers(0, 20)))
def test_jaccard_symmetric(a, b):
    if a or b:
        assert jaccard(a, b) == jaccard(b, a)
    if a:
        assert jaccard(a, a) == 1.0


def test_pearson_closed_forms():
    assert pearson([1, 2, 3, 4], [3, 5, 7, 9]) == pytest.approx(1.0, abs=1e-9)
    assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0, abs=1e-9)
    assert pearson(ScoreSeries("x", (1, 2, 3, 4)), ScoreSeries("y", (1, 3, 2, 4))) == pytest.approx(0.8, abs=1e-9)


@pytest.mark.parametrize("x, y", [([1, 1, 1], [1, 2, 3]), ([1, 2], [1, 2, 3]), ([1], [2])])
def test_pearson_undefined(x, y):
    with pytest.raises(UndefinedInput):
        pearson(x, y)


def test_pearson_agrees_with_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        x, y = rng.normal(size=n), rng.normal(size=n)
        assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-9)


def test_pearson_affine_invariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x, y = rng.normal(size=20), rng.normal(size=20)
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        r = pearson(x, y)
        assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-9)
        assert pearson(-a * x + b, y) == pytest.approx(-r, abs=1e-9)


def test_precision_examples():
    assert precision_at_1([("q1", ["a", "b"], "a"), ("q2", ["c"], "c")]).value == 1.0
    half = precision_at_1([("q1", ["a"], "a"), ("q2", ["b", "c"], "c"), ("q3", ["d"], "d"), ("q4", ["e"], "z")])
    assert half.value == 0.5 and half.hits == 2 and half.total == 4
    assert half.missing_truth == ("q4",)
    with pytest.raises(UndefinedInput):
        precision_at_1([])
    with pytest.raises(UndefinedInput):
        precision_at_1([("q", [], "a")])


def test_precision_order_invariant():
    rows = [(f"q{i}", ["a", "b"], random.Random(i).choice("ab")) for i in range(30)]
    shuffled = rows[:]
    random.Random(5).shuffle(shuffled)
    assert precision_at_1(rows).value == precision_at_1(shuffled).value


# -- reports -------------------------------------------------------------------------


@pytest.mark.parametrize("value, text", [
    (0.1234565, "0.123456"), (0.1234575, "0.123458"), (-1.0, "-1.000000"), (0.5, "0.500000"),
])
def test_format_fitness_half_even(value, text):
    assert format_fitness(value) == text


def plateau_session(tmp_path, seed=3):
    space = FlagSpace.build(["-O0"], [f"-f{i}" for i in range(6)])
    cfg, crit = GaConfig(population_size=6, seed=seed), TerminationCriteria(plateau_window=3)
    header = SessionHeader(space.catalog_digest, "m", cfg.to_dict(), crit.to_dict(), "c", seed, "b")
    path = tmp_path / "plateau.btlog"
    with SessionStore.create(path, header, fsync=False) as store:
        Engine(space, ConstraintSet(), lambda c: 0.25 + 0.01 * sum(c.genes), cfg, crit, store).run()
    return path, space


def test_report_for_plateau_session(tmp_path):
    path, space = plateau_session(tmp_path)
    bundle = emit_report(path, tmp_path / "report", space)
    rows = list(csv.reader(bundle.generations_csv.open()))
    assert rows[0] == ["generation", "best_fitness", "evaluated"]
    bests = [float(r[1]) for r in rows[1:]]
    assert bests == sorted(bests)
    summary = bundle.summary.read_text()
    assert "termination: plateau" in summary
    assert "wall_time_seconds:" in summary
    best_lines = bundle.best_flags.read_text().splitlines()
    assert best_lines and all(line.startswith("-O0") for line in best_lines)


def test_report_three_generations(tmp_path):
    space = FlagSpace.build(["-O0"], ["-fa", "-fb"])
    cfg = GaConfig(population_size=4, seed=1)
    crit = TerminationCriteria(max_iterations=2, plateau_threshold=None)
    header = SessionHeader(space.catalog_digest, "m", cfg.to_dict(), crit.to_dict(), "c", 1, "b")
    path = tmp_path / "three.btlog"
    with SessionStore.create(path, header, fsync=False) as store:
        Engine(space, ConstraintSet(), lambda c: float(sum(c.genes)), cfg, crit, store).run()
    bundle = emit_report(path, tmp_path / "r")
    assert len(bundle.generations_csv.read_text().splitlines()) == 4


def test_report_cites_corrupt_line(tmp_path):
    path, _ = plateau_session(tmp_path)
    lines = path.read_bytes().split(b"\n")
    lines[2] = lines[2].replace(b"\t0", b"\t9", 1)
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(CorruptLog) as info:
        emit_report(path, tmp_path / "r")
    assert info.value.line == 3
