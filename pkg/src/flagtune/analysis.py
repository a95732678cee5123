"""Post-hoc analytics over tuning sessions."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Callable, Hashable, Iterable, Optional, Sequence

from .errors import UndefinedInput
from .flagspace import Chromosome, ConstraintSet, FlagSpace, decode, repair
from .store import EndRecord, GenerationRecord, IterationRecord, read_log, read_timing

TOP_FLAGS = 10


@dataclass(frozen=True)
class PotencyEntry:
    flag: str
    raw_drop: float
    potency: float  # percent
    evaluated: bool = True


@dataclass(frozen=True)
class PotencyReport:
    entries: tuple[PotencyEntry, ...]  # ranked, at most TOP_FLAGS
    residual: Optional[PotencyEntry]  # everything ranked below TOP_FLAGS, summed
    all_entries: tuple[PotencyEntry, ...]
    base_score: float
    scorer: str = ""
    degenerate: bool = False

    @property
    def unevaluated(self) -> list[str]:
        return [e.flag for e in self.all_entries if not e.evaluated]

    def format(self) -> str:
        lines = [f"scorer: {self.scorer or 'unnamed'}", f"base score: {self.base_score:.6f}",
                 "negative drops are clamped to zero"]
        if self.degenerate:
            lines.append("degenerate: no flag removal lowered the score")
        lines.append(f"{'flag':<40} {'drop':>10} {'potency':>9}")
        rows = list(self.entries) + ([self.residual] if self.residual else [])
        for e in rows:
            mark = "" if e.evaluated else "  (unevaluated)"
            lines.append(f"{e.flag:<40} {e.raw_drop:>10.6f} {e.potency:>8.2f}%{mark}")
        return "\n".join(lines) + "\n"


def normalize_drops(drops: Sequence[float]) -> tuple[list[float], bool]:
    """Clamp negatives to 0 and scale to percentages; returns (percents, degenerate)."""
    clamped = [max(float(d), 0.0) for d in drops]
    total = math.fsum(clamped)
    if total <= 0:
        return [0.0] * len(clamped), True
    return [100.0 * d / total for d in clamped], False


def flag_potency(best: Chromosome, scorer: Callable[[Chromosome], float], space: FlagSpace,
                 constraints: ConstraintSet | None = None, scorer_name: str = "",
                 jobs: int = 1) -> PotencyReport:
    """Leave-one-out attribution of the score to each enabled flag."""
    constraints = constraints or ConstraintSet()
    s0 = scorer(best)
    on = best.on_ids()
    variants = [repair(best.with_gene(i, False), constraints) for i in on]

    def attempt(c):
        try:
            return scorer(c)
        except Exception:  # noqa: BLE001 - any scorer failure marks the flag unevaluated
            return None

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            scores = list(pool.map(attempt, variants))
    else:
        scores = [attempt(c) for c in variants]

    drops = [0.0 if s is None else s0 - s for s in scores]
    percents, degenerate = normalize_drops(drops)
    entries = [
        PotencyEntry(space.flags[i].name, max(d, 0.0), p, s is not None)
        for i, d, p, s in zip(on, drops, percents, scores)
    ]
    ranked = sorted(entries, key=lambda e: -e.potency)  # stable: ties keep flag order
    top, rest = ranked[:TOP_FLAGS], ranked[TOP_FLAGS:]
    residual = None
    if rest:
        residual = PotencyEntry(f"other flags ({len(rest)})", math.fsum(e.raw_drop for e in rest),
                                math.fsum(e.potency for e in rest), all(e.evaluated for e in rest))
    return PotencyReport(tuple(top), residual, tuple(ranked), s0, scorer_name, degenerate)


def jaccard(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        raise UndefinedInput("jaccard index of two empty sets is undefined")
    return len(sa & sb) / len(union)


@dataclass(frozen=True)
class ScoreSeries:
    label: str
    values: tuple[float, ...]


def pearson(x, y) -> float:
    xs = list(x.values if isinstance(x, ScoreSeries) else x)
    ys = list(y.values if isinstance(y, ScoreSeries) else y)
    if len(xs) != len(ys):
        raise UndefinedInput(f"series lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise UndefinedInput("correlation needs at least two points")
    mx, my = math.fsum(xs) / len(xs), math.fsum(ys) / len(ys)
    dx = [v - mx for v in xs]
    dy = [v - my for v in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise UndefinedInput("correlation with a constant series is undefined")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class PrecisionAt1:
    value: float
    hits: int
    total: int
    missing_truth: tuple = field(default=())  # queries whose true match was not ranked at all


def precision_at_1(rankings: Iterable[tuple[Hashable, Sequence[Hashable], Hashable]]) -> PrecisionAt1:
    hits = total = 0
    missing = []
    for query, ranked, truth in rankings:
        if not ranked:
            raise UndefinedInput(f"query {query!r} has an empty candidate list")
        total += 1
        if ranked[0] == truth:
            hits += 1
        elif truth not in ranked:
            missing.append(query)
    if total == 0:
        raise UndefinedInput("precision@1 over zero queries is undefined")
    return PrecisionAt1(hits / total, hits, total, tuple(missing))


# -- session reports -------------------------------------------------------


def format_fitness(value: float) -> str:
    return str(Decimal(repr(float(value))).quantize(Decimal("0.000001"), rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class ReportBundle:
    generations_csv: Path
    best_flags: Path
    summary: Path


def emit_report(session_path: str | Path, out_dir: str | Path, space: FlagSpace | None = None) -> ReportBundle:
    header, records, _ = read_log(session_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    generations = [r for r in records if isinstance(r, GenerationRecord)]
    iterations = [r for r in records if isinstance(r, IterationRecord)]
    end = next((r for r in reversed(records) if isinstance(r, EndRecord)), None)

    gen_csv = out / "generations.csv"
    with open(gen_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_fitness", "evaluated"])
        for g in generations:
            w.writerow([g.generation, format_fitness(g.best_fitness), g.evaluated])

    best_path = out / "best_flags.txt"
    lines = []
    if iterations:
        top = max(r.fitness for r in iterations)
        for r in iterations:
            if r.fitness == top:
                tokens = decode(r.chromosome, space) if space is not None else [r.chromosome.to_hex()]
                lines.append(" ".join(tokens))
    best_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    _, wall = read_timing(session_path)
    summary = out / "summary.txt"
    best_fit = format_fitness(max(r.fitness for r in iterations)) if iterations else "n/a"
    summary.write_text(
        f"iterations: {len(iterations)}\n"
        f"generations: {len(generations)}\n"
        f"wall_time_seconds: {wall:.3f}\n"
        f"termination: {end.reason if end else 'incomplete'}\n"
        f"best_fitness: {best_fit}\n"
        f"seed: {header.seed}\n",
        encoding="utf-8",
    )
    return ReportBundle(gen_csv, best_path, summary)
