"""Generational genetic search over flag chromosomes.

Every generation draws from its own counter-based stream (Philox keyed by the
session seed and the generation index), so a resumed session only needs the
generation number to continue bit-identically, and evaluation order never
touches the random state.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError
from .fitness import FAILURE_FLOOR
from .flagspace import Chromosome, ConstraintSet, FlagSpace, random_chromosome, repair
from .store import EndRecord, GenerationRecord, IterationRecord, SessionStore

log = logging.getLogger(__name__)

PLATEAU_EPS = 1e-9


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 20
    mutation_rate: float = 0.05
    crossover_rate: float = 0.8
    must_mutate_count: int = 1
    crossover_strength: float = 0.5
    elite_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ConfigError("population_size must be positive")
        for name in ("mutation_rate", "crossover_rate", "crossover_strength"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.must_mutate_count < 0:
            raise ConfigError("must_mutate_count must be non-negative")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must be in [0, population_size)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def check_genes(self, n_genes: int) -> None:
        if self.must_mutate_count > n_genes:
            raise ConfigError(f"must_mutate_count {self.must_mutate_count} exceeds gene count {n_genes}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TerminationCriteria:
    max_iterations: Optional[int] = None
    max_wall_clock: Optional[float] = None  # seconds
    plateau_threshold: Optional[float] = 0.0035
    plateau_window: int = 10

    def __post_init__(self):
        if self.max_iterations is None and self.max_wall_clock is None and self.plateau_threshold is None:
            raise ConfigError("at least one termination criterion must be enabled")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.max_wall_clock is not None and self.max_wall_clock <= 0:
            raise ConfigError("max_wall_clock must be positive")
        if self.plateau_window < 1:
            raise ConfigError("plateau_window must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GenerationSummary:
    index: int
    best_fitness: float
    best_chromosome: Chromosome
    evaluated_count: int


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.stop


@dataclass(frozen=True)
class Evaluation:
    """What a fitness function reports for one chromosome."""

    fitness: float
    status: str = "ok"
    digest: Optional[str] = None
    duration: float = 0.0


@dataclass(frozen=True)
class Individual:
    chromosome: Chromosome
    fitness: float
    seq: int  # sequence number of the record that first evaluated it


FitnessFn = Callable[[Chromosome], Union[float, Evaluation, None]]


def generation_rng(seed: int, generation: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(generation,))))


def crossover(parent_a: Chromosome, parent_b: Chromosome, config: GaConfig, rng: np.random.Generator):
    """Uniform exchange; the base level counts as one extra position."""
    n = len(parent_a.genes)
    if len(parent_b.genes) != n:
        raise ValueError(f"gene length mismatch: {n} vs {len(parent_b.genes)}")
    if rng.random() >= config.crossover_rate:
        return parent_a, parent_b
    swap = rng.random(n + 1) < config.crossover_strength
    ga, gb = list(parent_a.genes), list(parent_b.genes)
    for i in np.flatnonzero(swap[:n]):
        ga[i], gb[i] = gb[i], ga[i]
    la, lb = parent_a.base_level, parent_b.base_level
    if swap[n]:
        la, lb = lb, la
    return Chromosome(la, tuple(ga)), Chromosome(lb, tuple(gb))


def mutate(individual: Chromosome, config: GaConfig, rng: np.random.Generator, n_levels: int = 1) -> Chromosome:
    n = len(individual.genes)
    config.check_genes(n)
    flips = rng.random(n) < config.mutation_rate
    shortfall = config.must_mutate_count - int(flips.sum())
    if shortfall > 0:
        extra = rng.choice(np.flatnonzero(~flips), size=shortfall, replace=False)
        flips[extra] = True
    genes = tuple(bool(g) ^ bool(f) for g, f in zip(individual.genes, flips))
    base = individual.base_level
    if rng.random() < config.mutation_rate:
        base = int(rng.integers(n_levels))
    return Chromosome(base, genes)


def _fitter(a: Individual, b: Individual) -> Individual:
    if a.fitness != b.fitness:
        return a if a.fitness > b.fitness else b
    return a if a.seq <= b.seq else b


def select_parents(population: Sequence[Individual], rng: np.random.Generator) -> tuple[Chromosome, Chromosome]:
    """Two independent size-2 tournaments."""
    if not population:
        raise ValueError("empty population")
    picks = []
    for _ in range(2):
        i, j = rng.integers(len(population), size=2)
        picks.append(_fitter(population[i], population[j]).chromosome)
    return picks[0], picks[1]


def check_termination(history: Sequence[GenerationSummary], criteria: TerminationCriteria, elapsed: float = 0.0) -> StopDecision:
    if criteria.max_iterations is not None and history and history[-1].index >= criteria.max_iterations:
        return StopDecision(True, "max_iterations")
    if criteria.max_wall_clock is not None and elapsed >= criteria.max_wall_clock:
        return StopDecision(True, "max_wall_clock")
    w = criteria.plateau_window
    if criteria.plateau_threshold is not None and len(history) > w:
        now, then = history[-1].best_fitness, history[-1 - w].best_fitness
        growth = (now - then) / max(then, PLATEAU_EPS)
        if growth < criteria.plateau_threshold:
            return StopDecision(True, "plateau")
    return StopDecision(False)


def _as_evaluation(result) -> Evaluation:
    if isinstance(result, Evaluation):
        return result
    if result is None:
        return Evaluation(FAILURE_FLOOR, "compile_error")
    return Evaluation(float(result))


class Engine:
    """Runs (or resumes) one session against one store."""

    def __init__(self, space: FlagSpace, constraints: ConstraintSet, fitness_fn: FitnessFn,
                 config: GaConfig, criteria: TerminationCriteria, store: SessionStore,
                 jobs: int = 1, clock: Callable[[], float] = time.monotonic):
        config.check_genes(len(space.flags))
        self.space = space
        self.constraints = constraints
        self.fitness_fn = fitness_fn
        self.config = config
        self.criteria = criteria
        self.store = store
        self.jobs = max(1, jobs)
        self.clock = clock
        self.calls = 0  # fitness_fn invocations by this engine
        self._best_ind: Optional[Individual] = None
        self._per_generation: Counter[int] = Counter()
        for rec in store.iterations():
            self._admit(rec)

    def _admit(self, rec: IterationRecord) -> None:
        cand = Individual(rec.chromosome, rec.fitness, rec.seq)
        self._best_ind = cand if self._best_ind is None else _fitter(self._best_ind, cand)
        self._per_generation[rec.generation] += 1

    # -- evaluation -----------------------------------------------------

    def _evaluate(self, chromosomes: list[Chromosome], generation: int) -> None:
        pending: list[Chromosome] = []
        seen = set()
        for c in chromosomes:
            if c not in seen and self.store.lookup_record(c) is None:
                pending.append(c)
            seen.add(c)
        if not pending:
            return

        def timed(c: Chromosome) -> Evaluation:
            t0 = time.monotonic()
            ev = _as_evaluation(self.fitness_fn(c))
            if not ev.duration:
                ev = Evaluation(ev.fitness, ev.status, ev.digest, time.monotonic() - t0)
            return ev

        self.calls += len(pending)
        if self.jobs == 1:
            results = map(timed, pending)
        else:
            pool = ThreadPoolExecutor(self.jobs)
            results = pool.map(timed, pending)
        try:
            # appended in submission order whatever the completion order
            for c, ev in zip(pending, results):
                rec = IterationRecord(self.store.next_seq, generation, c, ev.status,
                                      ev.digest, ev.fitness, ev.duration)
                self.store.append(rec)
                self._admit(rec)
        finally:
            if self.jobs != 1:
                pool.shutdown(wait=True, cancel_futures=True)

    def _individual(self, c: Chromosome) -> Individual:
        rec = self.store.lookup_record(c)
        return Individual(c, rec.fitness, rec.seq)

    # -- generations ----------------------------------------------------

    def _breed(self, previous: list[Chromosome], rng: np.random.Generator) -> list[Chromosome]:
        cfg = self.config
        prev = [self._individual(c) for c in previous]
        ranked = sorted(prev, key=lambda ind: (-ind.fitness, ind.seq))
        elites = [ind.chromosome for ind in ranked[:cfg.elite_count]]
        offspring: list[Chromosome] = []
        need = cfg.population_size - len(elites)
        n_levels = len(self.space.base_levels)
        while len(offspring) < need:
            a, b = select_parents(prev, rng)
            for child in crossover(a, b, cfg, rng):
                child = mutate(child, cfg, rng, n_levels)
                offspring.append(repair(child, self.constraints))
        return elites + offspring[:need]

    def _summary(self, generation: int) -> GenerationSummary:
        best = self._best_ind
        return GenerationSummary(generation, best.fitness, best.chromosome, self._per_generation[generation])

    def run(self) -> list[IterationRecord]:
        store = self.store
        history = [GenerationSummary(g.generation, g.best_fitness, g.best_chromosome, g.evaluated)
                   for g in store.generations()]
        snapshots = store.generations()
        start = self.clock()
        if store.end() is None:
            if history:
                decision = check_termination(history, self.criteria, 0.0)
                if decision:
                    self._finish(history[-1].index, decision.reason, start)
                    return self.best_records()
                population = list(snapshots[-1].population)
                generation = snapshots[-1].rng_position
            else:
                population, generation = [], 0
            while True:
                rng = generation_rng(self.config.seed, generation)
                if generation == 0:
                    population = [random_chromosome(self.space, self.constraints, rng)
                                  for _ in range(self.config.population_size)]
                else:
                    population = self._breed(population, rng)
                self._evaluate(population, generation)
                summary = self._summary(generation)
                history.append(summary)
                store.append(GenerationRecord(store.next_seq, generation, summary.best_fitness,
                                              summary.best_chromosome, summary.evaluated_count,
                                              generation + 1, tuple(population)))
                log.debug("generation %d best %.6f evaluated %d", generation,
                          summary.best_fitness, summary.evaluated_count)
                decision = check_termination(history, self.criteria, self.clock() - start)
                if decision:
                    self._finish(generation, decision.reason, start)
                    break
                generation += 1
        return self.best_records()

    def _finish(self, generation: int, reason: str, start: float) -> None:
        self.store.append(EndRecord(self.store.next_seq, generation, reason))
        self.store.note_wall_time(self.clock() - start)

    def best_records(self) -> list[IterationRecord]:
        its = self.store.iterations()
        if not its:
            return []
        top = max(r.fitness for r in its)
        return [r for r in its if r.fitness == top]


def run(space, constraints, fitness_fn, config, criteria, store, jobs: int = 1) -> list[IterationRecord]:
    return Engine(space, constraints, fitness_fn, config, criteria, store, jobs).run()
