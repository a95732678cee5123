"""Optimization-flag search space: catalog, chromosomes and constraint rules.

A catalog is plain text, one declaration per line::

    level -O0
    level -O2
    flag -finline-functions -fno-inline-functions
    flag -fpartial-inlining -fno-partial-inlining
    requires -fpartial-inlining -finline-functions
    conflicts -fsection-anchors -ftoplevel-reorder
    clause +-fgcse --fgcse-sm
    # comments run to end of line

``clause`` literals carry their sign as the first character, so ``--fgcse-sm``
is the negative literal of ``-fgcse-sm``.  A trailing ``advisory`` word on a
``requires``/``conflicts``/``clause`` line marks an effectiveness-only rule that
``verify`` and ``repair`` skip.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import CatalogError, UnsatisfiableConstraints


@dataclass(frozen=True)
class FlagDescriptor:
    id: int
    name: str
    negative_form: str | None = None

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise CatalogError(f"invalid flag name {self.name!r}")
        if self.negative_form is not None and (
            not self.negative_form or any(c.isspace() for c in self.negative_form)
        ):
            raise CatalogError(f"invalid negative form {self.negative_form!r}")


@dataclass(frozen=True)
class Implication:
    antecedent: int
    consequent: int
    advisory: bool = False

    @property
    def ids(self) -> tuple[int, ...]:
        return (self.antecedent, self.consequent)


@dataclass(frozen=True)
class Conflict:
    a: int
    b: int
    advisory: bool = False

    def __post_init__(self):
        if self.a == self.b:
            raise CatalogError(f"flag {self.a} cannot conflict with itself")

    @property
    def ids(self) -> tuple[int, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class Clause:
    """Disjunction of literals; each literal is ``(flag_id, positive)``."""

    literals: tuple[tuple[int, bool], ...]
    advisory: bool = False

    def __post_init__(self):
        if not self.literals:
            raise CatalogError("empty clause")

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.literals)


Rule = Union[Implication, Conflict, Clause]


@dataclass(frozen=True)
class Violation:
    rule: Rule
    index: int  # position of the rule in the constraint set

    @property
    def kind(self) -> str:
        return type(self.rule).__name__.lower()


@dataclass(frozen=True)
class ConstraintSet:
    """Constraint rules kept in declaration order (repair order depends on it)."""

    rules: tuple[Rule, ...] = ()

    @classmethod
    def from_lists(cls, implications=(), conflicts=(), formulas=()) -> "ConstraintSet":
        rules: list[Rule] = [Implication(a, c) for a, c in implications]
        rules += [Conflict(a, b) for a, b in conflicts]
        rules += [f if isinstance(f, Clause) else Clause(tuple(f)) for f in formulas]
        return cls(tuple(rules))

    @property
    def implications(self) -> list[Implication]:
        return [r for r in self.rules if isinstance(r, Implication)]

    @property
    def conflicts(self) -> list[Conflict]:
        return [r for r in self.rules if isinstance(r, Conflict)]

    @property
    def formulas(self) -> list[Clause]:
        return [r for r in self.rules if isinstance(r, Clause)]

    def check_against(self, n_flags: int) -> None:
        for rule in self.rules:
            for i in rule.ids:
                if not 0 <= i < n_flags:
                    raise CatalogError(f"rule {rule} references flag id {i}, catalog has {n_flags} flags")

    def without(self, index: int) -> "ConstraintSet":
        return ConstraintSet(self.rules[:index] + self.rules[index + 1:])


@dataclass(frozen=True)
class FlagSpace:
    base_levels: tuple[str, ...]
    flags: tuple[FlagDescriptor, ...]
    catalog_digest: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.base_levels:
            raise CatalogError("at least one base level is required")
        for pos, f in enumerate(self.flags):
            if f.id != pos:
                raise CatalogError(f"flag ids must be contiguous from 0; {f.name} has id {f.id} at position {pos}")
        names = [f.name for f in self.flags]
        if len(set(names)) != len(names):
            raise CatalogError("duplicate flag names")
        if not self.catalog_digest:
            text = serialize_catalog(self, ConstraintSet())
            object.__setattr__(self, "catalog_digest", catalog_digest(text))

    @classmethod
    def build(cls, base_levels: Sequence[str], flags: Iterable[str | tuple[str, str | None]]) -> "FlagSpace":
        descs = []
        for i, f in enumerate(flags):
            name, neg = (f, None) if isinstance(f, str) else f
            descs.append(FlagDescriptor(i, name, neg))
        return cls(tuple(base_levels), tuple(descs))

    def __len__(self) -> int:
        return len(self.flags)

    def flag_id(self, name: str) -> int:
        for f in self.flags:
            if f.name == name:
                return f.id
        raise KeyError(name)

    def level_index(self, token: str) -> int:
        return self.base_levels.index(token)


@dataclass(frozen=True)
class Chromosome:
    base_level: int
    genes: tuple[bool, ...]

    @classmethod
    def of(cls, base_level: int, genes: Iterable) -> "Chromosome":
        return cls(int(base_level), tuple(bool(g) for g in genes))

    @classmethod
    def zeros(cls, n_flags: int, base_level: int = 0) -> "Chromosome":
        return cls(base_level, (False,) * n_flags)

    def with_gene(self, i: int, value: bool) -> "Chromosome":
        genes = list(self.genes)
        genes[i] = bool(value)
        return Chromosome(self.base_level, tuple(genes))

    def on_ids(self) -> list[int]:
        return [i for i, g in enumerate(self.genes) if g]

    def to_hex(self) -> str:
        """``<base>.<n>.<hex>`` with gene 0 as the most significant bit."""
        n = len(self.genes)
        value = 0
        for g in self.genes:
            value = (value << 1) | int(g)
        nbytes = (n + 7) // 8
        value <<= nbytes * 8 - n
        return f"{self.base_level}.{n}.{value.to_bytes(nbytes, 'big').hex()}"

    @classmethod
    def from_hex(cls, text: str) -> "Chromosome":
        try:
            base, n, hx = text.split(".")
            base_i, n_i = int(base), int(n)
            raw = bytes.fromhex(hx)
        except ValueError as exc:
            raise CatalogError(f"bad chromosome encoding {text!r}") from exc
        if len(raw) != (n_i + 7) // 8 or base_i < 0:
            raise CatalogError(f"bad chromosome encoding {text!r}")
        value = int.from_bytes(raw, "big") >> (len(raw) * 8 - n_i)
        genes = tuple(bool((value >> (n_i - 1 - i)) & 1) for i in range(n_i))
        return cls(base_i, genes)


def check_chromosome(chromosome: Chromosome, space: FlagSpace) -> None:
    if len(chromosome.genes) != len(space.flags):
        raise CatalogError(
            f"chromosome has {len(chromosome.genes)} genes, catalog has {len(space.flags)} flags"
        )
    if not 0 <= chromosome.base_level < len(space.base_levels):
        raise CatalogError(f"base level index {chromosome.base_level} out of range")


def _violated(rule: Rule, genes: Sequence[bool]) -> bool:
    if isinstance(rule, Implication):
        return genes[rule.antecedent] and not genes[rule.consequent]
    if isinstance(rule, Conflict):
        return genes[rule.a] and genes[rule.b]
    return not any(genes[i] == positive for i, positive in rule.literals)


def verify(chromosome: Chromosome, constraints: ConstraintSet) -> list[Violation]:
    """Return every non-advisory rule the chromosome violates, in rule order."""
    constraints.check_against(len(chromosome.genes))
    return [
        Violation(rule, k)
        for k, rule in enumerate(constraints.rules)
        if not rule.advisory and _violated(rule, chromosome.genes)
    ]


def repair(chromosome: Chromosome, constraints: ConstraintSet) -> Chromosome:
    """Turn flags off, rule by rule in declaration order, until nothing is violated.

    Implication: the antecedent goes off.  Conflict: the higher id goes off.
    Clause: the highest-id flag among its negative literals goes off.  A violated
    clause with only positive literals cannot be fixed this way.
    """
    constraints.check_against(len(chromosome.genes))
    genes = list(chromosome.genes)
    changed = True
    while changed:
        changed = False
        for rule in constraints.rules:
            if rule.advisory or not _violated(rule, genes):
                continue
            if isinstance(rule, Implication):
                genes[rule.antecedent] = False
            elif isinstance(rule, Conflict):
                genes[max(rule.a, rule.b)] = False
            else:
                negatives = [i for i, positive in rule.literals if not positive]
                if not negatives:
                    raise UnsatisfiableConstraints(
                        f"clause {rule} needs a flag turned on; repair only turns flags off",
                        [rule],
                    )
                genes[max(negatives)] = False
            changed = True
    return Chromosome(chromosome.base_level, tuple(genes))


def decode(chromosome: Chromosome, space: FlagSpace) -> list[str]:
    tokens = [space.base_levels[chromosome.base_level]]
    for flag, on in zip(space.flags, chromosome.genes):
        if on:
            tokens.append(flag.name)
        elif flag.negative_form is not None:
            tokens.append(flag.negative_form)
    return tokens


def random_chromosome(space: FlagSpace, constraints: ConstraintSet, rng: np.random.Generator) -> Chromosome:
    base = int(rng.integers(len(space.base_levels)))
    genes = rng.integers(0, 2, size=len(space.flags))
    return repair(Chromosome.of(base, genes), constraints)


# -- catalog files ---------------------------------------------------------


def _canonical_lines(text: str) -> list[str]:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            lines.append(line)
    return lines


def catalog_digest(text: str) -> str:
    return hashlib.sha256("\n".join(_canonical_lines(text)).encode("utf-8")).hexdigest()


def parse_catalog(text: str) -> tuple[FlagSpace, ConstraintSet]:
    levels: list[str] = []
    flags: list[FlagDescriptor] = []
    ids: dict[str, int] = {}
    pending: list[tuple[int, list[str]]] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        kind, args = words[0], words[1:]
        if kind == "level":
            if len(args) != 1:
                raise CatalogError("level takes exactly one token", lineno)
            levels.append(args[0])
        elif kind == "flag":
            if len(args) not in (1, 2):
                raise CatalogError("flag takes a name and an optional negative form", lineno)
            if args[0] in ids:
                raise CatalogError(f"duplicate flag {args[0]}", lineno)
            ids[args[0]] = len(flags)
            flags.append(FlagDescriptor(len(flags), args[0], args[1] if len(args) == 2 else None))
        elif kind in ("requires", "conflicts", "clause"):
            pending.append((lineno, words))
        else:
            raise CatalogError(f"unknown declaration {kind!r}", lineno)

    def lookup(name: str, lineno: int) -> int:
        if name not in ids:
            raise CatalogError(f"unknown flag {name}", lineno)
        return ids[name]

    rules: list[Rule] = []
    for lineno, (kind, *args) in pending:
        advisory = bool(args) and args[-1] == "advisory"
        if advisory:
            args = args[:-1]
        if kind in ("requires", "conflicts"):
            if len(args) != 2:
                raise CatalogError(f"{kind} takes two flag names", lineno)
            a, b = lookup(args[0], lineno), lookup(args[1], lineno)
            if kind == "requires":
                rules.append(Implication(a, b, advisory))
            else:
                if a == b:
                    raise CatalogError(f"flag {args[0]} cannot conflict with itself", lineno)
                rules.append(Conflict(a, b, advisory))
        else:
            if not args:
                raise CatalogError("clause needs at least one literal", lineno)
            lits = []
            for lit in args:
                if len(lit) < 2 or lit[0] not in "+-":
                    raise CatalogError(f"clause literal {lit!r} must start with + or -", lineno)
                lits.append((lookup(lit[1:], lineno), lit[0] == "+"))
            rules.append(Clause(tuple(lits), advisory))

    if not levels:
        raise CatalogError("catalog declares no base levels")
    space = FlagSpace(tuple(levels), tuple(flags), catalog_digest(text))
    return space, ConstraintSet(tuple(rules))


def load_catalog(path: str | Path) -> tuple[FlagSpace, ConstraintSet]:
    return parse_catalog(Path(path).read_text(encoding="utf-8"))


def serialize_catalog(space: FlagSpace, constraints: ConstraintSet) -> str:
    out = [f"level {lv}" for lv in space.base_levels]
    for f in space.flags:
        out.append(f"flag {f.name}" + (f" {f.negative_form}" if f.negative_form else ""))
    name = lambda i: space.flags[i].name  # noqa: E731
    for r in constraints.rules:
        if isinstance(r, Implication):
            line = f"requires {name(r.antecedent)} {name(r.consequent)}"
        elif isinstance(r, Conflict):
            line = f"conflicts {name(r.a)} {name(r.b)}"
        else:
            line = "clause " + " ".join(("+" if pos else "-") + name(i) for i, pos in r.literals)
        out.append(line + (" advisory" if r.advisory else ""))
    return "\n".join(out) + "\n"
