"""Call-graph / CFG difference score in the BinHunt style.

Block equivalence is not decided here.  Whoever writes a program graph
assigns each basic block a ``semantic_id``; blocks are equivalent iff the ids
are equal.  Scores:

* block pair: 1.0 (same registers), 0.9 (different registers), 0.0 (not equivalent)
* CFG pair: sum of matched block scores / min(block counts)
* call graph: sum of matched CFG scores / min(function counts)
* difference: 1 - call-graph score

Sizes are node counts.  Unmatched nodes add nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import GraphParseError, MatchingError

SMALL_GRAPH_BOUND = 64
DEFAULT_BUDGET = 2_000_000


@dataclass(frozen=True)
class BlockDescriptor:
    semantic_id: str
    registers: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.semantic_id or any(c.isspace() for c in self.semantic_id):
            raise ValueError(f"invalid semantic id {self.semantic_id!r}")

    @property
    def register_set(self) -> frozenset[str]:
        return frozenset(self.registers)


@dataclass(frozen=True)
class Cfg:
    function_name: str
    blocks: tuple[BlockDescriptor, ...]
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.blocks:
            raise ValueError(f"function {self.function_name} has no blocks")
        n = len(self.blocks)
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range in {self.function_name}")

    @property
    def size(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class ProgramGraph:
    functions: tuple[Cfg, ...]
    call_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        n = len(self.functions)
        for i, j in self.call_edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"call edge ({i}, {j}) out of range")

    @property
    def size(self) -> int:
        return len(self.functions)

    @property
    def block_count(self) -> int:
        return sum(f.size for f in self.functions)


@dataclass(frozen=True)
class Matching:
    function_pairs: tuple[tuple[int, int], ...] = ()
    block_pairs: tuple[tuple[tuple[int, int], ...], ...] = ()
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if len(self.function_pairs) != len(self.block_pairs):
            raise MatchingError("one block-pair list is required per function pair")


# -- scores ----------------------------------------------------------------


def bb_match_score(a: BlockDescriptor, b: BlockDescriptor) -> float:
    if a.semantic_id != b.semantic_id:
        return 0.0
    return 1.0 if a.register_set == b.register_set else 0.9


def _check_injective(pairs: Iterable[tuple[int, int]], n_a: int, n_b: int, what: str) -> None:
    left, right = set(), set()
    for i, j in pairs:
        if not (0 <= i < n_a and 0 <= j < n_b):
            raise MatchingError(f"{what} pair ({i}, {j}) out of range")
        if i in left or j in right:
            raise MatchingError(f"{what} pair ({i}, {j}) reuses a matched node")
        left.add(i)
        right.add(j)


def cfg_match_score(a: Cfg, b: Cfg, block_pairs: Sequence[tuple[int, int]]) -> float:
    _check_injective(block_pairs, a.size, b.size, "block")
    total = sum(bb_match_score(a.blocks[i], b.blocks[j]) for i, j in block_pairs)
    return total / min(a.size, b.size)


def cg_match_score(a: ProgramGraph, b: ProgramGraph, matching: Matching) -> float:
    _check_injective(matching.function_pairs, a.size, b.size, "function")
    if not a.size or not b.size:
        return 0.0
    total = sum(
        cfg_match_score(a.functions[i], b.functions[j], pairs)
        for (i, j), pairs in zip(matching.function_pairs, matching.block_pairs)
    )
    return total / min(a.size, b.size)


def binhunt_difference(a: ProgramGraph, b: ProgramGraph, matching: Matching) -> float:
    return 1.0 - cg_match_score(a, b, matching)


# -- matching --------------------------------------------------------------


class _Budget:
    def __init__(self, limit: int | None):
        self.limit = limit
        self.used = 0
        self.exhausted = False

    def tick(self) -> bool:
        self.used += 1
        if self.limit is not None and self.used > self.limit:
            self.exhausted = True
        return not self.exhausted


def _greedy_assignment(weights: list[list[float]]) -> tuple[float, list[tuple[int, int]]]:
    cells = sorted(
        ((w, i, j) for i, row in enumerate(weights) for j, w in enumerate(row) if w > 0),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_i, used_j, pairs, total = set(), set(), [], 0.0
    for w, i, j in cells:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            pairs.append((i, j))
            total += w
    return total, sorted(pairs)


def _max_assignment(weights: list[list[float]], budget: _Budget) -> tuple[float, list[tuple[int, int]]]:
    """Maximum-weight injective pairing of rows to columns by branch and bound.

    Starts from the greedy pairing; a branch is cut when its score plus the
    best each remaining row could still add cannot beat the incumbent.
    """
    n_rows = len(weights)
    best_total, best_pairs = _greedy_assignment(weights)
    if n_rows == 0:
        return best_total, best_pairs
    # remaining[r] = sum of row maxima for rows r.. (optimistic completion)
    row_max = [max(row, default=0.0) for row in weights]
    remaining = [0.0] * (n_rows + 1)
    for r in range(n_rows - 1, -1, -1):
        remaining[r] = remaining[r + 1] + row_max[r]
    order = [sorted((j for j, w in enumerate(row) if w > 0), key=lambda j, row=row: (-row[j], j))
             for row in weights]
    used: set[int] = set()
    current: list[tuple[int, int]] = []
    eps = 1e-12

    def search(r: int, total: float) -> None:
        nonlocal best_total, best_pairs
        if not budget.tick():
            return
        if r == n_rows:
            if total > best_total + eps:
                best_total, best_pairs = total, sorted(current)
            return
        if total + remaining[r] <= best_total + eps:
            return
        for j in order[r]:
            if j in used:
                continue
            used.add(j)
            current.append((r, j))
            search(r + 1, total + weights[r][j])
            current.pop()
            used.discard(j)
            if budget.exhausted:
                return
        search(r + 1, total)

    search(0, 0.0)
    return best_total, best_pairs


def _block_weights(fa: Cfg, fb: Cfg) -> list[list[float]]:
    return [[bb_match_score(x, y) for y in fb.blocks] for x in fa.blocks]


def best_match(a: ProgramGraph, b: ProgramGraph, budget: int | None = DEFAULT_BUDGET,
               small_graph_bound: int = SMALL_GRAPH_BOUND, mode: str | None = None) -> Matching:
    """Find a matching that maximizes the call-graph score.

    ``mode`` is "exhaustive", "greedy", or None to pick exhaustive whenever the
    smaller program has at most ``small_graph_bound`` blocks.
    """
    if mode is None:
        mode = "exhaustive" if min(a.block_count, b.block_count) <= small_graph_bound else "greedy"
    if mode not in ("exhaustive", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    tracker = _Budget(budget)
    pair_blocks: dict[tuple[int, int], list[tuple[int, int]]] = {}
    cfg_scores = [[0.0] * b.size for _ in range(a.size)]
    for i, fa in enumerate(a.functions):
        for j, fb in enumerate(b.functions):
            w = _block_weights(fa, fb)
            if mode == "greedy" or tracker.exhausted:
                total, pairs = _greedy_assignment(w)
            else:
                total, pairs = _max_assignment(w, tracker)
            pair_blocks[i, j] = pairs
            cfg_scores[i][j] = total / min(fa.size, fb.size)
    if mode == "greedy" or tracker.exhausted:
        _, fpairs = _greedy_assignment(cfg_scores)
    else:
        _, fpairs = _max_assignment(cfg_scores, tracker)
    return Matching(
        tuple(fpairs),
        tuple(tuple(pair_blocks[p]) for p in fpairs),
        truncated=tracker.exhausted,
    )


# -- text formats ----------------------------------------------------------


def _words(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        words = raw.split("#", 1)[0].split()
        if words:
            yield lineno, words


def _int(word: str, lineno: int) -> int:
    try:
        return int(word)
    except ValueError:
        raise GraphParseError(f"expected an integer, got {word!r}", lineno) from None


def parse_program_graph(text: str) -> ProgramGraph:
    functions: list[Cfg] = []
    calls: list[tuple[int, int]] = []
    name, blocks, edges = None, [], []
    call_lines = []

    def close(lineno: int) -> None:
        if name is None:
            return
        try:
            functions.append(Cfg(name, tuple(blocks), tuple(edges)))
        except ValueError as exc:
            raise GraphParseError(str(exc), lineno) from None

    for lineno, words in _words(text):
        kind, args = words[0], words[1:]
        if kind == "function":
            if len(args) != 1:
                raise GraphParseError("function takes one name", lineno)
            close(lineno)
            name, blocks, edges = args[0], [], []
        elif kind == "block":
            if name is None:
                raise GraphParseError("block outside a function", lineno)
            if len(args) not in (1, 2):
                raise GraphParseError("block takes a semantic id and an optional register list", lineno)
            regs = tuple(r for r in args[1].split(",") if r) if len(args) == 2 else ()
            blocks.append(BlockDescriptor(args[0], regs))
        elif kind == "edge":
            if name is None:
                raise GraphParseError("edge outside a function", lineno)
            if len(args) != 2:
                raise GraphParseError("edge takes two block indices", lineno)
            edges.append((_int(args[0], lineno), _int(args[1], lineno)))
        elif kind == "call":
            if len(args) != 2:
                raise GraphParseError("call takes two function indices", lineno)
            calls.append((_int(args[0], lineno), _int(args[1], lineno)))
            call_lines.append(lineno)
        else:
            raise GraphParseError(f"unknown directive {kind!r}", lineno)
    close(len(text.splitlines()))
    for (i, j), lineno in zip(calls, call_lines):
        if not (0 <= i < len(functions) and 0 <= j < len(functions)):
            raise GraphParseError(f"call ({i}, {j}) out of range", lineno)
    return ProgramGraph(tuple(functions), tuple(calls))


def serialize_program_graph(graph: ProgramGraph) -> str:
    out = []
    for f in graph.functions:
        out.append(f"function {f.function_name}")
        for blk in f.blocks:
            out.append(f"block {blk.semantic_id}" + (f" {','.join(blk.registers)}" if blk.registers else ""))
        out += [f"edge {i} {j}" for i, j in f.edges]
    out += [f"call {i} {j}" for i, j in graph.call_edges]
    return "\n".join(out) + "\n"


def parse_matching(text: str) -> Matching:
    fpairs: list[tuple[int, int]] = []
    bpairs: list[list[tuple[int, int]]] = []
    for lineno, words in _words(text):
        kind, args = words[0], words[1:]
        if kind not in ("match-fn", "match-bb"):
            raise GraphParseError(f"unknown directive {kind!r}", lineno)
        if len(args) != 2:
            raise GraphParseError(f"{kind} takes two indices", lineno)
        pair = (_int(args[0], lineno), _int(args[1], lineno))
        if kind == "match-fn":
            fpairs.append(pair)
            bpairs.append([])
        else:
            if not fpairs:
                raise GraphParseError("match-bb before any match-fn", lineno)
            bpairs[-1].append(pair)
    return Matching(tuple(fpairs), tuple(tuple(p) for p in bpairs))


def serialize_matching(matching: Matching) -> str:
    out = []
    for (i, j), pairs in zip(matching.function_pairs, matching.block_pairs):
        out.append(f"match-fn {i} {j}")
        out += [f"match-bb {a} {b}" for a, b in pairs]
    return "".join(line + "\n" for line in out)


def load_program_graph(path: str | Path) -> ProgramGraph:
    return parse_program_graph(Path(path).read_text(encoding="utf-8"))


def load_matching(path: str | Path) -> Matching:
    return parse_matching(Path(path).read_text(encoding="utf-8"))
