"""Synthetic compiler backend for hermetic tuning runs.

Emits a small x86-64 ELF whose ``.text`` is a seeded pseudo-program, altered
by one byte transform per enabled flag.  Accepts two command-line shapes::

    mockcc --emit OUT --seed N --flags -fa,-fb [--level -O2]
    mockcc --seed N -O2 -fa -fno-b src.c -o OUT

Tokens ``__fail__`` and ``__hang__`` make it exit 1 or sleep for an hour.
"""

from __future__ import annotations

import hashlib
import sys
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .elf import build_minimal_elf64

PROGRAM_SIZE = 64 * 1024
WORD = 4
BLOCK_WORDS = 16  # 64-byte blocks
N_CLASSES = 64
VOCAB_SIZE = 256
KINDS = ("subst", "shuffle", "dup", "nop")
FAIL_TOKEN, HANG_TOKEN = "__fail__", "__hang__"


def _key(name: str, seed: int) -> int:
    h = hashlib.sha256(f"{name}\0{seed}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def transform_kind(name: str, seed: int) -> str:
    """Kind named in the flag (``-fmock-subst-a``), else derived from the hash."""
    for kind in KINDS:
        if kind in name:
            return kind
    return KINDS[_key(name, seed) % 3]


def residue_class(name: str, seed: int) -> int:
    return (_key(name, seed) >> 8) % N_CLASSES


@lru_cache(maxsize=8)
def _base_program(seed: int):
    rng = np.random.Generator(np.random.Philox(seed))
    words = rng.integers(0, 256, size=(VOCAB_SIZE, WORD), dtype=np.uint8)
    # skewed opcode frequencies make the program compressible like real code
    weights = 1.0 / np.arange(1, VOCAB_SIZE + 1)
    probs = weights / weights.sum()
    program = words[rng.choice(VOCAB_SIZE, size=PROGRAM_SIZE // WORD, p=probs)]
    for arr in (words, probs, program):
        arr.flags.writeable = False
    return words, probs, program


@lru_cache(maxsize=4096)
def _plan(name: str, seed: int):
    """Which blocks a flag touches and the data it needs, drawn once per flag."""
    words, probs, _ = _base_program(seed)
    kind = transform_kind(name, seed)
    idx = np.arange(residue_class(name, seed), PROGRAM_SIZE // (WORD * BLOCK_WORDS), N_CLASSES)
    rng = np.random.Generator(np.random.Philox(_key(name, seed)))
    if kind == "subst":
        payload = words[rng.choice(VOCAB_SIZE, size=(len(idx), BLOCK_WORDS), p=probs)]
    elif kind == "shuffle":
        payload = idx[rng.permutation(len(idx))]
    else:
        payload = None
    return kind, idx, payload


def _apply(blocks: np.ndarray, name: str, seed: int) -> None:
    kind, idx, payload = _plan(name, seed)
    if kind == "subst":
        blocks[idx] = payload
    elif kind == "shuffle":
        blocks[idx] = blocks[payload]
    elif kind == "dup":  # run-length duplication of each block's first word
        blocks[idx] = blocks[idx, :1, :]


def synthetic_backend_emit(enabled_flag_names, base_level: str, session_seed: int) -> bytes:
    """Return the ELF image for a flag set.  Input order of the flags is irrelevant."""
    program = _base_program(session_seed)[2]
    blocks = program.reshape(-1, BLOCK_WORDS, WORD).copy()
    names = sorted(set(enabled_flag_names))
    if base_level and base_level != "-O0":
        names = [f"level:{base_level}"] + names
    for name in names:
        _apply(blocks, name, session_seed)
    return build_minimal_elf64(blocks.tobytes())


@dataclass
class Invocation:
    output: str | None = None
    seed: int = 0
    level: str = "-O0"
    flags: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    fail: bool = False
    hang: bool = False


def parse_args(argv: list[str]) -> Invocation:
    inv = Invocation()
    it = iter(argv)
    for tok in it:
        if tok in ("--emit", "-o"):
            inv.output = next(it, None)
        elif tok == "--seed":
            inv.seed = int(next(it, "0"))
        elif tok == "--level":
            inv.level = next(it, "-O0")
        elif tok == "--flags":
            inv.flags += [f for f in next(it, "").split(",") if f]
        elif tok == FAIL_TOKEN:
            inv.fail = True
        elif tok == HANG_TOKEN:
            inv.hang = True
        elif tok.startswith("-O"):
            inv.level = tok
        elif tok.startswith("-f") and not tok.startswith("-fno-"):
            inv.flags.append(tok)
        elif not tok.startswith("-"):
            inv.sources.append(tok)
    inv.fail = inv.fail or FAIL_TOKEN in inv.flags
    inv.hang = inv.hang or HANG_TOKEN in inv.flags
    return inv


def main(argv: list[str] | None = None) -> int:
    inv = parse_args(sys.argv[1:] if argv is None else argv)
    if inv.hang:
        time.sleep(3600)
    if inv.fail:
        print("mockcc: error: poisoned flag set", file=sys.stderr)
        return 1
    if not inv.output:
        print("mockcc: error: no output file given", file=sys.stderr)
        return 1
    Path(inv.output).write_bytes(synthetic_backend_emit(inv.flags, inv.level, inv.seed))
    return 0


if __name__ == "__main__":
    sys.exit(main())
