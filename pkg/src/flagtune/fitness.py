"""Normalized compression distance and the baseline-relative fitness built on it."""

from __future__ import annotations

import hashlib
import lzma
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional

from . import elf
from .errors import ExtractionError, InfrastructureError

FAILURE_FLOOR = -1.0
MODES = ("elf_text", "whole_file")


@dataclass(frozen=True)
class CodeSection:
    data: bytes
    origin: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


@dataclass(frozen=True)
class CompressorId:
    """Raw LZMA2 stream settings.

    Raw format carries no container framing, so the compressed length of an
    empty input is a single end marker byte.  The dictionary has to cover a
    concatenation of two sections or long-range matches get lost.
    """

    algorithm: str = "lzma2"
    preset: int = 9
    dict_size: int = 8 << 20

    def __post_init__(self):
        if self.algorithm != "lzma2":
            raise ValueError(f"unsupported compressor {self.algorithm!r}")
        if not 0 <= self.preset <= 9:
            raise ValueError(f"preset must be in 0..9, got {self.preset}")
        if self.dict_size < 4096:
            raise ValueError("dict_size must be at least 4 KiB")

    @property
    def tag(self) -> str:
        return f"{self.algorithm}:preset={self.preset}:dict={self.dict_size}"

    @classmethod
    def from_tag(cls, tag: str) -> "CompressorId":
        algo, *opts = tag.split(":")
        kw = dict(o.split("=", 1) for o in opts)
        return cls(algo, int(kw.get("preset", 9)), int(kw.get("dict", 8 << 20)))

    def filters(self):
        return [{"id": lzma.FILTER_LZMA2, "preset": self.preset, "dict_size": self.dict_size}]


DEFAULT_COMPRESSOR = CompressorId()


def extract_code_section(binary: bytes, mode: str = "elf_text") -> CodeSection:
    digest = hashlib.sha256(binary).hexdigest()
    if mode == "whole_file":
        return CodeSection(bytes(binary), f"{digest}:whole_file")
    if mode != "elf_text":
        raise ValueError(f"unknown extraction mode {mode!r}")
    text = elf.text_section(binary)
    if not text:
        raise ExtractionError(".text section is empty")
    return CodeSection(text, f"{digest}:elf_text")


_LEN_MEMO: OrderedDict[tuple[str, str], int] = OrderedDict()
_LEN_LIMIT = 4096
_len_lock = threading.Lock()


def compressed_len(data: bytes, compressor: CompressorId = DEFAULT_COMPRESSOR) -> int:
    """Length of the raw compressed stream; memoized by content digest."""
    key = (hashlib.sha256(data).hexdigest(), compressor.tag)
    with _len_lock:
        if key in _LEN_MEMO:
            _LEN_MEMO.move_to_end(key)
            return _LEN_MEMO[key]
    n = len(lzma.compress(data, format=lzma.FORMAT_RAW, filters=compressor.filters()))
    with _len_lock:
        _LEN_MEMO[key] = n
        if len(_LEN_MEMO) > _LEN_LIMIT:
            _LEN_MEMO.popitem(last=False)
    return n


def ncd(x: CodeSection | bytes, y: CodeSection | bytes, compressor: CompressorId = DEFAULT_COMPRESSOR) -> float:
    """(C(xy) - min(C(x), C(y))) / max(C(x), C(y)), with xy = x then y.

    Not symmetrized and not clamped.
    """
    xb = x.data if isinstance(x, CodeSection) else bytes(x)
    yb = y.data if isinstance(y, CodeSection) else bytes(y)
    if not xb or not yb:
        raise ValueError("ncd needs two non-empty sections")
    return _ncd(xb, yb, compressor, compressed_len(yb, compressor))


def _ncd(xb: bytes, yb: bytes, compressor: CompressorId, cy: int) -> float:
    cx = compressed_len(xb, compressor)
    cxy = compressed_len(xb + yb, compressor)
    denom = max(cx, cy)
    if denom == 0:
        raise RuntimeError("compressor produced empty output for non-empty input")
    return (cxy - min(cx, cy)) / denom


CompileFn = Callable[..., Optional[bytes]]


def fitness_against_baseline(
    chromosome,
    compile_fn: CompileFn,
    baseline: CodeSection,
    compressor: CompressorId = DEFAULT_COMPRESSOR,
    mode: str = "elf_text",
) -> float:
    """NCD of the chromosome's build against the baseline build.

    ``compile_fn`` returns the binary bytes, or None when compilation failed;
    failures score FAILURE_FLOOR.
    """
    binary = compile_fn(chromosome)
    if binary is None:
        return FAILURE_FLOOR
    try:
        section = extract_code_section(binary, mode)
    except ExtractionError as exc:
        raise InfrastructureError(f"compiled binary is unreadable: {exc}") from exc
    return ncd(section, baseline, compressor)


# NCD against a baseline is a pure function of the two contents and the
# compressor, so scores are shared by every scorer in the process.
_SHARED_MEMO: OrderedDict[tuple, float] = OrderedDict()
_SHARED_LIMIT = 1 << 16
_shared_lock = threading.Lock()


class BaselineScorer:
    """Scores binaries against a fixed baseline, memoized by content digest.

    Different flag sets frequently produce byte-identical code; those builds
    share one NCD computation.  Safe for concurrent calls.
    """

    def __init__(self, baseline: CodeSection, compressor: CompressorId = DEFAULT_COMPRESSOR, mode: str = "elf_text"):
        if not baseline.data:
            raise ValueError("empty baseline section")
        self.baseline = baseline
        self.compressor = compressor
        self.mode = mode
        self._prefix = (baseline.digest, compressor.tag, mode)

    def score_binary(self, binary: bytes) -> float:
        key = self._prefix + (hashlib.sha256(binary).hexdigest(),)
        with _shared_lock:
            if key in _SHARED_MEMO:
                _SHARED_MEMO.move_to_end(key)
                return _SHARED_MEMO[key]
        try:
            section = extract_code_section(binary, self.mode)
        except ExtractionError as exc:
            raise InfrastructureError(f"compiled binary is unreadable: {exc}") from exc
        cy = compressed_len(self.baseline.data, self.compressor)
        value = _ncd(section.data, self.baseline.data, self.compressor, cy)
        with _shared_lock:
            _SHARED_MEMO[key] = value
            if len(_SHARED_MEMO) > _SHARED_LIMIT:
                _SHARED_MEMO.popitem(last=False)
        return value
