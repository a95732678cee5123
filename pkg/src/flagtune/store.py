"""Append-only session log (``.btlog``) with a per-line CRC32C.

Line shapes (fields tab-separated, last field is the CRC32C of everything
before the final tab, lowercase hex)::

    #BTLOG v1  catalog=..  manifest=..  ga={..}  stop={..}  compressor=..  seed=..  baseline=..  crc
    I  seq  gen  chromosome  status  digest|-  fitness  crc
    G  seq  gen  best_fitness  best_chromosome  evaluated  rng  population  crc
    E  seq  gen  reason  crc

The log holds only values that are a function of the seed and the inputs, so
two runs with the same seed write the same bytes.  Wall-clock timings go to a
``.timing`` sidecar instead.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import crc32c

from .errors import CorruptLog, HeaderMismatch, IntegrityError, MissingHeader
from .flagspace import Chromosome

SCHEMA = "v1"
MAGIC = f"#BTLOG {SCHEMA}"
HEADER_KEYS = ("catalog", "manifest", "ga", "stop", "compressor", "seed", "baseline")


@dataclass(frozen=True)
class SessionHeader:
    catalog_digest: str
    manifest_hash: str
    ga_config: dict
    criteria: dict
    compressor: str
    seed: int
    baseline_digest: str
    schema: str = SCHEMA

    def fields(self) -> dict[str, str]:
        return {
            "catalog": self.catalog_digest,
            "manifest": self.manifest_hash,
            "ga": json.dumps(self.ga_config, sort_keys=True, separators=(",", ":")),
            "stop": json.dumps(self.criteria, sort_keys=True, separators=(",", ":")),
            "compressor": self.compressor,
            "seed": str(self.seed),
            "baseline": self.baseline_digest,
        }

    def diff(self, other: "SessionHeader") -> dict[str, tuple[str, str]]:
        mine, theirs = self.fields(), other.fields()
        out = {k: (mine[k], theirs[k]) for k in HEADER_KEYS if mine[k] != theirs[k]}
        if self.schema != other.schema:
            out["schema"] = (self.schema, other.schema)
        return out


@dataclass(frozen=True)
class IterationRecord:
    seq: int
    generation: int
    chromosome: Chromosome
    status: str
    digest: Optional[str]
    fitness: float
    # kept in the .timing sidecar, not the log
    duration: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class GenerationRecord:
    seq: int
    generation: int
    best_fitness: float
    best_chromosome: Chromosome
    evaluated: int
    rng_position: int
    population: tuple[Chromosome, ...]


@dataclass(frozen=True)
class EndRecord:
    seq: int
    generation: int
    reason: str


def _seal(fields: list[str]) -> str:
    payload = "\t".join(fields)
    return f"{payload}\t{crc32c.crc32c(payload.encode('utf-8')):08x}\n"


def _unseal(line: str) -> list[str] | None:
    payload, sep, crc = line.rpartition("\t")
    if not sep or len(crc) != 8:
        return None
    try:
        if int(crc, 16) != crc32c.crc32c(payload.encode("utf-8")):
            return None
    except ValueError:
        return None
    return payload.split("\t")


def serialize_header(header: SessionHeader) -> str:
    return _seal([f"#BTLOG {header.schema}"] + [f"{k}={v}" for k, v in header.fields().items()])


def parse_header(fields: list[str]) -> SessionHeader:
    if not fields or not fields[0].startswith("#BTLOG "):
        raise MissingHeader("first line is not a session header")
    kv = dict(f.split("=", 1) for f in fields[1:])
    missing = [k for k in HEADER_KEYS if k not in kv]
    if missing:
        raise MissingHeader(f"header lacks fields: {', '.join(missing)}")
    return SessionHeader(
        catalog_digest=kv["catalog"],
        manifest_hash=kv["manifest"],
        ga_config=json.loads(kv["ga"]),
        criteria=json.loads(kv["stop"]),
        compressor=kv["compressor"],
        seed=int(kv["seed"]),
        baseline_digest=kv["baseline"],
        schema=fields[0].split(" ", 1)[1],
    )


def serialize_record(record) -> str:
    if isinstance(record, IterationRecord):
        fields = ["I", str(record.seq), str(record.generation), record.chromosome.to_hex(),
                  record.status, record.digest or "-", repr(float(record.fitness))]
    elif isinstance(record, GenerationRecord):
        fields = ["G", str(record.seq), str(record.generation), repr(float(record.best_fitness)),
                  record.best_chromosome.to_hex(), str(record.evaluated), str(record.rng_position),
                  ",".join(c.to_hex() for c in record.population)]
    elif isinstance(record, EndRecord):
        fields = ["E", str(record.seq), str(record.generation), record.reason]
    else:
        raise TypeError(f"not a log record: {record!r}")
    return _seal(fields)


def parse_record(fields: list[str]):
    kind = fields[0]
    if kind == "I" and len(fields) == 7:
        _, seq, gen, chrom, status, digest, fit = fields
        return IterationRecord(int(seq), int(gen), Chromosome.from_hex(chrom), status,
                               None if digest == "-" else digest, float(fit))
    if kind == "G" and len(fields) == 8:
        _, seq, gen, best, best_c, evaluated, rng_pos, pop = fields
        population = tuple(Chromosome.from_hex(c) for c in pop.split(",") if c)
        return GenerationRecord(int(seq), int(gen), float(best), Chromosome.from_hex(best_c),
                                int(evaluated), int(rng_pos), population)
    if kind == "E" and len(fields) == 4:
        return EndRecord(int(fields[1]), int(fields[2]), fields[3])
    raise ValueError(f"unrecognized record kind {kind!r} with {len(fields)} fields")


def read_log(path: str | Path, repair_tail: bool = False):
    """Parse a log, returning ``(header, records, valid_length)``.

    A torn final line (no newline, or failing its checksum) is dropped; with
    ``repair_tail`` the file is truncated to the valid prefix.  Damage anywhere
    else raises CorruptLog.
    """
    path = Path(path)
    data = path.read_bytes() if path.exists() else b""
    if not data:
        raise MissingHeader(f"{path} is empty or missing")
    lines = data.split(b"\n")
    # after the final newline split() leaves b""; anything else there is torn
    complete, tail = lines[:-1], lines[-1]
    parsed, offset = [], 0
    for idx, raw in enumerate(complete):
        fields = None
        try:
            fields = _unseal(raw.decode("utf-8"))
        except UnicodeDecodeError:
            pass
        if fields is None:
            if idx == len(complete) - 1 and not tail:
                tail = raw
                break
            raise CorruptLog("checksum mismatch", idx + 1)
        parsed.append((idx + 1, fields))
        offset += len(raw) + 1
    if not parsed:
        raise MissingHeader(f"{path} has no complete header line")
    header = parse_header(parsed[0][1])
    records = []
    for lineno, fields in parsed[1:]:
        try:
            records.append(parse_record(fields))
        except (ValueError, IndexError) as exc:
            raise CorruptLog(str(exc), lineno) from exc
    for expected, rec in enumerate(records, 1):
        if rec.seq != expected:
            raise CorruptLog(f"sequence {rec.seq} where {expected} was expected", expected + 1)
    if repair_tail and offset != len(data):
        with open(path, "r+b") as fh:
            fh.truncate(offset)
    return header, records, offset


class SessionStore:
    """Single-writer handle on one session log."""

    def __init__(self, path: Path, header: SessionHeader, records: list, fsync: bool = True):
        self.path = Path(path)
        self.header = header
        self.records = list(records)
        self.fsync = fsync
        self._cache: dict[Chromosome, IterationRecord] = {}
        for rec in self.records:
            if isinstance(rec, IterationRecord):
                self._cache.setdefault(rec.chromosome, rec)
        self._fh = open(self.path, "ab")
        self._timing = open(self.timing_path(self.path), "a", encoding="utf-8")

    @staticmethod
    def timing_path(path: str | Path) -> Path:
        return Path(str(path) + ".timing")

    @classmethod
    def create(cls, path: str | Path, header: SessionHeader, fsync: bool = True) -> "SessionStore":
        path = Path(path)
        if path.exists() and path.stat().st_size:
            try:
                read_log(path)
            except MissingHeader:
                pass  # a torn header from a crashed start is overwritten
            else:
                raise IntegrityError(f"{path} already holds a session; resume it instead")
        with open(path, "wb") as fh:
            fh.write(serialize_header(header).encode("utf-8"))
            fh.flush()
            if fsync:
                os.fsync(fh.fileno())
        cls.timing_path(path).write_text("")
        return cls(path, header, [], fsync)

    @classmethod
    def open(cls, path: str | Path, expected: SessionHeader | None = None, fsync: bool = True) -> "SessionStore":
        header, records, _ = read_log(path, repair_tail=True)
        if expected is not None:
            diffs = header.diff(expected)
            if diffs:
                raise HeaderMismatch(diffs)
        return cls(Path(path), header, records, fsync)

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else 0

    @property
    def next_seq(self) -> int:
        return self.last_seq + 1

    def append(self, record) -> int:
        if record.seq != self.next_seq:
            raise IntegrityError(f"append of sequence {record.seq}, expected {self.next_seq}")
        self._fh.write(serialize_record(record).encode("utf-8"))
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self.records.append(record)
        if isinstance(record, IterationRecord):
            self._cache.setdefault(record.chromosome, record)
            self._timing.write(f"{record.seq}\t{record.duration:.6f}\n")
            self._timing.flush()
        return record.seq

    def note_wall_time(self, seconds: float) -> None:
        self._timing.write(f"wall\t{seconds:.3f}\n")
        self._timing.flush()

    def lookup(self, chromosome: Chromosome) -> float | None:
        rec = self._cache.get(chromosome)
        return None if rec is None else rec.fitness

    def lookup_record(self, chromosome: Chromosome) -> IterationRecord | None:
        return self._cache.get(chromosome)

    def iterations(self) -> list[IterationRecord]:
        return [r for r in self.records if isinstance(r, IterationRecord)]

    def generations(self) -> list[GenerationRecord]:
        return [r for r in self.records if isinstance(r, GenerationRecord)]

    def end(self) -> EndRecord | None:
        return next((r for r in reversed(self.records) if isinstance(r, EndRecord)), None)

    def close(self) -> None:
        self._fh.close()
        self._timing.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_timing(path: str | Path) -> tuple[dict[int, float], float]:
    """Per-record durations and total wall time from the sidecar, if present."""
    durations: dict[int, float] = {}
    wall = 0.0
    tp = SessionStore.timing_path(path)
    if not tp.exists():
        return durations, wall
    for line in tp.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("\t")
        try:
            if key == "wall":
                wall += float(value)
            else:
                durations[int(key)] = float(value)
        except ValueError:
            continue
    return durations, wall
