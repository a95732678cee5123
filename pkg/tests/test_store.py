from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flagtune.errors import CorruptLog, HeaderMismatch, IntegrityError, MissingHeader
from flagtune.flagspace import Chromosome
from flagtune.store import (
    EndRecord,
    GenerationRecord,
    IterationRecord,
    SessionHeader,
    SessionStore,
    parse_header,
    parse_record,
    read_log,
    read_timing,
    serialize_header,
    serialize_record,
)

SHA = "ab" * 32


def header(**kw):
    base = dict(catalog_digest="c" * 64, manifest_hash="m" * 64, ga_config={"population_size": 20, "seed": 1},
                criteria={"max_iterations": 5}, compressor="lzma2:preset=9:dict=8388608", seed=1,
                baseline_digest="b" * 64)
    base.update(kw)
    return SessionHeader(**base)


def it(seq, genes=(True, False, True), fitness=0.5, gen=0):
    return IterationRecord(seq, gen, Chromosome.of(0, genes), "ok", SHA, fitness, duration=0.25)


@pytest.fixture
def log_path(tmp_path):
    return tmp_path / "s.btlog"


def fill(path, n=3):
    with SessionStore.create(path, header(), fsync=False) as store:
        for k in range(1, n + 1):
            store.append(it(k, genes=(k & 1, k & 2, k & 4), fitness=k / 10))
    return path


# -- append ------------------------------------------------------------------


def test_header_line_shape(log_path):
    fill(log_path, 0)
    assert log_path.read_bytes().startswith(b"#BTLOG v1\t")


def test_first_record_is_sequence_one(log_path):
    with SessionStore.create(log_path, header()) as store:
        assert store.append(it(1)) == 1
        assert store.next_seq == 2


@pytest.mark.parametrize("seq", [0, 2, 5])
def test_out_of_order_append(log_path, seq):
    with SessionStore.create(log_path, header(), fsync=False) as store:
        with pytest.raises(IntegrityError):
            store.append(it(seq))


def test_append_is_visible_to_readers_immediately(log_path):
    with SessionStore.create(log_path, header(), fsync=False) as store:
        store.append(it(1))
        _, records, _ = read_log(log_path)
        assert records == [it(1)]


def test_create_refuses_existing_session(log_path):
    fill(log_path)
    with pytest.raises(IntegrityError):
        SessionStore.create(log_path, header())


def test_durations_go_to_sidecar(log_path):
    fill(log_path)
    assert b"0.25" not in log_path.read_bytes()
    durations, wall = read_timing(log_path)
    assert durations == {1: 0.25, 2: 0.25, 3: 0.25}
    assert wall == 0.0


# -- recovery ------------------------------------------------------------------


def test_torn_tail_at_every_offset(log_path, tmp_path):
    fill(log_path, 3)
    data = log_path.read_bytes()
    last_start = data.rstrip(b"\n").rfind(b"\n") + 1
    for cut in range(last_start, len(data)):
        victim = tmp_path / f"cut{cut}.btlog"
        victim.write_bytes(data[:cut])
        with SessionStore.open(victim, header(), fsync=False) as store:
            assert store.last_seq == 2
            assert store.append(it(3, genes=(1, 1, 0), fitness=0.3)) == 3
        assert victim.read_bytes()[:last_start] == data[:last_start]
        _, records, _ = read_log(victim)
        assert [r.seq for r in records] == [1, 2, 3]


def test_flipped_byte_in_last_line_is_treated_as_torn(log_path):
    fill(log_path, 2)
    data = bytearray(log_path.read_bytes())
    data[-5] ^= 0x01
    log_path.write_bytes(bytes(data))
    _, records, _ = read_log(log_path)
    assert len(records) == 1


def test_interior_corruption_is_refused(log_path):
    fill(log_path, 3)
    lines = log_path.read_bytes().split(b"\n")
    lines[2] = lines[2].replace(b"\tok\t", b"\tOK\t")
    log_path.write_bytes(b"\n".join(lines))
    with pytest.raises(CorruptLog) as info:
        SessionStore.open(log_path, header())
    assert info.value.line == 3


def test_sequence_gap_in_file_is_refused(log_path):
    with open(log_path, "w") as fh:
        fh.write(serialize_header(header()))
        fh.write(serialize_record(it(1)))
        fh.write(serialize_record(it(3)))
    with pytest.raises(CorruptLog):
        read_log(log_path)


@pytest.mark.parametrize("content", [b"", b"#BTLOG v1\tcatal"])
def test_missing_header(log_path, content):
    log_path.write_bytes(content)
    with pytest.raises(MissingHeader):
        SessionStore.open(log_path, header())


def test_missing_file(log_path):
    with pytest.raises(MissingHeader):
        SessionStore.open(log_path)


def test_create_overwrites_torn_header(log_path):
    log_path.write_bytes(b"#BTLOG v1\tcatal")
    with SessionStore.create(log_path, header()) as store:
        store.append(it(1))
    assert len(read_log(log_path)[1]) == 1


# -- resume / lookup ---------------------------------------------------------------


def test_header_mismatch_lists_fields(log_path):
    fill(log_path)
    with pytest.raises(HeaderMismatch) as info:
        SessionStore.open(log_path, header(ga_config={"population_size": 30, "seed": 1}, seed=2))
    assert set(info.value.diffs) == {"ga", "seed"}


def test_lookup(log_path):
    fill(log_path, 3)
    with SessionStore.open(log_path, header()) as store:
        assert store.lookup(Chromosome.of(0, (True, False, False))) == 0.1
        assert store.lookup(Chromosome.of(0, (True, True, True))) is None
        assert store.lookup(Chromosome.of(1, (True, False, False))) is None


def test_lookup_isolated_by_catalog(tmp_path):
    a, b = tmp_path / "a.btlog", tmp_path / "b.btlog"
    fill(a, 1)
    other = header(catalog_digest="d" * 64)
    with SessionStore.create(b, other, fsync=False) as store:
        assert store.lookup(Chromosome.of(0, (True, False, False))) is None
    with pytest.raises(HeaderMismatch):
        SessionStore.open(a, other)


def test_reopen_rebuilds_cache_and_records(log_path):
    fill(log_path, 3)
    with SessionStore.open(log_path, header()) as store:
        assert len(store.iterations()) == 3
        assert store.lookup_record(Chromosome.of(0, (False, True, False))).seq == 2


def test_first_evaluation_wins_in_cache(log_path):
    with SessionStore.create(log_path, header(), fsync=False) as store:
        store.append(it(1, fitness=0.1))
        store.append(it(2, fitness=0.9))
        assert store.lookup(it(1).chromosome) == 0.1


def test_generation_and_end_records(log_path):
    pop = (Chromosome.of(0, (1, 0)), Chromosome.of(1, (0, 1)))
    with SessionStore.create(log_path, header(), fsync=False) as store:
        store.append(GenerationRecord(1, 0, 0.4, pop[0], 2, 1, pop))
        store.append(EndRecord(2, 0, "plateau"))
        store.note_wall_time(1.5)
    with SessionStore.open(log_path) as store:
        assert store.generations()[0].population == pop
        assert store.end().reason == "plateau"
    assert read_timing(log_path)[1] == 1.5


# -- round trips ---------------------------------------------------------------------


def test_header_round_trip():
    h = header()
    fields = serialize_header(h).rstrip("\n").split("\t")[:-1]
    assert parse_header(fields) == h


chromosomes = st.builds(lambda b, g: Chromosome.of(b, g), st.integers(0, 4), st.lists(st.booleans(), max_size=20))
floats = st.floats(allow_nan=False, allow_infinity=False)


@given(st.one_of(
    st.builds(IterationRecord, st.integers(1, 10**9), st.integers(0, 10**6), chromosomes,
              st.sampled_from(["ok", "compile_error", "timeout"]),
              st.one_of(st.none(), st.just(SHA)), floats),
    st.builds(GenerationRecord, st.integers(1, 10**9), st.integers(0, 10**6), floats, chromosomes,
              st.integers(0, 100), st.integers(0, 10**6), st.lists(chromosomes, max_size=5).map(tuple)),
    st.builds(EndRecord, st.integers(1, 10**9), st.integers(0, 10**6),
              st.sampled_from(["plateau", "max_iterations", "max_wall_clock"])),
))
def test_record_round_trip(record):
    line = serialize_record(record)
    assert line.endswith("\n")
    assert parse_record(line.rstrip("\n").split("\t")[:-1]) == record
