"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 infrastructure failure,
3 unsatisfiable constraints.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import analysis, structdiff
from .compiler import compile as run_compile
from .config import SessionConfig, load_config, read_catalog
from .errors import (CatalogError, ConfigError, ExtractionError, FlagtuneError, GraphParseError,
                     HeaderMismatch, InfrastructureError, MatchingError, MissingHeader, StoreError,
                     UnsatisfiableConstraints)
from .fitness import BaselineScorer, CompressorId, FAILURE_FLOOR, extract_code_section, ncd
from .flagspace import decode, parse_catalog, random_chromosome, serialize_catalog, verify
from .ga import Engine, Evaluation
from .store import SessionHeader, SessionStore, read_log

log = logging.getLogger("flagtune")

EXIT_OK, EXIT_INPUT, EXIT_INFRA, EXIT_UNSAT = 0, 1, 2, 3
VALIDATION_SAMPLES = 1000


def _fail(code: int, message: str) -> int:
    print(f"flagtune: {message}", file=sys.stderr)
    return code


def _load(args) -> SessionConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# -- tune ------------------------------------------------------------------


def build_baseline(cfg: SessionConfig):
    out = Path(cfg.manifest.workdir) / "baseline" / cfg.manifest.output_path_template.format(key="baseline")
    result = run_compile(cfg.manifest, cfg.baseline, cfg.space, out)
    if not result.ok:
        raise InfrastructureError(f"baseline build failed ({result.status}): {result.stderr_excerpt.strip()}")
    try:
        return extract_code_section(result.read_binary(), cfg.mode)
    except ExtractionError as exc:
        raise InfrastructureError(f"baseline binary is unreadable: {exc}") from exc


def make_fitness(cfg: SessionConfig, scorer: BaselineScorer):
    def fitness(chromosome):
        result = run_compile(cfg.manifest, chromosome, cfg.space)
        if not result.ok:
            return Evaluation(FAILURE_FLOOR, result.status, None, result.duration)
        value = scorer.score_binary(result.read_binary())
        return Evaluation(value, result.status, result.binary_digest, result.duration)
    return fitness


def session_header(cfg: SessionConfig, baseline_digest: str) -> SessionHeader:
    return SessionHeader(
        catalog_digest=cfg.space.catalog_digest,
        manifest_hash=cfg.manifest.digest,
        ga_config=cfg.ga.to_dict(),
        criteria=cfg.criteria.to_dict(),
        compressor=cfg.compressor.tag,
        seed=cfg.ga.seed,
        baseline_digest=baseline_digest,
    )


def _copy_best(cfg: SessionConfig, session: Path, records) -> list[Path]:
    """One copy per distinct best binary; its .flags lists every chromosome that built it."""
    groups: dict[str, list] = {}
    for rec in records:
        if rec.digest is not None and rec.chromosome not in groups.setdefault(rec.digest, []):
            groups[rec.digest].append(rec.chromosome)
    copies = []
    for digest, chromosomes in groups.items():
        result = run_compile(cfg.manifest, chromosomes[0], cfg.space)
        if not result.ok or result.binary_digest != digest:
            log.warning("rebuild of best chromosome %s did not reproduce its binary", chromosomes[0].to_hex())
            if not result.ok:
                continue
        dest = Path(f"{session}.best.{len(copies)}")
        shutil.copyfile(result.output_path, dest)
        Path(f"{dest}.flags").write_text(
            "".join(" ".join(decode(c, cfg.space)) + "\n" for c in chromosomes), encoding="utf-8")
        copies.append(dest)
    return copies


def cmd_tune(args) -> int:
    cfg = _load(args)
    session = Path(args.session)
    try:
        random_chromosome(cfg.space, cfg.constraints, np.random.default_rng(cfg.ga.seed))
    except UnsatisfiableConstraints as exc:
        return _fail(EXIT_UNSAT, f"constraints cannot be satisfied: {exc}\n" + "\n".join(
            f"  {r}" for r in exc.rules))
    baseline = build_baseline(cfg)
    if 2 * len(baseline.data) > cfg.compressor.dict_size:
        log.warning("dictionary of %d bytes is smaller than two %d-byte sections; "
                    "raise [fitness] dict_size", cfg.compressor.dict_size, len(baseline.data))
    header = session_header(cfg, baseline.digest)
    fsync = not args.no_fsync
    try:
        store = SessionStore.open(session, header, fsync=fsync)
        log.info("resuming %s at sequence %d", session, store.last_seq)
    except HeaderMismatch as exc:
        return _fail(EXIT_INPUT, f"cannot resume {session}: {exc}")
    except MissingHeader:
        store = SessionStore.create(session, header, fsync=fsync)
    scorer = BaselineScorer(baseline, cfg.compressor, cfg.mode)
    with store:
        engine = Engine(cfg.space, cfg.constraints, make_fitness(cfg, scorer), cfg.ga, cfg.criteria,
                        store, jobs=args.jobs)
        best = engine.run()
        copies = _copy_best(cfg, session, best)
        end = store.end()
        print(f"termination: {end.reason if end else 'incomplete'}")
        print(f"iterations: {len(store.iterations())}")
        if best:
            print(f"best_fitness: {analysis.format_fitness(best[0].fitness)}")
        for path in copies:
            print(f"best: {path}")
    return EXIT_OK


# -- score / structdiff ----------------------------------------------------


def cmd_score(args) -> int:
    try:
        a, b = Path(args.binary_a).read_bytes(), Path(args.binary_b).read_bytes()
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        comp = CompressorId(preset=args.preset, dict_size=args.dict_size)
        x, y = extract_code_section(a, args.mode), extract_code_section(b, args.mode)
        value = ncd(x, y, comp)
    except (ExtractionError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    print(f"{value:.6f}")
    return EXIT_OK


def cmd_structdiff(args) -> int:
    try:
        a = structdiff.load_program_graph(args.graph_a)
        b = structdiff.load_program_graph(args.graph_b)
        if args.matching:
            matching = structdiff.load_matching(args.matching)
        else:
            matching = structdiff.best_match(a, b, budget=args.budget)
            if matching.truncated:
                log.warning("matcher budget exhausted; score is from the best matching found")
        value = structdiff.binhunt_difference(a, b, matching)
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except GraphParseError as exc:
        return _fail(EXIT_INPUT, f"parse error at {exc}")
    except (MatchingError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"invalid input: {exc}")
    print(f"{value:.4f}")
    return EXIT_OK


# -- potency / report ------------------------------------------------------


def _graph_of(command: str, binary: Path) -> structdiff.ProgramGraph:
    argv = [part.replace("{binary}", str(binary)) for part in shlex.split(command)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise InfrastructureError(f"graph command failed: {proc.stderr.strip()}")
    return structdiff.parse_program_graph(proc.stdout)


def cmd_potency(args) -> int:
    cfg = _load(args)
    header, records, _ = read_log(args.session)
    iterations = [r for r in records if hasattr(r, "fitness")]
    if not iterations:
        return _fail(EXIT_INPUT, "session has no evaluated chromosomes")
    top = max(r.fitness for r in iterations)
    best = [r for r in iterations if r.fitness == top][-1].chromosome  # the last of the best
    baseline = build_baseline(cfg)

    if args.scorer == "ncd":
        bscorer = BaselineScorer(baseline, cfg.compressor, cfg.mode)

        def scorer(chromosome):
            result = run_compile(cfg.manifest, chromosome, cfg.space)
            if not result.ok:
                raise InfrastructureError(result.status)
            return bscorer.score_binary(result.read_binary())
    else:
        if not args.graph_command:
            return _fail(EXIT_INPUT, "--scorer binhunt needs --graph-command")
        base_bin = Path(cfg.manifest.workdir) / "baseline" / cfg.manifest.output_path_template.format(key="baseline")
        base_graph = _graph_of(args.graph_command, base_bin)

        def scorer(chromosome):
            result = run_compile(cfg.manifest, chromosome, cfg.space)
            if not result.ok:
                raise InfrastructureError(result.status)
            graph = _graph_of(args.graph_command, result.output_path)
            return structdiff.binhunt_difference(base_graph, graph, structdiff.best_match(base_graph, graph))

    report = analysis.flag_potency(best, scorer, cfg.space, cfg.constraints, args.scorer, jobs=args.jobs)
    sys.stdout.write(report.format())
    return EXIT_OK


def cmd_report(args) -> int:
    space = None
    if args.config:
        space = load_config(args.config).space
    out = Path(args.out) if args.out else Path(f"{args.session}.report")
    bundle = analysis.emit_report(args.session, out, space)
    for p in (bundle.generations_csv, bundle.best_flags, bundle.summary):
        print(p)
    return EXIT_OK


# -- validate-constraints --------------------------------------------------


def cmd_validate_constraints(args) -> int:
    ref = args.catalog
    text = None
    if not ref.startswith("builtin:"):
        try:
            text = Path(ref).read_text(encoding="utf-8")
        except OSError as exc:
            return _fail(EXIT_INPUT, str(exc))
    if text is not None and not any(line.split("#", 1)[0].strip() for line in text.splitlines()):
        print("levels: 0\nflags: 0\nrequires: 0\nconflicts: 0\nclauses: 0")
        return EXIT_OK
    space, constraints = parse_catalog(text) if text is not None else read_catalog(ref)
    print(f"levels: {len(space.base_levels)}")
    print(f"flags: {len(space.flags)}")
    print(f"requires: {len(constraints.implications)}")
    print(f"conflicts: {len(constraints.conflicts)}")
    print(f"clauses: {len(constraints.formulas)}")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    for k in range(VALIDATION_SAMPLES):
        try:
            c = random_chromosome(space, constraints, rng)
        except UnsatisfiableConstraints as exc:
            return _fail(EXIT_UNSAT, f"sample {k}: {exc}\n" + "\n".join(
                "  " + serialize_catalog(space, type(constraints)((r,))).splitlines()[-1] for r in exc.rules))
        bad = verify(c, constraints)
        if bad:
            return _fail(EXIT_UNSAT, f"sample {k}: repair left {len(bad)} violations")
    print(f"repair soundness: {VALIDATION_SAMPLES} samples ok")
    return EXIT_OK


# -- wiring ----------------------------------------------------------------


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering
    # values given before the subcommand name
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=dflt(None), help="session config file")
    common.add_argument("--session", default=dflt(None), help="session log path (.btlog)")
    common.add_argument("--jobs", type=int, default=dflt(1), help="concurrent compiles/evaluations")
    common.add_argument("--seed", type=int, default=dflt(None), help="override the config's GA seed")
    common.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    top, common = _common(False), _common(True)
    p = argparse.ArgumentParser(prog="flagtune", parents=[top],
                                description="Search compiler flag sequences that maximize binary code differences.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", parents=[common], help="run or resume a tuning session")
    t.add_argument("--no-fsync", action="store_true", help="flush log records without fsync")
    t.set_defaults(func=cmd_tune, needs=("config", "session"))

    s = sub.add_parser("score", parents=[common], help="NCD between two binaries")
    s.add_argument("binary_a")
    s.add_argument("binary_b")
    s.add_argument("--mode", choices=("elf_text", "whole_file"), default="elf_text")
    s.add_argument("--preset", type=int, default=CompressorId().preset)
    s.add_argument("--dict-size", type=int, default=CompressorId().dict_size)
    s.set_defaults(func=cmd_score, needs=())

    d = sub.add_parser("structdiff", parents=[common], help="BinHunt-style difference of two program graphs")
    d.add_argument("graph_a")
    d.add_argument("graph_b")
    d.add_argument("matching", nargs="?")
    d.add_argument("--budget", type=int, default=structdiff.DEFAULT_BUDGET)
    d.set_defaults(func=cmd_structdiff, needs=())

    po = sub.add_parser("potency", parents=[common], help="leave-one-out flag potency of the best sequence")
    po.add_argument("--scorer", choices=("ncd", "binhunt"), default="ncd")
    po.add_argument("--graph-command", help="command printing a program graph for {binary}")
    po.set_defaults(func=cmd_potency, needs=("config", "session"))

    r = sub.add_parser("report", parents=[common], help="write generations.csv, best_flags.txt, summary.txt")
    r.add_argument("--out", help="output directory (default <session>.report)")
    r.set_defaults(func=cmd_report, needs=("session",))

    v = sub.add_parser("validate-constraints", parents=[common], help="check a flag catalog's rules")
    v.add_argument("catalog")
    v.set_defaults(func=cmd_validate_constraints, needs=())
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    for name in args.needs:
        if getattr(args, name) is None:
            return _fail(EXIT_INPUT, f"{args.command} requires --{name}")
    try:
        return args.func(args)
    except UnsatisfiableConstraints as exc:
        return _fail(EXIT_UNSAT, str(exc))
    except InfrastructureError as exc:
        return _fail(EXIT_INFRA, f"infrastructure failure: {exc}")
    except (ConfigError, CatalogError, StoreError, FlagtuneError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
