"""INI-style session configuration.

Example::

    [build]
    compiler = gcc
    fixed_args = -w -static
    sources = main.c util.c
    output = prog
    timeout = 120
    workdir = build

    [flags]
    catalog = builtin:gcc-10.2

    [ga]
    population_size = 20
    seed = 1

    [stop]
    max_iterations = 2000
    plateau_threshold = 0.0035

    [fitness]
    mode = elf_text
    preset = 9

Relative paths resolve against the config file's directory; ``sources`` resolve
against ``workdir``.
"""

from __future__ import annotations

import configparser
import shlex
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .compiler import BuildManifest
from .errors import ConfigError
from .fitness import MODES, CompressorId
from .flagspace import Chromosome, ConstraintSet, FlagSpace, load_catalog, parse_catalog
from .ga import GaConfig, TerminationCriteria

_KEYS = {
    "build": {"compiler", "fixed_args", "sources", "output", "timeout", "workdir", "env_allowlist", "backend"},
    "flags": {"catalog"},
    "ga": {"population_size", "mutation_rate", "crossover_rate", "must_mutate_count",
           "crossover_strength", "elite_count", "seed"},
    "stop": {"max_iterations", "max_wall_clock", "plateau_threshold", "plateau_window"},
    "fitness": {"mode", "preset", "dict_size", "baseline_level", "baseline_flags"},
}
_OFF = {"", "off", "none", "disabled"}


@dataclass(frozen=True)
class SessionConfig:
    manifest: BuildManifest
    catalog_path: str
    space: FlagSpace
    constraints: ConstraintSet
    ga: GaConfig
    criteria: TerminationCriteria
    mode: str
    compressor: CompressorId
    baseline: Chromosome

    def with_seed(self, seed: int) -> "SessionConfig":
        return replace(self, ga=replace(self.ga, seed=seed))


def builtin_catalogs() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("flagtune.catalogs").iterdir() if p.name.endswith(".cat"))


def read_catalog(ref: str, base: Path | None = None) -> tuple[FlagSpace, ConstraintSet]:
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        res = resources.files("flagtune.catalogs") / f"{name}.cat"
        if not res.is_file():
            raise ConfigError(f"no builtin catalog {name!r}; available: {', '.join(builtin_catalogs())}")
        return parse_catalog(res.read_text(encoding="utf-8"))
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigError(f"catalog not found: {path}")
    return load_catalog(path)


def _typed(section, key, kind, default):
    if key not in section:
        return default
    raw = section[key].strip()
    if default is None and raw.lower() in _OFF:
        return None
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from None


def _optional_float(section, key, default):
    if key in section and section[key].strip().lower() in _OFF:
        return None
    return _typed(section, key, float, default)


def load_config(path: str | Path) -> SessionConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in parser.sections():
        if name not in _KEYS:
            raise ConfigError(f"unknown section [{name}]")
        unknown = set(parser[name]) - _KEYS[name]
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    for required in ("build", "flags"):
        if required not in parser:
            raise ConfigError(f"missing section [{required}]")
    base = path.parent.resolve()

    b = parser["build"]
    if "compiler" not in b or "sources" not in b:
        raise ConfigError("[build] needs compiler and sources")
    workdir = Path(b.get("workdir", "."))
    if not workdir.is_absolute():
        workdir = base / workdir
    workdir.mkdir(parents=True, exist_ok=True)
    backend = b.get("backend", "subprocess").strip()
    sources = tuple(shlex.split(b["sources"]))
    if backend == "subprocess":
        for src in sources:
            if not (workdir / src).exists():
                raise ConfigError(f"source not found: {workdir / src}")
    manifest_kw = {}
    if "env_allowlist" in b:
        manifest_kw["env_allowlist"] = tuple(shlex.split(b["env_allowlist"]))
    manifest = BuildManifest(
        compiler_command=b["compiler"].strip(),
        sources=sources,
        fixed_args=tuple(shlex.split(b.get("fixed_args", ""))),
        output_path_template=b.get("output", "a.out").strip(),
        timeout=_typed(b, "timeout", float, 300.0),
        workdir=str(workdir),
        backend=backend,
        **manifest_kw,
    )

    catalog_ref = parser["flags"].get("catalog")
    if not catalog_ref:
        raise ConfigError("[flags] needs catalog")
    space, constraints = read_catalog(catalog_ref.strip(), base)

    empty = parser[parser.default_section]
    g = parser["ga"] if "ga" in parser else empty
    defaults = GaConfig()
    ga = GaConfig(**{k: _typed(g, k, type(getattr(defaults, k)), getattr(defaults, k)) for k in _KEYS["ga"]})

    s = parser["stop"] if "stop" in parser else empty
    sd = TerminationCriteria()
    criteria = TerminationCriteria(
        max_iterations=_typed(s, "max_iterations", int, sd.max_iterations),
        max_wall_clock=_typed(s, "max_wall_clock", float, sd.max_wall_clock),
        plateau_threshold=_optional_float(s, "plateau_threshold", sd.plateau_threshold),
        plateau_window=_typed(s, "plateau_window", int, sd.plateau_window),
    )

    f = parser["fitness"] if "fitness" in parser else empty
    mode = f.get("mode", "elf_text").strip()
    if mode not in MODES:
        raise ConfigError(f"[fitness] mode must be one of {', '.join(MODES)}")
    dc = CompressorId()
    try:
        compressor = CompressorId(preset=_typed(f, "preset", int, dc.preset),
                                  dict_size=_typed(f, "dict_size", int, dc.dict_size))
    except ValueError as exc:
        raise ConfigError(f"[fitness] {exc}") from None

    level = f.get("baseline_level", "-O0").strip()
    if level not in space.base_levels:
        raise ConfigError(f"baseline level {level} is not declared in the catalog")
    genes = [False] * len(space.flags)
    for name in shlex.split(f.get("baseline_flags", "")):
        try:
            genes[space.flag_id(name)] = True
        except KeyError:
            raise ConfigError(f"baseline flag {name} is not in the catalog") from None
    baseline = Chromosome.of(space.level_index(level), genes)

    return SessionConfig(manifest, catalog_ref, space, constraints, ga, criteria, mode, compressor, baseline)
