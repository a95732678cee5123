"""Render and run compiler commands for a chromosome."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import signal
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import mockcc
from .errors import ConfigError, InfrastructureError
from .flagspace import Chromosome, FlagSpace, check_chromosome, decode

STDERR_LIMIT = 4096
OK, COMPILE_ERROR, TIMEOUT = "ok", "compile_error", "timeout"
BACKENDS = ("subprocess", "synthetic")


@dataclass(frozen=True)
class BuildManifest:
    compiler_command: str
    sources: tuple[str, ...]
    fixed_args: tuple[str, ...] = ()
    output_path_template: str = "a.out"
    timeout: float = 300.0
    workdir: str = "."
    env_allowlist: tuple[str, ...] = ("PATH", "HOME", "LANG", "TMPDIR")
    # "synthetic" runs the mock compiler in-process on the rendered argv
    backend: str = "subprocess"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if not self.sources:
            raise ConfigError("manifest needs at least one source")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")

    @property
    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class CompileResult:
    status: str
    binary_digest: Optional[str] = None
    stderr_excerpt: str = ""
    duration: float = 0.0
    output_path: Optional[Path] = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return self.status == OK

    def read_binary(self) -> bytes:
        if not self.ok or self.output_path is None:
            raise InfrastructureError(f"no binary for a {self.status} result")
        return self.output_path.read_bytes()


def chromosome_key(chromosome: Chromosome) -> str:
    return hashlib.sha256(chromosome.to_hex().encode()).hexdigest()[:16]


def output_path(manifest: BuildManifest, chromosome: Chromosome) -> Path:
    key = chromosome_key(chromosome)
    name = manifest.output_path_template.format(key=key)
    return Path(manifest.workdir).resolve() / "builds" / key / name


def render_command(manifest: BuildManifest, chromosome: Chromosome, space: FlagSpace, out: str | Path | None = None) -> list[str]:
    if out is None:
        out = output_path(manifest, chromosome)
    return (
        [manifest.compiler_command]
        + list(manifest.fixed_args)
        + decode(chromosome, space)
        + list(manifest.sources)
        + ["-o", str(out)]
    )


def _excerpt(raw: bytes) -> str:
    return raw[:STDERR_LIMIT].decode("utf-8", errors="replace")


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass


def _run_subprocess(argv: list[str], manifest: BuildManifest, out: Path) -> CompileResult:
    exe = shutil.which(argv[0])
    if exe is None:
        raise InfrastructureError(f"compiler executable not found: {argv[0]}")
    env = {k: os.environ[k] for k in manifest.env_allowlist if k in os.environ}
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            [exe] + argv[1:],
            cwd=manifest.workdir,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as exc:
        raise InfrastructureError(f"cannot start compiler {exe}: {exc}") from exc
    try:
        _, err = proc.communicate(timeout=manifest.timeout)
    except subprocess.TimeoutExpired:
        _kill_tree(proc)
        _, err = proc.communicate()
        return CompileResult(TIMEOUT, None, _excerpt(err or b""), time.monotonic() - start)
    duration = time.monotonic() - start
    if proc.returncode != 0 or not out.is_file():
        return CompileResult(COMPILE_ERROR, None, _excerpt(err), duration)
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    return CompileResult(OK, digest, _excerpt(err), duration, out)


def _run_synthetic(argv: list[str], out: Path) -> CompileResult:
    start = time.monotonic()
    inv = mockcc.parse_args(argv[1:])
    if inv.hang:
        return CompileResult(TIMEOUT, None, "", time.monotonic() - start)
    if inv.fail:
        return CompileResult(COMPILE_ERROR, None, "mockcc: error: poisoned flag set", time.monotonic() - start)
    data = mockcc.synthetic_backend_emit(inv.flags, inv.level, inv.seed)
    out.write_bytes(data)
    return CompileResult(OK, hashlib.sha256(data).hexdigest(), "", time.monotonic() - start, out)


def compile(manifest: BuildManifest, chromosome: Chromosome, space: FlagSpace, out: str | Path | None = None) -> CompileResult:
    """Build one chromosome into a fresh output path under the manifest's workdir."""
    check_chromosome(chromosome, space)
    out = Path(out).resolve() if out is not None else output_path(manifest, chromosome)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists():
        out.unlink()
    argv = render_command(manifest, chromosome, space, out)
    if manifest.backend == "synthetic":
        return _run_synthetic(argv, out)
    return _run_subprocess(argv, manifest, out)
