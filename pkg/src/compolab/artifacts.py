"""Experiment configs, versioned CSV output and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import numbers
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import ConfigError

SCHEMA = 1
OUT_ENV = "COMPOLAB_OUT"
HEADER = f"# compo-approx-lab v{__version__} schema={SCHEMA}"


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def parse_kv_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    out_dir: Path
    jobs: int = 1

    @classmethod
    def resolve(cls, kind: str, defaults: dict, file_values: dict | None = None,
                overrides: dict | None = None, out_dir=None, jobs: int = 1) -> "ExperimentConfig":
        """Merge with precedence override > file > default; unknown keys are errors."""
        params = dict(defaults)
        for source in (file_values or {}, overrides or {}):
            for key, raw in source.items():
                if key not in defaults:
                    raise ConfigError(f"unknown config key {key!r} for {kind}; known: {sorted(defaults)}")
                params[key] = _coerce(key, raw, defaults[key])
        if out_dir is None:
            out_dir = Path(os.environ.get(OUT_ENV, "compolab_runs")) / kind
        if jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return cls(kind, params, Path(out_dir), jobs)

    def canonical(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params}, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _cell(v):
    if isinstance(v, numbers.Real) and not isinstance(v, numbers.Integral):
        return repr(float(v))
    return v


def csv_text(columns, rows, config: ExperimentConfig | None = None) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    if config is not None:
        buf.write(f"# config={config.canonical()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass
class RunResult:
    """Data files (name -> text) plus run metadata kept out of the payloads."""

    files: dict[str, str]
    seeds: list[int] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def write_run(config: ExperimentConfig, result: RunResult, started: datetime) -> Path:
    """Write data files and a plain-text manifest; returns the manifest path."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in result.files.items():
        (config.out_dir / name).write_text(text)
    finished = datetime.now(timezone.utc)
    lines = [
        HEADER,
        f"kind: {config.kind}",
        f"config_sha256: {config.digest()}",
        f"config: {config.canonical()}",
        f"started: {started.isoformat()}",
        f"finished: {finished.isoformat()}",
        f"seeds: {' '.join(str(s) for s in result.seeds)}",
    ]
    lines += [f"wall_time[{k}]: {v:.3f}" for k, v in result.timings.items()]
    lines += [f"file: {name}" for name in result.files]
    manifest = config.out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
