"""Run configuration: flat key=value files, seed resolution, provenance.

Config precedence is CLI flag > config-file key > built-in default; the
master seed additionally falls back to the STDEEP_SEED environment
variable.  Every command dumps its fully resolved configuration into its
output artifacts so any of them can be regenerated.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from . import __version__

SEED_ENV_VAR = "STDEEP_SEED"


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat KEY=VALUE file; '#' starts a comment, blanks ignored."""
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


class Resolver:
    """Per-command option resolution with recorded provenance."""

    def __init__(self, args, file_cfg: dict[str, str]):
        self.args = args
        self.file_cfg = file_cfg
        self.resolved: dict = {}

    def get(self, key: str, default=None, cast=str):
        value = getattr(self.args, key, None)
        if value is None and key in self.file_cfg:
            raw = self.file_cfg[key]
            value = cast(raw) if cast is not bool else raw.lower() in ("1", "true", "yes")
        if value is None:
            value = default
        self.resolved[key] = value
        return value

    def seed(self, default: int = 0) -> int:
        value = getattr(self.args, "seed", None)
        if value is None and "seed" in self.file_cfg:
            value = int(self.file_cfg["seed"])
        if value is None and os.environ.get(SEED_ENV_VAR):
            value = int(os.environ[SEED_ENV_VAR])
        if value is None:
            value = default
        self.resolved["seed"] = value
        return value

    def provenance(self, command: str) -> dict:
        return {"command": command, "version": __version__, "config": dict(self.resolved)}


def dump_run_config(provenance: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_config.json"
    path.write_text(json.dumps(provenance, indent=2, sort_keys=True, default=str))
    return path
