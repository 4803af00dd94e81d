"""
Trace/summary serialization and the run manifest.

Floats are written with repr(), the shortest round-trip form, so equal runs
produce byte-identical files.
"""

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from analytics.criticality import TRACE_COLUMNS, IterationTrace

logger = logging.getLogger(__name__)

TRACE_HEADER = TRACE_COLUMNS
SUMMARY_KEYS = ("p_c", "epsilon", "kappa_hat", "slope", "window", "pass", "margins")
MANIFEST_VOLATILE = ("wall_clock_seconds",)
CONFIG_VOLATILE = (("mc", "workers"), ("output", "directory"))
CODE_VERSION = "0.1.0"


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _plain(value):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.debug("wrote %s", path)
    return path


def write_trace_csv(trace: IterationTrace, path: Path) -> Path:
    return write_rows(path, TRACE_HEADER,
                      ((getattr(r, c) for c in TRACE_HEADER) for r in trace.records))


def write_trace_json(trace: IterationTrace, path: Path) -> Path:
    rows = [{c: getattr(r, c) for c in TRACE_HEADER} for r in trace.records]
    return write_json(path, {"columns": list(TRACE_HEADER), "records": rows})


def write_trace(trace: IterationTrace, directory: Path, fmt: str, stem: str = "trace") -> Path:
    if fmt == "json":
        return write_trace_json(trace, directory / f"{stem}.json")
    return write_trace_csv(trace, directory / f"{stem}.csv")


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_plain(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    logger.debug("wrote %s", path)
    return path


def summary_payload(**values) -> dict:
    """Summary with every standard key present; missing values become null."""
    payload = {key: None for key in SUMMARY_KEYS}
    payload.update(values)
    return payload


def write_summary(directory: Path, **values) -> Path:
    return write_json(directory / "summary.json", summary_payload(**values))


@dataclass
class RunManifest:
    """
    manifest.json for one command run.

    Two fields differ between otherwise identical runs: wall_clock_seconds,
    and the config echo of mc.workers and output.directory (results do not
    depend on either). stable_view drops them before comparing manifests.
    """

    command: str
    config: dict
    p_c: Optional[float] = None
    defects: dict = field(default_factory=dict)     # final / max defect per trace
    fits: list = field(default_factory=list)
    files: list = field(default_factory=list)
    code_version: str = CODE_VERSION
    started: float = field(default_factory=time.perf_counter)

    def defect_summary(self, name: str, trace: IterationTrace):
        column = trace.column("defect")
        self.defects[name] = {"final": float(column[-1]), "max_step": float(np.diff(column).max(initial=0.0))}

    def write(self, directory: Path) -> Path:
        payload = {
            "command": self.command,
            "config": self.config,
            "p_c": self.p_c,
            "code_version": self.code_version,
            "defects": self.defects,
            "fits": self.fits,
            "files": sorted(self.files),
            "wall_clock_seconds": round(time.perf_counter() - self.started, 3),
        }
        return write_json(directory / "manifest.json", payload)


def stable_view(manifest: dict) -> dict:
    """Manifest content that must match between reproducible runs."""
    view = {k: v for k, v in manifest.items() if k not in MANIFEST_VOLATILE}
    config = {name: dict(section) if isinstance(section, dict) else section
              for name, section in view.get("config", {}).items()}
    for section, key in CONFIG_VOLATILE:
        if isinstance(config.get(section), dict):
            config[section].pop(key, None)
    view["config"] = config
    return view
