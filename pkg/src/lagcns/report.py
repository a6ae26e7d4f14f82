"""Report files: deterministic CSV/JSON plus a human-readable summary.

Timestamps and environment details go to ``metadata.json`` only, so every
other file is byte-identical across runs with the same config and seed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def fmt(x) -> str:
    """Shortest round-tripping text for numbers; empty for ``None``."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LAGCNS_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Order-preserving map over independent study points, capped by ``LAGCNS_THREADS``."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class Reporter:
    def __init__(self, outdir, command: str):
        self.outdir = Path(outdir)
        try:
            self.outdir.mkdir(parents=True, exist_ok=True)
            probe = self.outdir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OSError(f"output directory not writable: {self.outdir} ({exc})") from exc
        self.command = command
        self.lines: list[str] = []
        self.files: list[str] = []

    def csv(self, name: str, header, rows, footer=None) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        if footer:
            for line in footer:
                buf.write(f"# {line}\n")
        return self._write(name, buf.getvalue())

    def json(self, name: str, obj) -> Path:
        return self._write(name, json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")

    def _write(self, name: str, text: str) -> Path:
        path = self.outdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(name)
        return path

    def line(self, text: str = "") -> None:
        self.lines.append(text)

    def finish(self, status: int, config_path=None) -> None:
        body = [f"lagcns {self.command}", ""]
        body += self.lines if any(s.strip() for s in self.lines) else ["no measurements"]
        body += ["", f"exit status: {status}"]
        self._write("summary.txt", "\n".join(body) + "\n")
        meta = {
            "command": self.command,
            "config": str(config_path) if config_path else None,
            "exit_status": status,
            "files": sorted(set(self.files)),
            "python": platform.python_version(),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "version": __version__,
        }
        (self.outdir / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
