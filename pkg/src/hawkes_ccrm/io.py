"""Edge-list ingestion, lossless serialisation and headered CSV/JSON output."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .data import InteractionDataset

log = logging.getLogger(__name__)

COLUMNS = ("src", "dst", "time")


class EdgeListError(ValueError):
    """Malformed or empty edge-list input."""


@dataclass(frozen=True)
class EdgeListSpec:
    """How to read an edge list.

    ``columns`` is the order of the src, dst and time fields in a line.
    ``delimiter`` of None splits on whitespace. Times are shifted so the first
    one is 0 when ``zero_base`` is set, then multiplied by ``scale``. A positive
    ``jitter`` spreads interactions that share a timestamp uniformly over
    [t, t + jitter).
    """

    columns: Sequence[str] = COLUMNS
    delimiter: Optional[str] = None
    scale: float = 1.0
    zero_base: bool = True
    jitter: float = 0.0
    comment: str = "#"

    def __post_init__(self):
        cols = tuple(c.strip() for c in self.columns)
        if sorted(cols) != sorted(COLUMNS):
            raise ValueError(f"columns must be a permutation of {COLUMNS}, got {cols}")
        object.__setattr__(self, "columns", cols)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.delimiter is not None and len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single character or None for whitespace")

    @classmethod
    def from_format(cls, fmt: str, **kw) -> "EdgeListSpec":
        """Build from a column string such as ``"src,dst,time"``."""
        return cls(columns=tuple(fmt.split(",")), **kw)

    @property
    def position(self) -> Dict[str, int]:
        return {c: i for i, c in enumerate(self.columns)}


def _label_order(labels: List[str]) -> List[str]:
    uniq = set(labels)
    try:
        return sorted(uniq, key=int)
    except ValueError:
        return sorted(uniq)


def parse_edge_list(path, spec: EdgeListSpec = EdgeListSpec(), T: Optional[float] = None,
                    rng=None) -> InteractionDataset:
    """Read ``path`` into an :class:`InteractionDataset` with dense node ids.

    Node labels are mapped to 0..n-1 in sorted order (numeric when every label
    is an integer); the mapping is kept in ``node_labels``. Self-loops are
    dropped with a counted warning, duplicate rows are kept. ``T`` defaults to
    the last interaction time.
    """
    pos = spec.position
    n_fields = len(spec.columns)
    src_l: List[str] = []
    dst_l: List[str] = []
    times: List[float] = []
    loops = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith(spec.comment):
                continue
            parts = s.split(spec.delimiter)
            if len(parts) < n_fields:
                raise EdgeListError(f"{path}: line {lineno}: expected {n_fields} fields, got {len(parts)}")
            try:
                t = float(parts[pos["time"]])
            except ValueError:
                raise EdgeListError(f"{path}: line {lineno}: time {parts[pos['time']]!r} is not a number") from None
            if not np.isfinite(t):
                raise EdgeListError(f"{path}: line {lineno}: time must be finite")
            a, b = parts[pos["src"]].strip(), parts[pos["dst"]].strip()
            if a == b:
                loops += 1
                continue
            src_l.append(a)
            dst_l.append(b)
            times.append(t)
    if not times:
        raise EdgeListError(f"{path}: no interactions found")
    if loops:
        log.warning("%s: dropped %d self-loops", path, loops)
    labels = _label_order(src_l + dst_l)
    lookup = {lab: i for i, lab in enumerate(labels)}
    src = np.fromiter((lookup[x] for x in src_l), dtype=np.int64, count=len(src_l))
    dst = np.fromiter((lookup[x] for x in dst_l), dtype=np.int64, count=len(dst_l))
    t = np.asarray(times, dtype=float)
    if spec.zero_base:
        t = t - t.min()
    t = t * spec.scale
    _, counts = np.unique(t, return_counts=True)
    n_tied = int(counts[counts > 1].sum())
    if spec.jitter > 0 and n_tied:
        rng = np.random.default_rng(rng)
        tied = np.isin(t, np.unique(t)[counts > 1])
        t = t + np.where(tied, rng.uniform(0.0, spec.jitter, t.size), 0.0)
    if t.min() < 0:
        raise EdgeListError(f"{path}: negative times; enable zero_base")
    T = float(t.max()) if T is None else float(T)
    meta = {"source": str(path), "self_loops_dropped": loops, "tied_interactions": n_tied,
            "jitter": spec.jitter, "tie_rule": "forward-first; no same-instant cross excitation"}
    return InteractionDataset(t, src, dst, T=T, n_nodes=len(labels),
                              node_labels=np.asarray(labels, dtype=object), meta=meta)


def format_float(x: float) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(x))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_lines(chash: str, extra: Optional[Dict[str, object]] = None) -> List[str]:
    from . import __version__

    lines = [f"# hawkes-ccrm {__version__}", f"# config_hash {chash}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k} {v}")
    return lines


def write_edge_list(path, d: InteractionDataset, chash: str = "none", labels: bool = False) -> None:
    """Write ``src dst time`` lines; parsing with zero_base off reproduces the times bit for bit."""
    with open(path, "w") as fh:
        for line in header_lines(chash, {"T": format_float(d.T), "n_nodes": d.n_nodes}):
            fh.write(line + "\n")
        names = d.node_labels if labels and d.node_labels is not None else None
        for t, s, r in zip(d.t, d.src, d.dst):
            a, b = (names[s], names[r]) if names is not None else (s, r)
            fh.write(f"{a} {b} {format_float(t)}\n")


def read_header(path) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            parts = line[1:].strip().split(None, 1)
            if len(parts) == 2:
                out[parts[0]] = parts[1]
    return out


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return format_float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], chash: str) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines(chash):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(x) for x in r])


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def write_json(path, payload: dict, chash: str) -> None:
    from . import __version__

    rec = {"_header": {"software": "hawkes-ccrm", "version": __version__, "config_hash": chash}}
    rec.update(_jsonable(payload))
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, chash: str, extra: Optional[dict] = None) -> Path:
    """List every file under ``out_dir`` with its SHA-256, in sorted order."""
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    payload = {"command": command,
               "files": [{"path": str(p.relative_to(out_dir)).replace(os.sep, "/"), "sha256": file_digest(p)}
                         for p in files]}
    payload.update(extra or {})
    path = out_dir / "manifest.json"
    write_json(path, payload, chash)
    return path
