"""Deterministic CSV, JSON and binary artifacts.

Floats are written with ``repr`` so files are byte-identical across runs.
The binary cache is a JSON header line followed by sequential ``np.save``
records; zip containers are avoided because they embed timestamps.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dpp import Policy, ValueField

CACHE_MAGIC = b"SDGCACHE1\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return repr(v.item())
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def field_rows(fields: dict, n: int = 0, policies: dict | None = None):
    """Header and rows for slice ``n`` of one or more fields on the same grid."""
    names = list(fields)
    g = fields[names[0]].grid
    coords = g.node_coords().reshape(-1, len(g.shape))
    xcols = [f"x{i + 1}" for i in range(g.d)] + (["aug"] if g.aug_axis is not None else [])
    header = list(xcols)
    cols = []
    for name in names:
        f = fields[name]
        header.append(name)
        cols.append(f.values[n].reshape(-1))
        for j in range(g.d):
            header.append(f"{name}_z{j + 1}")
            cols.append(f.z[n][..., j].reshape(-1))
    for name, pol in (policies or {}).items():
        header.append(name)
        cols.append(pol.index[min(n, g.n_t - 1)].reshape(-1))
    rows = (list(coords[i]) + [c[i] for c in cols] for i in range(coords.shape[0]))
    return header, rows


def export_fields(path, fields: dict, n: int = 0, policies: dict | None = None) -> Path:
    header, rows = field_rows(fields, n, policies)
    return write_csv(path, header, rows)


def save_cache(path, arrays: dict) -> Path:
    """Write named arrays in sorted order to one file."""
    path = Path(path)
    keys = sorted(arrays)
    with path.open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write((json.dumps(keys) + "\n").encode())
        for k in keys:
            np.save(fh, np.ascontiguousarray(arrays[k]), allow_pickle=False)
    return path


def load_cache(path) -> dict:
    with Path(path).open("rb") as fh:
        if fh.readline() != CACHE_MAGIC:
            raise ValueError(f"{path} is not a field cache")
        keys = json.loads(fh.readline())
        return {k: np.load(fh, allow_pickle=False) for k in keys}


def field_arrays(prefix: str, f: ValueField) -> dict:
    return {f"{prefix}.values": f.values, f"{prefix}.z": f.z, f"{prefix}.fallback": f.fallback}


def policy_arrays(prefix: str, p: Policy) -> dict:
    return {f"{prefix}.index": p.index, f"{prefix}.controls": p.controls.points}
