"""Plain-text dataset files and CSV reports.

BoW file: one frame per line, ``<frame_id> <word>:<count> ...`` with word ids
ascending. Pose file: 12 reals per line (3x4 row-major [R|t]). Labels file:
``<frame_id> <group_id>``. Descriptor file: ``b:<hex>`` (binary) or comma
separated reals, one descriptor per line.
"""
from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bow import SparseHistogram
from .hier import Pose


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _lines(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, encoding="ascii") as f:
        for no, line in enumerate(f, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield no, line


def read_bow(path) -> list[tuple[int, SparseHistogram]]:
    out = []
    seen = set()
    for no, line in _lines(path):
        fields = line.split()
        try:
            fid = int(fields[0])
            pairs = [tok.split(":") for tok in fields[1:]]
            ids = np.array([int(w) for w, _ in pairs], np.int64)
            counts = np.array([float(c) for _, c in pairs])
        except ValueError as e:
            raise DataError(f"{path}:{no}: bad BoW line ({e})") from None
        if fid in seen:
            raise DataError(f"{path}:{no}: duplicate frame id {fid}")
        seen.add(fid)
        if ids.size == 0:
            raise DataError(f"{path}:{no}: frame {fid} has no words")
        if np.any(np.diff(ids) <= 0) or ids[0] < 0:
            raise DataError(f"{path}:{no}: word ids must be nonnegative and strictly ascending")
        if np.any(counts <= 0):
            raise DataError(f"{path}:{no}: counts must be positive")
        out.append((fid, SparseHistogram.from_arrays(ids, counts)))
    return out


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_bow(path, frames: Iterable[tuple[int, SparseHistogram]]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for fid, h in frames:
            words = " ".join(f"{int(w)}:{_num(c)}" for w, c in zip(h.ids, h.weights))
            f.write(f"{int(fid)} {words}\n")


def read_poses(path) -> list[Pose]:
    """Poses in file order; frame index t is the line index."""
    poses = []
    for no, line in _lines(path):
        try:
            vals = np.array([float(v) for v in line.split()])
        except ValueError:
            raise DataError(f"{path}:{no}: pose values must be numbers") from None
        if vals.size != 12:
            raise DataError(f"{path}:{no}: expected 12 values, got {vals.size}")
        m = vals.reshape(3, 4)
        try:
            poses.append(Pose(len(poses), m[:, 3].copy(), m[:, :3].copy()))
        except ValueError as e:
            raise DataError(f"{path}:{no}: {e}") from None
    return poses


def write_poses(path, poses: Sequence[Pose]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for p in poses:
            rot = np.eye(3) if p.rotation is None else p.rotation
            m = np.hstack([rot, np.asarray(p.translation).reshape(3, 1)])
            f.write(" ".join(f"{v:.9e}" for v in m.ravel()) + "\n")


def read_labels(path) -> dict[int, int]:
    labels = {}
    for no, line in _lines(path):
        fields = line.split()
        if len(fields) != 2:
            raise DataError(f"{path}:{no}: expected '<frame_id> <group_id>'")
        try:
            fid, gid = int(fields[0]), int(fields[1])
        except ValueError:
            raise DataError(f"{path}:{no}: ids must be integers") from None
        if fid in labels:
            raise DataError(f"{path}:{no}: duplicate frame id {fid}")
        labels[fid] = gid
    return labels


def write_labels(path, labels: Iterable[tuple[int, int]]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for fid, gid in labels:
            f.write(f"{int(fid)} {int(gid)}\n")


def read_descriptors(path) -> np.ndarray:
    """Packed uint8 rows for binary files, float64 rows for real ones."""
    rows, kind = [], None
    for no, line in _lines(path):
        this = "binary" if line.startswith("b:") else "real"
        if kind is None:
            kind = this
        elif kind != this:
            raise DataError(f"{path}:{no}: mixed binary and real descriptors")
        try:
            if this == "binary":
                rows.append(np.frombuffer(bytes.fromhex(line[2:]), np.uint8))
            else:
                rows.append(np.array([float(v) for v in line.split(",")]))
        except ValueError:
            raise DataError(f"{path}:{no}: bad descriptor") from None
        if rows[-1].size == 0 or rows[-1].size != rows[0].size:
            raise DataError(f"{path}:{no}: descriptor length differs from first line")
    if not rows:
        raise DataError(f"{path}: no descriptors")
    return np.vstack(rows)


def write_descriptors(path, desc: np.ndarray) -> None:
    desc = np.asarray(desc)
    with open(path, "w", encoding="ascii") as f:
        for row in desc:
            if desc.dtype == np.uint8:
                f.write("b:" + row.tobytes().hex() + "\n")
            else:
                f.write(",".join(repr(float(v)) for v in row) + "\n")


def write_report(path, columns: Sequence[str], rows: Iterable[Sequence], config: dict) -> None:
    """CSV table preceded by '# config' and '# generated' comment lines.

    Only the generated line changes between identical runs.
    """
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# config: " + json.dumps(config, sort_keys=True, default=str) + "\n")
        f.write("# generated: " + datetime.now(timezone.utc).isoformat(timespec="seconds") + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_report(path) -> tuple[dict, list[dict]]:
    """(config, rows) of a report written by ``write_report``."""
    config = {}
    body = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("# config: "):
                config = json.loads(line[len("# config: "):])
            elif not line.startswith("#"):
                body.append(line)
    return config, list(csv.DictReader(body))


def report_body(path) -> str:
    """Report text without comment lines, for comparing runs."""
    with open(path, encoding="utf-8") as f:
        return "".join(line for line in f if not line.startswith("#"))
