"""Atomic CSV/JSON writers and readers for trajectories, targets and run records."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .model import ModelSpec
from .simulator import EventSplitTrajectory
from .targets import TargetSet


def fmt(v) -> str:
    """17 significant digits so floats round-trip exactly."""
    return format(float(v), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    d = path.parent if str(path.parent) else Path(".")
    d.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=d)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_clean(obj), indent=2) + "\n")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def sidecar_path(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


# -- trajectories -------------------------------------------------------------


def trajectory_rows(model: ModelSpec, traj: EventSplitTrajectory):
    """Header and rows ``t, x*, z*, y*`` over all stored nodes of real segments."""
    n_x, n_z, n_y = model.dims.n_x, model.dims.n_z, model.dims.n_y
    header = ["t"] + [f"x{i}" for i in range(n_x)] + [f"z{i}" for i in range(n_z)] + [f"y{i}" for i in range(n_y)]
    rows = []
    for seg in traj.segments:
        for t, x, z in zip(seg.times, seg.nodes_x, seg.nodes_z):
            y = np.atleast_1d(np.asarray(model.output(t, x, z, traj.p), dtype=float))
            rows.append([t, *x, *z, *y])
    return header, rows


def events_record(traj: EventSplitTrajectory) -> list:
    """Event log: one ``{tau, event_index, x_minus, x_plus, phi_dot}`` object per event."""
    return [
        {"tau": ev.tau, "event_index": ev.event_index, "x_minus": ev.x_minus, "x_plus": ev.x_plus,
         "phi_dot": ev.phi_dot}
        for ev in traj.events
    ]


def write_trajectory(path, model: ModelSpec, traj: EventSplitTrajectory) -> Path:
    """Trajectory CSV at ``path`` plus an ``<stem>.events.json`` sidecar; returns the sidecar path."""
    header, rows = trajectory_rows(model, traj)
    side = sidecar_path(path, ".events.json")
    write_json(side, events_record(traj))
    write_csv(path, header, rows)
    return side


def read_targets(path) -> TargetSet:
    """Target data from a CSV with a ``t`` column and ``y*`` columns (``x*`` when no ``y*`` exist).

    Rows sharing a time keep the last one, matching right-continuous evaluation at event times.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "t" not in rows[0]:
        raise InvalidArgumentError(f"{path}: missing 't' column", operation="read_targets")
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h.startswith("y")] or [i for i, h in enumerate(header) if h.startswith("x")]
    if not cols:
        raise InvalidArgumentError(f"{path}: no y* or x* columns", operation="read_targets")
    it = header.index("t")
    try:
        data = np.array([[float(r[it])] + [float(r[c]) for c in cols] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"{path}: malformed row ({exc})", operation="read_targets") from exc
    if len(data) == 0:
        raise InvalidArgumentError(f"{path}: no data rows", operation="read_targets")
    keep = np.append(data[1:, 0] != data[:-1, 0], True)
    data = data[keep]
    return TargetSet(data[:, 0], data[:, 1:])


def write_history(path, run) -> None:
    rows = [[it.iter, it.train_loss, it.eval_loss, it.grad_norm, it.wall_ms] for it in run.iterates]
    write_csv(path, ["iter", "train_loss", "eval_loss", "grad_norm", "wall_ms"],
              [[str(r[0]), *r[1:]] for r in rows])
