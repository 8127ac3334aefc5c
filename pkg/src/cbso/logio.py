"""Run logs (one JSON object per line), metrics tables and binary checkpoints."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .core import CbsoError, RunRecord

METRIC_COLUMNS = ["t", "phi_hat_grad_norm", "h_of_y", "h1_value", "h2_value", "envelope_grad_norm", "step_size"]

CHECKPOINT_MAGIC = b"CBSOCKPT"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIQIII")  # magic, version, t, d_x, d_y, reserved


class MalformedLog(CbsoError, ValueError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


class BadCheckpoint(CbsoError, ValueError):
    pass


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(a) for a in v.reshape(-1)]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def record_line(rec) -> str:
    d = rec.as_dict() if isinstance(rec, RunRecord) else rec
    return json.dumps(d, sort_keys=True, default=_jsonable, allow_nan=True)


def write_log(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(record_line(r) + "\n")


def read_log(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedLog(path, i, f"not valid JSON ({e.msg})") from None
            if not isinstance(d, dict) or "t" not in d:
                raise MalformedLog(path, i, "record has no 't' field")
            out.append(d)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def metric_rows(records: list[dict]):
    """Header and rows of the metrics table; x components follow the fixed columns."""
    d_x = max((len(r.get("x", [])) for r in records), default=0)
    header = METRIC_COLUMNS + [f"x{i}" for i in range(d_x)]
    rows = []
    for r in records:
        row = [str(int(r["t"]))] + [_fmt(r.get(c)) for c in METRIC_COLUMNS[1:]]
        xs = list(r.get("x", []))
        row += [_fmt(v) for v in xs] + [""] * (d_x - len(xs))
        rows.append(row)
    return header, rows


def write_metrics(path, records: list[dict]) -> None:
    header, rows = metric_rows(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_long_metrics(path, records: list[dict]) -> None:
    """Plot-ready long table: iteration, metric, value."""
    header, rows = metric_rows(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "metric", "value"])
        for row in rows:
            for name, val in zip(header[1:], row[1:]):
                if val != "":
                    w.writerow([row[0], name, val])


def read_metrics(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(v) if v != "" else np.nan for v in row] for row in r]
    return header, np.array(data, dtype=np.float64).reshape(len(data), len(header))


# ---------------------------------------------------------------- checkpoints

def write_checkpoint(path, x, y, z, t: int) -> None:
    x, y, z = (np.asarray(v, dtype="<f8").reshape(-1) for v in (x, y, z))
    if y.shape != z.shape:
        raise ValueError("y and z must have the same dimension")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, int(t), x.size, y.size, 0))
        fh.write(x.tobytes() + y.tobytes() + z.tobytes())


def read_checkpoint(path):
    """Return (x, y, z, t)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise BadCheckpoint("file shorter than the header")
    magic, version, t, d_x, d_y, _ = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise BadCheckpoint("bad magic")
    if version != CHECKPOINT_VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != d_x + 2 * d_y:
        raise BadCheckpoint("payload size does not match header dimensions")
    return body[:d_x].copy(), body[d_x:d_x + d_y].copy(), body[d_x + d_y:].copy(), int(t)
