"""Gradient-dump files and report serialization.

A dump is a JSON manifest next to raw little-endian float64 payloads, one
train file and one validation file per block. Example ``i`` of a block with
shape (d, r) occupies bytes [8 d r i, 8 d r (i + 1)) of the train file, row-major.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .estimators import GradientDump, InfluenceReport
from .synthetic import BenchRow, CellResult
from .toy import DetectionReport, SelectionCell

FORMAT_VERSION = 1
DTYPE = "f64le"
LAYOUT = "row-major"
_F64 = np.dtype("<f8")


class DumpError(ValueError):
    pass


@dataclass
class DumpManifest:
    n_examples: int
    blocks: list[dict]
    train_grad_files: dict[str, str]
    val_grad_files: dict[str, str]
    example_ids: Optional[list[str]] = None
    format_version: int = FORMAT_VERSION
    dtype: str = DTYPE
    layout: str = LAYOUT

    @classmethod
    def from_json(cls, data: dict) -> "DumpManifest":
        try:
            m = cls(n_examples=int(data["n_examples"]), blocks=list(data["blocks"]),
                    train_grad_files=dict(data["train_grad_files"]),
                    val_grad_files=dict(data["val_grad_files"]),
                    example_ids=data.get("example_ids"),
                    format_version=int(data["format_version"]),
                    dtype=data.get("dtype", DTYPE), layout=data.get("layout", LAYOUT))
        except (KeyError, TypeError, ValueError) as exc:
            raise DumpError(f"malformed manifest: {exc!r}") from exc
        m.validate()
        return m

    def validate(self):
        if self.format_version != FORMAT_VERSION:
            raise DumpError(f"unsupported format_version {self.format_version}")
        if self.dtype != DTYPE or self.layout != LAYOUT:
            raise DumpError(f"unsupported payload encoding {self.dtype}/{self.layout}")
        if self.n_examples < 1:
            raise DumpError("n_examples must be >= 1")
        names = [b.get("name") for b in self.blocks]
        if not names or len(set(names)) != len(names):
            raise DumpError("block names must be present and unique")
        for b in self.blocks:
            if int(b.get("d", 0)) < 1 or int(b.get("r", 0)) < 1:
                raise DumpError(f"block {b.get('name')!r} needs positive d and r")
            for files in (self.train_grad_files, self.val_grad_files):
                if b["name"] not in files:
                    raise DumpError(f"no payload file listed for block {b['name']!r}")
        if self.example_ids is not None and len(self.example_ids) != self.n_examples:
            raise DumpError("example_ids length does not match n_examples")


def atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_payload(path: Path, expected: int, shape, block: str) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DumpError(f"cannot read {path}: {exc.strerror}") from exc
    if len(raw) != expected:
        raise DumpError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=_F64).astype(np.float64).reshape(shape)
    bad = np.argwhere(~np.isfinite(arr.reshape(shape[0], -1) if len(shape) == 3 else arr.reshape(1, -1)))
    if bad.size:
        example, flat = int(bad[0][0]), int(bad[0][1])
        where = f"example {example}, flat index {flat}" if len(shape) == 3 else f"flat index {flat}"
        raise DumpError(f"non-finite value in block {block!r} ({where}) of {path}")
    return arr


def read_dump(manifest_path) -> GradientDump:
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DumpError(f"cannot read manifest {manifest_path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DumpError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    m = DumpManifest.from_json(data)
    root = manifest_path.parent
    train, val, names = {}, {}, []
    for b in m.blocks:
        name, d, r = b["name"], int(b["d"]), int(b["r"])
        names.append(name)
        train[name] = _load_payload(root / m.train_grad_files[name], 8 * d * r * m.n_examples,
                                    (m.n_examples, d, r), name)
        val[name] = _load_payload(root / m.val_grad_files[name], 8 * d * r, (d, r), name)
    ids = [str(i) for i in m.example_ids] if m.example_ids is not None else None
    return GradientDump(names, train, val, ids)


def write_dump(dump: GradientDump, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write ``dump`` as manifest + payloads; blocks are stored in their stored (d >= r) orientation."""
    out_dir = Path(out_dir)
    blocks, train_files, val_files = [], {}, {}
    for i, name in enumerate(dump.block_names):
        d, r = dump.shape(name)
        blocks.append({"name": name, "d": d, "r": r})
        train_files[name] = f"train_{i}.f64"
        val_files[name] = f"val_{i}.f64"
        atomic_write(out_dir / train_files[name], dump.train[name].astype(_F64).tobytes())
        atomic_write(out_dir / val_files[name], dump.val[name].astype(_F64).tobytes())
    manifest = DumpManifest(dump.n_examples, blocks, train_files, val_files,
                            list(dump.example_ids))
    path = out_dir / manifest_name
    atomic_write(path, (json.dumps(asdict(manifest), indent=2) + "\n").encode())
    return path


def gen_dump(out_dir, n: int = 32, blocks=(("layer0", 16, 4), ("layer1", 8, 2)), seed: int = 0,
             val_scale: float = 1.0) -> Path:
    """Random synthetic dump for smoke tests and demos."""
    rng = np.random.default_rng(seed)
    names = [b[0] for b in blocks]
    train = {name: rng.standard_normal((n, d, r)) for name, d, r in blocks}
    val = {name: val_scale * rng.standard_normal((d, r)) for name, d, r in blocks}
    ids = [f"ex{i:05d}" for i in range(n)]
    return write_dump(GradientDump(names, train, val, ids), out_dir)


def fmt(x) -> str:
    return format(float(x), ".17g")


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, allow_nan=True) + "\n").encode()


def write_report(report, out_dir, extra: Optional[dict] = None) -> list[Path]:
    """Serialize a report (or table) into ``out_dir``; returns the written paths.

    Floats use 17 significant digits so every number parses back exactly.
    """
    out_dir = Path(out_dir)
    try:
        files = _render(report, extra or {})
        written = []
        for name, data in files.items():
            atomic_write(out_dir / name, data)
            written.append(out_dir / name)
    except OSError as exc:
        raise OSError(f"failed writing report to {out_dir}: {exc}") from exc
    return written


def _render(report, extra: dict) -> dict[str, bytes]:
    if isinstance(report, InfluenceReport):
        ranks = report.ranks
        rows = [(eid, fmt(s), int(rk)) for eid, s, rk in zip(report.example_ids, report.scores, ranks)]
        files = {"scores.csv": _csv_bytes(("example_id", "score", "rank"), rows)}
        run = {"estimator": report.estimator, "n_examples": len(report.scores),
               "config": report.config, "status": report.status, **extra}
        if report.per_block_scores is not None:
            blocks = extra.get("blocks") or [f"block{i}" for i in range(report.per_block_scores.shape[1])]
            rows = [(eid, *map(fmt, row)) for eid, row in zip(report.example_ids, report.per_block_scores)]
            files["block_scores.csv"] = _csv_bytes(("example_id", *blocks), rows)
        files["run.json"] = _json_bytes(run)
        return files
    if isinstance(report, DetectionReport):
        rows = []
        for est in report.mean:
            for j, p in enumerate(report.p_grid):
                rows.append((est, fmt(p), fmt(report.mean[est][j]), fmt(report.ci_low[est][j]),
                             fmt(report.ci_high[est][j]),
                             *(fmt(v) for v in report.per_seed[est][:, j])))
        for name, curve in (("oracle", report.oracle), ("random", report.random)):
            for j, p in enumerate(report.p_grid):
                v = fmt(curve[j])
                rows.append((name, fmt(p), v, v, v, *([v] * len(report.seeds))))
        header = ("estimator", "p", "mean", "ci_low", "ci_high", *(f"seed_{s}" for s in report.seeds))
        run = {"kind": "detection", "flip_percent": report.flip_percent, "seeds": report.seeds,
               "p_grid": report.p_grid, "config": report.config, **extra}
        return {"recall.csv": _csv_bytes(header, rows), "run.json": _json_bytes(run)}
    if isinstance(report, list) and report and isinstance(report[0], CellResult):
        rows, cells = [], []
        for c in report:
            for method, tr in c.traces.items():
                rel = tr.relative_error or [float("nan")] * tr.iters_used
                for t, (e, re) in enumerate(zip(tr.per_iteration_error, rel), start=1):
                    rows.append((c.d, c.n, method, tr.error_metric, t, fmt(e), fmt(re)))
            cells.append({"d": c.d, "N": c.n, "lambda_max": c.lambda_max,
                          **{m: {"converged": tr.converged, "diverged": tr.diverged,
                                 "iters_used": tr.iters_used, "final_error": tr.final_error}
                             for m, tr in c.traces.items()}})
        header = ("d", "N", "method", "metric", "iteration", "error", "relative_error")
        run = {"kind": "convergence", "cells": cells, **extra}
        return {"traces.csv": _csv_bytes(header, rows), "run.json": _json_bytes(run)}
    if isinstance(report, list) and report and isinstance(report[0], BenchRow):
        rows = [(r.d, r.method, fmt(r.error_mean), fmt(r.error_std), fmt(r.time_mean),
                 fmt(r.time_std), r.columns_solved) for r in report]
        header = ("d", "method", "error_mean", "error_std", "time_mean_s", "time_std_s",
                  "columns_solved")
        return {"bench.csv": _csv_bytes(header, rows),
                "run.json": _json_bytes({"kind": "invert-bench", **extra})}
    if isinstance(report, list) and report and isinstance(report[0], SelectionCell):
        rows = [(c.method, fmt(c.k_percent), fmt(c.accuracy_mean),
                 ";".join(fmt(a) for a in c.accuracies), c.skipped or "") for c in report]
        header = ("method", "k_percent", "accuracy_mean", "accuracies", "skipped")
        return {"selection.csv": _csv_bytes(header, rows),
                "run.json": _json_bytes({"kind": "selection", **extra})}
    raise TypeError(f"don't know how to write {type(report).__name__}")


def read_scores(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {row["example_id"]: float(row["score"]) for row in csv.DictReader(fh)}
