"""File formats: dataset directories, draw logs and per-shoe results."""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import Shoe
from .grid import ParseError, load_coarse, load_mask, write_coarse, write_mask
from .mcmc import PosteriorDraws

VERSION = "0.1.0"


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header_line(seed=None, config_hash=None, **extra) -> str:
    parts = [f"soleprint {VERSION}", f"seed={seed}", f"config={config_hash}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return "# " + " ".join(parts)


# --- accidentals and datasets -------------------------------------------------

def format_accidentals(shoes, header: str = None) -> str:
    buf = _io.StringIO()
    if header:
        buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shoe_id", "x1", "x2"])
    for s in shoes:
        for x1, x2 in s.points:
            w.writerow([s.shoe_id, repr(float(x1)), repr(float(x2))])
    return buf.getvalue()


def read_accidentals(path) -> dict:
    """``shoe_id -> (n, 2) array``; shoes without rows are absent."""
    out = {}
    with open(path, newline="") as fh:
        rows = [r for r in fh if not r.startswith("#")]
    reader = csv.reader(rows)
    head = next(reader, None)
    if head is None:
        return out
    if [h.strip() for h in head] != ["shoe_id", "x1", "x2"]:
        raise ParseError(f"{path}: expected header shoe_id,x1,x2", line=1)
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"{path}: expected 3 fields", line=lineno)
        try:
            pt = (float(row[1]), float(row[2]))
        except ValueError as exc:
            raise ParseError(f"{path}: bad coordinate", line=lineno) from exc
        out.setdefault(row[0], []).append(pt)
    return {k: np.array(v) for k, v in out.items()}


def save_dataset(shoes, cm, directory, header: str = None, truth=None):
    d = Path(directory)
    (d / "masks").mkdir(parents=True, exist_ok=True)
    write_coarse(cm, d / "coarse.txt")
    for s in shoes:
        write_mask(s.surface, d / "masks" / f"{s.shoe_id}.mask")
    atomic_write(d / "shoes.txt", "".join(f"{s.shoe_id}\n" for s in shoes))
    atomic_write(d / "accidentals.csv", format_accidentals(shoes, header))
    if truth is not None:
        atomic_write(d / "truth.jsonl", format_draw_log([_record(-1, truth)], {"kind": "truth"}))


def load_dataset(directory):
    """Returns ``(shoes, coarse map, truth-or-None)``."""
    d = Path(directory)
    cm = load_coarse(d / "coarse.txt")
    ids = [line.strip() for line in (d / "shoes.txt").read_text().splitlines() if line.strip()]
    pts = read_accidentals(d / "accidentals.csv")
    unknown = set(pts) - set(ids)
    if unknown:
        raise ValueError(f"accidentals for unknown shoes: {sorted(unknown)[:5]}")
    shoes = [Shoe(load_mask(d / "masks" / f"{sid}.mask", sid), pts.get(sid, np.zeros((0, 2))), sid)
             for sid in ids]
    truth = None
    if (d / "truth.jsonl").exists():
        _, recs = read_draw_log(d / "truth.jsonl")
        truth = PosteriorDraws.from_records(recs).theta(0)
    return shoes, cm, truth


# --- draw logs --------------------------------------------------------------

def _record(it, theta) -> dict:
    return {"iter": int(it), "q": float(theta.q), "log_w_E": np.log(theta.w_E).tolist(),
            "phi": theta.phi.tolist(), "p_h": theta.kparams.p_h.tolist(),
            "p_v": theta.kparams.p_v.tolist()}


def format_draw_log(records, meta: dict) -> str:
    lines = ["#" + json.dumps(meta, sort_keys=True)]
    lines += [json.dumps(r) for r in records]
    return "\n".join(lines) + "\n"


def write_draw_log(draws: PosteriorDraws, path, meta: dict):
    atomic_write(path, format_draw_log(draws.records(), meta))


def read_draw_log(path):
    """Returns ``(meta, records)``."""
    meta, recs = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if lineno == 1:
                    meta = json.loads(line[1:])
                continue
            try:
                recs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: bad draw record", line=lineno) from exc
    return meta, recs


def load_draws(path) -> PosteriorDraws:
    from .core import ModelVariant
    meta, recs = read_draw_log(path)
    v = ModelVariant.from_name(meta.get("variant", "full"))
    return PosteriorDraws.from_records(recs, v, meta)


# --- per-shoe results -------------------------------------------------------

RESULT_FIELDS = ["shoe_id", "N", "estimate_log", "metric", "ess"]


def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def format_results(rows, header: str, summary: dict) -> str:
    """``rows`` are dicts keyed by RESULT_FIELDS; sorted here by metric."""
    rows = sorted(rows, key=lambda r: (r["metric"] if not math.isnan(r["metric"]) else -1.0, r["shoe_id"]))
    buf = _io.StringIO()
    buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in rows:
        w.writerow([r["shoe_id"], int(r["N"]), _num(r["estimate_log"]), _num(r["metric"]), _num(r["ess"])])
    buf.write("# " + " ".join(f"{k}={_num(v) if isinstance(v, float) else v}" for k, v in summary.items())
              + "\n")
    return buf.getvalue()


def read_results(path):
    """Returns ``(rows, summary)``."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    summary = {}
    for ln in lines[1:]:
        if ln.startswith("# "):
            for tok in ln[2:].split():
                k, _, v = tok.partition("=")
                summary[k] = v
    rows = []
    for r in csv.DictReader(body):
        rows.append({"shoe_id": r["shoe_id"], "N": int(r["N"]), "estimate_log": float(r["estimate_log"]),
                     "metric": float(r["metric"]), "ess": float(r["ess"])})
    return rows, summary
