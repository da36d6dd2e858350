"""Per-round metrics files.

``metrics.jsonl`` holds one JSON record per round and is a pure function of
the configuration, so it is byte-identical across reruns. Wall-clock times
live in ``timing.csv`` next to it.
"""
import csv
import json
import math
import os

from .sim import RoundMetrics

SCHEMA_VERSION = 1
SUMMARY_COLUMNS = ("round", "accuracy", "bpp", "ones_frequency", "entropy_bpp", "theta_mean")


def _record(m):
    theta_mean = None if math.isnan(m.theta_mean) else m.theta_mean
    return {
        "schema": SCHEMA_VERSION,
        "round": m.round,
        "accuracy": m.accuracy,
        "bpp": m.bpp,
        "ones_frequency": m.ones_frequency,
        "entropy_bpp": m.entropy_bpp,
        "theta_mean": theta_mean,
        "participants": list(m.participants),
    }


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_metrics(metrics, out_dir):
    """Write metrics.jsonl, summary.csv and timing.csv into ``out_dir``; return their paths."""
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
    paths = {name: os.path.join(out_dir, name) for name in ("metrics.jsonl", "summary.csv", "timing.csv")}
    _write(paths["metrics.jsonl"],
           "".join(json.dumps(_record(m), sort_keys=True) + "\n" for m in metrics))
    rows = [",".join(SUMMARY_COLUMNS)]
    for m in metrics:
        r = _record(m)
        rows.append(",".join("" if r[c] is None else repr(r[c]) for c in SUMMARY_COLUMNS))
    _write(paths["summary.csv"], "\n".join(rows) + "\n")
    _write(paths["timing.csv"],
           "round,wall_time\n" + "".join(f"{m.round},{m.wall_time:.6f}\n" for m in metrics))
    return paths


def read_metrics(path):
    """Parse metrics.jsonl back into RoundMetrics (wall_time is not stored and reads as 0)."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != SCHEMA_VERSION:
                raise ValueError(f"{path}:{lineno}: unsupported schema {rec.get('schema')!r}")
            theta_mean = rec["theta_mean"]
            out.append(RoundMetrics(
                rec["round"], rec["accuracy"], rec["bpp"], rec["ones_frequency"], rec["entropy_bpp"],
                float("nan") if theta_mean is None else theta_mean, rec["participants"],
            ))
    return out


def read_summary(path):
    with open(path, encoding="utf-8", newline="") as f:
        return [{k: (float(v) if v else float("nan")) for k, v in row.items()} for row in csv.DictReader(f)]
