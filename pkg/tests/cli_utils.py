"""Helpers for comparing CLI outputs across a run and its replay."""

import csv
import json
from pathlib import Path

# fields that measure elapsed time and therefore differ between runs
TIMING_KEYS = {"wall_time", "solve_time", "mean_time_us"}
TIMING_COLUMNS = {"AT_us"}


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def read_output(path: Path):
    if path.suffix == ".json":
        return strip_timing(json.loads(path.read_text()))
    if path.suffix == ".csv":
        with path.open() as fh:
            rows = list(csv.reader(fh))
        keep = [i for i, h in enumerate(rows[0]) if h not in TIMING_COLUMNS]
        return [[r[i] for i in keep] for r in rows]
    return path.read_bytes()


def output_differences(dir_a: Path, dir_b: Path) -> list[str]:
    """Names of result files (manifest excluded) whose contents differ."""
    names_a = {p.name for p in dir_a.iterdir() if p.name != "manifest.json"}
    names_b = {p.name for p in dir_b.iterdir() if p.name != "manifest.json"}
    diffs = sorted(names_a ^ names_b)
    for n in sorted(names_a & names_b):
        if read_output(dir_a / n) != read_output(dir_b / n):
            diffs.append(n)
    return diffs
