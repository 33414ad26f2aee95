"""Diff two per-iteration metric files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DELTA_COLUMNS = ("mean_reward", "smoothed_reward", "theta_sum", "theta_norm")


class SchemaMismatch(ValueError):
    pass


@dataclass
class Report:
    iterations: int
    max_delta: dict[str, float]
    window_reward_delta: list[float]
    round_time_ratio: float
    tol: float
    breaches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.breaches

    def lines(self) -> list[str]:
        out = [f"iterations: {self.iterations}"]
        for col, d in self.max_delta.items():
            out.append(f"max |delta {col}|: {d:.3e}")
        if self.window_reward_delta:
            out.append(
                "max |delta mean_reward| per window: "
                + " ".join(f"{d:.3e}" for d in self.window_reward_delta)
            )
        out.append(f"round time ratio (candidate/baseline): {self.round_time_ratio:.6g}")
        out.append(("FAIL: " + ", ".join(self.breaches)) if self.breaches else f"OK (tol {self.tol:g})")
        return out


def _read(path: str | Path) -> tuple[list[str], dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    cols = {}
    for k, name in enumerate(header):
        if name in DELTA_COLUMNS or name in ("iteration", "round_time"):
            cols[name] = np.array([float(r[k]) for r in body])
    return header, cols


def compare(baseline: str | Path, candidate: str | Path, tol: float = 1e-5, window: int = 10) -> Report:
    h_a, a = _read(baseline)
    h_b, b = _read(candidate)
    if h_a != h_b:
        raise SchemaMismatch(f"column sets differ: {h_a} vs {h_b}")
    if len(a["iteration"]) != len(b["iteration"]) or not np.array_equal(a["iteration"], b["iteration"]):
        raise SchemaMismatch("iteration columns differ")
    n = len(a["iteration"])
    deltas = {c: float(np.max(np.abs(a[c] - b[c]))) if n else 0.0 for c in DELTA_COLUMNS if c in a}
    diff = np.abs(a["mean_reward"] - b["mean_reward"]) if n else np.zeros(0)
    windows = [float(diff[s : s + window].max()) for s in range(0, n, window)]
    ta, tb = float(np.sum(a["round_time"])), float(np.sum(b["round_time"]))
    ratio = tb / ta if ta > 0 else float("nan")
    breaches = [c for c, d in deltas.items() if not d <= tol]
    return Report(n, deltas, windows, ratio, tol, breaches)
