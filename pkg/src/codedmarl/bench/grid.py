"""Run scheme x straggler grids and write per-iteration metrics."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..orchestra import TrainingResult, run_training, smooth
from ..orchestra.tcp import LocalCluster, TcpTransport
from .config import CellSection, ExperimentConfig, SchemeSection

logger = logging.getLogger(__name__)

ITERATION_COLUMNS = [
    "iteration",
    "mean_reward",
    "smoothed_reward",
    "round_time",
    "decode_ok",
    "stragglers",
    "decode_set",
    "theta_sum",
    "theta_norm",
]
SUMMARY_COLUMNS = [
    "scheme",
    "n",
    "m",
    "k",
    "t_s",
    "iterations",
    "mean_round_time",
    "window_round_time",
    "final_smoothed_reward",
    "decode_failures",
    "metrics_file",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def _ids(ids) -> str:
    return " ".join(str(j) for j in ids)


def cell_name(scheme: SchemeSection, cell: CellSection) -> str:
    return f"{scheme.label}_k{cell.k}_ts{cell.t_s:g}"


def write_metrics(path: Path, result: TrainingResult, history: list[np.ndarray], window: int) -> None:
    smoothed = smooth([t.mean_reward for t in result.traces], window)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITERATION_COLUMNS)
        for t, s, theta in zip(result.traces, smoothed, history):
            w.writerow([
                t.iteration,
                _fmt(t.mean_reward),
                _fmt(s),
                _fmt(t.round_time),
                int(t.decode_ok),
                _ids(t.stragglers),
                _ids(t.decode_set),
                _fmt(theta.sum()),
                _fmt(np.linalg.norm(theta)),
            ])


def _train(cfg: ExperimentConfig, scheme: SchemeSection, cell: CellSection) -> TrainingResult:
    tc = cfg.training_config(scheme, cell)
    if cfg.transport == "sim" or tc.assignment is None:
        return run_training(tc, record_params=True)
    with LocalCluster(tc.assignment, tc.spec, tc.hyper) as addrs:
        with TcpTransport(addrs, timeout=cfg.tcp_timeout) as transport:
            return run_training(tc, transport=transport, record_params=True)


def run_cell(cfg: ExperimentConfig, scheme_idx: int, cell_idx: int, out: Path) -> list[str]:
    """Train one grid cell, write its CSV and sidecar; return its summary row."""
    scheme = cfg.schemes[scheme_idx]
    cell = cfg.grid[cell_idx]
    name = cell_name(scheme, cell)
    result = _train(cfg, scheme, cell)
    csv_path = out / f"{name}.csv"
    write_metrics(csv_path, result, result.history, cfg.reward_window)
    c = cfg.assignment(scheme)
    sidecar = {
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds.model_dump(),
        "scheme": scheme.model_dump(mode="json"),
        "cell": cell.model_dump(),
        "transport": cfg.transport,
        "assignment": None if c is None else c.to_dict(),
        "metrics_file": csv_path.name,
    }
    (out / f"{name}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    times = [t.round_time for t in result.traces]
    smoothed = smooth([t.mean_reward for t in result.traces], cfg.reward_window)
    nan = float("nan")
    return [
        scheme.label,
        str(cfg.n if c is not None else cfg.env.m),
        str(cfg.env.m),
        str(cell.k),
        _fmt(cell.t_s),
        str(len(times)),
        _fmt(np.mean(times)) if times else _fmt(nan),
        _fmt(np.mean(times[-cfg.summary_window :])) if times else _fmt(nan),
        _fmt(smoothed[-1]) if smoothed else _fmt(nan),
        str(sum(not t.decode_ok for t in result.traces)),
        csv_path.name,
    ]


def run_grid(cfg: ExperimentConfig, out: str | Path | None = None, jobs: int = 1) -> Path:
    """Run every (scheme, straggler cell) pair; returns the summary CSV path."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(s, g) for s in range(len(cfg.schemes)) for g in range(len(cfg.grid))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, *zip(*[(cfg, s, g, out) for s, g in tasks])))
    else:
        rows = []
        for s, g in tasks:
            logger.info("cell %s", cell_name(cfg.schemes[s], cfg.grid[g]))
            rows.append(run_cell(cfg, s, g, out))
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(rows)
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.config_hash(),
        "cells": [row[-1] for row in rows],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return summary
