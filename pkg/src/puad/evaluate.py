"""Anomaly scoring, AUROC with seen/unseen breakdown, sweeps and contour grids."""

from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import format_float
from .data import NORMAL, SEEN, UNSEEN, GenConfig, TestSplit, build_contaminated_split
from .errors import ContractError, PuadError, ShapeError
from .models import base_loss

log = logging.getLogger(__name__)

WORKERS_ENV = "PUAD_WORKERS"


def score_dataset(model, X) -> np.ndarray:
    """Anomaly score per row; higher means more anomalous. No noise is applied."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ShapeError(f"score_dataset expects a non-empty (n, d) matrix, got shape {X.shape}")
    return np.array(base_loss(model, X).value, dtype=np.float64).reshape(len(X))


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(xs)]])
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be 1-D arrays of equal length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("auroc needs at least one positive and one negative label")
    u = midranks(scores)[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    auroc_overall: float
    auroc_seen: float | None
    auroc_unseen: float | None
    counts: dict
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        def fmt(v):
            return "absent" if v is None else format_float(v)

        lines = [
            f"auroc_overall={fmt(self.auroc_overall)}",
            f"auroc_seen={fmt(self.auroc_seen)}",
            f"auroc_unseen={fmt(self.auroc_unseen)}",
        ]
        lines += [f"count_{k}={v}" for k, v in self.counts.items()]
        if self.seed is not None:
            lines.append(f"seed={self.seed}")
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)

        def num(key):
            v = kv.get(key, "absent")
            return None if v == "absent" else float(v)

        counts = {k[6:]: int(v) for k, v in kv.items() if k.startswith("count_")}
        config = {k[7:]: v for k, v in kv.items() if k.startswith("config.")}
        seed = int(kv["seed"]) if "seed" in kv else None
        return cls(num("auroc_overall"), num("auroc_seen"), num("auroc_unseen"), counts, seed, config)


def report(model, test: TestSplit, seed=None, config=None) -> EvalReport:
    """AUROC of normal vs. all anomalies, vs. seen only and vs. unseen only.

    Takes only the test split; a missing anomaly class yields ``None``.
    """
    labels = np.asarray(test.labels)
    counts = {name: int(np.sum(labels == name)) for name in (NORMAL, SEEN, UNSEEN)}
    if counts[NORMAL] == 0:
        raise ContractError("test split has no normal rows")
    if counts[SEEN] + counts[UNSEEN] == 0:
        raise ContractError("test split has no anomalies")
    scores = score_dataset(model, test.points)
    normal = labels == NORMAL

    def against(mask):
        if not mask.any():
            return None
        keep = normal | mask
        return auroc(scores[keep], mask[keep])

    return EvalReport(
        auroc_overall=against(~normal),
        auroc_seen=against(labels == SEEN),
        auroc_unseen=against(labels == UNSEEN),
        counts=counts,
        seed=seed,
        config=dict(config or {}),
    )


# ------------------------------------------------------------ sweeps

METRICS = ("auroc_overall", "auroc_seen", "auroc_unseen")


@dataclass
class SweepCell:
    value: float
    seed: int
    report: EvalReport | None
    error: str | None = None


@dataclass
class SweepResult:
    parameter: str
    cells: list

    def summary(self) -> list[dict]:
        """One row per (value, metric): mean, population std and counts over seeds."""
        rows = []
        values = sorted({c.value for c in self.cells})
        for v in values:
            group = [c for c in self.cells if c.value == v]
            for metric in METRICS:
                xs = [getattr(c.report, metric) for c in group if c.report is not None]
                xs = [x for x in xs if x is not None]
                rows.append(
                    {
                        "value": v,
                        "metric": metric,
                        "mean": float(np.mean(xs)) if xs else None,
                        "std": float(np.std(xs)) if xs else None,
                        "n_ok": len(xs),
                        "n_failed": sum(c.report is None for c in group),
                    }
                )
        return rows

    def mean_std(self, metric="auroc_overall"):
        out = {}
        for row in self.summary():
            if row["metric"] == metric:
                out[row["value"]] = (row["mean"], row["std"])
        return out

    def to_csv(self, path):
        def fmt(v):
            return "" if v is None else format_float(v)

        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{self.parameter},metric,mean,std,n_ok,n_failed\n")
            for r in self.summary():
                fh.write(f"{fmt(r['value'])},{r['metric']},{fmt(r['mean'])},{fmt(r['std'])},{r['n_ok']},{r['n_failed']}\n")

    def cells_to_csv(self, path):
        def fmt(v):
            return "" if v is None else format_float(v)

        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{self.parameter},seed,auroc_overall,auroc_seen,auroc_unseen,error\n")
            for c in self.cells:
                vals = [getattr(c.report, m) if c.report else None for m in METRICS]
                err = (c.error or "").replace(",", ";").replace("\n", " ")
                fh.write(f"{fmt(c.value)},{c.seed},{','.join(fmt(v) for v in vals)},{err}\n")


def _run_cell(args):
    from .trainer import fit

    value, seed, data, train_cfg, model_cfg = args
    try:
        model, _ = fit(data, train_cfg, model_cfg)
        return SweepCell(value, seed, report(model, data.test_only(), seed=seed))
    except (PuadError, ArithmeticError, FloatingPointError) as exc:
        log.warning("sweep cell value=%s seed=%s failed: %s", value, seed, exc)
        return SweepCell(value, seed, None, f"{type(exc).__name__}: {exc}")


def resolve_workers(workers=None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(workers or 1))


def _run_cells(jobs, workers):
    workers = resolve_workers(workers)
    if workers == 1 or len(jobs) <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))


def alpha_sweep(values, train_cfg, data, seeds, model_cfg=None, workers=None) -> SweepResult:
    """Train and evaluate one model per (alpha, seed) on fixed data."""
    from .trainer import ModelConfig

    model_cfg = model_cfg or ModelConfig()
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ContractError(f"alpha values must lie in [0, 1], got {v}")
    jobs = [(float(v), s, data, train_cfg.replace(alpha=float(v), seed=s), model_cfg) for v in values for s in seeds]
    return SweepResult("alpha", _run_cells(jobs, workers))


def contamination_sweep(counts, train_cfg, pools, gen_cfg: GenConfig, seeds, model_cfg=None, workers=None, set_alpha=True) -> SweepResult:
    """Rebuild the split for each unlabeled-anomaly count and train with alpha at the true rate."""
    from .trainer import ModelConfig

    model_cfg = model_cfg or ModelConfig()
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    jobs = []
    for count in counts:
        for s in seeds:
            gcfg = dataclasses.replace(gen_cfg, n_unlabeled_seen=int(count), seed=s)
            data = build_contaminated_split(*pools, gcfg)
            cfg = train_cfg.replace(seed=s)
            if set_alpha:
                cfg = cfg.replace(alpha=gcfg.contamination)
            jobs.append((float(count), s, data, cfg, model_cfg))
    return SweepResult("n_unlabeled_seen", _run_cells(jobs, workers))


# ------------------------------------------------------------ contour

@dataclass
class ContourGrid:
    xs: np.ndarray
    ys: np.ndarray
    scores: np.ndarray  # (len(ys), len(xs)), row-major over y then x

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# nx={len(self.xs)} ny={len(self.ys)}\n")
            fh.write("x,y,score\n")
            for i, y in enumerate(self.ys):
                for j, x in enumerate(self.xs):
                    fh.write(f"{format_float(x)},{format_float(y)},{format_float(self.scores[i, j])}\n")


def contour_grid(model, x_range, y_range, resolution) -> ContourGrid:
    if model.input_dim != 2:
        raise ContractError(f"contour grids need a 2-D model, this one takes {model.input_dim} inputs")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ContractError("resolution must be at least 2 per axis")
    xs = np.linspace(x_range[0], x_range[1], int(nx))
    ys = np.linspace(y_range[0], y_range[1], int(ny))
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return ContourGrid(xs, ys, score_dataset(model, pts).reshape(len(ys), len(xs)))
