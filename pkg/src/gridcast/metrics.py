"""Top-N mean absolute error in grid units, and tabular reporting.

For each test example and future step, the error is the Euclidean distance in
(longitudinal, lateral) grid-index space between the ground-truth cell and
the closest cell among the N highest-ranked hypotheses:

    MAE = (1/L) * sum_i || (w_i*, l_i*) - (w_i_gt, l_i_gt) ||_2

MAE_X and MAE_Y are the |dw| and |dl| means of the same selected candidates.
Two candidate-selection readings are supported: "per_step" (default) picks
the closest candidate independently at each step; "whole_trajectory" picks
one hypothesis per example by mean distance over the full horizon and sticks
with it. Reports label which was used.

Examples whose ground truth is out of map at a step are excluded there and
tallied (distance to out-of-map is undefined on the index lattice); the same
applies when every candidate is out of map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ogm import GridSpec, unflatten
from .seq2seq import TrajectoryPrediction

__all__ = ["EvalConfig", "TopOmegaResult", "EvalReport", "top_omega_mae", "evaluate", "render_report"]

METRICS = ("MAE", "MAE_X", "MAE_Y")


@dataclass(frozen=True)
class EvalConfig:
    omegas: tuple[int, ...] = (1, 3, 5)
    horizons_s: tuple[float, ...] = (0.4, 0.8, 1.2, 1.6, 2.0)
    decode_period_s: float = 0.2
    selection: str = "per_step"

    def __post_init__(self) -> None:
        if not self.omegas or any(o < 1 for o in self.omegas):
            raise ValueError("omegas must be positive")
        if self.selection not in ("per_step", "whole_trajectory"):
            raise ValueError(f"unknown selection mode {self.selection!r}")
        for h in self.horizons_s:
            steps = h / self.decode_period_s
            if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                raise ValueError(f"horizon {h}s is not a positive multiple of {self.decode_period_s}s")

    def horizon_steps(self) -> list[int]:
        return [int(round(h / self.decode_period_s)) for h in self.horizons_s]


@dataclass
class TopOmegaResult:
    mae: float
    mae_x: float
    mae_y: float
    n_evaluated: int
    n_truth_out_of_map: int
    n_no_candidate: int


def _cells(sequence: list[int], grid: GridSpec) -> list[tuple[int, int] | None]:
    out = []
    for q in sequence:
        cell = unflatten(q, grid)
        out.append((cell.w, cell.l) if cell.in_map else None)
    return out


def top_omega_mae(
    predictions: list[TrajectoryPrediction],
    truths: list[np.ndarray],
    omega: int,
    step: int,
    grid: GridSpec = GridSpec(),
    selection: str = "per_step",
) -> TopOmegaResult:
    """Errors at one future step (1-based, 0.2 s cadence) over paired
    predictions and ground-truth flat-class sequences."""
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must pair up")
    if omega < 1:
        raise ValueError("omega must be >= 1")
    dists: list[float] = []
    dxs: list[float] = []
    dys: list[float] = []
    truth_oom = 0
    no_candidate = 0
    for pred, truth in zip(predictions, truths):
        if step < 1 or step > len(truth):
            raise ValueError(f"step {step} outside the labeled horizon")
        hyps = pred.hypotheses[:omega]
        if not hyps:
            raise ValueError("prediction carries no hypotheses")
        truth_cell = unflatten(int(truth[step - 1]), grid)
        if not truth_cell.in_map:
            truth_oom += 1
            continue
        if selection == "per_step":
            candidates = [_cells(h.sequence, grid)[step - 1] for h in hyps]
        else:
            candidates = [_whole_trajectory_pick(hyps, truth, grid)[step - 1]]
        best = None
        for cand in candidates:
            if cand is None:
                continue
            d = math.hypot(cand[0] - truth_cell.w, cand[1] - truth_cell.l)
            # strict < keeps the first (highest-ranked) candidate on ties
            if best is None or d < best[0]:
                best = (d, abs(cand[0] - truth_cell.w), abs(cand[1] - truth_cell.l))
        if best is None:
            no_candidate += 1
            continue
        dists.append(best[0])
        dxs.append(best[1])
        dys.append(best[2])
    n = len(dists)
    if n == 0:
        return TopOmegaResult(math.nan, math.nan, math.nan, 0, truth_oom, no_candidate)
    return TopOmegaResult(
        mae=sum(dists) / n,
        mae_x=sum(dxs) / n,
        mae_y=sum(dys) / n,
        n_evaluated=n,
        n_truth_out_of_map=truth_oom,
        n_no_candidate=no_candidate,
    )


def _whole_trajectory_pick(hyps, truth: np.ndarray, grid: GridSpec):
    """The single hypothesis closest to the truth by mean distance over all
    steps where both are in map (ties keep the higher-ranked one)."""
    best_cells = None
    best_score = math.inf
    for h in hyps:
        cells = _cells(h.sequence, grid)
        total = 0.0
        valid = 0
        for j, cand in enumerate(cells[: len(truth)]):
            truth_cell = unflatten(int(truth[j]), grid)
            if cand is None or not truth_cell.in_map:
                continue
            total += math.hypot(cand[0] - truth_cell.w, cand[1] - truth_cell.l)
            valid += 1
        score = total / valid if valid else math.inf
        if score < best_score:
            best_score = score
            best_cells = cells
    if best_cells is None:
        best_cells = _cells(hyps[0].sequence, grid)
    return best_cells


@dataclass
class EvalReport:
    """Per (metric, omega, horizon) means in grid units, with per-cell
    evaluated counts and exclusion tallies."""

    omegas: tuple[int, ...]
    horizons_s: tuple[float, ...]
    selection: str
    label: str = ""
    values: dict = field(default_factory=dict)  # (metric, omega, horizon_s) -> float
    counts: dict = field(default_factory=dict)  # (omega, horizon_s) -> evaluated L
    excluded: dict = field(default_factory=dict)  # (omega, horizon_s) -> (truth_oom, no_candidate)

    def value(self, metric: str, omega: int, horizon_s: float) -> float:
        return self.values[(metric, omega, horizon_s)]


def evaluate(
    predict_fn,
    examples,
    config: EvalConfig = EvalConfig(),
    grid: GridSpec = GridSpec(),
    label: str = "",
) -> EvalReport:
    """Run predict_fn (inputs (M, 6) -> TrajectoryPrediction) on every test
    example and fill the full (metric, omega, horizon) table."""
    if not examples:
        raise ValueError("empty test set")
    predictions = [predict_fn(ex.inputs) for ex in examples]
    truths = [ex.labels for ex in examples]
    max_omega = max(config.omegas)
    for pred in predictions:
        if len(pred.hypotheses) < max_omega:
            raise ValueError(
                f"need {max_omega} hypotheses per prediction, got {len(pred.hypotheses)}"
            )
    report = EvalReport(
        omegas=config.omegas, horizons_s=config.horizons_s, selection=config.selection, label=label
    )
    for omega in config.omegas:
        for horizon_s, step in zip(config.horizons_s, config.horizon_steps()):
            res = top_omega_mae(predictions, truths, omega, step, grid, config.selection)
            report.values[("MAE", omega, horizon_s)] = res.mae
            report.values[("MAE_X", omega, horizon_s)] = res.mae_x
            report.values[("MAE_Y", omega, horizon_s)] = res.mae_y
            report.counts[(omega, horizon_s)] = res.n_evaluated
            report.excluded[(omega, horizon_s)] = (res.n_truth_out_of_map, res.n_no_candidate)
    return report


def render_report(report: EvalReport) -> tuple[str, str]:
    """(aligned text table, plot-ready CSV series).

    The CSV carries one (omega, delta_s, metric, value) row per table cell
    plus, per (omega, metric), the mean over horizons as delta_s=avg.
    """
    lines = []
    if report.label:
        lines.append(report.label)
    lines.append(f"candidate selection: {report.selection}")
    col_width = 12
    for metric in METRICS:
        lines.append("")
        lines.append(f"{metric} (grids)")
        header = "delta".ljust(8) + "".join(f"Omega={o}".rjust(col_width) for o in report.omegas)
        lines.append(header)
        for horizon_s in report.horizons_s:
            row = f"{horizon_s:.1f}s".ljust(8)
            for omega in report.omegas:
                row += f"{report.values[(metric, omega, horizon_s)]:.2f}".rjust(col_width)
            lines.append(row)
    excluded_total = sum(t for t, _ in report.excluded.values()) + sum(
        n for _, n in report.excluded.values()
    )
    counts = sorted(set(report.counts.values()))
    lines.append("")
    lines.append(f"evaluated examples per cell: {counts[0] if len(counts) == 1 else counts}")
    if excluded_total:
        worst = max(report.excluded.values())
        lines.append(f"exclusions per cell up to (truth out-of-map, no candidate) = {worst}")
    text = "\n".join(lines) + "\n"

    rows = ["omega,delta_s,metric,value"]
    for metric in METRICS:
        for omega in report.omegas:
            for horizon_s in report.horizons_s:
                rows.append(f"{omega},{horizon_s},{metric},{report.values[(metric, omega, horizon_s)]!r}")
            avg = float(np.mean([report.values[(metric, omega, h)] for h in report.horizons_s]))
            rows.append(f"{omega},avg,{metric},{avg!r}")
    series = "\n".join(rows) + "\n"
    return text, series
