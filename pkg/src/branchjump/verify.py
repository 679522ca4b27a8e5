"""Deterministic equivariance check.

Integrates the master equation dp_m/dt = sum_n (T_mn p_n - T_nm p_m) with classical
RK4 and compares the result to the Born weights of the evolved state. This path
never touches the Monte Carlo code; it shares only state evolution and rate
evaluation with it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .branching import born_weights
from .evolution import evolver_for
from .model import Model
from .rates import EPSILON_W, RateField

STEPS_PER_UNIT = 2000
UNDERSHOOT_TOL = 1e-10
STIFF_LIMIT = 0.5
MAX_REFINE = 24
_CHUNK = 4096


class MasterEquationError(RuntimeError):
    """Integration produced a negative probability beyond roundoff."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


def _breakpoints(model: Model, grid: np.ndarray) -> np.ndarray:
    inner = [s.t_start for s in model.schedule[1:] if grid[0] < s.t_start < grid[-1]]
    return np.unique(np.concatenate([grid, inner]))


def _steps(points: np.ndarray, steps_per_unit: float):
    """Fixed RK4 steps aligned with every breakpoint; returns (starts, widths, end index per point)."""
    starts, widths, marks = [], [], [0]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, math.ceil((b - a) * steps_per_unit - 1e-9))
        h = (b - a) / n
        starts.append(a + h * np.arange(n))
        widths.append(np.full(n, h))
        marks.append(marks[-1] + n)
    if not starts:
        return np.empty(0), np.empty(0), np.array(marks)
    return np.concatenate(starts), np.concatenate(widths), np.array(marks)


def _generator(T: np.ndarray) -> np.ndarray:
    """A with dp/dt = A p: off-diagonal inflow T, diagonal minus total outflow."""
    A = T.copy()
    out = T.sum(axis=-2)
    idx = np.arange(T.shape[-1])
    A[..., idx, idx] -= out
    return A


def integrate_master_equation(
    model: Model,
    p0,
    grid,
    steps_per_unit: float = STEPS_PER_UNIT,
    rectify: bool = True,
    epsilon_w: float = EPSILON_W,
    stiff_limit: float = STIFF_LIMIT,
    max_refine: int = MAX_REFINE,
) -> np.ndarray:
    """Branch distribution at every grid time, shape (len(grid), N); ``p0`` is taken at grid[0].

    Steps are fixed at ``1/steps_per_unit`` (aligned with grid points and segment
    boundaries). A step whose largest exit rate times the step exceeds
    ``stiff_limit`` is bisected, up to ``max_refine`` levels; this only triggers
    where a branch weight passes through zero and its outgoing rate diverges.
    """
    grid = np.asarray(grid, dtype=float)
    p = np.array(p0, dtype=float)
    if p.shape != (model.n_branches,):
        raise ValueError(f"p0 must have {model.n_branches} entries")
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-8:
        raise ValueError("p0 must be a probability distribution")
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be a non-empty, non-decreasing sequence of times")
    if grid[0] < -1e-12 or grid[-1] > model.t_max + 1e-12:
        raise ValueError(f"grid outside [0, {model.t_max}]")

    field_ = RateField(model, epsilon_w, rectify)
    ev = field_.evolver
    points = _breakpoints(model, grid)
    starts, widths, marks = _steps(points, steps_per_unit)
    segs = ev.segments_for(starts + widths / 2)

    def rk4(p, a0, a1, a2, h):
        k1 = a0 @ p
        k2 = a1 @ (p + 0.5 * h * k1)
        k3 = a1 @ (p + 0.5 * h * k2)
        k4 = a2 @ (p + h * k3)
        return p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def stiffness(stages, h):
        return h * max(-np.min(np.diagonal(a)) for a in stages)

    def refined(p, t, h, seg, depth):
        # Bisect until rate * h is small; only happens next to a vanishing branch weight.
        for half in (0, 1):
            t0 = t + half * h / 2
            ts = np.array([t0, t0 + h / 4, t0 + h / 2])
            _, T, _ = field_.from_states(ev.states(ts, seg), seg)
            stages = _generator(T)
            if depth + 1 < max_refine and stiffness(stages, h / 2) > stiff_limit:
                p = refined(p, t0, h / 2, seg, depth + 1)
            else:
                p = rk4(p, *stages, h / 2)
        return p

    at_point = [p.copy()]
    next_mark = 1
    for c0 in range(0, starts.size, _CHUNK):
        sl = slice(c0, c0 + _CHUNK)
        t0, h, sg = starts[sl], widths[sl], segs[sl]
        stage_t = np.stack([t0, t0 + h / 2, t0 + h], axis=1).ravel()
        stage_s = np.repeat(sg, 3)
        _, T, _ = field_.from_states(ev.states(stage_t, stage_s), stage_s)
        A = _generator(T).reshape(t0.size, 3, model.n_branches, model.n_branches)
        stiff = h * np.max(-np.diagonal(A, axis1=-2, axis2=-1), axis=(1, 2))
        for i in range(t0.size):
            if stiff[i] > stiff_limit:
                p = refined(p, t0[i], h[i], sg[i], 0)
            else:
                p = rk4(p, *A[i], h[i])
            low = p.min()
            if low < 0:
                if low < -UNDERSHOOT_TOL:
                    t_fail = t0[i] + h[i]
                    raise MasterEquationError(
                        f"negative probability {low:.3e} at t = {t_fail:.6g}; use a smaller step", t_fail
                    )
                p = np.clip(p, 0.0, None)
                p /= p.sum()
            step = c0 + i + 1
            while next_mark < marks.size and marks[next_mark] == step:
                at_point.append(p.copy())
                next_mark += 1

    at_point = np.array(at_point)
    return at_point[np.searchsorted(points, grid)]


@dataclass
class EquivarianceReport:
    model_id: str
    grid: np.ndarray
    max_abs_deviation: float
    deviations: np.ndarray
    passed: bool
    tolerance: float
    steps_per_unit: float
    rectify: bool = True
    labels: tuple = ()
    p: np.ndarray = field(default=None, repr=False)
    w: np.ndarray = field(default=None, repr=False)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "pass": bool(self.passed),
            "max_abs_deviation": float(self.max_abs_deviation) if math.isfinite(self.max_abs_deviation) else None,
            "tolerance": self.tolerance,
            "parameters": {"steps_per_unit": self.steps_per_unit, "rectify": self.rectify},
            "grid": [float(t) for t in self.grid],
            "deviations": [float(d) if math.isfinite(d) else None for d in self.deviations],
            "error": self.error,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["time", "branch", "p", "w", "deviation"])
            if self.p is None:
                return
            for i, t in enumerate(self.grid):
                for m, label in enumerate(self.labels):
                    out.writerow([repr(float(t)), label, repr(float(self.p[i, m])), repr(float(self.w[i, m])),
                                  repr(float(abs(self.p[i, m] - self.w[i, m])))])


def default_grid(model: Model, n_points: int = 201) -> np.ndarray:
    return np.linspace(0.0, model.t_max, n_points)


def equivariance_report(
    model: Model,
    grid=None,
    tolerance: float = 1e-6,
    steps_per_unit: float = STEPS_PER_UNIT,
    rectify: bool = True,
    catch_instability: bool = False,
) -> EquivarianceReport:
    """Start the master equation from the Born weights at grid[0] and track the deviation.

    With ``catch_instability`` an integration failure becomes a failed report
    instead of an exception.
    """
    grid = default_grid(model) if grid is None else np.asarray(grid, dtype=float)
    w = born_weights(evolver_for(model).states(grid), model.basis)
    p0 = w[0] / w[0].sum()
    common = dict(
        model_id=model.name or "model", grid=grid, tolerance=tolerance,
        steps_per_unit=steps_per_unit, rectify=rectify, labels=model.labels,
    )
    try:
        p = integrate_master_equation(model, p0, grid, steps_per_unit, rectify)
    except MasterEquationError as exc:
        if not catch_instability:
            raise
        return EquivarianceReport(max_abs_deviation=math.inf, deviations=np.full(grid.size, np.nan),
                                  passed=False, error=str(exc), w=w, **common)
    dev = np.max(np.abs(p - w), axis=1)
    max_dev = float(dev.max())
    return EquivarianceReport(max_abs_deviation=max_dev, deviations=dev, passed=max_dev <= tolerance,
                              p=p, w=w, **common)
