"""Stochastic branch-jump process and ensemble statistics.

A trajectory sits in one experience branch at a time. Over a step ``dt`` it jumps
from branch n to branch m with probability ``T[m, n] * dt`` (first-order thinning),
with ``T`` evaluated at the left end of the step from the freshly evolved state.
Steps whose exit probability would exceed 0.1 are bisected locally, at most
``MAX_HALVINGS`` times; beyond that the exit probability is clamped to
``1 - exp(-R dt)`` and a diagnostic is recorded.

Every trajectory owns a Philox stream keyed by ``(seed, stream)``, so results do
not depend on batching or thread count.
"""

from __future__ import annotations

import math
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import Model
from .rates import EPSILON_W, RateField

CAP_TARGET = 0.1
CAP_HARD = 0.5
MAX_HALVINGS = 10
BATCH_SIZE = 1024


class RateCapError(RuntimeError):
    """A single step was asked to carry an exit probability above the hard cap."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class RandomSource:
    """Counter-based random stream for one trajectory."""

    seed: int
    stream: int = 0
    algorithm: str = "philox"

    def generator(self, substream: int = 0) -> np.random.Generator:
        if self.algorithm != "philox":
            raise ValueError(f"unsupported generator {self.algorithm!r}")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, substream))
        return np.random.Generator(np.random.Philox(ss))


class JumpEvent(NamedTuple):
    time: float
    from_index: int
    to_index: int
    cell: int


class Diagnostic(NamedTuple):
    time: float
    kind: str
    branch: int
    value: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    seed: int
    stream: int
    times: np.ndarray
    initial_branch: int
    jump_events: tuple = ()
    diagnostics: tuple = ()

    @property
    def branch_path(self) -> np.ndarray:
        """Branch index at every grid time; a jump in cell k shows from point k+1 on."""
        path = np.full(self.times.size, self.initial_branch, dtype=np.int64)
        for ev in self.jump_events:
            path[ev.cell + 1:] = ev.to_index
        return path

    @property
    def final_branch(self) -> int:
        return self.jump_events[-1].to_index if self.jump_events else self.initial_branch

    def to_dict(self, labels=None) -> dict:
        name = (lambda i: labels[i]) if labels else (lambda i: i)
        return {
            "seed": self.seed,
            "stream": self.stream,
            "initial_branch": name(self.initial_branch),
            "final_branch": name(self.final_branch),
            "jumps": [{"t": e.time, "from": name(e.from_index), "to": name(e.to_index)} for e in self.jump_events],
            "diagnostics": [
                {"t": d.time, "kind": d.kind, "branch": name(d.branch), "value": d.value} for d in self.diagnostics
            ],
        }


@dataclass(eq=False)
class EnsembleStats:
    n_trajectories: int
    times: np.ndarray
    occupation: np.ndarray
    born_weights: np.ndarray
    standard_error: np.ndarray
    counts: np.ndarray
    labels: tuple = ()
    n_jumps: int = 0
    n_diagnostics: int = 0
    trajectories: list = field(default=None, repr=False)

    def index_near(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def z_scores(self) -> np.ndarray:
        """|occupation - w| / stderr; cells with zero stderr score 0 if exact, inf otherwise."""
        diff = np.abs(self.occupation - self.born_weights)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = diff / self.standard_error
        return np.where(self.standard_error > 0, z, np.where(diff == 0, 0.0, np.inf))

    def pass_fraction(self, n_sigma: float = 4.0) -> float:
        return float(np.mean(self.z_scores() <= n_sigma))


def _select(current: int, T: np.ndarray, dt: float, u: float, clamp: bool = False) -> tuple:
    """Target branch for one uniform draw; returns (branch, clamped)."""
    out = np.array(T[:, current], dtype=float)
    out[current] = 0.0
    R = out.sum()
    if R <= 0.0:
        return current, False
    clamped = False
    if R * dt > CAP_HARD:
        if not clamp:
            raise RateCapError(f"exit probability R*dt = {R * dt:.3g} exceeds {CAP_HARD}; refine dt")
        probs = out / R * -math.expm1(-R * dt)
        clamped = True
    else:
        probs = out * dt
    cums = np.cumsum(probs)
    hit = np.nonzero(u < cums)[0]
    return (int(hit[0]) if hit.size else current), clamped


def step(current: int, T, dt: float, rng, clamp: bool = False) -> int:
    """Advance one step of length ``dt`` from ``current`` under rate matrix ``T``.

    Jumps to m with probability ``T[m, current] * dt``, choosing the target by
    cumulative sums in index order from a single uniform draw. Raises RateCapError
    if the total exit probability exceeds 0.5, unless ``clamp`` is set, in which
    case it uses ``1 - exp(-R dt)`` instead.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(rng, RandomSource):
        raise TypeError("pass a generator, e.g. RandomSource(...).generator()")
    return _select(current, np.asarray(T, dtype=float), dt, rng.random(), clamp)[0]


def time_grid(model: Model, dt_base: float):
    """Uniform cells per segment of width <= dt_base; returns (times, cell_dt, cell_segment)."""
    if not dt_base > 0:
        raise ValueError(f"dt_base must be positive, got {dt_base}")
    times, dts, segs = [np.array([0.0])], [], []
    for k, seg in enumerate(model.schedule):
        n = max(1, math.ceil(seg.duration / dt_base - 1e-9))
        h = seg.duration / n
        pts = seg.t_start + h * np.arange(1, n + 1)
        pts[-1] = seg.t_end
        times.append(pts)
        dts.append(np.full(n, h))
        segs.append(np.full(n, k))
    return np.concatenate(times), np.concatenate(dts), np.concatenate(segs)


class JumpSimulator:
    """Grid, states and rates of one model, shared by every trajectory run on it."""

    def __init__(self, model: Model, dt_base: float, epsilon_w: float = EPSILON_W):
        self.model = model
        self.dt_base = dt_base
        self.epsilon_w = epsilon_w
        self.times, self.cell_dt, self.cell_seg = time_grid(model, dt_base)
        point_seg = np.append(self.cell_seg, self.cell_seg[-1])
        self.field = RateField(model, epsilon_w)
        self.evolver = self.field.evolver
        self.states = self.evolver.states(self.times, point_seg)
        self.J, self.T, self.w = self.field.from_states(self.states, point_seg)
        self.exit = self.T.sum(axis=1)
        self._sub: dict = {}
        self._lock = threading.Lock()

    @property
    def n_branches(self) -> int:
        return self.model.n_branches

    def sub_rates(self, cell: int, level: int, j: int) -> np.ndarray:
        """Rate matrix at t_cell + j * dt_cell / 2**level."""
        if j == 0 or level == 0:
            return self.T[cell]
        while j % 2 == 0:
            j //= 2
            level -= 1
        key = (cell, level, j)
        T = self._sub.get(key)
        if T is None:
            seg = int(self.cell_seg[cell])
            offset = j * self.cell_dt[cell] / 2**level
            psi = self.evolver.propagator(seg, offset) @ self.states[cell]
            T = self.field.from_states(psi[None], [seg])[1][0]
            with self._lock:
                T = self._sub.setdefault(key, T)
        return T

    def initial_branches(self, u0: np.ndarray) -> np.ndarray:
        ib = self.model.initial_branch
        if ib != "born":
            return np.full(u0.size, int(ib), dtype=np.int64)
        w0 = self.w[0] / self.w[0].sum()
        cums = np.cumsum(w0)
        return np.minimum(np.searchsorted(cums, u0, side="right"), self.n_branches - 1)

    def _refine(self, cur, cell, level, j, fine, jumps, diags):
        """Advance one trajectory across sub-interval j of the given bisection level."""
        h = self.cell_dt[cell] / 2**level
        T = self.sub_rates(cell, level, j)
        R = T[:, cur].sum()
        if R * h > CAP_TARGET and level < MAX_HALVINGS:
            cur = self._refine(cur, cell, level + 1, 2 * j, fine, jumps, diags)
            return self._refine(cur, cell, level + 1, 2 * j + 1, fine, jumps, diags)
        t = self.times[cell] + j * h
        new, clamped = _select(cur, T, h, fine.random(), clamp=True)
        if clamped:
            diags.append(Diagnostic(float(t), "rate-cap", int(cur), float(R * h)))
        if new != cur:
            jumps.append(JumpEvent(float(t), int(cur), int(new), int(cell)))
        return new

    def run_batch(self, seed: int, streams, keep: bool = False):
        """Simulate the given streams; returns (counts per grid point, trajectories or None, n_jumps, n_diags)."""
        streams = list(streams)
        B, K, N = len(streams), self.cell_dt.size, self.n_branches
        sources = [RandomSource(seed, s) for s in streams]
        U = np.stack([src.generator(0).random(K + 1) for src in sources])
        fine: dict = {}

        cur = self.initial_branches(U[:, 0])
        counts = np.zeros((K + 1, N), dtype=np.int64)
        counts[0] = np.bincount(cur, minlength=N)
        jumps = [[] for _ in range(B)]
        diags = [[] for _ in range(B)]
        flagged = np.zeros(B, dtype=bool)
        rows = np.arange(B)

        def check_unoccupied(k):
            nonlocal flagged
            now = self.w[k, cur] <= self.epsilon_w
            for b in np.nonzero(now & ~flagged)[0]:
                diags[b].append(Diagnostic(float(self.times[k]), "unoccupied-branch", int(cur[b]), float(self.w[k, cur[b]])))
            flagged = now

        check_unoccupied(0)
        for k in range(K):
            dt = self.cell_dt[k]
            R = self.exit[k, cur]
            coarse = R * dt <= CAP_TARGET
            moving = np.nonzero(coarse & (R > 0))[0]
            if moving.size:
                probs = self.T[k][:, cur[moving]].T * dt
                probs[np.arange(moving.size), cur[moving]] = 0.0
                cums = np.cumsum(probs, axis=1)
                u = U[moving, k + 1]
                hit = u[:, None] < cums
                jumped = hit[:, -1]
                if jumped.any():
                    idx = moving[jumped]
                    targets = np.argmax(hit[jumped], axis=1)
                    t = float(self.times[k])
                    for b, m in zip(idx, targets):
                        jumps[b].append(JumpEvent(t, int(cur[b]), int(m), k))
                    cur[idx] = targets
            for b in np.nonzero(~coarse)[0]:
                gen = fine.get(b)
                if gen is None:
                    gen = fine[b] = sources[b].generator(1)
                cur[b] = self._refine(int(cur[b]), k, 0, 0, gen, jumps[b], diags[b])
            counts[k + 1] = np.bincount(cur, minlength=N)
            check_unoccupied(k + 1)

        n_jumps = sum(len(j) for j in jumps)
        n_diags = sum(len(d) for d in diags)
        trajs = None
        if keep:
            initial = self.initial_branches(U[:, 0])
            trajs = [
                Trajectory(seed, s, self.times, int(initial[b]), tuple(jumps[b]), tuple(diags[b]))
                for b, s in zip(rows, streams)
            ]
        return counts, trajs, n_jumps, n_diags


_simulators: "weakref.WeakKeyDictionary[Model, dict]" = weakref.WeakKeyDictionary()
_simulators_lock = threading.Lock()


def simulator_for(model: Model, dt_base: float, epsilon_w: float = EPSILON_W) -> JumpSimulator:
    with _simulators_lock:
        per_model = _simulators.setdefault(model, {})
        sim = per_model.get((dt_base, epsilon_w))
        if sim is None:
            sim = per_model[(dt_base, epsilon_w)] = JumpSimulator(model, dt_base, epsilon_w)
        return sim


def run_trajectory(model: Model, seed: int, stream: int = 0, dt_base: float = 1e-3) -> Trajectory:
    sim = simulator_for(model, dt_base)
    return sim.run_batch(seed, [stream], keep=True)[1][0]


def binomial_stderr(p: np.ndarray, n: int) -> np.ndarray:
    p = np.clip(p, 0.0, 1.0)
    return np.sqrt(p * (1 - p) / n)


def run_ensemble(
    model: Model,
    n: int,
    seed: int,
    dt_base: float = 1e-3,
    threads: int = 1,
    keep_trajectories: bool = False,
    batch_size: int = BATCH_SIZE,
) -> EnsembleStats:
    """Run streams 0..n-1 and aggregate branch occupation on the shared grid.

    The standard error of each cell is the binomial one at the Born weight,
    sqrt(w (1 - w) / n).
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    sim = simulator_for(model, dt_base)
    batches = [range(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    work = lambda streams: sim.run_batch(seed, streams, keep_trajectories)
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, batches))
    else:
        results = [work(b) for b in batches]

    counts = sum(r[0] for r in results)
    w = sim.w / sim.w.sum(axis=1, keepdims=True)
    trajs = [t for r in results for t in r[1]] if keep_trajectories else None
    return EnsembleStats(
        n_trajectories=n,
        times=sim.times,
        occupation=counts / n,
        born_weights=w,
        standard_error=binomial_stderr(w, n),
        counts=counts,
        labels=model.labels,
        n_jumps=sum(r[2] for r in results),
        n_diagnostics=sum(r[3] for r in results),
        trajectories=trajs,
    )
