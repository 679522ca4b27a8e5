"""Unitary evolution of the universal state under a piecewise-constant Hamiltonian."""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass

import numpy as np

from .hilbert import HermitianOperator, StateVector, as_array, as_matrix
from .model import Model

UNITARY_TOL = 1e-9


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Propagator:
    matrix: np.ndarray
    segment: tuple = (0.0, 0.0)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def unitarity_error(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))


def _eigh(h: np.ndarray):
    try:
        return np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise EvolutionError(f"eigendecomposition failed: {exc}") from exc


def propagator_for(H, dt: float, hbar: float = 1.0, segment: tuple | None = None) -> Propagator:
    """U = exp(-i H dt / hbar) via H = V diag(lam) V^dagger."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    lam, v = _eigh(as_matrix(H))
    u = (v * np.exp(-1j * lam * dt / hbar)) @ v.conj().T
    prop = Propagator(u, segment if segment is not None else (0.0, dt))
    err = prop.unitarity_error()
    if err > UNITARY_TOL:
        raise EvolutionError(f"propagator not unitary (error {err:.2e})")
    return prop


class Evolver:
    """Per-model evolution engine.

    Holds the eigendecomposition of every segment Hamiltonian and the state at every
    segment start, so that the state at any time is one exact propagation away.
    Propagators for repeated (segment, dt) pairs are cached; the cache is safe to
    share between threads.
    """

    def __init__(self, model: Model):
        self.model = model
        self.hbar = model.hbar
        self._eig = [_eigh(seg.hamiltonian.entries) for seg in model.schedule]
        starts = [as_array(model.initial_state)]
        for k, seg in enumerate(model.schedule[:-1]):
            starts.append(self._propagate(k, starts[-1], seg.duration))
        self._starts = starts
        self._cache: dict = {}
        self._lock = threading.Lock()

    def _propagate(self, seg: int, psi: np.ndarray, dt) -> np.ndarray:
        lam, v = self._eig[seg]
        coeffs = v.conj().T @ psi
        phases = np.exp(-1j * np.multiply.outer(np.asarray(dt, dtype=float), lam) / self.hbar)
        return (phases * coeffs) @ v.T

    def hamiltonian(self, seg: int) -> np.ndarray:
        return self.model.schedule[seg].hamiltonian.entries

    def propagator(self, seg: int, dt: float) -> np.ndarray:
        key = (seg, float(dt))
        u = self._cache.get(key)
        if u is None:
            with self._lock:
                u = self._cache.get(key)
                if u is None:
                    lam, v = self._eig[seg]
                    u = (v * np.exp(-1j * lam * dt / self.hbar)) @ v.conj().T
                    u.setflags(write=False)
                    self._cache[key] = u
        return u

    def segments_for(self, times) -> np.ndarray:
        ends = np.array([seg.t_end for seg in self.model.schedule])
        idx = np.searchsorted(ends, np.asarray(times, dtype=float), side="right")
        return np.minimum(idx, len(ends) - 1)

    def states(self, times, segments=None) -> np.ndarray:
        """|Psi(t)> for an array of times, shape (len(times), dim).

        ``segments`` selects which segment's Hamiltonian is used to reach each time;
        by default the segment containing it. The state itself is continuous across
        boundaries, so this choice only matters for callers that pair the state with H.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        segs = self.segments_for(times) if segments is None else np.broadcast_to(segments, times.shape)
        out = np.empty((times.size, self.model.dim), dtype=complex)
        for k in np.unique(segs):
            mask = segs == k
            out[mask] = self._propagate(int(k), self._starts[k], times[mask] - self.model.schedule[k].t_start)
        return out

    def state(self, t: float, segment: int | None = None) -> np.ndarray:
        return self.states([t], None if segment is None else [segment])[0]


_evolvers: "weakref.WeakKeyDictionary[Model, Evolver]" = weakref.WeakKeyDictionary()
_evolvers_lock = threading.Lock()


def evolver_for(model: Model) -> Evolver:
    with _evolvers_lock:
        ev = _evolvers.get(model)
        if ev is None:
            ev = _evolvers[model] = Evolver(model)
        return ev


def evolve(model: Model, t: float) -> StateVector:
    """|Psi(t)>, applying segment propagators in order and splitting the last one at t."""
    if not 0 <= t <= model.t_max + 1e-12:
        raise ValueError(f"time {t} outside [0, {model.t_max}]")
    psi = as_array(model.initial_state)
    for seg in model.schedule:
        if t <= seg.t_start:
            break
        dt = min(t, seg.t_end) - seg.t_start
        psi = propagator_for(seg.hamiltonian, dt, model.hbar, (seg.t_start, seg.t_end)).matrix @ psi
    return StateVector(psi)


def energy(H: HermitianOperator, psi) -> float:
    x = as_array(psi)
    return float(np.vdot(x, as_matrix(H) @ x).real)
