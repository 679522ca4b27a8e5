"""Probability currents J_mn and jump rates T_mn between branches.

``J[m, n]`` is the net probability flow from branch n into branch m, so that
``dw_m/dt = sum_n J[m, n]``; ``T[m, n]`` is the rate of jumps n -> m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branching import BranchDecomposition, embed_branches, relative_states, weights_from_relative
from .evolution import evolver_for
from .hilbert import CompositeSpace, as_matrix
from .model import ExperienceBasis, Model

EPSILON_W = 1e-12


@dataclass(frozen=True, eq=False)
class RatePair:
    time: float
    J: np.ndarray
    T: np.ndarray
    weights: np.ndarray

    def invariant_violations(self, tol: float = 1e-10) -> list:
        """Names of violated RatePair invariants (empty when all hold)."""
        bad = []
        scale = max(np.max(np.abs(self.J)), 1.0)
        if np.max(np.abs(self.J + self.J.T)) > tol * scale:
            bad.append("J not antisymmetric")
        if np.any(np.diagonal(self.J) != 0) or np.any(np.diagonal(self.T) != 0):
            bad.append("non-zero diagonal")
        if np.any(self.T < 0):
            bad.append("negative rate")
        flow = self.T * self.weights[None, :]
        both = np.minimum(flow, flow.T)
        if np.max(both) > tol * max(np.max(flow), 1.0):
            bad.append("current carried in both directions")
        return bad


def currents_from_branches(chi: np.ndarray, H, hbar: float = 1.0) -> np.ndarray:
    """J[..., m, n] = (2/hbar) Im <chi_m|H|chi_n> for branch vectors chi[..., n, :] in the full space."""
    h = as_matrix(H)
    chi = np.asarray(chi, dtype=complex)
    hchi = chi @ h.T
    g = np.einsum("...mk,...nk->...mn", chi.conj(), hchi)
    j = (2.0 / hbar) * g.imag
    idx = np.arange(j.shape[-1])
    j[..., idx, idx] = 0.0
    return j


def current_matrix(decomp: BranchDecomposition, H, hbar: float = 1.0) -> np.ndarray:
    """Currents from projector-form branches Pi_m |Psi>."""
    if decomp.form != "projector":
        raise ValueError("current_matrix needs a projector-form decomposition")
    chi = np.stack([v.amplitudes for v in decomp.branch_vectors])
    if chi.shape[1] != as_matrix(H).shape[0]:
        raise ValueError("dimension mismatch between branches and Hamiltonian")
    return currents_from_branches(chi, H, hbar)


def current_matrix_experience(
    decomp: BranchDecomposition,
    basis: ExperienceBasis,
    H,
    space: CompositeSpace | None = None,
    hbar: float = 1.0,
) -> np.ndarray:
    """Currents from relative states psi_n, using (<phi_m|<psi_m|) H (|phi_n>|psi_n>)."""
    space = space or basis.space
    if decomp.form != "basis":
        raise ValueError("current_matrix_experience needs a basis-form decomposition")
    rel = np.stack([v.amplitudes for v in decomp.branch_vectors])
    if rel.shape != (space.dim_c, space.dim_r) or as_matrix(H).shape[0] != space.dim:
        raise ValueError("dimension mismatch between branches, basis and Hamiltonian")
    chi = embed_branches(rel[None], basis.matrix)[0]
    return currents_from_branches(chi, H, hbar)


def rate_matrix(J, weights, epsilon_w: float = EPSILON_W, rectify: bool = True) -> np.ndarray:
    """T[m, n] = max(J[m, n], 0) / w_n, zero where w_n <= epsilon_w.

    Broadcasts over leading axes. ``rectify=False`` drops the max(., 0); it exists
    only to show that the rectification is what keeps the process consistent.
    """
    J = np.asarray(J, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative branch weight")
    num = np.maximum(J, 0.0) if rectify else J.copy()
    occupied = w > epsilon_w
    safe = np.where(occupied, w, 1.0)
    T = np.where(occupied[..., None, :], num / safe[..., None, :], 0.0)
    idx = np.arange(T.shape[-1])
    T[..., idx, idx] = 0.0
    return T


class RateField:
    """Vectorized J, T and Born weights of a model at arbitrary times."""

    def __init__(self, model: Model, epsilon_w: float = EPSILON_W, rectify: bool = True):
        self.model = model
        self.evolver = evolver_for(model)
        self.epsilon_w = epsilon_w
        self.rectify = rectify
        self._phi = model.basis.matrix

    def from_states(self, psis: np.ndarray, segments) -> tuple:
        """(J, T, w) for states paired with the Hamiltonian of the given segments."""
        psis = np.atleast_2d(psis)
        segments = np.broadcast_to(np.asarray(segments), (psis.shape[0],))
        rel = relative_states(psis, self._phi, self.model.space)
        w = weights_from_relative(rel)
        chi = embed_branches(rel, self._phi)
        n = self.model.n_branches
        J = np.empty((psis.shape[0], n, n))
        for k in np.unique(segments):
            mask = segments == k
            J[mask] = currents_from_branches(chi[mask], self.evolver.hamiltonian(int(k)), self.model.hbar)
        T = rate_matrix(J, w, self.epsilon_w, self.rectify)
        return J, T, w

    def at(self, times, segments=None) -> tuple:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if segments is None:
            segments = self.evolver.segments_for(times)
        psis = self.evolver.states(times, segments)
        return self.from_states(psis, segments)


def rates_at(model: Model, t: float, epsilon_w: float = EPSILON_W) -> RatePair:
    J, T, w = RateField(model, epsilon_w).at([t])
    return RatePair(time=t, J=J[0], T=T[0], weights=w[0])
