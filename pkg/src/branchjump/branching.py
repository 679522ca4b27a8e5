"""Branch decomposition of the universal state and Born weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hilbert import CompositeSpace, StateVector, as_array
from .model import ExperienceBasis, ProjectorFamily

REPORT_ZERO = 1e-14


@dataclass(frozen=True, eq=False)
class BranchDecomposition:
    """Branches of |Psi(t)>.

    In ``"basis"`` form the branch vectors are the relative states psi_n over S_R;
    in ``"projector"`` form they are Pi_m |Psi> over the full space.
    """

    time: float
    branch_vectors: tuple
    weights: np.ndarray
    form: str = "basis"

    def reported_weights(self) -> np.ndarray:
        """Weights with values below 1e-14 shown as exact zeros."""
        w = np.array(self.weights, dtype=float)
        w[w < REPORT_ZERO] = 0.0
        return w

    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.reported_weights()))


def relative_states(psis: np.ndarray, basis_matrix: np.ndarray, space: CompositeSpace) -> np.ndarray:
    """psi_n(t) = (<phi_n| (x) I)|Psi(t)> for a stack of states: (T, dim) -> (T, N, dim_r)."""
    psis = np.asarray(psis, dtype=complex).reshape(-1, space.dim_c, space.dim_r)
    return np.einsum("cn,tcr->tnr", basis_matrix.conj(), psis)


def embed_branches(rel: np.ndarray, basis_matrix: np.ndarray) -> np.ndarray:
    """phi_n (x) psi_n in the full space: (T, N, dim_r) -> (T, N, dim_c * dim_r)."""
    t, n, dim_r = rel.shape
    return np.einsum("cn,tnr->tncr", basis_matrix, rel).reshape(t, n, -1)


def weights_from_relative(rel: np.ndarray) -> np.ndarray:
    return np.sum(rel.real**2 + rel.imag**2, axis=-1)


def born_weights(psis: np.ndarray, basis: ExperienceBasis) -> np.ndarray:
    """Born weights for a stack of states, shape (T, N)."""
    return weights_from_relative(relative_states(psis, basis.matrix, basis.space))


def decompose_basis(Psi, basis: ExperienceBasis, space: CompositeSpace | None = None, time: float = 0.0) -> BranchDecomposition:
    space = space or basis.space
    psi = as_array(Psi)
    if psi.size != space.dim:
        raise ValueError(f"dimension mismatch: state has dim {psi.size}, space has dim {space.dim}")
    if basis.space != space:
        raise ValueError("experience basis belongs to a different space")
    rel = relative_states(psi[None, :], basis.matrix, space)[0]
    return BranchDecomposition(
        time=time,
        branch_vectors=tuple(StateVector(r) for r in rel),
        weights=weights_from_relative(rel),
        form="basis",
    )


def decompose_projectors(Psi, family: ProjectorFamily, time: float = 0.0) -> BranchDecomposition:
    psi = as_array(Psi)
    if psi.size != family.dim:
        raise ValueError(f"dimension mismatch: state has dim {psi.size}, projectors have dim {family.dim}")
    comps = family.stack @ psi
    return BranchDecomposition(
        time=time,
        branch_vectors=tuple(StateVector(c) for c in comps),
        weights=np.sum(comps.real**2 + comps.imag**2, axis=-1),
        form="projector",
    )


def reconstruct(decomp: BranchDecomposition, basis: ExperienceBasis) -> np.ndarray:
    """Sum_n phi_n (x) psi_n (basis form) or Sum_m Pi_m Psi (projector form)."""
    vecs = np.stack([v.amplitudes for v in decomp.branch_vectors])
    if decomp.form == "projector":
        return vecs.sum(axis=0)
    return embed_branches(vecs[None], basis.matrix)[0].sum(axis=0)
