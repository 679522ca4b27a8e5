"""Finite-dimensional complex linear algebra: states, Hermitian operators, S_C (x) S_R.

Global index convention for a composite space is row-major: ``k = c * dim_r + r``.
All arrays handed out by these types are read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

HERMITIAN_TOL = 1e-10
NORM_TOL = 1e-10

ArrayLike = Union["StateVector", np.ndarray, list, tuple]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitude vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1 or amps.size == 0:
            raise ValueError(f"state amplitudes must be a non-empty 1-d array, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm_squared() - 1.0) <= tol

    def normalized(self) -> "StateVector":
        n = np.sqrt(self.norm_squared())
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / n)

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"StateVector(dim={self.dim}, amplitudes={np.array2string(self.amplitudes, precision=4)})"


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense Hermitian matrix, validated at construction."""

    entries: np.ndarray

    def __post_init__(self):
        m = _frozen(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"operator must be a non-empty square matrix, got shape {m.shape}")
        dev = np.max(np.abs(m - m.conj().T))
        if dev > HERMITIAN_TOL:
            raise ValueError(f"operator not Hermitian (max |H - H^dagger| = {dev:.3e})")
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __repr__(self) -> str:
        return f"HermitianOperator(dim={self.dim})"


@dataclass(frozen=True)
class CompositeSpace:
    """S = S_C (x) S_R with ``dim = dim_c * dim_r``."""

    dim_c: int
    dim_r: int

    def __post_init__(self):
        for name in ("dim_c", "dim_r"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def dim(self) -> int:
        return self.dim_c * self.dim_r

    def index(self, c: int, r: int) -> int:
        return c * self.dim_r + r


def as_array(v: ArrayLike) -> np.ndarray:
    """Amplitudes of a StateVector, or the argument itself as a complex array."""
    if isinstance(v, StateVector):
        return v.amplitudes
    return np.asarray(v, dtype=complex)


def as_matrix(op) -> np.ndarray:
    if isinstance(op, HermitianOperator):
        return op.entries
    return np.asarray(op, dtype=complex)


def _check_dims(what: str, got: int, want: int) -> None:
    if got != want:
        raise ValueError(f"dimension mismatch in {what}: {got} != {want}")


def inner_product(a: ArrayLike, b: ArrayLike) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    x, y = as_array(a), as_array(b)
    _check_dims("inner_product", x.size, y.size)
    return complex(np.vdot(x, y))


def apply(op, v: ArrayLike) -> StateVector:
    m, x = as_matrix(op), as_array(v)
    _check_dims("apply", m.shape[1], x.size)
    return StateVector(m @ x)


def tensor_state(a: ArrayLike, b: ArrayLike, space: CompositeSpace) -> StateVector:
    """a (x) b with ``a`` over S_C and ``b`` over S_R."""
    x, y = as_array(a), as_array(b)
    _check_dims("tensor_state (S_C factor)", x.size, space.dim_c)
    _check_dims("tensor_state (S_R factor)", y.size, space.dim_r)
    return StateVector(np.kron(x, y))


def partial_inner(phi: ArrayLike, psi: ArrayLike, space: CompositeSpace) -> StateVector:
    """(<phi| (x) I) |Psi>, a vector over S_R."""
    f, big = as_array(phi), as_array(psi)
    _check_dims("partial_inner (S_C factor)", f.size, space.dim_c)
    _check_dims("partial_inner (full state)", big.size, space.dim)
    return StateVector(f.conj() @ big.reshape(space.dim_c, space.dim_r))


def pauli(name: str) -> np.ndarray:
    return {
        "x": np.array([[0, 1], [1, 0]], dtype=complex),
        "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "z": np.array([[1, 0], [0, -1]], dtype=complex),
    }[name]


def basis_vector(dim: int, k: int) -> StateVector:
    e = np.zeros(dim, dtype=complex)
    e[k] = 1.0
    return StateVector(e)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via phase-corrected QR."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)
