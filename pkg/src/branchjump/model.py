"""Scenario definition: composite space, piecewise-constant Hamiltonian, experience basis.

Scenario files are UTF-8 JSON; complex numbers are ``[re, im]`` pairs and matrices
are row-major over the full ``dim_c * dim_r`` space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .hilbert import (
    NORM_TOL,
    CompositeSpace,
    HermitianOperator,
    StateVector,
    pauli,
    random_hermitian,
    random_state,
    random_unitary,
)

PROJECTOR_TOL = 1e-10
SCHEDULE_TOL = 1e-9

InitialBranch = Union[int, str]


class ScenarioError(ValueError):
    """Base class for scenario problems."""


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    pass


@dataclass(frozen=True, eq=False)
class ExperienceBasis:
    """Orthonormal, complete basis {phi_n} of S_C."""

    space: CompositeSpace
    vectors: tuple

    def __post_init__(self):
        vecs = tuple(v if isinstance(v, StateVector) else StateVector(v) for v in self.vectors)
        object.__setattr__(self, "vectors", vecs)
        if len(vecs) != self.space.dim_c:
            raise ScenarioValidationError(
                f"experience basis incomplete: {len(vecs)} vectors for dim_c = {self.space.dim_c}"
            )
        for v in vecs:
            if v.dim != self.space.dim_c:
                raise ScenarioValidationError(f"experience basis vector has dim {v.dim}, expected {self.space.dim_c}")
        gram = self.matrix.conj().T @ self.matrix
        dev = np.max(np.abs(gram - np.eye(len(vecs))))
        if dev > NORM_TOL:
            raise ScenarioValidationError(f"experience basis not orthonormal (max deviation {dev:.3e})")

    @property
    def matrix(self) -> np.ndarray:
        """dim_c x N matrix whose columns are the basis vectors."""
        return np.stack([v.amplitudes for v in self.vectors], axis=1)

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def standard(cls, space: CompositeSpace) -> "ExperienceBasis":
        return cls(space, tuple(np.eye(space.dim_c, dtype=complex)))


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Orthogonal projectors summing to the identity."""

    projectors: tuple
    labels: tuple = ()

    def __post_init__(self):
        projs = tuple(p if isinstance(p, HermitianOperator) else HermitianOperator(p) for p in self.projectors)
        if not projs:
            raise ScenarioValidationError("projector family is empty")
        labels = tuple(self.labels) or tuple(str(i) for i in range(len(projs)))
        if len(labels) != len(projs):
            raise ScenarioValidationError("projector family: one label per projector required")
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "labels", labels)

        dim = projs[0].dim
        total = np.zeros((dim, dim), dtype=complex)
        for m, p in enumerate(projs):
            if p.dim != dim:
                raise ScenarioValidationError("projectors have inconsistent dimensions")
            a = p.entries
            if np.max(np.abs(a @ a - a)) > PROJECTOR_TOL:
                raise ScenarioValidationError(f"projector {m} not idempotent")
            for n in range(m + 1, len(projs)):
                if np.max(np.abs(a @ projs[n].entries)) > PROJECTOR_TOL:
                    raise ScenarioValidationError(f"projectors {m} and {n} not orthogonal")
            total += a
        if np.max(np.abs(total - np.eye(dim))) > PROJECTOR_TOL:
            raise ScenarioValidationError("projector family incomplete: sum is not the identity")

    @property
    def dim(self) -> int:
        return self.projectors[0].dim

    @property
    def stack(self) -> np.ndarray:
        return np.stack([p.entries for p in self.projectors])

    def __len__(self) -> int:
        return len(self.projectors)


@dataclass(frozen=True, eq=False)
class Segment:
    t_start: float
    t_end: float
    hamiltonian: HermitianOperator

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True, eq=False)
class Model:
    space: CompositeSpace
    schedule: tuple
    initial_state: StateVector
    basis: ExperienceBasis
    t_max: float
    initial_branch: InitialBranch = "born"
    hbar: float = 1.0
    labels: tuple = ()
    name: str = ""

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.space.dim_c)))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "schedule", tuple(self.schedule))
        validate_model(self)

    @property
    def n_branches(self) -> int:
        return self.space.dim_c

    @property
    def dim(self) -> int:
        return self.space.dim

    def with_initial_branch(self, initial_branch: InitialBranch) -> "Model":
        return Model(
            self.space, self.schedule, self.initial_state, self.basis, self.t_max,
            initial_branch, self.hbar, self.labels, self.name,
        )


def validate_model(model: Model) -> None:
    """Raise ScenarioValidationError naming the first violated invariant."""
    space = model.space
    if not (model.t_max > 0 and np.isfinite(model.t_max)):
        raise ScenarioValidationError(f"t_max must be positive and finite, got {model.t_max}")
    if not model.hbar > 0:
        raise ScenarioValidationError(f"hbar must be positive, got {model.hbar}")
    if not model.schedule:
        raise ScenarioValidationError("hamiltonian schedule is empty")
    prev_end = 0.0
    for k, seg in enumerate(model.schedule):
        if seg.hamiltonian.dim != space.dim:
            raise ScenarioValidationError(f"hamiltonian {k} has dim {seg.hamiltonian.dim}, expected {space.dim}")
        if abs(seg.t_start - prev_end) > SCHEDULE_TOL:
            raise ScenarioValidationError(
                f"schedule not contiguous: segment {k} starts at {seg.t_start}, previous ends at {prev_end}"
            )
        if not seg.t_end > seg.t_start:
            raise ScenarioValidationError(f"schedule segment {k} has non-positive duration")
        prev_end = seg.t_end
    if abs(prev_end - model.t_max) > SCHEDULE_TOL:
        raise ScenarioValidationError(f"schedule ends at {prev_end} but t_max is {model.t_max}")
    if model.initial_state.dim != space.dim:
        raise ScenarioValidationError(f"initial state has dim {model.initial_state.dim}, expected {space.dim}")
    if not model.initial_state.is_normalized():
        raise ScenarioValidationError("initial state not normalized")
    if model.basis.space != space:
        raise ScenarioValidationError("experience basis space differs from model space")
    if len(model.labels) != space.dim_c:
        raise ScenarioValidationError(f"expected {space.dim_c} labels, got {len(model.labels)}")
    ib = model.initial_branch
    if isinstance(ib, str):
        if ib != "born":
            raise ScenarioValidationError(f'initial_branch must be an index or "born", got {ib!r}')
    elif isinstance(ib, bool) or not isinstance(ib, (int, np.integer)) or not 0 <= ib < space.dim_c:
        raise ScenarioValidationError(f"initial_branch {ib!r} out of range")


def projectors_from_basis(basis: ExperienceBasis, space: CompositeSpace | None = None) -> ProjectorFamily:
    """Pi_n = |phi_n><phi_n| (x) I_R for each basis vector."""
    space = space or basis.space
    if len(basis) != space.dim_c:
        raise ScenarioValidationError("experience basis incomplete")
    eye_r = np.eye(space.dim_r)
    projs = [np.kron(np.outer(v.amplitudes, v.amplitudes.conj()), eye_r) for v in basis.vectors]
    return ProjectorFamily(tuple(projs))


# --------------------------------------------------------------------------- builders


def built_in_rabi(omega: float = 1.0, hbar: float = 1.0) -> Model:
    """Two-level system, H = hbar*omega*sigma_x, starting in branch 0."""
    if not omega > 0:
        raise ScenarioValidationError(f"omega must be positive, got {omega}")
    space = CompositeSpace(2, 1)
    t_max = 2 * np.pi / omega
    h = HermitianOperator(hbar * omega * pauli("x"))
    return Model(
        space=space,
        schedule=(Segment(0.0, t_max, h),),
        initial_state=StateVector([1, 0]),
        basis=ExperienceBasis.standard(space),
        t_max=t_max,
        initial_branch="born",
        hbar=hbar,
        labels=("0", "1"),
        name=f"rabi(omega={omega:g})",
    )


def built_in_measurement(c: Sequence[complex], g: float = 1.0, hbar: float = 1.0) -> Model:
    """Von Neumann measurement of an N-outcome system by a pulse of length pi/(2g).

    The observer space has states ``ready, saw 1, ..., saw N``; the pulse couples
    ``ready`` to ``saw n`` in the sector where the system is in ``|n>``, so the
    pulse maps ``|ready>|n>`` to ``-i|saw n>|n>``.
    """
    c = np.asarray(c, dtype=complex)
    n_out = c.size
    if n_out < 2:
        raise ScenarioValidationError("measurement needs at least 2 outcomes")
    if abs(np.sum(np.abs(c) ** 2) - 1) > NORM_TOL:
        raise ScenarioValidationError(f"measurement amplitudes not normalized (sum |c|^2 = {np.sum(np.abs(c) ** 2)})")
    if not g > 0:
        raise ScenarioValidationError(f"coupling g must be positive, got {g}")
    space = CompositeSpace(n_out + 1, n_out)
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for n in range(n_out):
        x = np.zeros((space.dim_c, space.dim_c))
        x[0, n + 1] = x[n + 1, 0] = 1.0
        sys_proj = np.zeros((n_out, n_out))
        sys_proj[n, n] = 1.0
        h += g * np.kron(x, sys_proj)
    tau = np.pi / (2 * g)
    ready = np.zeros(space.dim_c)
    ready[0] = 1.0
    return Model(
        space=space,
        schedule=(Segment(0.0, tau, HermitianOperator(h)),),
        initial_state=StateVector(np.kron(ready, c)),
        basis=ExperienceBasis.standard(space),
        t_max=tau,
        initial_branch="born",
        hbar=hbar,
        labels=("ready",) + tuple(f"saw {n + 1}" for n in range(n_out)),
        name="measurement",
    )


def built_in_diagonal(
    energies: Sequence[float] = (0.0, 1.0, 2.5),
    weights: Sequence[float] = (0.7, 0.3, 0.0),
    t_max: float = 5.0,
) -> Model:
    """Null case: H diagonal in the experience basis, so no current flows."""
    energies = np.asarray(energies, dtype=float)
    amps = np.sqrt(np.asarray(weights, dtype=float))
    if energies.size != amps.size:
        raise ScenarioValidationError("energies and weights must have equal length")
    space = CompositeSpace(energies.size, 1)
    return Model(
        space=space,
        schedule=(Segment(0.0, t_max, HermitianOperator(np.diag(energies).astype(complex))),),
        initial_state=StateVector(amps),
        basis=ExperienceBasis.standard(space),
        t_max=t_max,
        initial_branch="born",
        labels=tuple(f"E={e:g}" for e in energies),
        name="diagonal",
    )


def random_model(rng: np.random.Generator, max_dim: int = 8, t_max: float = 10.0, n_segments: int = 1) -> Model:
    """Random Hermitian H, Haar-random experience basis and initial state; total dim <= max_dim."""
    if max_dim < 2:
        raise ValueError("max_dim must be at least 2")
    dim_c = int(rng.integers(2, max_dim + 1))
    dim_r = int(rng.integers(1, max_dim // dim_c + 1))
    space = CompositeSpace(dim_c, dim_r)
    u = random_unitary(dim_c, rng)
    bounds = np.linspace(0.0, t_max, n_segments + 1)
    schedule = tuple(
        Segment(float(bounds[k]), float(bounds[k + 1]), HermitianOperator(random_hermitian(space.dim, rng)))
        for k in range(n_segments)
    )
    return Model(
        space=space,
        schedule=schedule,
        initial_state=StateVector(random_state(space.dim, rng)),
        basis=ExperienceBasis(space, tuple(u.T)),
        t_max=t_max,
        initial_branch="born",
        name=f"random(dim_c={dim_c}, dim_r={dim_r})",
    )


BUILTINS = {
    "rabi": built_in_rabi,
    "measurement": built_in_measurement,
    "diagonal": built_in_diagonal,
}


# --------------------------------------------------------------------------- file format


def _c(z: complex) -> list:
    z = complex(z)
    return [z.real, z.imag]


def model_to_dict(model: Model) -> dict:
    return {
        "name": model.name,
        "dim_c": model.space.dim_c,
        "dim_r": model.space.dim_r,
        "hbar": model.hbar,
        "hamiltonians": [
            {
                "t_start": seg.t_start,
                "t_end": seg.t_end,
                "matrix": [[_c(z) for z in row] for row in seg.hamiltonian.entries],
            }
            for seg in model.schedule
        ],
        "initial_state": [_c(z) for z in model.initial_state.amplitudes],
        "experience_basis": [[_c(z) for z in v.amplitudes] for v in model.basis.vectors],
        "initial_branch": model.initial_branch if isinstance(model.initial_branch, str) else int(model.initial_branch),
        "t_max": model.t_max,
        "labels": list(model.labels),
    }


def dump_model(model: Model) -> str:
    """Scenario JSON, one top-level field per line."""
    doc = model_to_dict(model)
    return "{\n" + ",\n".join(f" {json.dumps(k)}: {json.dumps(v)}" for k, v in doc.items()) + "\n}"


def _complex(value, where: str) -> complex:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)
    ):
        raise ScenarioParseError(f"{where}: expected [re, im] pair, got {value!r}")
    return complex(value[0], value[1])


def _vector(value, where: str) -> np.ndarray:
    if not isinstance(value, list):
        raise ScenarioParseError(f"{where}: expected a list of [re, im] pairs")
    return np.array([_complex(z, f"{where}[{i}]") for i, z in enumerate(value)], dtype=complex)


def _matrix(value, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ScenarioParseError(f"{where}: expected a non-empty list of rows")
    rows = [_vector(row, f"{where}[{i}]") for i, row in enumerate(value)]
    if len({r.size for r in rows}) != 1:
        raise ScenarioParseError(f"{where}: ragged matrix")
    return np.stack(rows)


def _number(doc: dict, key: str, default=None) -> float:
    if key not in doc:
        if default is None:
            raise ScenarioParseError(f"missing field {key!r}")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioParseError(f"field {key!r}: expected a number, got {v!r}")
    return float(v)


def _integer(doc: dict, key: str) -> int:
    if key not in doc:
        raise ScenarioParseError(f"missing field {key!r}")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioParseError(f"field {key!r}: expected an integer, got {v!r}")
    return v


def model_from_dict(doc: dict) -> Model:
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    dim_c = _integer(doc, "dim_c")
    dim_r = _integer(doc, "dim_r")
    try:
        space = CompositeSpace(dim_c, dim_r)
    except ValueError as exc:
        raise ScenarioValidationError(str(exc)) from None
    hbar = _number(doc, "hbar", 1.0)
    t_max = _number(doc, "t_max")

    if not isinstance(doc.get("hamiltonians"), list) or not doc["hamiltonians"]:
        raise ScenarioParseError("field 'hamiltonians': expected a non-empty list")
    schedule = []
    for k, entry in enumerate(doc["hamiltonians"]):
        where = f"hamiltonians[{k}]"
        if not isinstance(entry, dict):
            raise ScenarioParseError(f"{where}: expected an object")
        m = _matrix(entry.get("matrix"), f"{where}.matrix")
        if m.shape != (space.dim, space.dim):
            raise ScenarioValidationError(f"{where}.matrix has shape {m.shape}, expected {(space.dim, space.dim)}")
        try:
            h = HermitianOperator(m)
        except ValueError as exc:
            raise ScenarioValidationError(f"{where}: hamiltonian not Hermitian ({exc})") from None
        schedule.append(Segment(_number(entry, "t_start"), _number(entry, "t_end"), h))

    psi0 = _vector(doc.get("initial_state"), "initial_state")
    if psi0.size != space.dim:
        raise ScenarioValidationError(f"initial_state has length {psi0.size}, expected {space.dim}")
    raw_basis = doc.get("experience_basis")
    if not isinstance(raw_basis, list):
        raise ScenarioParseError("field 'experience_basis': expected a list of vectors")
    vectors = tuple(_vector(v, f"experience_basis[{i}]") for i, v in enumerate(raw_basis))
    for i, v in enumerate(vectors):
        if v.size != space.dim_c:
            raise ScenarioValidationError(f"experience_basis[{i}] has length {v.size}, expected {dim_c}")

    ib = doc.get("initial_branch", "born")
    labels = doc.get("labels", [])
    if not isinstance(labels, list) or not all(isinstance(s, str) for s in labels):
        raise ScenarioParseError("field 'labels': expected a list of strings")
    name = doc.get("name", "")
    return Model(
        space=space,
        schedule=tuple(schedule),
        initial_state=StateVector(psi0),
        basis=ExperienceBasis(space, vectors),
        t_max=t_max,
        initial_branch=ib,
        hbar=hbar,
        labels=tuple(labels),
        name=name if isinstance(name, str) else "",
    )


def load_model(text: str) -> Model:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return model_from_dict(doc)


def load_model_file(path) -> Model:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError(f"file not found: {path}") from None
    return load_model(text)


def bundled_scenario_names() -> list:
    return sorted(p.name[: -len(".json")] for p in resources.files("branchjump.scenarios").iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> Model:
    res = resources.files("branchjump.scenarios") / f"{name}.json"
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return load_model(res.read_text(encoding="utf-8"))

