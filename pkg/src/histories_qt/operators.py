"""Core operator algebra on a finite-dimensional Hilbert space.

Everything downstream (chain operators, decoherence functionals, entropy
diagnostics) is built from the four value types defined here: projectors,
exhaustive projector families, Hamiltonians, and density matrices.  All
matrices are dense ``complex128`` numpy arrays; values are immutable after
construction and safe to share between threads.

Conventions: hbar = 1, times and energies are dimensionless model units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidStateError,
    NonHermitianError,
    NotPositiveSemidefiniteError,
)

#: Default tolerance for operator-identity checks (Hermiticity, idempotence,
#: exclusivity, exhaustiveness).  Double-precision eigendecomposition noise
#: at dim <= 64 stays well below this.
TOL_OP = 1e-9


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Coerce ``a`` to a finite, square, read-only complex128 matrix."""
    m = np.array(a, dtype=np.complex128, order="C")
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatchError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise InvalidStateError(f"{name} contains non-finite entries")
    m.setflags(write=False)
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    """Hermitian adjoint."""
    return a.conj().T


def max_abs(a: np.ndarray) -> float:
    """Largest entry modulus; the norm used by all tolerance checks."""
    return 0.0 if a.size == 0 else float(np.max(np.abs(a)))


def hermiticity_defect(a: np.ndarray) -> float:
    """``max |a - a^dagger|`` entrywise."""
    return max_abs(a - dagger(a))


def idempotence_defect(a: np.ndarray) -> float:
    """``max |a @ a - a|`` entrywise."""
    return max_abs(a @ a - a)


@dataclass(frozen=True)
class Projector:
    """One alternative at a moment of time: an orthogonal projection.

    Parameters
    ----------
    matrix:
        Square complex matrix; Hermitian and idempotent within ``TOL_OP``
        for a valid projector (checked by :func:`validate_family`, not at
        construction, so deliberately broken projectors can be built for
        testing).
    label:
        Opaque identifier of the alternative, used in reports.
    """

    matrix: np.ndarray
    label: Hashable = 0

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_operator(self.matrix, "projector"))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def rank(self) -> int:
        """Rank of the projection, read off the trace."""
        return int(round(float(self.matrix.trace().real)))


@dataclass(frozen=True)
class ProjectorFamily:
    """An exhaustive set of exclusive projections at one time.

    Members represent the mutually exclusive alternatives of one
    coarse-grained question (which position bin, which spin value, ...).
    Validity means each member is a projector, distinct members are
    orthogonal, and the members sum to the identity.

    Parameters
    ----------
    members:
        Projectors of a common dimension, in a fixed order.
    time:
        The model time at which the alternatives are posed.
    name:
        Human-readable tag used in validation reports.
    """

    members: tuple[Projector, ...]
    time: float = 0.0
    name: str = ""

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise DimensionMismatchError("a projector family needs at least one member")
        dims = {p.dim for p in members}
        if len(dims) != 1:
            raise DimensionMismatchError(
                f"family {self.name!r} mixes dimensions {sorted(dims)}"
            )
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "time", float(self.time))

    @classmethod
    def from_matrices(
        cls,
        matrices: Iterable[np.ndarray],
        time: float = 0.0,
        name: str = "",
        labels: Sequence[Hashable] | None = None,
    ) -> "ProjectorFamily":
        mats = list(matrices)
        if labels is None:
            labels = list(range(len(mats)))
        return cls(
            members=tuple(Projector(m, lab) for m, lab in zip(mats, labels)),
            time=time,
            name=name,
        )

    @property
    def dim(self) -> int:
        return self.members[0].dim

    @property
    def size(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Projector]:
        return iter(self.members)

    def stacked(self) -> np.ndarray:
        """All member matrices as one ``(size, dim, dim)`` array."""
        return np.stack([p.matrix for p in self.members])


@dataclass(frozen=True)
class Hamiltonian:
    """Generator of time evolution (energy units with hbar = 1)."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_operator(self.matrix, "Hamiltonian"))

    @classmethod
    def zero(cls, dim: int) -> "Hamiltonian":
        return cls(np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_defect(self) -> float:
        return hermiticity_defect(self.matrix)


#: Roles a density matrix can play in a functional.
DENSITY_KINDS = ("initial", "final", "bounce", "maximally_mixed")


@dataclass(frozen=True)
class DensityMatrix:
    """A boundary condition: Hermitian, positive semidefinite, unit trace.

    Eigenvalues in ``[-tol, 0)`` are treated as rounding noise: they are
    clipped to zero and the matrix is renormalized to unit trace.  Anything
    more negative is rejected as unphysical.

    Parameters
    ----------
    matrix:
        The density matrix.  Validated and possibly cleaned at construction.
    kind:
        Which boundary role the matrix plays; ``maximally_mixed`` marks a
        condition of indifference and stores ``I/dim`` exactly.
    tol:
        Validation tolerance used at construction.
    """

    matrix: np.ndarray
    kind: str = "initial"
    tol: float = field(default=TOL_OP, repr=False)

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise InvalidStateError(f"unknown density-matrix kind {self.kind!r}")
        m = as_operator(self.matrix, "density matrix")
        tol = float(self.tol)
        herm = hermiticity_defect(m)
        if herm > tol:
            raise NonHermitianError("density matrix is not Hermitian", herm)
        m = np.asarray((m + dagger(m)) / 2.0)
        tr = float(m.trace().real)
        if abs(tr - 1.0) > max(tol, 1e-12) * m.shape[0]:
            raise InvalidStateError(f"density matrix trace {tr!r} is not 1")
        w = np.linalg.eigvalsh(m)
        if w[0] < -tol:
            raise NotPositiveSemidefiniteError(
                "density matrix is not positive semidefinite", float(w[0])
            )
        if w[0] < 0.0:
            # Rounding-level negativity: clip the spectrum and renormalize.
            w2, v = np.linalg.eigh(m)
            w2 = np.clip(w2, 0.0, None)
            m = (v * w2) @ dagger(v)
            m /= m.trace().real
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def pure(cls, state: np.ndarray, kind: str = "initial") -> "DensityMatrix":
        """Rank-1 density matrix of a (normalized copy of) ``state``."""
        v = np.asarray(state, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise InvalidStateError("cannot normalize the zero vector")
        v = v / norm
        return cls(np.outer(v, v.conj()), kind=kind)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        """The condition of indifference ``I/dim``."""
        return cls(np.eye(dim) / dim, kind="maximally_mixed")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def rank(self, tol: float = TOL_OP) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.matrix) > tol))

    def is_pure(self, tol: float = TOL_OP) -> bool:
        return max_abs(self.matrix @ self.matrix - self.matrix) <= tol

    def is_proportional_to_identity(self, tol: float = TOL_OP) -> bool:
        d = self.dim
        return max_abs(self.matrix - np.eye(d) / d) <= tol


@dataclass(frozen=True)
class FamilyValidationReport:
    """Worst-case violations of the projector-family conditions."""

    family_name: str
    time: float
    hermiticity: float
    idempotence: float
    exclusivity: float
    exhaustiveness: float
    tol: float

    @property
    def max_violation(self) -> float:
        return max(self.hermiticity, self.idempotence, self.exclusivity, self.exhaustiveness)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def as_dict(self) -> dict:
        return {
            "family": self.family_name,
            "time": self.time,
            "hermiticity": self.hermiticity,
            "idempotence": self.idempotence,
            "exclusivity": self.exclusivity,
            "exhaustiveness": self.exhaustiveness,
            "tol": self.tol,
            "passed": self.passed,
        }


def validate_family(fam: ProjectorFamily, tol_op: float = TOL_OP) -> FamilyValidationReport:
    """Check that a family is a set of exclusive, exhaustive projections.

    Returns a report of the largest entrywise violation of each condition;
    the family passes iff every violation is at most ``tol_op``.  A
    dimension mismatch among members is a structural error and is raised at
    family construction, not reported here.
    """
    stack = fam.stacked()
    herm = max(hermiticity_defect(p) for p in stack)
    idem = max(idempotence_defect(p) for p in stack)
    excl = 0.0
    for i in range(fam.size):
        for j in range(i + 1, fam.size):
            excl = max(excl, max_abs(stack[i] @ stack[j]))
    exh = max_abs(stack.sum(axis=0) - np.eye(fam.dim))
    return FamilyValidationReport(
        family_name=fam.name,
        time=fam.time,
        hermiticity=float(herm),
        idempotence=float(idem),
        exclusivity=float(excl),
        exhaustiveness=float(exh),
        tol=float(tol_op),
    )


def _check_hermitian(H: Hamiltonian, tol_op: float) -> None:
    defect = H.hermiticity_defect()
    if defect > tol_op:
        raise NonHermitianError("Hamiltonian is not Hermitian", defect)


def hamiltonian_eigensystem(H: Hamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors of a Hermitian ``H`` (one ``eigh``)."""
    w, v = np.linalg.eigh(H.matrix)
    return w, v


def unitary(H: Hamiltonian, dt: float, tol_op: float = TOL_OP) -> np.ndarray:
    """Propagator ``exp(-i H dt)`` via Hermitian eigendecomposition."""
    _check_hermitian(H, tol_op)
    w, v = hamiltonian_eigensystem(H)
    return (v * np.exp(-1j * w * dt)) @ dagger(v)


def _conjugate_by_phases(
    mats: np.ndarray, w: np.ndarray, v: np.ndarray, dt: float
) -> np.ndarray:
    """``exp(+iH dt) M exp(-iH dt)`` for a stack of matrices ``M``.

    ``w, v`` are the eigensystem of ``H``; the conjugation is carried out in
    the eigenbasis where the propagator is a phase vector.
    """
    phases = np.exp(1j * w * dt)
    in_basis = dagger(v) @ mats @ v
    rotated = phases[:, None] * in_basis * phases.conj()[None, :]
    return v @ rotated @ dagger(v)


def heisenberg_evolve(
    P: Projector, H: Hamiltonian, t_from: float, t_to: float, tol_op: float = TOL_OP
) -> Projector:
    """Move a projector between times along the Heisenberg equations.

    Returns ``exp(+iH (t_to - t_from)) P exp(-iH (t_to - t_from))`` with the
    label preserved.  Unitary conjugation preserves Hermiticity, idempotence
    and family structure, so evolving every member of a valid family yields
    a valid family.
    """
    if P.dim != H.dim:
        raise DimensionMismatchError(
            f"projector dim {P.dim} does not match Hamiltonian dim {H.dim}"
        )
    _check_hermitian(H, tol_op)
    if t_to == t_from:
        return P
    w, v = hamiltonian_eigensystem(H)
    moved = _conjugate_by_phases(P.matrix[None], w, v, t_to - t_from)[0]
    return Projector(moved, label=P.label)


def evolve_family(
    fam: ProjectorFamily, H: Hamiltonian, t_from: float, t_to: float, tol_op: float = TOL_OP
) -> ProjectorFamily:
    """Heisenberg-evolve every member of a family with a single ``eigh``."""
    if fam.dim != H.dim:
        raise DimensionMismatchError(
            f"family dim {fam.dim} does not match Hamiltonian dim {H.dim}"
        )
    _check_hermitian(H, tol_op)
    if t_to == t_from:
        return fam
    w, v = hamiltonian_eigensystem(H)
    moved = _conjugate_by_phases(fam.stacked(), w, v, t_to - t_from)
    return ProjectorFamily(
        members=tuple(
            Projector(m, label=p.label) for m, p in zip(moved, fam.members)
        ),
        time=fam.time,
        name=fam.name,
    )


def herm_sqrt(rho: DensityMatrix | np.ndarray, tol_op: float = TOL_OP) -> np.ndarray:
    """Hermitian square root of a positive semidefinite matrix.

    Eigenvalues in ``[-tol_op, 0)`` are clipped to zero before the root;
    anything below ``-tol_op`` raises :class:`NotPositiveSemidefiniteError`.
    The result ``S`` is Hermitian with ``S @ S = rho`` within 1e-10 at
    dim <= 64.
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else as_operator(rho, "matrix")
    herm = hermiticity_defect(m)
    if herm > tol_op:
        raise NonHermitianError("matrix square root needs a Hermitian input", herm)
    w, v = np.linalg.eigh(m)
    if w[0] < -tol_op:
        raise NotPositiveSemidefiniteError(
            "matrix square root needs a positive semidefinite input", float(w[0])
        )
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ dagger(v)
    return np.asarray((s + dagger(s)) / 2.0)
