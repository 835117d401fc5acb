"""Decoherence functionals: interference measures and branch probabilities.

Three realizations are provided.

* initial-only: ``D(a, a') = Tr(C_a rho_i C_a'^+)`` -- one boundary
  condition, the textbook arrow built in.
* two-boundary: ``D(a, a') = N Tr(rho_f C_a rho_i C_a'^+)`` with
  ``1/N = Tr(rho_f rho_i)`` -- time-neutral, no preferred direction.
* bounce: ``D(b, a; b', a') = Tr(C^B_b S C^A_a^+ C^A_a' S C^B_b'^+)`` with
  ``S = sqrt(rho_0)`` -- a single condition at the waist of a bouncing
  universe, chains on each side ordered away from it.

All three are assembled as Gram matrices of "half-chain" vectors, which
makes Hermiticity and positivity of the result numerically automatic.  A
set of histories decoheres when the off-diagonal entries are negligible;
the diagonal then supplies the branch probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    BranchCapacityError,
    DimensionMismatchError,
    OrthogonalBoundaryError,
    UndefinedProbabilitiesError,
)
from .histories import (
    MAX_BRANCHES,
    ChainSet,
    HistoryGrid,
    Partition,
    chain_matrices,
    coarse_grain_indices,
)
from .operators import (
    DensityMatrix,
    Hamiltonian,
    dagger,
    herm_sqrt,
    max_abs,
)

#: Default tolerance on decoherence-matrix identities (axioms, sums).
TOL_D = 1e-10

#: Default floor for Tr(rho_f rho_i); below it the two-boundary theory is
#: ill-posed (the normalization diverges).
TOL_NORM = 1e-12

#: Default decoherence threshold on normalized off-diagonal moduli.
EPSILON = 1e-6


@dataclass(frozen=True)
class DecoherenceMatrix:
    """The complex interference matrix of a history set.

    ``labels[k]`` names the history of row/column ``k``: an index tuple
    for one-sided sets, a ``(beta, alpha)`` pair of index tuples for bounce
    sets (``pair_shape`` then records the per-side counts, beta outermost).
    """

    labels: tuple[Hashable, ...]
    matrix: np.ndarray
    pair_shape: tuple[int, int] | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (len(self.labels), len(self.labels)):
            raise DimensionMismatchError(
                f"matrix shape {m.shape} does not match {len(self.labels)} labels"
            )
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def size(self) -> int:
        return len(self.labels)

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()


@dataclass(frozen=True)
class BranchTable:
    """Decoherence verdict and probabilities for a history set."""

    labels: tuple[Hashable, ...]
    probabilities: np.ndarray
    decoherent: bool
    max_interference: float
    epsilon: float

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class AxiomReport:
    """Violations of the generalized-theory conditions for a functional.

    ``superposition`` holds one entry per checked partition: the largest
    entrywise difference between the functional re-evaluated on the
    coarse-grained class operators and the block sums of the fine matrix.
    """

    hermiticity: float
    normalization: float
    min_diagonal: float
    superposition: tuple[float, ...]
    tol: float

    @property
    def positivity_violation(self) -> float:
        return max(0.0, -self.min_diagonal)

    @property
    def max_violation(self) -> float:
        sup = max(self.superposition) if self.superposition else 0.0
        return max(self.hermiticity, self.normalization, self.positivity_violation, sup)

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def as_dict(self) -> dict:
        return {
            "hermiticity": self.hermiticity,
            "normalization": self.normalization,
            "min_diagonal": self.min_diagonal,
            "superposition": list(self.superposition),
            "tol": self.tol,
            "passed": self.passed,
        }


def _gram(half_chains: np.ndarray) -> np.ndarray:
    v = half_chains.reshape(half_chains.shape[0], -1)
    return v @ v.conj().T


@dataclass(frozen=True)
class InitialOnlyFunctional:
    """Functional with an initial condition and nothing at the other end."""

    rho_i: DensityMatrix
    variant: str = field(default="initial_only", init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_sqrt_i", herm_sqrt(self.rho_i))

    def evaluate(self, chains: ChainSet) -> DecoherenceMatrix:
        if chains.dim != self.rho_i.dim:
            raise DimensionMismatchError("chain and state dimensions differ")
        half = chains.ops @ self._sqrt_i
        return DecoherenceMatrix(labels=chains.labels, matrix=_gram(half))


@dataclass(frozen=True)
class TwoBoundaryFunctional:
    """Time-neutral functional with initial and final density matrices.

    The normalization ``N = 1 / Tr(rho_f rho_i)`` is computed at
    construction; an overlap at or below ``tol_norm`` means the boundary
    conditions are (numerically) orthogonal and probabilities are
    undefined.
    """

    rho_i: DensityMatrix
    rho_f: DensityMatrix
    tol_norm: float = TOL_NORM
    variant: str = field(default="two_boundary", init=False, repr=False)

    def __post_init__(self):
        if self.rho_i.dim != self.rho_f.dim:
            raise DimensionMismatchError("initial and final conditions have different dims")
        overlap = float(np.trace(self.rho_f.matrix @ self.rho_i.matrix).real)
        if overlap <= self.tol_norm:
            raise OrthogonalBoundaryError(
                f"Tr(rho_f rho_i) = {overlap:.3e} <= {self.tol_norm:.1e}; "
                "the two-boundary normalization diverges"
            )
        object.__setattr__(self, "normalization", 1.0 / overlap)
        object.__setattr__(self, "_sqrt_i", herm_sqrt(self.rho_i))
        object.__setattr__(self, "_sqrt_f", herm_sqrt(self.rho_f))

    def evaluate(self, chains: ChainSet) -> DecoherenceMatrix:
        if chains.dim != self.rho_i.dim:
            raise DimensionMismatchError("chain and state dimensions differ")
        half = self._sqrt_f @ chains.ops @ self._sqrt_i
        return DecoherenceMatrix(
            labels=chains.labels, matrix=self.normalization * _gram(half)
        )


@dataclass(frozen=True)
class BounceFunctional:
    """Functional with one condition at a bounce and histories on each side.

    ``grid_a`` and ``grid_b`` both carry times increasing away from the
    bounce and reference time equal to the bounce time; ``sqrt(rho_0)`` is
    computed once at construction.
    """

    rho_0: DensityMatrix
    grid_a: HistoryGrid
    grid_b: HistoryGrid
    variant: str = field(default="bounce", init=False, repr=False)

    def __post_init__(self):
        if not (self.grid_a.dim == self.grid_b.dim == self.rho_0.dim):
            raise DimensionMismatchError(
                "bounce sides and rho_0 must share one Hilbert space, got dims "
                f"A={self.grid_a.dim}, B={self.grid_b.dim}, rho={self.rho_0.dim}"
            )
        object.__setattr__(self, "sqrt_rho_0", herm_sqrt(self.rho_0))

    def evaluate_chains(self, chains_a: ChainSet, chains_b: ChainSet) -> DecoherenceMatrix:
        """Interference matrix over ``(beta, alpha)`` pairs, beta outermost."""
        if chains_a.dim != chains_b.dim or chains_a.dim != self.rho_0.dim:
            raise DimensionMismatchError("bounce sides live in different Hilbert spaces")
        b_side = chains_b.ops @ self.sqrt_rho_0
        a_dag = np.conjugate(np.transpose(chains_a.ops, (0, 2, 1)))
        half = b_side[:, None] @ a_dag[None, :]
        labels = tuple((b, a) for b in chains_b.labels for a in chains_a.labels)
        return DecoherenceMatrix(
            labels=labels,
            matrix=_gram(half),
            pair_shape=(len(chains_b), len(chains_a)),
        )


FunctionalSpec = InitialOnlyFunctional | TwoBoundaryFunctional | BounceFunctional


def eval_initial_only(
    grid: HistoryGrid,
    H: Hamiltonian,
    rho_i: DensityMatrix,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
) -> DecoherenceMatrix:
    """``D(a, a') = Tr(C_a rho_i C_a'^+)`` over all histories of the grid."""
    chains = chain_matrices(grid, H, t_ref=t_ref, max_branches=max_branches)
    return InitialOnlyFunctional(rho_i).evaluate(chains)


def eval_two_boundary(
    grid: HistoryGrid,
    H: Hamiltonian,
    rho_i: DensityMatrix,
    rho_f: DensityMatrix,
    tol_norm: float = TOL_NORM,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
) -> DecoherenceMatrix:
    """``D(a, a') = N Tr(rho_f C_a rho_i C_a'^+)``, ``1/N = Tr(rho_f rho_i)``.

    With ``rho_f`` proportional to the identity this coincides entrywise
    with :func:`eval_initial_only` (the condition of indifference).
    """
    func = TwoBoundaryFunctional(rho_i, rho_f, tol_norm=tol_norm)
    chains = chain_matrices(grid, H, t_ref=t_ref, max_branches=max_branches)
    return func.evaluate(chains)


def eval_bounce(
    rho_0: DensityMatrix,
    grid_a: HistoryGrid,
    grid_b: HistoryGrid,
    H_a: Hamiltonian,
    H_b: Hamiltonian,
    max_branches: int = MAX_BRANCHES,
) -> DecoherenceMatrix:
    """Bounce functional over pairs of one-side histories.

    Both grids must be laid out with times increasing away from the bounce
    and reference time at the bounce; each side may have its own
    Hamiltonian.
    """
    func = BounceFunctional(rho_0, grid_a, grid_b)
    chains_a = chain_matrices(grid_a, H_a, max_branches=max_branches)
    chains_b = chain_matrices(grid_b, H_b, max_branches=max_branches)
    return func.evaluate_chains(chains_a, chains_b)


def block_sum(D: DecoherenceMatrix, part: Partition) -> DecoherenceMatrix:
    """Coarse-grain an interference matrix by summing partition blocks."""
    coarse = coarse_grain_indices(D.labels, part)
    pos = {lab: i for i, lab in enumerate(coarse)}
    idx = np.array([pos[part[lab]] for lab in D.labels])
    out = np.zeros((len(coarse), len(coarse)), dtype=np.complex128)
    np.add.at(out, (idx[:, None], idx[None, :]), D.matrix)
    return DecoherenceMatrix(labels=tuple(coarse), matrix=out)


def product_partition(
    pair_labels: Sequence[tuple[Hashable, Hashable]],
    part_b: Partition,
    part_a: Partition,
) -> Partition:
    """Partition of bounce pairs induced by independent per-side partitions."""
    return Partition(block_of={(b, a): (part_b[b], part_a[a]) for (b, a) in pair_labels})


def check_axioms(
    D: DecoherenceMatrix,
    partitions: Sequence[Partition] = (),
    tol_D: float = TOL_D,
    coarse_eval: Callable[[Partition], DecoherenceMatrix] | None = None,
) -> AxiomReport:
    """Check the four conditions a decoherence functional must satisfy.

    (i) Hermiticity, (ii) normalization of the full sum to 1,
    (iii) nonnegative diagonal, and (iv) consistency with superposition:
    for each partition the functional evaluated on the coarse-grained class
    operators must equal the block sums of the fine matrix.  Condition (iv)
    needs ``coarse_eval`` to re-evaluate the functional on a coarse set;
    passing partitions without it is an error.
    """
    m = D.matrix
    herm = max_abs(m - dagger(m))
    norm = abs(complex(m.sum()) - 1.0)
    diag = m.diagonal().real
    min_diag = float(diag.min()) if diag.size else 0.0
    partitions = list(partitions)
    if partitions and coarse_eval is None:
        raise ValueError(
            "superposition checks need coarse_eval to recompute the coarse functional"
        )
    sup = []
    for part in partitions:
        resummed = block_sum(D, part)
        direct = coarse_eval(part)
        if direct.labels != resummed.labels:
            raise ValueError(
                "coarse_eval returned blocks in a different order than the block sums"
            )
        sup.append(max_abs(direct.matrix - resummed.matrix))
    return AxiomReport(
        hermiticity=float(herm),
        normalization=float(norm),
        min_diagonal=min_diag,
        superposition=tuple(sup),
        tol=float(tol_D),
    )


def decoherence_verdict(
    D: DecoherenceMatrix, epsilon: float = EPSILON, tol_D: float = TOL_D
) -> BranchTable:
    """Apply the diagonal criterion and extract branch probabilities.

    The set is decoherent iff every off-diagonal modulus is at most
    ``epsilon`` times the geometric mean of the paired diagonal entries
    (floored at ``tol_D`` so that zero-probability branches trivially
    decohere).  ``max_interference`` is the largest normalized off-diagonal
    modulus and is reported whatever the verdict; probabilities are the
    clipped real diagonal and are only meaningful when decoherent.
    """
    m = D.matrix
    diag = m.diagonal().real
    if D.size == 1:
        return BranchTable(
            labels=D.labels,
            probabilities=np.clip(diag, 0.0, 1.0),
            decoherent=True,
            max_interference=0.0,
            epsilon=float(epsilon),
        )
    floored = np.maximum(diag, tol_D)
    scale = np.sqrt(np.outer(floored, floored))
    ratios = np.abs(m) / scale
    np.fill_diagonal(ratios, 0.0)
    max_interference = float(ratios.max())
    return BranchTable(
        labels=D.labels,
        probabilities=np.clip(diag, 0.0, 1.0),
        decoherent=bool(max_interference <= epsilon),
        max_interference=max_interference,
        epsilon=float(epsilon),
    )


def time_reverse_check(
    grid: HistoryGrid,
    H: Hamiltonian,
    rho_i: DensityMatrix,
    rho_f: DensityMatrix,
    tol_norm: float = TOL_NORM,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
) -> float:
    """Size of the time-neutrality defect of the two-boundary functional.

    The reversed construction swaps the boundary conditions and reverses
    the operator order in every chain; by cyclicity of the trace it must
    reproduce the original functional with its history pair transposed,
    ``D_rev(a, a') = D(a', a)``.  Returns the largest entrywise deviation
    from that identity; at dim <= 64 it stays below 1e-12.
    """
    func = TwoBoundaryFunctional(rho_i, rho_f, tol_norm=tol_norm)
    chains = chain_matrices(grid, H, t_ref=t_ref, max_branches=max_branches)
    D = func.evaluate(chains)

    reversed_func = TwoBoundaryFunctional(rho_f, rho_i, tol_norm=tol_norm)
    reversed_chains = chain_matrices(
        grid, H, t_ref=t_ref, max_branches=max_branches, reverse=True
    )
    D_rev = reversed_func.evaluate(reversed_chains)
    return max_abs(D_rev.matrix - D.matrix.T)


def bounce_exchange_check(
    rho_0: DensityMatrix,
    grid_a: HistoryGrid,
    grid_b: HistoryGrid,
    H_a: Hamiltonian,
    H_b: Hamiltonian,
    max_branches: int = MAX_BRANCHES,
) -> float:
    """Size of the A/B-exchange defect of the bounce functional.

    Swapping the roles of the two sides relabels each pair ``(beta, alpha)``
    to ``(alpha, beta)`` and, by cyclicity and Hermiticity, conjugates every
    entry.  Returns the largest entrywise deviation from that identity.
    """
    D = eval_bounce(rho_0, grid_a, grid_b, H_a, H_b, max_branches=max_branches)
    D_sw = eval_bounce(rho_0, grid_b, grid_a, H_b, H_a, max_branches=max_branches)
    nb, na = D.pair_shape
    orig = D.matrix.reshape(nb, na, nb, na)
    swapped = D_sw.matrix.reshape(na, nb, na, nb)
    return max_abs(swapped.transpose(1, 0, 3, 2) - orig.conj())


def _propagator(H: Hamiltonian, dt: float) -> np.ndarray:
    # Deliberately a different numerical path (Pade expm) from the
    # eigendecomposition used by the functional evaluators.
    return scipy.linalg.expm(-1j * H.matrix * dt)


def measured_subsystem_oracle(
    grid: HistoryGrid,
    H: Hamiltonian,
    psi_i: np.ndarray,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
) -> np.ndarray:
    """History probabilities by explicit evolve-project-evolve simulation.

    An independent cross-check of the initial-only diagonal for pure
    states: the state is Schroedinger-evolved between grid times and
    projected (without renormalization) at each one; the squared norm of a
    branch's final state is its probability.  Branch order matches
    :func:`histories.enumerate_histories`.
    """
    psi = np.asarray(psi_i, dtype=np.complex128).reshape(-1)
    psi = psi / np.linalg.norm(psi)
    if psi.size != grid.dim:
        raise DimensionMismatchError("state dimension does not match the grid")
    total = grid.branch_count()
    if total > max_branches:
        raise BranchCapacityError(
            f"history set has {total} branches, exceeding the cap {max_branches}"
        )
    t0 = grid.t_ref if t_ref is None else float(t_ref)
    states = psi[None, :]
    prev_t = t0
    for fam in grid.families:
        if fam.time != prev_t:
            U = _propagator(H, fam.time - prev_t)
            states = states @ U.T
        prev_t = fam.time
        mats = fam.stacked()
        # branch out: slot order keeps earlier slots slowest
        states = np.einsum("mij,bj->bmi", mats, states).reshape(-1, grid.dim)
    return np.einsum("bi,bi->b", states, states.conj()).real


def postselected_probabilities_oracle(
    grid: HistoryGrid,
    H: Hamiltonian,
    psi_i: np.ndarray,
    psi_f: np.ndarray,
    t_ref: float | None = None,
    tol_norm: float = TOL_NORM,
    max_branches: int = MAX_BRANCHES,
) -> np.ndarray:
    """History probabilities between pure pre- and post-selected states.

    Computes the transition amplitude of each projected branch directly and
    returns ``|<psi_f|chain|psi_i>|^2 / |<psi_f|psi_i>|^2``, an independent
    check of the two-boundary diagonal with pure boundaries.  The reversed
    protocol (conjugated chains, interchanged states) gives the same
    numbers.
    """
    psi0 = np.asarray(psi_i, dtype=np.complex128).reshape(-1)
    psi0 = psi0 / np.linalg.norm(psi0)
    psif = np.asarray(psi_f, dtype=np.complex128).reshape(-1)
    psif = psif / np.linalg.norm(psif)
    if psi0.size != grid.dim or psif.size != grid.dim:
        raise DimensionMismatchError("state dimension does not match the grid")
    overlap = abs(np.vdot(psif, psi0)) ** 2
    if overlap <= tol_norm:
        raise OrthogonalBoundaryError(
            f"|<psi_f|psi_i>|^2 = {overlap:.3e} <= {tol_norm:.1e}"
        )
    total = grid.branch_count()
    if total > max_branches:
        raise BranchCapacityError(
            f"history set has {total} branches, exceeding the cap {max_branches}"
        )
    t0 = grid.t_ref if t_ref is None else float(t_ref)
    states = psi0[None, :]
    prev_t = t0
    for fam in grid.families:
        if fam.time != prev_t:
            U = _propagator(H, fam.time - prev_t)
            states = states @ U.T
        prev_t = fam.time
        states = np.einsum("mij,bj->bmi", fam.stacked(), states).reshape(-1, grid.dim)
    # Bring the post-selected state to the last grid time before projecting
    # the amplitudes out.
    psif_t = _propagator(H, prev_t - t0) @ psif
    amps = states @ psif_t.conj()
    return np.abs(amps) ** 2 / overlap


def probabilities_if_decoherent(
    table: BranchTable,
) -> np.ndarray:
    """The probability vector, refusing non-decoherent sets."""
    if not table.decoherent:
        raise UndefinedProbabilitiesError(
            "history set does not decohere "
            f"(max normalized interference {table.max_interference:.3e} "
            f"> epsilon {table.epsilon:.1e}); probabilities are unusable"
        )
    return table.probabilities
