"""History sets: grids of projector families, chain operators, partitions.

A history grid is an ordered sequence of projector families at strictly
increasing times.  One history picks one alternative from each family; its
chain operator is the time-ordered product of the corresponding
Heisenberg-picture projectors, later times to the left.

Families are stored as alternatives at their own time; the Heisenberg
operators entering a chain are produced relative to a single reference time
``t_ref`` carried by the grid (default: the first grid time; bounce models
use the bounce time).
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import BranchCapacityError, DimensionMismatchError, PartitionCoverageError
from .operators import (
    TOL_OP,
    Hamiltonian,
    ProjectorFamily,
    evolve_family,
    max_abs,
)

#: Hard cap on the number of histories materialized at once.  Exponential
#: blowup must surface as an explicit error, never as silent truncation.
MAX_BRANCHES = 1 << 20

#: Environment variable capping the worker threads used for batched chain
#: construction.  Results are independent of the thread count.
THREADS_ENV_VAR = "HISTORIES_QT_THREADS"

HistoryIndex = tuple[int, ...]


def _thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class HistoryGrid:
    """A sequence of projector families at strictly increasing times.

    Parameters
    ----------
    families:
        The projector families, one per time, all of a common dimension.
        Each family keeps its own ``time`` attribute; those times must be
        strictly increasing along the grid.
    t_ref:
        Reference time of the Heisenberg picture: boundary density matrices
        are understood as states at ``t_ref``.  Defaults to the first grid
        time.
    """

    families: tuple[ProjectorFamily, ...]
    t_ref: float | None = None

    def __post_init__(self):
        fams = tuple(self.families)
        if not fams:
            raise DimensionMismatchError("a history grid needs at least one family")
        dims = {f.dim for f in fams}
        if len(dims) != 1:
            raise DimensionMismatchError(f"grid families mix dimensions {sorted(dims)}")
        times = [f.time for f in fams]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DimensionMismatchError(f"grid times must be strictly increasing, got {times}")
        object.__setattr__(self, "families", fams)
        object.__setattr__(
            self, "t_ref", times[0] if self.t_ref is None else float(self.t_ref)
        )

    @classmethod
    def at_times(
        cls, steps: Iterable[tuple[float, ProjectorFamily]], t_ref: float | None = None
    ) -> "HistoryGrid":
        """Build a grid from ``(time, family)`` pairs, restamping times."""
        fams = [
            ProjectorFamily(members=f.members, time=t, name=f.name) for t, f in steps
        ]
        return cls(families=tuple(fams), t_ref=t_ref)

    @property
    def dim(self) -> int:
        return self.families[0].dim

    @property
    def n_times(self) -> int:
        return len(self.families)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(f.time for f in self.families)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.size for f in self.families)

    def branch_count(self) -> int:
        return math.prod(self.shape)


def enumerate_histories(
    grid: HistoryGrid, max_branches: int = MAX_BRANCHES
) -> list[HistoryIndex]:
    """All index tuples of the grid, lexicographic, first slot slowest."""
    total = grid.branch_count()
    if total > max_branches:
        raise BranchCapacityError(
            f"history set has {total} branches, exceeding the cap {max_branches}"
        )
    return list(itertools.product(*(range(s) for s in grid.shape)))


@dataclass(frozen=True)
class ChainOperator:
    """The operator product representing one history."""

    index: HistoryIndex
    op: np.ndarray


@dataclass(frozen=True)
class ChainSet:
    """Chain operators for a whole history set, stacked.

    ``ops[k]`` is the chain operator of ``labels[k]``; labels may be fine
    history indices or coarse block labels after coarse graining.
    """

    labels: tuple[Hashable, ...]
    ops: np.ndarray

    @property
    def dim(self) -> int:
        return self.ops.shape[-1]

    def __len__(self) -> int:
        return len(self.labels)

    def sum(self) -> np.ndarray:
        return self.ops.sum(axis=0)


def _heisenberg_stacks(
    grid: HistoryGrid, H: Hamiltonian, t_ref: float, tol_op: float
) -> list[np.ndarray]:
    """Per-time stacks of Heisenberg-picture member matrices."""
    stacks = []
    for fam in grid.families:
        moved = evolve_family(fam, H, t_ref, fam.time, tol_op=tol_op)
        stacks.append(moved.stacked())
    return stacks


def chain_matrices(
    grid: HistoryGrid,
    H: Hamiltonian,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
    reverse: bool = False,
    tol_op: float = TOL_OP,
) -> ChainSet:
    """Chain operators for every history of the grid, in enumeration order.

    Chains are built by successive left-multiplication from the earliest
    family to the latest (later times leftmost); ``reverse=True`` builds the
    opposite ordering, used by the time-reversal diagnostics.  No reordering
    optimizations are applied, so repeated runs are bitwise reproducible.
    """
    if grid.dim != H.dim:
        raise DimensionMismatchError(
            f"grid dim {grid.dim} does not match Hamiltonian dim {H.dim}"
        )
    labels = enumerate_histories(grid, max_branches=max_branches)
    t0 = grid.t_ref if t_ref is None else float(t_ref)
    stacks = _heisenberg_stacks(grid, H, t0, tol_op)

    # Lexicographic enumeration varies the first slot slowest, so the
    # accumulator keeps the running product on the slow axis and the newest
    # family on the fast axis, flattened in C order.  Forward chains apply
    # each later family from the left; reversed chains from the right.
    def build(acc: np.ndarray) -> np.ndarray:
        for k in range(1, len(stacks)):
            nxt = stacks[k]
            if reverse:
                acc = acc[:, None] @ nxt[None, :]
            else:
                acc = nxt[None, :] @ acc[:, None]
            acc = acc.reshape(-1, grid.dim, grid.dim)
        return acc

    first = stacks[0]
    threads = _thread_cap()
    if threads == 1 or first.shape[0] < 2:
        ops = build(first)
    else:
        pieces = [rows for rows in np.array_split(np.arange(first.shape[0]), threads) if rows.size]
        out: list[np.ndarray | None] = [None] * len(pieces)

        def work(slot: int, rows: np.ndarray) -> None:
            out[slot] = build(first[rows])

        with ThreadPoolExecutor(max_workers=len(pieces)) as pool:
            for f in [pool.submit(work, i, rows) for i, rows in enumerate(pieces)]:
                f.result()
        ops = np.concatenate([o for o in out if o is not None], axis=0)

    ops = np.ascontiguousarray(ops)
    ops.setflags(write=False)
    return ChainSet(labels=tuple(labels), ops=ops)


def chain_operator(
    grid: HistoryGrid,
    idx: HistoryIndex,
    H: Hamiltonian,
    t_ref: float | None = None,
    tol_op: float = TOL_OP,
) -> ChainOperator:
    """The chain operator of a single history.

    The product runs latest-to-earliest left to right, i.e. the first
    family's projector acts first on a state at ``t_ref``.
    """
    idx = tuple(int(a) for a in idx)
    if len(idx) != grid.n_times:
        raise IndexError(f"index {idx} has {len(idx)} slots, grid has {grid.n_times}")
    for k, (a, fam) in enumerate(zip(idx, grid.families)):
        if not 0 <= a < fam.size:
            raise IndexError(f"slot {k} of {idx} is out of range for family size {fam.size}")
    t0 = grid.t_ref if t_ref is None else float(t_ref)
    stacks = _heisenberg_stacks(grid, H, t0, tol_op)
    op = stacks[0][idx[0]]
    for k in range(1, grid.n_times):
        op = stacks[k][idx[k]] @ op
    return ChainOperator(index=idx, op=op)


def chain_sum_check(
    grid: HistoryGrid,
    H: Hamiltonian,
    t_ref: float | None = None,
    max_branches: int = MAX_BRANCHES,
    tol_op: float = TOL_OP,
) -> float:
    """``max |sum_alpha C_alpha - I|``: exhaustiveness of the history set.

    For a valid grid this is bounded by ``n_times * dim * tol_op``.
    """
    chains = chain_matrices(grid, H, t_ref=t_ref, max_branches=max_branches, tol_op=tol_op)
    return max_abs(chains.sum() - np.eye(grid.dim))


@dataclass(frozen=True)
class Partition:
    """Assignment of every fine history to exactly one coarse block."""

    block_of: Mapping[Hashable, Hashable]

    @classmethod
    def identity(cls, labels: Sequence[Hashable]) -> "Partition":
        return cls(block_of={lab: lab for lab in labels})

    @classmethod
    def merge_all(cls, labels: Sequence[Hashable], block: Hashable = "all") -> "Partition":
        return cls(block_of={lab: block for lab in labels})

    @classmethod
    def from_blocks(cls, blocks: Mapping[Hashable, Sequence[Hashable]]) -> "Partition":
        mapping: dict[Hashable, Hashable] = {}
        for block, members in blocks.items():
            for lab in members:
                if lab in mapping:
                    raise PartitionCoverageError(
                        f"history {lab!r} appears in blocks {mapping[lab]!r} and {block!r}"
                    )
                mapping[lab] = block
        return cls(block_of=mapping)

    @classmethod
    def grouping(
        cls, labels: Sequence[Hashable], key: Callable[[Hashable], Hashable]
    ) -> "Partition":
        """Partition by a key function (e.g. one slot of the index tuple)."""
        return cls(block_of={lab: key(lab) for lab in labels})

    def __getitem__(self, label: Hashable) -> Hashable:
        try:
            return self.block_of[label]
        except KeyError:
            raise PartitionCoverageError(f"history {label!r} is not mapped to any block")


def coarse_grain_indices(
    fine: Sequence[Hashable], part: Partition
) -> list[Hashable]:
    """Coarse block labels in stable order of first appearance."""
    seen: dict[Hashable, None] = {}
    for lab in fine:
        seen.setdefault(part[lab], None)
    return list(seen)


def coarse_grain_chains(chains: ChainSet, part: Partition) -> ChainSet:
    """Sum chain operators over partition blocks.

    The coarse chain of a block is the exact operator sum of its members,
    which is the class operator of the coarsened alternative.
    """
    coarse_labels = coarse_grain_indices(chains.labels, part)
    pos = {lab: i for i, lab in enumerate(coarse_labels)}
    dim = chains.dim
    ops = np.zeros((len(coarse_labels), dim, dim), dtype=np.complex128)
    for lab, op in zip(chains.labels, chains.ops):
        ops[pos[part[lab]]] += op
    ops.setflags(write=False)
    return ChainSet(labels=tuple(coarse_labels), ops=ops)
