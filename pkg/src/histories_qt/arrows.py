"""Arrows of time as diagnostics, not postulates.

The thermodynamic arrow is read off a coarse-grained entropy curve; the
quantum arrow is a structural classification of a functional's boundary
conditions (a state on one end of the chains and nothing on the other).
Neither is built into the evaluators: both emerge, or fail to emerge, from
the conditions of the model under study.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidStateError, UndefinedProbabilitiesError
from .functionals import (
    EPSILON,
    TOL_D,
    BounceFunctional,
    DecoherenceMatrix,
    FunctionalSpec,
    InitialOnlyFunctional,
    TwoBoundaryFunctional,
    decoherence_verdict,
)
from .operators import (
    TOL_OP,
    DensityMatrix,
    Hamiltonian,
    ProjectorFamily,
    dagger,
    hamiltonian_eigensystem,
)

#: Default thresholds of the thermodynamic-arrow detector.
SLOPE_TOL = 1e-3
FRAC_TOL = 0.2
WINDOW = 5

FORWARD = "forward"
BACKWARD = "backward"
NONE = "none"


@dataclass(frozen=True)
class EntropyCurve:
    """Coarse-grained entropy sampled along a time axis (nats)."""

    times: np.ndarray
    entropy: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.entropy, dtype=float)
        if t.shape != s.shape or t.ndim != 1:
            raise InvalidStateError(
                f"times and entropy must be equal-length vectors, got {t.shape} and {s.shape}"
            )
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "entropy", s)

    def __len__(self) -> int:
        return self.times.size

    def restricted(self, t_min: float, t_max: float) -> "EntropyCurve":
        keep = (self.times >= t_min) & (self.times <= t_max)
        return EntropyCurve(times=self.times[keep], entropy=self.entropy[keep])


@dataclass(frozen=True)
class ArrowReading:
    """A single arrow direction with the evidence that justified it."""

    direction: str
    evidence: dict

    def as_dict(self) -> dict:
        return {"direction": self.direction, "evidence": dict(self.evidence)}


@dataclass(frozen=True)
class ArrowVerdict:
    """Thermodynamic and quantum arrows for one spacetime region."""

    region: str
    thermodynamic: ArrowReading | None
    quantum: ArrowReading | None

    def as_dict(self) -> dict:
        return {
            "region": self.region,
            "thermodynamic": None if self.thermodynamic is None else self.thermodynamic.as_dict(),
            "quantum": None if self.quantum is None else self.quantum.as_dict(),
        }


def coarse_entropy(
    rho: DensityMatrix | np.ndarray, fam: ProjectorFamily, tol: float = TOL_OP
) -> float:
    """Entropy of a state relative to a projector coarse graining.

    With occupations ``q_a = Tr(P_a rho)`` and block dimensions
    ``d_a = rank(P_a)`` this is ``S = -sum_a q_a log(q_a / d_a)``, the
    entropy of the least-biased state with the given occupations.  It
    vanishes when the state fills a single rank-1 block and reaches
    ``log(dim)`` at occupations proportional to the block dimensions
    (in particular for the maximally mixed state).
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if m.shape[0] != fam.dim:
        raise InvalidStateError(
            f"state dim {m.shape[0]} does not match family dim {fam.dim}"
        )
    stack = fam.stacked()
    q = np.einsum("mij,ji->m", stack, m).real
    return _entropy_from_occupations(q, [p.rank() for p in fam.members], tol)


def _entropy_from_occupations(q: np.ndarray, ranks: Sequence[int], tol: float) -> float:
    if q.min() < -tol:
        raise InvalidStateError(f"negative occupation {q.min():.3e} beyond tolerance")
    q = np.clip(q, 0.0, None)
    d = np.asarray(ranks, dtype=float)
    mask = q > 0.0
    return float(-(q[mask] * np.log(q[mask] / d[mask])).sum())


def von_neumann_entropy(rho: DensityMatrix | np.ndarray, tol: float = TOL_OP) -> float:
    """``-Tr(rho log rho)`` in nats."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    w = np.linalg.eigvalsh(m)
    if w.min() < -tol:
        raise InvalidStateError(f"negative eigenvalue {w.min():.3e} beyond tolerance")
    w = np.clip(w, 0.0, None)
    w = w[w > 0.0]
    return float(-(w * np.log(w)).sum())


def entropy_curve(
    rho_0: DensityMatrix,
    H: Hamiltonian,
    fam: ProjectorFamily,
    times: Sequence[float],
    tol: float = TOL_OP,
) -> EntropyCurve:
    """Coarse-grained entropy of the evolved state at each requested time.

    The state at time ``t`` is ``exp(-iHt) rho_0 exp(+iHt)``; negative
    times look at the other side of ``rho_0``'s moment.
    """
    if rho_0.dim != H.dim or fam.dim != H.dim:
        raise InvalidStateError("state, Hamiltonian and family dims must agree")
    w, v = hamiltonian_eigensystem(H)
    rho_eig = dagger(v) @ rho_0.matrix @ v
    fam_eig = dagger(v) @ fam.stacked() @ v
    ranks = [p.rank() for p in fam.members]
    t_arr = np.asarray(list(times), dtype=float)
    entropies = np.empty_like(t_arr)
    for k, t in enumerate(t_arr):
        phases = np.exp(-1j * w * t)
        rho_t = (phases[:, None] * rho_eig) * phases.conj()[None, :]
        q = np.einsum("mij,ji->m", fam_eig, rho_t).real
        entropies[k] = _entropy_from_occupations(q, ranks, tol)
    return EntropyCurve(times=t_arr, entropy=entropies)


def _window_slopes(times: np.ndarray, values: np.ndarray, window: int) -> np.ndarray:
    n = times.size - window + 1
    slopes = np.empty(n)
    for i in range(n):
        t = times[i : i + window]
        s = values[i : i + window]
        tc = t - t.mean()
        denom = (tc**2).sum()
        slopes[i] = (tc * (s - s.mean())).sum() / denom
    return slopes


def thermodynamic_arrow(
    curve: EntropyCurve,
    window: int = WINDOW,
    slope_tol: float = SLOPE_TOL,
    frac_tol: float = FRAC_TOL,
) -> ArrowReading:
    """Classify the direction of entropy increase along a curve.

    Least-squares slopes are taken over every sliding window of ``window``
    samples.  The arrow points forward when the mean windowed slope exceeds
    ``slope_tol`` and at most a fraction ``frac_tol`` of windows decrease;
    backward under the mirrored condition; otherwise there is no arrow.
    The thresholds are echoed in the evidence so the verdict is auditable.
    """
    if window < 2:
        raise ValueError("window must cover at least 2 samples")
    if len(curve) < 2 * window:
        raise ValueError(
            f"curve with {len(curve)} samples is too short for window {window}"
        )
    slopes = _window_slopes(curve.times, curve.entropy, window)
    mean_slope = float(slopes.mean())
    frac_dec = float(np.mean(slopes < 0.0))
    frac_inc = float(np.mean(slopes > 0.0))
    if mean_slope > slope_tol and frac_dec <= frac_tol:
        direction = FORWARD
    elif mean_slope < -slope_tol and frac_inc <= frac_tol:
        direction = BACKWARD
    else:
        direction = NONE
    return ArrowReading(
        direction=direction,
        evidence={
            "mean_window_slope": mean_slope,
            "frac_decreasing_windows": frac_dec,
            "frac_increasing_windows": frac_inc,
            "window": window,
            "slope_tol": slope_tol,
            "frac_tol": frac_tol,
            "n_samples": len(curve),
        },
    )


def quantum_arrow(spec: FunctionalSpec, tol_op: float = TOL_OP) -> dict[str, ArrowReading]:
    """Structural quantum arrow(s) of a functional, keyed by region.

    The classification looks only at the form of the functional, not at any
    matrix element: a sole initial condition (or a final condition of
    indifference) sends the arrow forward; the mirror case sends it
    backward; two nontrivial conditions leave no arrow.  A bounce condition
    has no global arrow but an outward-pointing arrow on each side, since
    ignoring either side reduces the functional to the one-sided form.
    """
    if isinstance(spec, InitialOnlyFunctional):
        return {
            "whole": ArrowReading(
                FORWARD, {"reason": "initial condition with no final condition"}
            )
        }
    if isinstance(spec, TwoBoundaryFunctional):
        initial_trivial = spec.rho_i.is_proportional_to_identity(tol_op)
        final_trivial = spec.rho_f.is_proportional_to_identity(tol_op)
        if initial_trivial and final_trivial:
            return {
                "whole": ArrowReading(
                    NONE, {"reason": "both boundary conditions are indifferent"}
                )
            }
        if final_trivial:
            return {
                "whole": ArrowReading(
                    FORWARD, {"reason": "final condition of indifference"}
                )
            }
        if initial_trivial:
            return {
                "whole": ArrowReading(
                    BACKWARD, {"reason": "initial condition of indifference"}
                )
            }
        return {
            "whole": ArrowReading(
                NONE, {"reason": "nontrivial conditions on both ends"}
            )
        }
    if isinstance(spec, BounceFunctional):
        outward = {"reason": "one-sided reduction leaves a sole condition at the bounce"}
        return {
            "whole": ArrowReading(NONE, {"reason": "globally time neutral"}),
            "side_a": ArrowReading(FORWARD, dict(outward, time="bounce-outward")),
            "side_b": ArrowReading(FORWARD, dict(outward, time="bounce-outward")),
        }
    raise TypeError(f"unknown functional spec {type(spec).__name__}")


def cross_bounce_correlation(
    D: DecoherenceMatrix,
    epsilon: float = EPSILON,
    tol_D: float = TOL_D,
    require_decoherence: bool = True,
) -> float:
    """Largest deviation of bounce pair probabilities from independence.

    Marginals over each side come from block sums of the diagonal; the
    returned value is ``max |p(b, a) - p_B(b) p_A(a)|``.  Zero means events
    on one side carry no information about the other.  By the factorization
    of the pure-state functional this is below 1e-10 whenever ``rho_0`` has
    rank 1; correlation across the bounce needs a mixed ``rho_0``.

    Probabilities of a non-decoherent set are not meaningful, so such input
    is refused unless ``require_decoherence=False`` (useful for checking
    the factorization identity itself, which holds at the matrix level
    regardless of decoherence).
    """
    if D.pair_shape is None:
        raise ValueError("cross-bounce correlation needs a pair-indexed matrix")
    table = decoherence_verdict(D, epsilon=epsilon, tol_D=tol_D)
    if require_decoherence and not table.decoherent:
        raise UndefinedProbabilitiesError(
            "bounce history set does not decohere "
            f"(max normalized interference {table.max_interference:.3e}); "
            "joint probabilities are unusable"
        )
    nb, na = D.pair_shape
    p = table.probabilities.reshape(nb, na)
    p_b = p.sum(axis=1)
    p_a = p.sum(axis=0)
    return float(np.max(np.abs(p - np.outer(p_b, p_a))))
