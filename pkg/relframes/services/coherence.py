"""
Absolute and mutual coherence, and the overall width of phase distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError
from relframes.core.logging import get_logger
from relframes.services.opcore import Operator, State, as_operator, eigh, expectation, kron, norm
from relframes.services.pom import (
    PhaseMatrix,
    difference_correlation,
    localised_state,
    phase_distribution,
)
from relframes.services.symmetry import (
    NumberRep,
    composite_rep,
    local_twirl,
    number_rep,
    twirl_op,
)

logger = get_logger(__name__)

TWO_PI = 2.0 * np.pi


def absolute_coherence(rho: Union[State, Operator], rep: NumberRep) -> float:
    """C(rho) = 1/2 ||rho - tau(rho)||_1."""
    rho = as_operator(rho)
    return 0.5 * norm(rho - twirl_op(rho, rep), "trace")


def coherence_witness(rho: Union[State, Operator], rep: NumberRep) -> Tuple[Operator, float]:
    """Effect attaining sup_E |tr(rho E) - tr(rho tau(E))| and the attained value."""
    rho = as_operator(rho)
    delta = rho - twirl_op(rho, rep)
    evals, vecs = eigh(delta)
    v = vecs[:, evals > 0]
    witness = Operator(v @ v.conj().T, rho.dims)
    return witness, expectation(delta, witness).real


def _twirled_difference(theta: Operator, repS: NumberRep, repR: NumberRep) -> Operator:
    if theta.dims != repS.dims + repR.dims:
        raise DimensionMismatch(
            f"bipartite state with dims {theta.dims} does not match {repS.dims + repR.dims}"
        )
    total = composite_rep(repS, repR)
    return twirl_op(local_twirl(theta, repS, 0) - theta, total)


def mutual_coherence(theta: Union[State, Operator], repS: NumberRep, repR: NumberRep) -> float:
    """
    M(theta) = 1/2 || tau_T((tau_S (x) id)(theta) - theta) ||_1.

    For an invariant effect E the statistical gap tr(Delta E) equals tr(tau_T(Delta) E),
    and the supremum over invariant effects of a traceless invariant Hermitian X is
    half its trace norm, attained at the positive-part projector of X.
    """
    x = _twirled_difference(as_operator(theta), repS, repR)
    return 0.5 * norm(x, "trace")


def mutual_coherence_witness(
    theta: Union[State, Operator], repS: NumberRep, repR: NumberRep
) -> Tuple[Operator, float]:
    """
    Invariant effect attaining the mutual coherence, assembled from the positive
    spectral part of every total-number sector.
    """
    theta = as_operator(theta)
    x = _twirled_difference(theta, repS, repR)
    total = composite_rep(repS, repR)
    witness = np.zeros_like(x.entries)
    for idx in total.sectors().values():
        block = x.entries[np.ix_(idx, idx)]
        evals, vecs = np.linalg.eigh(0.5 * (block + block.conj().T))
        v = vecs[:, evals > 0]
        witness[np.ix_(idx, idx)] = v @ v.conj().T
    witness = Operator(witness, theta.dims)
    delta = local_twirl(theta, repS, 0) - theta
    return witness, expectation(delta, witness).real


@dataclass(frozen=True)
class WidthQuery:
    distribution: np.ndarray = field(repr=False)
    epsilon: float
    centered: bool = False
    periodic: bool = True
    spacing: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.distribution, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("width query needs a non-empty probability vector")
        if np.any(p < -settings.ATOL) or abs(p.sum() - 1.0) > 1e-8:
            raise InputError(f"distribution must be a probability vector (sum {p.sum():.6g})")
        if not 0.0 <= self.epsilon < 1.0:
            raise InputError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.centered and (not self.periodic or p.size % 2):
            raise InputError("centred widths need a circle with an even bin count")
        object.__setattr__(self, "distribution", p)

    @property
    def bin_width(self) -> float:
        if self.spacing is not None:
            return self.spacing
        return TWO_PI / self.distribution.size if self.periodic else 1.0


def minimal_interval(q: WidthQuery) -> Tuple[int, int]:
    """
    (start, length) of the shortest bin interval carrying mass >= 1 - epsilon, ties to
    the leftmost start. Centred queries return start = -length/2.
    """
    p = q.distribution
    B = p.size
    target = 1.0 - q.epsilon - 1e-12
    if q.centered:
        for k in range(1, B // 2 + 1):
            if p[:k].sum() + p[B - k :].sum() >= target:
                return -k, 2 * k
        return -(B // 2), B
    if q.periodic:
        cum = np.concatenate([[0.0], np.cumsum(np.concatenate([p, p]))])
        starts = np.arange(B)
        for length in range(1, B + 1):
            mass = cum[starts + length] - cum[starts]
            hits = np.flatnonzero(mass >= target)
            if hits.size:
                return int(hits[0]), length
        return 0, B
    cum = np.concatenate([[0.0], np.cumsum(p)])
    for length in range(1, B + 1):
        starts = np.arange(B - length + 1)
        hits = np.flatnonzero(cum[starts + length] - cum[starts] >= target)
        if hits.size:
            return int(hits[0]), length
    return 0, B


def overall_width(q: WidthQuery) -> float:
    """Width of the minimal interval with mass >= 1 - epsilon (W, or W0 when centred)."""
    _, length = minimal_interval(q)
    if not q.periodic and q.spacing is None:
        return float(length)
    return length * q.bin_width


def phase_width(
    state,
    epsilon: float,
    c: Optional[PhaseMatrix] = None,
    bins: Optional[int] = None,
    centered: bool = False,
) -> float:
    p = np.clip(phase_distribution(state, c, bins), 0.0, None)
    return overall_width(WidthQuery(p / p.sum(), epsilon, centered=centered))


class CoherenceBoundReport(BaseModel):
    coherence: float
    width: float
    epsilon: float
    bound: float
    residual: float
    passed: bool


def coherence_width_bound_check(
    rho: Union[State, Operator],
    c: PhaseMatrix,
    epsilon: float,
    bins: Optional[int] = None,
) -> CoherenceBoundReport:
    """C(rho) >= 1 - 2 eps - (3 W_eps / 2pi)(1 - 2 eps), with W from the binned phase law."""
    rep = c.rep()
    width = phase_width(rho, epsilon, c, bins)
    coherence = absolute_coherence(rho, rep)
    bound = 1.0 - 2.0 * epsilon - (3.0 * width / TWO_PI) * (1.0 - 2.0 * epsilon)
    residual = coherence - bound
    return CoherenceBoundReport(
        coherence=coherence,
        width=width,
        epsilon=epsilon,
        bound=bound,
        residual=residual,
        passed=bool(residual >= -settings.ATOL),
    )


class LocalisationCoherenceReport(BaseModel):
    mutual: float
    absolute: float
    centred_width: float
    bound: float
    residual: float
    passed: bool


def mutual_coherence_localisation_check(
    rho_s: Union[State, Operator],
    repS: NumberRep,
    n: int,
    epsilon: float,
    bins: Optional[int] = None,
) -> LocalisationCoherenceReport:
    """
    M(rho_S, P[phi_n]) >= C(rho_S) - 2||N_S|| (W0_eps / 2 (1 - eps) + pi eps) for the
    reference localised at 0 with n + 1 levels.
    """
    c = PhaseMatrix.canonical(n + 1)
    phi = localised_state(c.spectrum)
    rho_s = as_operator(rho_s)
    joint = kron(rho_s, Operator.projector(phi))
    mutual = mutual_coherence(joint, repS, number_rep(c.spectrum))
    absolute = absolute_coherence(rho_s, repS)
    w0 = phase_width(phi, epsilon, c, bins, centered=True)
    n_norm = norm(repS.number_operator())
    bound = absolute - 2.0 * n_norm * (0.5 * w0 * (1.0 - epsilon) + np.pi * epsilon)
    return LocalisationCoherenceReport(
        mutual=mutual,
        absolute=absolute,
        centred_width=w0,
        bound=bound,
        residual=mutual - bound,
        passed=bool(mutual - bound >= -settings.ATOL),
    )


class AngleMoments(BaseModel):
    mean: float
    variance: float


def angle_moments(
    state, spectrum: Optional[Sequence[int]] = None, centre: float = 0.0
) -> AngleMoments:
    """
    Exact mean and variance of the canonical phase angle on [centre - pi, centre + pi).

    Uses the closed-form harmonics of theta and theta^2 on [-pi, pi):
    (1/2pi) int theta e^{iq theta} = -i(-1)^q / q and
    (1/2pi) int theta^2 e^{iq theta} = 2(-1)^q / q^2 (pi^2/3 at q = 0).
    """
    qs, r = difference_correlation(state, None, spectrum)
    r = r * np.exp(1j * qs * centre)
    first = np.zeros(qs.shape, dtype=np.complex128)
    second = np.full(qs.shape, np.pi**2 / 3.0, dtype=np.complex128)
    nz = qs != 0
    sign = np.where(qs[nz] % 2 == 0, 1.0, -1.0)
    first[nz] = -1j * sign / qs[nz]
    second[nz] = 2.0 * sign / qs[nz] ** 2
    mean = float(np.real(np.dot(r, first)))
    raw_second = float(np.real(np.dot(r, second)))
    return AngleMoments(mean=centre + mean, variance=max(raw_second - mean**2, 0.0))
