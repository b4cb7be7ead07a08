"""
Number operators, phase-shift representations of the circle group and the twirl.

A ``NumberRep`` stores the integer eigenvalue of every basis vector, so spectral
projectors, phase shifts and the twirl are all diagonal masks over those labels.
Composite representations carry the tensor-sum of the factor labels.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError
from relframes.core.logging import get_logger
from relframes.services.opcore import (
    Operator,
    State,
    as_operator,
    dim_tol,
    expectation,
    norm,
    partial_trace,
)

logger = get_logger(__name__)


def _as_integer(value) -> int:
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real) and float(value).is_integer():
        return int(value)
    raise InputError(f"number operator eigenvalues must be integers, got {value!r}")


@dataclass(frozen=True, eq=False)
class NumberRep:
    eigenvalues: Tuple[int, ...]
    dims: Tuple[int, ...]

    def __post_init__(self):
        eigs = tuple(_as_integer(v) for v in self.eigenvalues)
        if not eigs:
            raise InputError("a number representation needs at least one basis vector")
        dims = tuple(int(d) for d in self.dims) or (len(eigs),)
        if int(np.prod(dims)) != len(eigs):
            raise DimensionMismatch(f"dims {dims} do not match {len(eigs)} eigenvalues")
        object.__setattr__(self, "eigenvalues", eigs)
        object.__setattr__(self, "dims", dims)

    @property
    def dimension(self) -> int:
        return len(self.eigenvalues)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.eigenvalues, dtype=np.int64)

    @property
    def max_gap(self) -> int:
        return int(self.labels.max() - self.labels.min())

    def sectors(self) -> Dict[int, np.ndarray]:
        """Basis indices of every eigenvalue, in increasing eigenvalue order."""
        labels = self.labels
        return {int(n): np.flatnonzero(labels == n) for n in np.unique(labels)}

    def projector(self, n: int) -> Operator:
        return Operator(np.diag((self.labels == n).astype(float)), self.dims)

    def projectors(self) -> Dict[int, Operator]:
        return {n: self.projector(n) for n in self.sectors()}

    def number_operator(self) -> Operator:
        return Operator(np.diag(self.labels.astype(float)), self.dims)

    def phases(self, theta: float) -> np.ndarray:
        return np.exp(1j * self.labels * theta)

    def unitary(self, theta: float) -> Operator:
        """U(theta) = exp(i N theta)."""
        return Operator(np.diag(self.phases(theta)), self.dims)

    def sector_mask(self) -> np.ndarray:
        labels = self.labels
        return labels[:, None] == labels[None, :]

    def differences(self) -> np.ndarray:
        """Matrix of eigenvalue differences n_i - n_j."""
        labels = self.labels
        return labels[:, None] - labels[None, :]

    def __repr__(self) -> str:
        return f"NumberRep(dims={self.dims}, spectrum={sorted(set(self.eigenvalues))})"


def number_rep(eigs: Iterable[int], dims: Optional[Sequence[int]] = None) -> NumberRep:
    eigs = tuple(eigs)
    rep = NumberRep(eigs, tuple(dims) if dims is not None else (len(eigs),))
    logger.debug(f"Built number representation {rep}")
    return rep


def composite_rep(*reps: NumberRep) -> NumberRep:
    """Tensor-sum representation N_T = N_1 (x) 1 + 1 (x) N_2 + ..."""
    labels = reps[0].labels
    dims = reps[0].dims
    for rep in reps[1:]:
        labels = (labels[:, None] + rep.labels[None, :]).ravel()
        dims = dims + rep.dims
    return NumberRep(tuple(int(v) for v in labels), dims)


def factor_labels(rep: NumberRep, dims: Sequence[int], factor: int) -> np.ndarray:
    """Eigenvalues of ``rep`` acting on tensor factor ``factor`` of a space with ``dims``."""
    dims = tuple(dims)
    if rep.dimension != dims[factor]:
        raise DimensionMismatch(
            f"representation of dimension {rep.dimension} does not fit factor {factor} of {dims}"
        )
    shape = [1] * len(dims)
    shape[factor] = dims[factor]
    return np.broadcast_to(rep.labels.reshape(shape), dims).ravel()


def _check_dim(a: Operator, rep: NumberRep) -> None:
    if a.dim != rep.dimension:
        raise DimensionMismatch(
            f"operator of dimension {a.dim} does not match representation {rep.dimension}"
        )


def twirl_op(a: Operator, rep: NumberRep) -> Operator:
    """Sum_n P_n a P_n: the Lüders map of the number observable."""
    _check_dim(a, rep)
    return Operator(np.where(rep.sector_mask(), a.entries, 0.0), a.dims)


def twirl_state(rho: State, rep: NumberRep) -> State:
    """Predual twirl. Trace and positivity are preserved exactly."""
    return State(twirl_op(as_operator(rho), rep), pure=False)


def local_twirl(r: Operator, rep: NumberRep, factor: int) -> Operator:
    """Twirl acting on a single tensor factor, identity elsewhere."""
    labels = factor_labels(rep, r.dims, factor)
    mask = labels[:, None] == labels[None, :]
    return Operator(np.where(mask, r.entries, 0.0), r.dims)


def haar_average(a: Operator, rep: NumberRep, nodes: Optional[int] = None) -> Operator:
    """
    Trapezoid rule for (1/2pi) int U(theta) a U(theta)^* dtheta.

    The rule is exact when the node count exceeds twice the largest eigenvalue gap;
    smaller node counts alias and are rejected.
    """
    _check_dim(a, rep)
    nodes = settings.HAAR_NODES if nodes is None else int(nodes)
    if nodes <= 2 * rep.max_gap:
        raise InputError(
            f"{nodes} quadrature nodes alias eigenvalue gaps up to {rep.max_gap}; "
            f"need more than {2 * rep.max_gap}"
        )
    total = np.zeros_like(a.entries)
    for theta in 2.0 * np.pi * np.arange(nodes) / nodes:
        ph = rep.phases(theta)
        total += np.outer(ph, ph.conj()) * a.entries
    return Operator(total / nodes, a.dims)


class InvarianceReport(BaseModel):
    commutator: float
    phase_shift: float
    haar: float
    twirl: float
    threshold: float
    invariant: bool
    consistent: bool


def invariance_report(
    a: Operator, rep: NumberRep, samples: int = 16, nodes: Optional[int] = None
) -> InvarianceReport:
    """Residuals of the four equivalent invariance conditions."""
    _check_dim(a, rep)
    commutator = max(norm(a.commutator(p)) for p in rep.projectors().values())
    phase_shift = 0.0
    for theta in 2.0 * np.pi * np.arange(samples) / samples:
        u = rep.unitary(theta)
        phase_shift = max(phase_shift, norm(u @ a @ u.adjoint() - a))
    if nodes is None:
        nodes = max(settings.HAAR_NODES, 2 * rep.max_gap + 1)
    haar = norm(haar_average(a, rep, nodes) - a)
    twirl = norm(twirl_op(a, rep) - a)
    threshold = dim_tol(a.dim, settings.INVARIANCE_TOL)
    verdicts = [r < threshold for r in (commutator, phase_shift, haar, twirl)]
    return InvarianceReport(
        commutator=commutator,
        phase_shift=phase_shift,
        haar=haar,
        twirl=twirl,
        threshold=threshold,
        invariant=all(verdicts),
        consistent=all(verdicts) or not any(verdicts),
    )


def is_invariant(a: Operator, rep: NumberRep) -> bool:
    return norm(twirl_op(a, rep) - a) < dim_tol(a.dim, settings.INVARIANCE_TOL)


class StatisticsCheck(BaseModel):
    residual: float
    twirl_gap: float
    observable_invariant: bool
    passed: bool


def statistics_equality_check(rho: State, a: Operator, rep: NumberRep) -> StatisticsCheck:
    """
    Duality of the twirl and its predual, plus the indistinguishability of rho and its
    twirl for invariant observables.
    """
    rho_op = as_operator(rho)
    lhs = expectation(rho_op, twirl_op(a, rep))
    rhs = expectation(twirl_op(rho_op, rep), a)
    residual = abs(lhs - rhs)
    gap = abs(expectation(rho_op, a) - rhs)
    invariant = is_invariant(a, rep)
    tol = dim_tol(a.dim)
    passed = residual < tol and (gap < tol or not invariant)
    return StatisticsCheck(
        residual=residual, twirl_gap=gap, observable_invariant=invariant, passed=passed
    )


def factorization_residual(r: Operator, rep_s: NumberRep, rep_r: NumberRep) -> float:
    """
    Largest entrywise gap between (tau_S x id), (id x tau_R) and (tau_S x tau_R), each
    composed with tau_T.
    """
    total = composite_rep(rep_s, rep_r)
    base = twirl_op(r, total)
    left = local_twirl(base, rep_s, 0)
    right = local_twirl(base, rep_r, 1)
    both = local_twirl(left, rep_r, 1)
    return float(
        max(
            np.max(np.abs(left.entries - right.entries)),
            np.max(np.abs(left.entries - both.entries)),
        )
    )


def reduced_state_invariance(theta: Operator, rep_s: NumberRep, rep_r: NumberRep) -> float:
    """Residual of the reduced states of tau_T(theta) being invariant for each factor."""
    invariant = twirl_op(theta, composite_rep(rep_s, rep_r))
    reduced_s = partial_trace(invariant, [0])
    reduced_r = partial_trace(invariant, [1])
    return max(
        norm(twirl_op(reduced_s, rep_s) - reduced_s),
        norm(twirl_op(reduced_r, rep_r) - reduced_r),
    )


def twirl_distance_minimiser_check(
    phi: np.ndarray, rep: NumberRep, rng: np.random.Generator, samples: int = 200
) -> float:
    """
    Margin by which tau_*(P[phi]) beats random invariant states in Hilbert-Schmidt
    distance to P[phi]. Non-negative when the minimisation property holds.
    """
    from relframes.services.sampling import random_state

    target = Operator.projector(phi, (rep.dimension,))
    best = np.linalg.norm((target - twirl_op(target, rep)).entries)
    margin = np.inf
    for _ in range(samples):
        sigma = twirl_op(random_state(rep.dimension, rng).rho, rep)
        margin = min(margin, np.linalg.norm((target - sigma).entries) - best)
    return float(margin)
