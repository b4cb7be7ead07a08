"""
Verifiers for the localisation / approximation trade-off inequalities.

Each check returns a ``BoundReport`` with ``residual = rhs - lhs``; the inequalities are
theorems, so a failing report is a defect in the code, not in the input.
"""

from __future__ import annotations

import hashlib
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from relframes.core.config import settings
from relframes.core.errors import InputError
from relframes.core.logging import get_logger
from relframes.services.coherence import phase_width
from relframes.services.opcore import Operator, State, as_operator, dim_tol, expectation, norm
from relframes.services.pom import OutcomeSpace, PhaseMatrix, localised_state
from relframes.services.relmap import relativize, restrict, restrict_after_relativize
from relframes.services.sampling import (
    PRNG_ALGORITHM,
    random_distribution,
    random_effect,
    random_phase_matrix,
    random_state,
    trial_rng,
)
from relframes.services.symmetry import NumberRep, composite_rep, number_rep, twirl_op

logger = get_logger(__name__)

ReferenceState = Union[State, Operator, np.ndarray]

# Fixed effect 1/2 (|0><0| + |1><1| + |0><1| + |1><0|) of the bad-localisation bounds
OWB_EFFECT = Operator.of(0.5 * np.ones((2, 2)))
QUBIT_REP = number_rep((0, 1))


class BoundReport(BaseModel):
    name: str
    lhs: float
    rhs: float
    residual: float
    digest: str
    passed: bool
    detail: Dict[str, float] = Field(default_factory=dict)


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for x in arrays:
        if isinstance(x, (State, Operator)):
            x = as_operator(x).entries
        h.update(np.ascontiguousarray(np.asarray(x, dtype=np.complex128)).tobytes())
    return h.hexdigest()[:16]


def _report(name: str, lhs: float, rhs: float, digest: str, **detail) -> BoundReport:
    residual = rhs - lhs
    return BoundReport(
        name=name,
        lhs=lhs,
        rhs=rhs,
        residual=residual,
        digest=digest,
        passed=bool(residual >= -settings.ATOL),
        detail=detail,
    )


def _require_hermitian(*ops: Operator) -> None:
    for op in ops:
        if not op.is_hermitian():
            raise InputError("trade-off metrics are defined for Hermitian operators only")


def metrics(a: Operator, b: Operator) -> Tuple[float, float]:
    """(D(a, b), V(a)) with D the operator-norm distance and V(a) = ||a - a^2||."""
    _require_hermitian(a, b)
    return norm(a - b), norm(a - a @ a)


def number_spread(omega: ReferenceState, spectrum: Sequence[int]) -> float:
    """Delta_omega N = sqrt(<N^2> - <N>^2), tiny negative variances clamped to 0."""
    n = number_rep(spectrum).number_operator()
    rho = _as_density(omega)
    first = expectation(rho, n).real
    second = expectation(rho, n @ n).real
    return float(np.sqrt(max(second - first**2, 0.0)))


def _as_density(omega: ReferenceState) -> Operator:
    if isinstance(omega, np.ndarray) and omega.ndim == 1:
        return Operator.projector(omega)
    return as_operator(omega)


def prop1_check(
    a: Operator,
    omega: ReferenceState,
    c: PhaseMatrix,
    epsilon: float,
    repS: Optional[NumberRep] = None,
    bins: Optional[int] = None,
) -> BoundReport:
    """D(a, restrict(rel(a))) <= ||[N_S, a]|| (W0_eps (1 - eps) / 2 + pi eps)."""
    repS = repS or number_rep(range(a.dim))
    approx = restrict_after_relativize(a, omega, repS, c)
    lhs = norm(a - approx)
    w0 = phase_width(omega, epsilon, c, bins, centered=True)
    comm = norm(a.commutator(repS.number_operator()))
    rhs = comm * (0.5 * w0 * (1.0 - epsilon) + np.pi * epsilon)
    return _report("prop1", lhs, rhs, _digest(a, _as_density(omega), c.c), width=w0, eps=epsilon)


def prop2_owb_check(
    omega: ReferenceState,
    c: PhaseMatrix,
    epsilons: Optional[Sequence[float]] = None,
    bins: Optional[int] = None,
) -> Tuple[BoundReport, BoundReport]:
    """
    Lower bounds on D(A, restrict(rel(A))) for the fixed effect A.

    (i) D >= (eps/2)(1 - cos(W0_eps / 2)) for every eps on the grid. The binned W0
    over-estimates the width, so it is lowered by two bin widths before use; the
    report records that allowance as ``binning_slack``.
    (ii) D > 1/32 when Delta N_R < 1/6, else D >= (1/32)(1 - cos(pi / (12 Delta N_R))).
    """
    epsilons = settings.EPSILON_GRID if epsilons is None else epsilons
    bins = settings.DEFAULT_BINS if bins is None else int(bins)
    h = OutcomeSpace.circle(bins).bin_width
    d = norm(OWB_EFFECT - restrict_after_relativize(OWB_EFFECT, omega, QUBIT_REP, c))
    digest = _digest(_as_density(omega), c.c)

    worst = None
    for eps in epsilons:
        w0 = phase_width(omega, eps, c, bins, centered=True)
        lower = 0.5 * eps * (1.0 - np.cos(max(w0 - 2.0 * h, 0.0) / 2.0))
        report = _report("owb-width", lower, d, digest, width=w0, eps=eps, binning_slack=2.0 * h)
        if worst is None or report.residual < worst.residual:
            worst = report

    spread = number_spread(omega, c.spectrum)
    if spread < 1.0 / 6.0:
        # strict inequality
        second = _report("owb-spread", 1.0 / 32.0 + settings.ATOL, d, digest, spread=spread)
    else:
        lower = (1.0 - np.cos(np.pi / (12.0 * spread))) / 32.0
        second = _report("owb-spread", lower, d, digest, spread=spread)
    return worst, second


def tradeoff_check(
    a: Operator,
    e: Operator,
    omega: ReferenceState,
    repS: NumberRep,
    repR: NumberRep,
) -> BoundReport:
    """||[a, N_S]|| <= 2 D ||N_S|| + 2 Delta N_R (2 D + V(a))^(1/2) with D = D(restrict(e), a)."""
    total = composite_rep(repS, repR)
    if norm(twirl_op(e, total) - e) > dim_tol(e.dim, settings.INVARIANCE_TOL):
        raise InputError("trade-off check needs an invariant bipartite effect")
    restricted = restrict(e, omega)
    d, v = metrics(a, restricted)
    n_s = repS.number_operator()
    lhs = norm(a.commutator(n_s))
    spread = number_spread(omega, repR.eigenvalues)
    rhs = 2.0 * d * norm(n_s) + 2.0 * spread * np.sqrt(2.0 * d + v)
    return _report(
        "tradeoff", lhs, rhs, _digest(a, e, _as_density(omega)), distance=d, spread=spread
    )


class SweepReport(BaseModel):
    which: str
    seed: int
    trials: int
    prng: str = PRNG_ALGORITHM
    checks: int
    min_residual: float
    failures: List[int]
    passed: bool


def _random_reference(rng: np.random.Generator) -> Tuple[ReferenceState, PhaseMatrix]:
    d_ref = int(rng.integers(2, 17))
    if rng.uniform() < 0.3:
        c = PhaseMatrix(random_phase_matrix(d_ref, rng))
    else:
        c = PhaseMatrix.canonical(d_ref)
    kind = rng.integers(3)
    if kind == 0:
        omega = localised_state(c.spectrum, rng.uniform(-0.5, 0.5))
    elif kind == 1:
        omega = random_state(d_ref, rng, rank=int(rng.integers(1, d_ref + 1))).rho
    else:
        omega = Operator.of(np.diag(random_distribution(d_ref, rng)))
    return omega, c


def _prop1_trial(rng: np.random.Generator) -> List[BoundReport]:
    d_sys = int(rng.integers(2, 5))
    a = random_effect(d_sys, rng)
    omega, c = _random_reference(rng)
    return [prop1_check(a, omega, c, eps) for eps in settings.EPSILON_GRID]


def _owb_trial(rng: np.random.Generator) -> List[BoundReport]:
    omega, c = _random_reference(rng)
    return list(prop2_owb_check(omega, c))


def _tradeoff_trial(rng: np.random.Generator) -> List[BoundReport]:
    d_sys = int(rng.integers(2, 4))
    d_ref = int(rng.integers(2, 9))
    repS = number_rep(range(d_sys))
    repR = number_rep(range(d_ref))
    a = random_effect(d_sys, rng)
    omega = random_state(d_ref, rng, rank=int(rng.integers(1, d_ref + 1))).rho
    if rng.uniform() < 0.3:
        e = relativize(a, repS, PhaseMatrix.canonical(d_ref))
    else:
        e = twirl_op(random_effect(d_sys * d_ref, rng, (d_sys, d_ref)), composite_rep(repS, repR))
    return [tradeoff_check(a, e, omega, repS, repR)]


SWEEPS = {
    "prop1": _prop1_trial,
    "owb": _owb_trial,
    "tradeoff": _tradeoff_trial,
}


def run_sweep(which: str, trials: int, seed: int) -> SweepReport:
    """Seeded randomized sweep; trial t draws from its own Philox stream."""
    if which not in SWEEPS:
        raise InputError(f"unknown sweep {which!r}; expected one of {sorted(SWEEPS)}")
    if trials < 1:
        raise InputError(f"trials must be positive, got {trials}")
    reports: List[Tuple[int, BoundReport]] = []
    for t in range(trials):
        reports.extend((t, r) for r in SWEEPS[which](trial_rng(seed, t)))
    failures = sorted({t for t, r in reports if not r.passed})
    min_residual = min(r.residual for _, r in reports)
    logger.info(
        f"Sweep {which}: {trials} trials, {len(reports)} checks, min residual {min_residual:.3g}"
    )
    if failures:
        logger.warning(f"Sweep {which} failed on trials {failures[:10]}")
    return SweepReport(
        which=which,
        seed=seed,
        trials=trials,
        checks=len(reports),
        min_residual=min_residual,
        failures=failures,
        passed=not failures,
    )
