"""
Measurement schemes <U, phi, Z, f>: the POM they measure, repeatability, and the
Wigner-Araki-Yanase conservation checks. Also the line-grid identity behind unsharp
relative position measurements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy.linalg import expm
from scipy.signal import convolve

from relframes.api.schemas import SchemeFile
from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError, InvariantViolation, SchemeFileError
from relframes.core.logging import get_logger
from relframes.services.bounds import number_spread
from relframes.services.coherence import WidthQuery, overall_width
from relframes.services.opcore import (
    Operator,
    State,
    as_operator,
    dim_tol,
    eigh,
    expectation,
    kron,
    norm,
    unitarity_residual,
)
from relframes.services.pom import OutcomeSpace, PhaseMatrix, Pom, localised_state, pom_validate
from relframes.services.relmap import relativize, restrict
from relframes.services.symmetry import NumberRep, composite_rep, number_rep

logger = get_logger(__name__)

ApparatusState = Union[State, Operator, np.ndarray]


def _density(state: ApparatusState, dim: int) -> Operator:
    if isinstance(state, np.ndarray) and state.ndim == 1:
        state = Operator.projector(state)
    rho = as_operator(state)
    if rho.dim != dim:
        raise DimensionMismatch(f"apparatus state of dimension {rho.dim}, expected {dim}")
    return rho


@dataclass(frozen=True, eq=False)
class MeasurementScheme:
    """
    Coupling ``U`` on system (x) apparatus, apparatus preparation, pointer POM on the
    apparatus and an outcome relabelling f (identity when ``scaling`` is None).
    """

    coupling: Operator
    pointer: Pom
    apparatus_state: ApparatusState
    scaling: Optional[Dict[Hashable, Hashable]] = field(default=None)

    def __post_init__(self):
        u = self.coupling
        if len(u.dims) != 2:
            raise DimensionMismatch(f"coupling must act on system (x) apparatus, got {u.dims}")
        if self.pointer.dims != (u.dims[1],):
            raise DimensionMismatch(
                f"pointer acts on {self.pointer.dims}, apparatus is {u.dims[1]}-dimensional"
            )
        residual = unitarity_residual(u)
        if residual > dim_tol(u.dim):
            raise InputError(f"coupling is not unitary (||U*U - 1|| = {residual:.3g})")
        if not pom_validate(self.pointer).passed:
            raise InputError("pointer is not a valid POM")
        rho = _density(self.apparatus_state, u.dims[1])
        if abs(rho.trace() - 1.0) > dim_tol(rho.dim):
            raise InputError("apparatus state must be normalised")
        if self.scaling is not None:
            missing = [z for z in self.pointer.space.labels if z not in self.scaling]
            if missing:
                raise InputError(f"scaling map has no value for pointer outcomes {missing}")
        object.__setattr__(self, "apparatus_state", rho)

    @property
    def system_dim(self) -> int:
        return self.coupling.dims[0]

    @property
    def apparatus_dim(self) -> int:
        return self.coupling.dims[1]

    def relabel(self, z: Hashable) -> Hashable:
        return z if self.scaling is None else self.scaling[z]

    @property
    def outcomes(self) -> Tuple[Hashable, ...]:
        seen: List[Hashable] = []
        for z in self.pointer.space.labels:
            x = self.relabel(z)
            if x not in seen:
                seen.append(x)
        return tuple(seen)

    def pointer_effect(self, outcome: Hashable) -> Operator:
        """E^Z(f^-1(outcome))."""
        labels = self.pointer.space.labels
        return self.pointer.total(z for z in labels if self.relabel(z) == outcome)

    def heisenberg_effect(self, outcome: Hashable) -> Operator:
        """U^* (1 (x) E^Z(f^-1(X))) U on system (x) apparatus."""
        lifted = kron(Operator.identity((self.system_dim,)), self.pointer_effect(outcome))
        return self.coupling.adjoint() @ lifted @ self.coupling


def measured_pom(s: MeasurementScheme) -> Pom:
    """E(X) = restriction of U^*(1 (x) E^Z(f^-1(X)))U to the system with the apparatus state."""
    effects = tuple(restrict(s.heisenberg_effect(x), s.apparatus_state) for x in s.outcomes)
    pom = Pom(OutcomeSpace.finite(s.outcomes), effects)
    report = pom_validate(pom)
    if not report.passed:
        raise InvariantViolation(
            f"measured POM failed validation (positivity {report.positivity:.3g}, "
            f"normalisation {report.normalization:.3g})"
        )
    logger.debug(f"Measured POM with {len(pom)} outcomes on dimension {pom.dim}")
    return pom


def reproducibility_residual(s: MeasurementScheme, rho: Union[State, Operator]) -> float:
    """max_X |tr[U(rho (x) phi)U^* (1 (x) E^Z(X))] - tr[rho E(X)]| against direct evolution."""
    rho = as_operator(rho)
    joint = kron(rho, s.apparatus_state)
    evolved = s.coupling @ joint @ s.coupling.adjoint()
    e = measured_pom(s)
    residual = 0.0
    for x in s.outcomes:
        lifted = kron(Operator.identity((s.system_dim,)), s.pointer_effect(x))
        pointer = expectation(evolved, lifted).real
        residual = max(residual, abs(pointer - expectation(rho, e.effect(x)).real))
    return residual


def trial_states(dim: int, phases: Sequence[complex] = (1.0,)) -> List[np.ndarray]:
    """Computational basis plus (|i> + w|j>)/sqrt2 for every pair i < j and phase w."""
    eye = np.eye(dim, dtype=np.complex128)
    states = [eye[i] for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            for w in phases:
                states.append((eye[i] + w * eye[j]) / np.sqrt(2.0))
    return states


def repeatability_defect(
    s: MeasurementScheme, e: Optional[Pom] = None, phases: Sequence[complex] = (1.0,)
) -> float:
    """
    max over outcomes X and trial states of
    |tr[U(P[psi] (x) phi)U^* (E(X) (x) E^Z(X))] - <psi|E(X) psi>|.
    """
    e = measured_pom(s) if e is None else e
    if e.dims != (s.system_dim,):
        raise DimensionMismatch(f"POM on {e.dims} for a {s.system_dim}-dimensional system")
    defect = 0.0
    for psi in trial_states(s.system_dim, phases):
        joint = kron(Operator.projector(psi), s.apparatus_state)
        evolved = s.coupling @ joint @ s.coupling.adjoint()
        for x in s.outcomes:
            ex = e.effect(x)
            both = expectation(evolved, kron(ex, s.pointer_effect(x))).real
            single = expectation(Operator.projector(psi), ex).real
            defect = max(defect, abs(both - single))
    return defect


class WayReport(BaseModel):
    conservation: float
    yanase: float
    commutation: float
    repeatability: float
    sharp: bool
    tolerance: float
    hypotheses_hold: bool
    consistent: bool


def _hermitian(op: Operator, name: str) -> Operator:
    if not op.is_hermitian():
        raise InputError(f"{name} must be Hermitian")
    return op


def way_report(
    s: MeasurementScheme, l_s: Operator, l_a: Operator, tol: Optional[float] = None
) -> WayReport:
    """
    Residuals of the conservation, Yanase, sharpness and repeatability hypotheses and of
    the commutation [A_X, L_S] = 0 they imply.
    """
    l_s = _hermitian(l_s, "system charge")
    l_a = _hermitian(l_a, "apparatus charge")
    tol = dim_tol(s.coupling.dim) if tol is None else tol
    total = kron(l_s, Operator.identity((s.apparatus_dim,))) + kron(
        Operator.identity((s.system_dim,)), l_a
    )
    conservation = norm(s.coupling.commutator(total))
    yanase = max(norm(z.commutator(l_a)) for z in s.pointer.effects)
    e = measured_pom(s)
    commutation = max(norm(a.commutator(l_s)) for a in e.effects)
    repeatability = repeatability_defect(s, e)
    sharp = e.is_sharp()
    hypotheses = conservation < tol and yanase < tol and sharp and repeatability < tol
    consistent = commutation < tol or not hypotheses
    if not consistent:
        logger.error("WAY contrapositive failed: every hypothesis holds but [A, L_S] != 0")
    return WayReport(
        conservation=conservation,
        yanase=yanase,
        commutation=commutation,
        repeatability=repeatability,
        sharp=sharp,
        tolerance=tol,
        hypotheses_hold=hypotheses,
        consistent=consistent,
    )


class StrongWayReport(BaseModel):
    hypothesis: float
    residual: Optional[float] = None
    skipped: bool
    tolerance: float


def charge_unitary(l_s: Operator, t: float) -> Operator:
    """exp(i t L_S)."""
    return Operator(expm(1j * t * l_s.entries), l_s.dims)


def conserving_coupling(l_s: Operator, k: Operator) -> Operator:
    """exp(i L_S (x) K): commutes with exp(itL_S) (x) 1 for every t."""
    return Operator(expm(1j * kron(l_s, k).entries), l_s.dims + k.dims)


def strong_way_check(
    s: MeasurementScheme, l_s: Operator, samples: int = 16, tol: Optional[float] = None
) -> StrongWayReport:
    """
    When U commutes with exp(itL_S) (x) 1 for the sampled t, every measured effect is
    invariant under exp(itL_S); returns the largest invariance residual.
    """
    l_s = _hermitian(l_s, "system charge")
    tol = dim_tol(s.coupling.dim) if tol is None else tol
    ts = 2.0 * np.pi * np.arange(1, samples + 1) / samples
    eye_a = Operator.identity((s.apparatus_dim,))
    unitaries = [charge_unitary(l_s, t) for t in ts]
    hypothesis = max(norm(s.coupling.commutator(kron(u, eye_a))) for u in unitaries)
    if hypothesis >= tol:
        logger.warning(
            f"Strong conservation hypothesis fails (residual {hypothesis:.3g}); check skipped"
        )
        return StrongWayReport(hypothesis=hypothesis, skipped=True, tolerance=tol)
    e = measured_pom(s)
    residual = max(norm(u @ a @ u.adjoint() - a) for u in unitaries for a in e.effects)
    return StrongWayReport(hypothesis=hypothesis, residual=residual, skipped=False, tolerance=tol)


class SpreadRow(BaseModel):
    n: int
    spread: float
    distance: float
    conservation: float


def _sqrt_effect(e: Operator) -> Operator:
    w, v = eigh(e)
    return Operator((v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T, e.dims)


def dilation_scheme(
    target: Operator, rep: NumberRep, c: PhaseMatrix, phi: np.ndarray
) -> MeasurementScheme:
    """
    Scheme whose apparatus is the reference plus a pointer qubit. The coupling
    sqrt(E) (x) 1 + sqrt(1 - E) (x) (|1><0| - |0><1|) with E = rel(target) conserves the
    total number, and pointer outcome 0 has the measured effect restrict_phi(E).
    """
    e = relativize(target, rep, c)
    a = _sqrt_effect(e)
    b = _sqrt_effect(Operator.identity(e.dims) - e)
    flip = np.array([[0.0, -1.0], [1.0, 0.0]])
    u = np.kron(a.entries, np.eye(2)) + np.kron(b.entries, flip)
    d_a = 2 * c.dim
    pointer = Pom(
        OutcomeSpace.finite((0, 1)),
        tuple(Operator.of(np.kron(np.eye(c.dim), np.diag(np.eye(2)[k]))) for k in range(2)),
    )
    return MeasurementScheme(
        Operator(u, (target.dim, d_a)), pointer, np.kron(phi, np.eye(2)[0])
    )


def way_spread_sweep(target: Operator, ns: Iterable[int]) -> List[SpreadRow]:
    """
    D(target, measured effect) for the conserving relative measurement whose apparatus
    starts in the localised state on n + 1 levels, against the apparatus number spread.
    """
    rep = number_rep(range(target.dim))
    rows = []
    for n in ns:
        c = PhaseMatrix.canonical(n + 1)
        phi = localised_state(c.spectrum)
        scheme = dilation_scheme(target, rep, c, phi)
        # the pointer qubit carries no charge
        apparatus = number_rep([r for r in c.spectrum for _ in range(2)])
        total = composite_rep(rep, apparatus).number_operator()
        measured = measured_pom(scheme).effect(0)
        rows.append(
            SpreadRow(
                n=int(n),
                spread=number_spread(phi, c.spectrum),
                distance=norm(target - measured),
                conservation=norm(scheme.coupling.commutator(total)),
            )
        )
    return rows


# --- unsharp relative position on a line grid ---


class SmearReport(BaseModel):
    grid: int
    effect_residual: float
    variance_kernel: float
    variance_reference: float
    variance_smeared: float
    variance_residual: float
    widths: Dict[str, List[float]]
    width_ok: bool
    restricted: List[float]
    passed: bool


def _probability(v: Sequence[float], name: str) -> np.ndarray:
    p = np.asarray(v, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < -settings.ATOL) or abs(p.sum() - 1.0) > 1e-8:
        raise InputError(f"{name} must be a probability vector")
    return np.clip(p, 0.0, None)


def _variance(p: np.ndarray) -> float:
    x = np.arange(p.size, dtype=float)
    mean = float(p @ x)
    return float(p @ (x - mean) ** 2)


def _embed(v: np.ndarray, half: int) -> np.ndarray:
    """Centre ``v`` (origin at index len//2) on the grid -half..half."""
    out = np.zeros(2 * half + 1)
    start = half - v.size // 2
    out[start : start + v.size] = v
    return out


def smeared_restriction_check(
    kernel: Sequence[float],
    phi: Sequence[complex],
    region: Iterable[int],
    grid: Optional[int] = None,
    epsilons: Optional[Sequence[float]] = None,
) -> SmearReport:
    """
    Restrict the unsharp relative-position effect (chi_X * e)(Q_S - Q_A) with the apparatus
    in phi and compare with chi_X * e * |phi|^2 on every grid point. Both ``kernel`` and
    ``phi`` are centred at index len//2.
    """
    e = _probability(kernel, "smearing kernel")
    psi = np.asarray(phi, dtype=np.complex128)
    if abs(np.vdot(psi, psi).real - 1.0) > dim_tol(psi.size):
        raise InputError("reference wavefunction must be normalised")
    p = np.abs(psi) ** 2
    support = e.size + p.size - 1
    size = 4 * support + 1 if grid is None else int(grid)
    if size % 2 == 0:
        size += 1
    if 2 * support >= size:
        raise InputError(f"combined support {support} does not fit inside half of grid {size}")
    half = size // 2
    x = np.arange(-half, half + 1)
    region = sorted(set(int(z) for z in region))
    if any(abs(z) > half for z in region):
        raise InputError(f"region {region} leaves the grid -{half}..{half}")

    e_grid = _embed(e, half)
    p_grid = _embed(p, half)
    chi = np.isin(x, region).astype(float)

    # bipartite diagonal effect sum_{z in X} e(s - a - z), restricted with the diagonal of P[phi]
    diff = x[:, None] - x[None, :]
    bipartite = np.zeros((size, size))
    for z in region:
        d = diff - z
        inside = np.abs(d) <= half
        bipartite[inside] += e_grid[d[inside] + half]
    restricted = bipartite @ p_grid

    full = convolve(convolve(chi, e_grid), p_grid)
    formula = full[2 * half : 4 * half + 1]
    effect_residual = float(np.max(np.abs(restricted - formula)))

    smeared = convolve(e, p)
    var_e, var_p, var_s = _variance(e), _variance(p), _variance(smeared)
    variance_residual = abs(var_s - (var_e + var_p))

    epsilons = settings.EPSILON_GRID if epsilons is None else epsilons
    widths: Dict[str, List[float]] = {"kernel": [], "reference": [], "smeared": []}
    width_ok = True
    for eps in epsilons:
        we = overall_width(WidthQuery(e, eps, periodic=False))
        wp = overall_width(WidthQuery(p, eps, periodic=False))
        ws = overall_width(WidthQuery(smeared / smeared.sum(), eps, periodic=False))
        widths["kernel"].append(we)
        widths["reference"].append(wp)
        widths["smeared"].append(ws)
        width_ok = width_ok and ws >= max(we, wp)

    tol = dim_tol(size)
    return SmearReport(
        grid=size,
        effect_residual=effect_residual,
        variance_kernel=var_e,
        variance_reference=var_p,
        variance_smeared=var_s,
        variance_residual=variance_residual,
        widths=widths,
        width_ok=width_ok,
        restricted=restricted.tolist(),
        passed=effect_residual < tol and variance_residual < tol and width_ok,
    )


# --- scheme files ---


def _line_of(text: str, loc: Sequence[Union[int, str]]) -> Optional[int]:
    """Line of the deepest key in ``loc`` that can be found in document order."""
    pos, found = 0, None
    for key in loc:
        if isinstance(key, str):
            hit = text.find(f'"{key}"', pos)
            if hit < 0:
                break
            pos = found = hit
    return None if found is None else text.count("\n", 0, found) + 1


def _scheme_from_file(doc: SchemeFile) -> Tuple[MeasurementScheme, Dict[str, Operator]]:
    dims = (doc.system_dim, doc.apparatus_dim)
    coupling = Operator.of(doc.coupling.to_array(), dims)
    labels = tuple(doc.pointer.labels)
    effects = tuple(Operator.of(m.to_array()) for m in doc.pointer.effects)
    pointer = Pom(OutcomeSpace.finite(labels), effects)
    state = doc.apparatus_state.to_array()
    if state.ndim == 2:
        state = Operator.of(state)
    scaling = None
    if doc.scaling is not None:
        scaling = {z: doc.scaling.get(str(z)) for z in labels}
        scaling = {z: x for z, x in scaling.items() if x is not None}
    charges = {}
    if doc.system_charge is not None:
        charges["system"] = Operator.of(doc.system_charge.to_array())
    if doc.apparatus_charge is not None:
        charges["apparatus"] = Operator.of(doc.apparatus_charge.to_array())
    return MeasurementScheme(coupling, pointer, state, scaling), charges


def load_scheme(path: Union[str, Path]) -> Tuple[MeasurementScheme, Dict[str, Operator]]:
    """
    Read a JSON scheme file. Returns the scheme and any charges it declares
    (``system`` / ``apparatus``). Every failure is a SchemeFileError with a line number.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemeFileError(f"cannot read scheme file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemeFileError(exc.msg, exc.lineno) from exc
    try:
        doc = SchemeFile.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(k) for k in first["loc"])
        raise SchemeFileError(f"{where}: {first['msg']}", _line_of(text, first["loc"])) from exc
    try:
        scheme, charges = _scheme_from_file(doc)
    except InputError as exc:
        message = str(exc)
        key = next(
            (k for k in ("pointer", "apparatus", "scaling") if k in message.lower()), "coupling"
        )
        key = "apparatus_state" if key == "apparatus" else key
        raise SchemeFileError(message, _line_of(text, (key,))) from exc
    logger.info(f"Loaded measurement scheme from {path}: dims {scheme.coupling.dims}")
    return scheme, charges
