"""
Positive operator valued measures: covariant phase observables on binned circles and
smeared positions on cyclic lattices.

Phase effects are integrated in closed form. With labels n, m taken from the phase
matrix spectrum, the effect of the arc [a, b) has entries

    c_nm * (1/2pi) * int_a^b exp(i(n - m)theta) dtheta

so a state sum_n exp(i n theta') |n> is localised at theta'.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy.signal import convolve

from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError
from relframes.core.logging import get_logger
from relframes.services.opcore import (
    Operator,
    State,
    as_operator,
    dim_tol,
    effect_residual,
    expectation,
    norm,
)
from relframes.services.symmetry import NumberRep, number_rep

logger = get_logger(__name__)

StateLike = Union[State, Operator, np.ndarray]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class OutcomeSpace:
    kind: str
    labels: Tuple[Hashable, ...]

    def __post_init__(self):
        if self.kind not in ("circle", "finite"):
            raise InputError(f"unknown outcome space kind {self.kind!r}")
        if len(set(self.labels)) != len(self.labels):
            raise InputError("outcome labels must be distinct")
        if not self.labels:
            raise InputError("outcome space must not be empty")

    @classmethod
    def circle(cls, bins: int) -> "OutcomeSpace":
        if int(bins) < 1:
            raise InputError(f"bin count must be positive, got {bins}")
        return cls("circle", tuple(range(int(bins))))

    @classmethod
    def finite(cls, labels: Iterable[Hashable]) -> "OutcomeSpace":
        return cls("finite", tuple(labels))

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def bin_width(self) -> float:
        if self.kind != "circle":
            raise InputError("bin width is only defined on circle outcome spaces")
        return TWO_PI / self.size

    def edges(self, k: int) -> Tuple[float, float]:
        """Arc [2pi k/B, 2pi (k+1)/B) of circle bin ``k``."""
        h = self.bin_width
        return k * h, (k + 1) * h


@dataclass(frozen=True, eq=False)
class Pom:
    space: OutcomeSpace
    effects: Tuple[Operator, ...]

    def __post_init__(self):
        effects = tuple(self.effects)
        if len(effects) != self.space.size:
            raise InputError(f"{len(effects)} effects for {self.space.size} outcomes")
        dims = {e.dims for e in effects}
        if len(dims) != 1:
            raise DimensionMismatch(f"effects act on different spaces: {sorted(dims)}")
        object.__setattr__(self, "effects", effects)

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.effects[0].dims

    @property
    def dim(self) -> int:
        return self.effects[0].dim

    def __len__(self) -> int:
        return len(self.effects)

    def index(self, label: Hashable) -> int:
        try:
            return self.space.labels.index(label)
        except ValueError:
            raise InputError(f"unknown outcome label {label!r}") from None

    def effect(self, label: Hashable) -> Operator:
        return self.effects[self.index(label)]

    def total(self, labels: Iterable[Hashable]) -> Operator:
        """Effect of a union of outcomes."""
        out = Operator.zeros(self.dims)
        for label in labels:
            out = out + self.effect(label)
        return out

    def probabilities(self, rho: Union[State, Operator]) -> np.ndarray:
        return np.array([expectation(rho, e).real for e in self.effects])

    def is_sharp(self, tol: Optional[float] = None) -> bool:
        return all((e @ e).allclose(e, tol) for e in self.effects)


@dataclass(frozen=True, eq=False)
class PhaseMatrix:
    """Kernel c_nm of a covariant phase observable, indexed by the number labels."""

    c: np.ndarray
    spectrum: Tuple[int, ...] = ()
    check_positive: bool = field(default=True, repr=False)

    def __post_init__(self):
        c = np.array(self.c, dtype=np.complex128, copy=True)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise InputError(f"phase matrix must be square, got shape {c.shape}")
        d = c.shape[0]
        spectrum = tuple(int(n) for n in self.spectrum) or tuple(range(d))
        if len(spectrum) != d:
            raise DimensionMismatch(f"phase matrix of size {d} with {len(spectrum)} labels")
        tol = dim_tol(d)
        if np.max(np.abs(np.diag(c) - 1.0)) > tol:
            raise InputError("phase matrix must have unit diagonal")
        if np.max(np.abs(c - c.conj().T)) > tol:
            raise InputError("phase matrix must be Hermitian")
        if self.check_positive:
            low = np.linalg.eigvalsh(0.5 * (c + c.conj().T))[0]
            if low < -tol:
                raise InputError(f"phase matrix is not positive (min eigenvalue {low:.3g})")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "spectrum", spectrum)

    @classmethod
    def canonical(cls, d: int, spectrum: Optional[Sequence[int]] = None) -> "PhaseMatrix":
        # all-ones is rank one, hence positive
        labels = tuple(spectrum) if spectrum is not None else ()
        return cls(np.ones((d, d)), labels, check_positive=False)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self.spectrum, dtype=np.int64)

    def rep(self) -> NumberRep:
        return number_rep(self.spectrum)

    @property
    def is_canonical(self) -> bool:
        return bool(np.all(self.c == 1.0))


def arc_weights(q: np.ndarray, a: float, b: float) -> np.ndarray:
    """(1/2pi) int_a^b exp(i q theta) dtheta for an array of integer frequencies."""
    q = np.asarray(q, dtype=float)
    out = np.full(q.shape, (b - a) / TWO_PI, dtype=np.complex128)
    nz = q != 0
    qn = q[nz]
    out[nz] = (np.exp(1j * qn * b) - np.exp(1j * qn * a)) / (1j * TWO_PI * qn)
    return out


def build_phase_pom(
    d: int,
    c: Union[PhaseMatrix, np.ndarray, None] = None,
    bins: Optional[int] = None,
    strict: bool = True,
) -> Pom:
    """
    Covariant phase observable on ``bins`` equal arcs.

    ``c`` defaults to the canonical kernel. With ``strict=False`` a raw kernel array is
    used unchecked, which lets invalid kernels reach ``pom_validate``.
    """
    bins = settings.DEFAULT_BINS if bins is None else int(bins)
    if c is None:
        c = PhaseMatrix.canonical(d)
    if isinstance(c, PhaseMatrix):
        kernel, labels = c.c, c.labels
    elif strict:
        pm = PhaseMatrix(c)
        kernel, labels = pm.c, pm.labels
    else:
        kernel = np.asarray(c, dtype=np.complex128)
        labels = np.arange(kernel.shape[0])
    if kernel.shape != (d, d):
        raise DimensionMismatch(f"phase matrix of shape {kernel.shape} for dimension {d}")
    space = OutcomeSpace.circle(bins)
    q = labels[:, None] - labels[None, :]
    effects = tuple(Operator(kernel * arc_weights(q, *space.edges(k)), (d,)) for k in range(bins))
    logger.debug(f"Built phase POM: dim={d}, bins={bins}")
    return Pom(space, effects)


class PomReport(BaseModel):
    positivity: float
    normalization: float
    covariance: Optional[float] = None
    tolerance: float
    passed: bool


def pom_validate(f: Pom, rep: Optional[NumberRep] = None) -> PomReport:
    """Positivity, normalisation and (circle spaces with a rep) bin-shift covariance."""
    positivity = max(effect_residual(e) for e in f.effects)
    total = Operator(sum(e.entries for e in f.effects), f.dims)
    normalization = norm(total - Operator.identity(f.dims))
    covariance = None
    if rep is not None and f.space.kind == "circle":
        if rep.dimension != f.dim:
            raise DimensionMismatch(
                f"representation of dimension {rep.dimension} for a POM on {f.dim}"
            )
        stack = np.stack([e.entries for e in f.effects])
        bins = f.space.size
        covariance = 0.0
        for s in range(bins):
            ph = rep.phases(s * f.space.bin_width)
            shifted = stack * np.outer(ph, ph.conj())
            diff = shifted - np.roll(stack, -s, axis=0)
            covariance = max(covariance, float(np.max(np.linalg.norm(diff, ord=2, axis=(1, 2)))))
    tol = dim_tol(f.dim)
    residuals = [positivity, normalization] + ([covariance] if covariance is not None else [])
    return PomReport(
        positivity=positivity,
        normalization=normalization,
        covariance=covariance,
        tolerance=tol,
        passed=all(r < tol for r in residuals),
    )


def norm1_defect(f: Pom, include_zero: bool = False) -> float:
    """
    max(1 - ||E||) over effects. Zero effects are skipped unless ``include_zero`` is set,
    in which case each contributes a defect of 1.
    """
    defect = 0.0
    for e in f.effects:
        n = norm(e)
        if n < dim_tol(e.dim) and not include_zero:
            continue
        defect = max(defect, 1.0 - n)
    return defect


def localisation_margin(rho: Union[State, Operator], f: Pom, bin_set: Iterable[int]) -> float:
    """d|X|/2pi - tr(rho F(X)); non-negative for covariant phase observables."""
    bin_set = list(bin_set)
    width = len(set(bin_set)) * f.space.bin_width
    return f.dim * width / TWO_PI - expectation(rho, f.total(set(bin_set))).real


def merge_bins(f: Pom, groups: Sequence[Sequence[Hashable]]) -> Pom:
    """Coarse-grain ``f``; ``groups`` must partition its outcomes."""
    seen: List[Hashable] = [label for group in groups for label in group]
    if sorted(map(repr, seen)) != sorted(map(repr, f.space.labels)):
        raise InputError("merge groups must partition the outcome labels")
    space = OutcomeSpace.finite(tuple(tuple(group) for group in groups))
    return Pom(space, tuple(f.total(group) for group in groups))


def smeared_position_pom(lattice_size: int, kernel: Sequence[float]) -> Pom:
    """
    Unsharp position on the cyclic lattice Z_L. The effect of the singleton {z} is
    diagonal with entries e((x - z) mod L).
    """
    L = int(lattice_size)
    e = np.asarray(kernel, dtype=float)
    if e.shape != (L,):
        raise DimensionMismatch(f"kernel of length {e.size} for lattice size {L}")
    if np.any(e < -settings.ATOL) or abs(e.sum() - 1.0) > dim_tol(L):
        raise InputError("smearing kernel must be a probability vector")
    x = np.arange(L)
    effects = tuple(Operator(np.diag(e[(x - z) % L]), (L,)) for z in range(L))
    return Pom(OutcomeSpace.finite(range(L)), effects)


def localised_state(spectrum: Sequence[int], theta: float = 0.0) -> np.ndarray:
    """Uniform superposition sum_n exp(i n theta)|n> / sqrt(d) over the given labels."""
    labels = np.asarray(spectrum, dtype=float)
    return np.exp(1j * labels * theta) / np.sqrt(labels.size)


def _is_consecutive(labels: np.ndarray) -> bool:
    return labels.size < 2 or bool(np.all(np.diff(labels) == 1))


def difference_correlation(
    state: StateLike, c: Optional[PhaseMatrix] = None, spectrum: Optional[Sequence[int]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Harmonics of the phase distribution: r(q) = sum over n_i - n_j = q of rho_ji c_ij.

    The phase density is sum_q r(q) exp(i q theta) / 2pi. Pure states with the canonical
    kernel on a consecutive spectrum use a convolution and never form rho.
    """
    if c is not None:
        labels = c.labels
    elif spectrum is not None:
        labels = np.asarray(spectrum, dtype=np.int64)
    else:
        labels = None
    if isinstance(state, np.ndarray) and state.ndim == 1:
        psi = state.astype(np.complex128)
        labels = np.arange(psi.size) if labels is None else labels
        if psi.size != labels.size:
            raise DimensionMismatch(f"state of size {psi.size} for {labels.size} labels")
        if (c is None or c.is_canonical) and _is_consecutive(labels):
            r = convolve(psi.conj(), psi[::-1])
            return np.arange(-(psi.size - 1), psi.size), r
        rho = np.outer(psi, psi.conj())
    else:
        rho = as_operator(state).entries
        labels = np.arange(rho.shape[0]) if labels is None else labels
        if rho.shape[0] != labels.size:
            raise DimensionMismatch(f"state of dimension {rho.shape[0]} for {labels.size} labels")
    kernel = np.ones(rho.shape) if c is None else c.c
    q = labels[:, None] - labels[None, :]
    weights = (rho.T * kernel).ravel()
    qmin = int(q.min())
    size = int(q.max()) - qmin + 1
    idx = (q - qmin).ravel()
    r = np.bincount(idx, weights.real, size) + 1j * np.bincount(idx, weights.imag, size)
    return np.arange(qmin, qmin + size), r


def interval_probability(
    state: StateLike,
    a: float,
    b: float,
    c: Optional[PhaseMatrix] = None,
    spectrum: Optional[Sequence[int]] = None,
) -> float:
    """Probability of the arc [a, b) (b - a <= 2pi) under the phase observable."""
    if b < a or b - a > TWO_PI + 1e-12:
        raise InputError(f"[{a}, {b}) is not an arc of the circle")
    qs, r = difference_correlation(state, c, spectrum)
    return float(np.real(np.dot(r, arc_weights(qs, a, b))))


def phase_distribution(
    state: StateLike,
    c: Optional[PhaseMatrix] = None,
    bins: Optional[int] = None,
    spectrum: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Bin probabilities of the phase observable without building its effects."""
    bins = settings.DEFAULT_BINS if bins is None else int(bins)
    space = OutcomeSpace.circle(bins)
    qs, r = difference_correlation(state, c, spectrum)
    weights = np.stack([arc_weights(qs, *space.edges(k)) for k in range(bins)])
    return np.real(weights @ r)


def pom_to_json(f: Pom) -> Dict:
    """Report form: outcome space plus effects as nested real/imag arrays."""
    return {
        "space": {"kind": f.space.kind, "labels": [repr(x) for x in f.space.labels]},
        "dims": list(f.dims),
        "effects": [
            {"real": e.entries.real.tolist(), "imag": e.entries.imag.tolist()} for e in f.effects
        ],
    }
