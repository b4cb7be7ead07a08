"""
Relativisation of system operators against a reference frame, and restriction back
to the system for a fixed reference state.

For circle-group frames the map is evaluated exactly from eigenvalue-difference
harmonics: a system operator splits into blocks A_q = sum_{n-m=q} P_n A P_m, the phase
kernel contributes Fhat(q) = sum_k c_{k,k+q} |k><k+q|, and

    rel(A) = sum_q A_q (x) Fhat(q),     restrict_w(rel(A)) = sum_q A_q tr(w Fhat(q)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError
from relframes.core.logging import get_logger
from relframes.services.opcore import (
    Operator,
    as_operator,
    basis_vector,
    dim_tol,
    eigh,
    kron,
    norm,
)
from relframes.services.pom import PhaseMatrix, Pom, build_phase_pom, localised_state
from relframes.services.symmetry import NumberRep, composite_rep

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class FourierBlocks:
    blocks: Dict[int, Operator]

    def total(self) -> Operator:
        return Operator(sum(b.entries for b in self.blocks.values()), self.dims)

    @property
    def dims(self) -> Tuple[int, ...]:
        return next(iter(self.blocks.values())).dims

    def nonzero(self, tol: Optional[float] = None) -> Dict[int, Operator]:
        return {
            q: b
            for q, b in self.blocks.items()
            if np.max(np.abs(b.entries)) > dim_tol(b.dim, tol)
        }


def fourier_components(a: Operator, rep: NumberRep) -> FourierBlocks:
    """Blocks A_q over every eigenvalue difference q of ``rep``."""
    if a.dim != rep.dimension:
        raise DimensionMismatch(
            f"operator of dimension {a.dim} does not match representation {rep.dimension}"
        )
    diff = rep.differences()
    blocks = {
        int(q): Operator(np.where(diff == q, a.entries, 0.0), a.dims) for q in np.unique(diff)
    }
    return FourierBlocks(blocks)


def _reference_differences(c: PhaseMatrix) -> np.ndarray:
    """Entry (k, l) is n_l - n_k."""
    labels = c.labels
    return labels[None, :] - labels[:, None]


def pom_fourier(c: PhaseMatrix) -> Dict[int, Operator]:
    """Fhat(q) = int exp(i q theta) F(dtheta), keyed by reference eigenvalue differences."""
    # Fhat(q) keeps entry (k, l) when n_l - n_k = q
    diff = _reference_differences(c)
    return {
        int(q): Operator(np.where(diff == q, c.c, 0.0), (c.dim,)) for q in np.unique(diff)
    }


def _check_kernel(repS: NumberRep, a: Operator) -> None:
    if a.dim != repS.dimension:
        raise DimensionMismatch(
            f"operator of dimension {a.dim} does not match system representation "
            f"{repS.dimension}"
        )


def leakage(a: Operator, repS: NumberRep, c: PhaseMatrix) -> float:
    """Norm of the blocks of ``a`` whose frequency the reference window cannot carry."""
    _check_kernel(repS, a)
    available = set(np.unique(_reference_differences(c)).tolist())
    missing = [b for q, b in fourier_components(a, repS).blocks.items() if q not in available]
    if not missing:
        return 0.0
    value = norm(Operator(sum(b.entries for b in missing), a.dims))
    if value > dim_tol(a.dim):
        logger.warning(f"Relativisation leaks {value:.3g} outside the reference window")
    return value


def relativize(a: Operator, repS: NumberRep, c: PhaseMatrix) -> Operator:
    """sum_q A_q (x) Fhat(q) on system (x) reference."""
    _check_kernel(repS, a)
    diff = _reference_differences(c)
    out = np.zeros((a.dim * c.dim, a.dim * c.dim), dtype=np.complex128)
    for q, block in fourier_components(a, repS).blocks.items():
        mask = diff == q
        if mask.any():
            out += np.kron(block.entries, np.where(mask, c.c, 0.0))
    return Operator(out, a.dims + (c.dim,))


def relativize_pom(e: Pom, repS: NumberRep, c: PhaseMatrix) -> Pom:
    return Pom(e.space, tuple(relativize(effect, repS, c) for effect in e.effects))


def characteristic_function(omega, c: PhaseMatrix) -> Dict[int, complex]:
    """mu(q) = tr(omega Fhat(q)): Fourier coefficients of the reference phase distribution."""
    rho = _reference_operator(omega, c.dim)
    diff = _reference_differences(c)
    # entry (k, l) contributes rho_lk c_kl to mu(n_l - n_k)
    weights = (rho.entries.T * c.c).ravel()
    qmin = int(diff.min())
    size = int(diff.max()) - qmin + 1
    idx = (diff - qmin).ravel()
    mu = np.bincount(idx, weights.real, size) + 1j * np.bincount(idx, weights.imag, size)
    return {int(q): complex(mu[q - qmin]) for q in np.unique(diff)}


def _reference_operator(omega, dim: int) -> Operator:
    if isinstance(omega, np.ndarray) and omega.ndim == 1:
        omega = Operator.projector(omega)
    omega = as_operator(omega)
    if omega.dim != dim:
        raise DimensionMismatch(f"reference state of dimension {omega.dim}, expected {dim}")
    return omega


def restrict(r: Operator, omega) -> Operator:
    """Tr_R[(1 (x) omega) r] with the reference as the last tensor factor."""
    if len(r.dims) < 2:
        raise InputError("restriction needs an operator on system (x) reference")
    d_ref = r.dims[-1]
    omega = _reference_operator(omega, d_ref)
    d_sys = r.dim // d_ref
    t = r.entries.reshape(d_sys, d_ref, d_sys, d_ref)
    return Operator(np.einsum("ikjl,lk->ij", t, omega.entries), r.dims[:-1])


def localised_characteristic(d: int) -> Dict[int, float]:
    """mu(q) = (d - |q|) / d for the uniform state on d consecutive levels, canonical kernel."""
    if d < 1:
        raise InputError(f"reference needs at least one level, got {d}")
    return {q: (d - abs(q)) / d for q in range(-(d - 1), d)}


def phase_average(a: Operator, repS: NumberRep, mu: Dict[int, complex]) -> Operator:
    """sum_q A_q mu(q); frequencies missing from ``mu`` contribute nothing."""
    _check_kernel(repS, a)
    out = np.zeros_like(a.entries)
    for q, block in fourier_components(a, repS).blocks.items():
        out += mu.get(q, 0.0) * block.entries
    return Operator(out, a.dims)


def restrict_after_relativize(a: Operator, omega, repS: NumberRep, c: PhaseMatrix) -> Operator:
    """sum_q A_q mu(q): the phase-shift average of ``a`` under the reference distribution."""
    _check_kernel(repS, a)
    return phase_average(a, repS, characteristic_function(omega, c))


def high_localisation_defects(
    a: Operator, repS: NumberRep, ns: Sequence[int]
) -> Dict[int, float]:
    """D(a, restrict(rel(a))) for the reference localised at 0 with n + 1 levels."""
    out = {}
    for n in ns:
        c = PhaseMatrix.canonical(n + 1)
        phi = localised_state(c.spectrum)
        out[int(n)] = norm(a - restrict_after_relativize(a, phi, repS, c))
    return out


def choi_of_relativisation(repS: NumberRep, c: PhaseMatrix) -> Operator:
    """sum_ij |i><j| (x) rel(|i><j|)."""
    d = repS.dimension
    blocks = []
    for i in range(d):
        for j in range(d):
            unit = np.zeros((d, d))
            unit[i, j] = 1.0
            blocks.append(
                np.kron(unit, relativize(Operator(unit, repS.dims), repS, c).entries)
            )
    return Operator(sum(blocks), (d,) + repS.dims + (c.dim,))


def choi_min_eigenvalue(repS: NumberRep, c: PhaseMatrix) -> float:
    return float(eigh(choi_of_relativisation(repS, c))[0][0])


def relativisation_symmetry_residual(
    a: Operator, repS: NumberRep, c: PhaseMatrix, samples: int = 16
) -> float:
    """max over sampled theta of ||(U_S (x) U_R) rel(a) (U_S (x) U_R)^* - rel(a)||."""
    rel = relativize(a, repS, c)
    total = composite_rep(repS, c.rep())
    residual = 0.0
    for theta in 2.0 * np.pi * np.arange(samples) / samples:
        u = total.unitary(theta)
        residual = max(residual, norm(u @ rel @ u.adjoint() - rel))
    return residual


def restriction_covariance_residual(
    r: Operator, omega, repS: NumberRep, repR: NumberRep, samples: int = 16
) -> float:
    """
    max over sampled theta of ||restrict(U r U^*) - U_S restrict(r) U_S^*||, with
    U = U_S (x) U_R. Vanishes for every r exactly when omega is invariant.
    """
    total = composite_rep(repS, repR)
    base = restrict(r, omega)
    residual = 0.0
    for theta in 2.0 * np.pi * np.arange(samples) / samples:
        u = total.unitary(theta)
        us = repS.unitary(theta)
        moved = restrict(u @ r @ u.adjoint(), omega)
        residual = max(residual, norm(moved - us @ base @ us.adjoint()))
    return residual


@dataclass(frozen=True, eq=False)
class CyclicRep:
    """
    Z_G acting on a system through powers of ``generator`` and on a reference
    C^G (x) C^m through cyclic shifts of the first factor. P_g projects onto |g> (x) C^m.
    """

    order: int
    generator: Operator
    sector_dim: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise InputError(f"group order must be positive, got {self.order}")
        power = np.linalg.matrix_power(self.generator.entries, self.order)
        if np.max(np.abs(power - np.eye(self.generator.dim))) > dim_tol(self.generator.dim):
            raise InputError("system generator does not satisfy V^G = 1")

    @property
    def reference_dim(self) -> int:
        return self.order * self.sector_dim

    def system_unitary(self, g: int) -> Operator:
        return Operator(
            np.linalg.matrix_power(self.generator.entries, g % self.order), self.generator.dims
        )

    def reference_projector(self, g: int) -> Operator:
        unit = np.zeros((self.order, self.order))
        unit[g % self.order, g % self.order] = 1.0
        return Operator(np.kron(unit, np.eye(self.sector_dim)), (self.reference_dim,))

    def reference_unitary(self, g: int) -> Operator:
        shift = np.roll(np.eye(self.order), g % self.order, axis=0)
        return Operator(np.kron(shift, np.eye(self.sector_dim)), (self.reference_dim,))


def shift_operator(size: int) -> Operator:
    """|x> -> |x + 1 mod size>."""
    return Operator(np.roll(np.eye(size), 1, axis=0), (size,))


def relativize_cyclic(a: Operator, rep: CyclicRep) -> Operator:
    """sum_g U_S(g) a U_S(g)^* (x) P_g."""
    if a.dims != rep.generator.dims:
        raise DimensionMismatch(f"operator dims {a.dims} do not match {rep.generator.dims}")
    out = Operator.zeros(a.dims + (rep.reference_dim,))
    for g in range(rep.order):
        u = rep.system_unitary(g)
        out = out + kron(u @ a @ u.adjoint(), rep.reference_projector(g))
    return out


def cyclic_difference_check(size: int) -> float:
    """
    Relativised sharp position on Z_L against the same position on the reference
    equals the PVM of the difference coordinate s - r. Returns the largest bin residual.
    """
    rep = CyclicRep(size, shift_operator(size))
    residual = 0.0
    for x in range(size):
        point = Operator.projector(basis_vector(x, size))
        rel = relativize_cyclic(point, rep)
        diag = np.zeros(size * size)
        for s in range(size):
            diag[s * size + (s - x) % size] = 1.0
        residual = max(residual, float(np.max(np.abs(rel.entries - np.diag(diag)))))
    return residual


def homomorphism_residual(a: Operator, b: Operator, rep: CyclicRep) -> float:
    rel_ab = relativize_cyclic(a @ b, rep)
    return norm(rel_ab - relativize_cyclic(a, rep) @ relativize_cyclic(b, rep))


def identity_reference_state(
    rep: CyclicRep, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """A unit vector in the range of P_e, random within the sector when ``rng`` is given."""
    v = np.zeros(rep.reference_dim, dtype=np.complex128)
    if rng is None:
        v[0] = 1.0
    else:
        w = rng.standard_normal(rep.sector_dim) + 1j * rng.standard_normal(rep.sector_dim)
        v[: rep.sector_dim] = w / np.linalg.norm(w)
    return v


def relative_phase_pom(
    repS: NumberRep, c_system: PhaseMatrix, c_ref: PhaseMatrix, bins: Optional[int] = None
) -> Pom:
    """Relativised covariant phase observable of the system: the relative phase."""
    bins = settings.DEFAULT_BINS if bins is None else bins
    absolute = build_phase_pom(c_system.dim, c_system, bins)
    return relativize_pom(absolute, repS, c_ref)

