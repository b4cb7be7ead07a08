"""
Dense operator algebra on finite tensor-product Hilbert spaces.

Every other service module is written against the two value types defined here:
``Operator`` (a square complex matrix tagged with its tensor-factor dimensions) and
``State`` (a validated density operator). Both are immutable; all functions are pure.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import svdvals

from relframes.core.config import settings
from relframes.core.errors import DimensionMismatch, InputError
from relframes.core.logging import get_logger

logger = get_logger(__name__)

ArrayLike = Union[np.ndarray, Sequence[Sequence[complex]]]


def dim_tol(dim: int, atol: float | None = None) -> float:
    """Algebraic tolerance for identity checks on a ``dim``-dimensional space."""
    return (settings.ATOL if atol is None else atol) * max(int(dim), 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Operator:
    entries: np.ndarray
    dims: Tuple[int, ...]

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InputError(f"operator must be a square matrix, got shape {entries.shape}")
        dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in dims):
            raise InputError(f"tensor factor dimensions must be positive, got {dims}")
        if int(np.prod(dims)) != entries.shape[0]:
            raise DimensionMismatch(
                f"dims {dims} do not multiply to the matrix side length {entries.shape[0]}"
            )
        object.__setattr__(self, "entries", _frozen(entries))
        object.__setattr__(self, "dims", dims)

    # --- constructors ---

    @classmethod
    def of(cls, entries: ArrayLike, dims: Iterable[int] | None = None) -> "Operator":
        entries = np.asarray(entries, dtype=np.complex128)
        return cls(entries, tuple(dims) if dims is not None else (entries.shape[0],))

    @classmethod
    def identity(cls, dims: Iterable[int]) -> "Operator":
        dims = tuple(dims)
        return cls(np.eye(int(np.prod(dims))), dims)

    @classmethod
    def zeros(cls, dims: Iterable[int]) -> "Operator":
        dims = tuple(dims)
        d = int(np.prod(dims))
        return cls(np.zeros((d, d)), dims)

    @classmethod
    def projector(cls, psi: ArrayLike, dims: Iterable[int] | None = None) -> "Operator":
        """Rank-one operator |psi><psi| (psi is used as given, not normalised)."""
        psi = np.asarray(psi, dtype=np.complex128).ravel()
        return cls.of(np.outer(psi, psi.conj()), dims)

    # --- algebra ---

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def _check_same(self, other: "Operator") -> None:
        if self.dims != other.dims:
            raise DimensionMismatch(f"operator dims {self.dims} and {other.dims} differ")

    def adjoint(self) -> "Operator":
        return Operator(self.entries.conj().T, self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.entries @ other.entries, self.dims)

    def __add__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.entries + other.entries, self.dims)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.entries - other.entries, self.dims)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.entries * scalar, self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.entries, self.dims)

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self

    def hermitian_residual(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def is_hermitian(self, tol: float | None = None) -> bool:
        return self.hermitian_residual() < dim_tol(self.dim, tol)

    def allclose(self, other: "Operator", tol: float | None = None) -> bool:
        self._check_same(other)
        return bool(np.max(np.abs(self.entries - other.entries)) < dim_tol(self.dim, tol))

    def __repr__(self) -> str:
        return f"Operator(dims={self.dims})"


@dataclass(frozen=True, eq=False)
class State:
    rho: Operator
    pure: bool = False

    @classmethod
    def from_vector(cls, psi: ArrayLike, dims: Iterable[int] | None = None) -> "State":
        psi = np.asarray(psi, dtype=np.complex128).ravel()
        norm_sq = float(np.vdot(psi, psi).real)
        if abs(norm_sq - 1.0) > dim_tol(psi.size):
            raise InputError(f"state vector must be normalised, got norm^2 = {norm_sq:.3g}")
        return cls(Operator.projector(psi, dims), pure=True)

    @classmethod
    def from_operator(cls, rho: Operator, tol: float | None = None) -> "State":
        """Validate positivity and unit trace; purity is detected from tr(rho^2)."""
        tol = dim_tol(rho.dim, tol)
        if rho.hermitian_residual() > tol:
            raise InputError("density operator is not Hermitian")
        evals = np.linalg.eigvalsh(rho.entries)
        if evals[0] < -tol:
            raise InputError(f"density operator is not positive (min eigenvalue {evals[0]:.3g})")
        if abs(rho.trace() - 1.0) > tol:
            raise InputError(f"density operator must have unit trace, got {rho.trace():.6g}")
        return cls(rho, pure=bool(abs(evals[-1] - 1.0) < tol))

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.rho.dims

    @property
    def dim(self) -> int:
        return self.rho.dim

    @property
    def entries(self) -> np.ndarray:
        return self.rho.entries


def as_operator(x: Union[Operator, State]) -> Operator:
    return x.rho if isinstance(x, State) else x


def kron(a: Operator, b: Operator) -> Operator:
    """Tensor product; ``a`` carries the slow index."""
    return Operator(np.kron(a.entries, b.entries), a.dims + b.dims)


def kron_all(*ops: Operator) -> Operator:
    return reduce(kron, ops)


def _check_factors(dims: Tuple[int, ...], factors: Iterable[int]) -> Tuple[int, ...]:
    factors = tuple(sorted(set(int(k) for k in factors)))
    bad = [k for k in factors if k < 0 or k >= len(dims)]
    if bad:
        raise InputError(f"invalid tensor factor index {bad} for dims {dims}")
    return factors


def partial_trace(r: Union[Operator, State], keep: Iterable[int]) -> Operator:
    """Trace out every tensor factor not listed in ``keep``."""
    r = as_operator(r)
    if len(r.dims) < 2:
        raise InputError("partial trace needs an operator with at least two tensor factors")
    keep = _check_factors(r.dims, keep)
    if not keep:
        raise InputError("partial trace must keep at least one factor")
    n = len(r.dims)
    letters = string.ascii_letters
    rows = [letters[i] for i in range(n)]
    cols = [letters[i] if i not in keep else letters[n + i] for i in range(n)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    t = r.entries.reshape(r.dims + r.dims)
    reduced = np.einsum(f"{''.join(rows)}{''.join(cols)}->{out}", t)
    kept_dims = tuple(r.dims[i] for i in keep)
    d = int(np.prod(kept_dims))
    return Operator(reduced.reshape(d, d), kept_dims)


def permute(r: Operator, order: Sequence[int]) -> Operator:
    """Reorder tensor factors: factor ``order[k]`` of ``r`` becomes factor ``k``."""
    order = tuple(int(k) for k in order)
    if sorted(order) != list(range(len(r.dims))):
        raise InputError(f"{order} is not a permutation of the {len(r.dims)} tensor factors")
    n = len(order)
    t = r.entries.reshape(r.dims + r.dims).transpose(order + tuple(n + k for k in order))
    dims = tuple(r.dims[k] for k in order)
    return Operator(t.reshape(r.dim, r.dim), dims)


def eigh(a: Operator) -> Tuple[np.ndarray, np.ndarray]:
    """Hermitian eigendecomposition; the kernel behind norms, positivity and projectors."""
    h = 0.5 * (a.entries + a.entries.conj().T)
    return np.linalg.eigh(h)


def singular_values(a: Operator) -> np.ndarray:
    if a.is_hermitian():
        return np.abs(eigh(a)[0])
    return svdvals(a.entries)


def norm(a: Operator, kind: str = "operator") -> float:
    """Operator norm (largest singular value) or trace norm (sum of singular values)."""
    s = singular_values(a)
    if kind == "operator":
        return float(np.max(s, initial=0.0))
    if kind == "trace":
        return float(np.sum(s))
    raise InputError(f"unknown norm kind {kind!r}; expected 'operator' or 'trace'")


def expectation(rho: Union[State, Operator], a: Operator) -> complex:
    """tr(rho a)."""
    rho = as_operator(rho)
    if rho.dim != a.dim:
        raise DimensionMismatch(f"state dimension {rho.dim} does not match operator {a.dim}")
    return complex(np.einsum("ij,ji->", rho.entries, a.entries))


def effect_residual(e: Operator) -> float:
    """How far ``e`` is outside the effect interval 0 <= e <= 1 (0 when inside)."""
    evals = eigh(e)[0]
    return float(max(0.0, -evals[0], evals[-1] - 1.0, e.hermitian_residual()))


def is_effect(e: Operator, tol: float | None = None) -> bool:
    return effect_residual(e) < dim_tol(e.dim, tol)


def positive_part_projector(x: Operator) -> Operator:
    """Spectral projector of a Hermitian operator onto its strictly positive eigenvalues."""
    evals, vecs = eigh(x)
    cut = dim_tol(x.dim)
    v = vecs[:, evals > cut]
    return Operator(v @ v.conj().T, x.dims)


def is_unitary(u: Operator, tol: float | None = None) -> bool:
    return unitarity_residual(u) < dim_tol(u.dim, tol)


def unitarity_residual(u: Operator) -> float:
    return norm(u.adjoint() @ u - Operator.identity(u.dims))


def basis_vector(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.complex128)
    v[index] = 1.0
    return v


PAULI = {
    "I": Operator.of([[1, 0], [0, 1]]),
    "X": Operator.of([[0, 1], [1, 0]]),
    "Y": Operator.of([[0, -1j], [1j, 0]]),
    "Z": Operator.of([[1, 0], [0, -1]]),
}
