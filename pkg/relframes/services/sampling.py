"""
Seeded random inputs for sweeps.

All draws come from NumPy's counter-based Philox generator. A sweep with seed ``s``
gives trial ``t`` the generator ``Philox(key=s).jumped(t)``, so a trial's inputs do
not depend on how many trials ran before it.
"""

from typing import Iterator, Optional

import numpy as np
from scipy.stats import unitary_group

from relframes.core.errors import InputError
from relframes.services.opcore import Operator, State, norm

PRNG_ALGORITHM = "philox4x64-10"
SEED_MASK = (1 << 64) - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > SEED_MASK:
        raise InputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_check_seed(seed)).jumped(int(trial)))


def trial_rngs(seed: int, trials: int) -> Iterator[np.random.Generator]:
    for t in range(int(trials)):
        yield trial_rng(seed, t)


def ginibre(dim: int, rng: np.random.Generator, cols: Optional[int] = None) -> np.ndarray:
    cols = dim if cols is None else cols
    return rng.standard_normal((dim, cols)) + 1j * rng.standard_normal((dim, cols))


def random_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = ginibre(dim, rng, 1).ravel()
    return v / np.linalg.norm(v)


def random_pure_state(dim: int, rng: np.random.Generator, dims=None) -> State:
    return State.from_vector(random_vector(dim, rng), dims)


def random_state(
    dim: int, rng: np.random.Generator, dims=None, rank: Optional[int] = None
) -> State:
    """Normalised x x^* with x a dim x rank Ginibre matrix (full rank by default)."""
    x = ginibre(dim, rng, rank or dim)
    rho = x @ x.conj().T
    return State(Operator.of(rho / np.trace(rho).real, dims), pure=rank == 1)


def random_hermitian(dim: int, rng: np.random.Generator, dims=None) -> Operator:
    x = ginibre(dim, rng)
    return Operator.of(0.5 * (x + x.conj().T), dims)


def random_effect(dim: int, rng: np.random.Generator, dims=None) -> Operator:
    """x^* x scaled to operator norm u ~ U(0, 1)."""
    x = ginibre(dim, rng)
    e = Operator.of(x.conj().T @ x, dims)
    return e * (rng.uniform() / norm(e))


def random_unitary(dim: int, rng: np.random.Generator, dims=None) -> Operator:
    if dim == 1:
        return Operator.of([[np.exp(2j * np.pi * rng.uniform())]], dims)
    return Operator.of(unitary_group.rvs(dim, random_state=rng), dims)


def random_conserving_unitary(rep, rng: np.random.Generator) -> Operator:
    """Independent Haar unitary on every eigenvalue sector of ``rep``."""
    u = np.zeros((rep.dimension, rep.dimension), dtype=np.complex128)
    for idx in rep.sectors().values():
        u[np.ix_(idx, idx)] = random_unitary(len(idx), rng).entries
    return Operator(u, rep.dims)


def random_phase_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Gram matrix of random unit vectors: positive with unit diagonal."""
    vecs = ginibre(dim, rng)
    vecs /= np.linalg.norm(vecs, axis=0, keepdims=True)
    return vecs.conj().T @ vecs


def random_distribution(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(size))
