"""
Interference and superselection thought-experiments as finite simulations.

Every coupling is a direct sum of 2x2 blocks acting on pairs of basis vectors with the
same total number, so conservation holds by construction and is reported as a residual.
Coherent states are truncated with an explicit tail-mass certificate.
"""

from __future__ import annotations

import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import poisson

from relframes.core.config import settings
from relframes.core.errors import InputError, InvariantViolation, TruncationError
from relframes.core.logging import get_logger
from relframes.services.coherence import angle_moments
from relframes.services.opcore import (
    PAULI,
    Operator,
    State,
    as_operator,
    expectation,
    kron,
    norm,
    partial_trace,
)
from relframes.services.pom import PhaseMatrix, interval_probability, localised_state
from relframes.services.relmap import (
    localised_characteristic,
    phase_average,
    relative_phase_pom,
    relativize,
)
from relframes.services.symmetry import NumberRep, composite_rep, number_rep, twirl_op

logger = get_logger(__name__)

HADAMARD_BLOCK = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "model1"
    theta: float = 0.0
    theta_prime: float = 0.0
    j: int = Field(1, ge=1)
    n: int = Field(1, ge=0)
    cutoff: Optional[int] = Field(None, ge=1)
    q1: float = Field(16.0, ge=0.0)
    q2: float = Field(16.0, ge=0.0)
    m: float = Field(100.0, ge=0.0)
    g: float = np.pi / 16.0
    T: float = Field(1.0, ge=0.0)
    phi: float = 0.0
    epsilon: float = Field(0.5, gt=0.0, lt=1.0)
    tail_mass: float = Field(settings.TAIL_MASS, gt=0.0)


class ModelRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    probabilities: Dict[str, float] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict)
    norms: Dict[str, float] = Field(default_factory=dict)
    tails: Dict[str, float] = Field(default_factory=dict)
    conservation: float = 0.0
    states: Dict[str, Any] = Field(default_factory=dict, exclude=True)


# --- building blocks ---


def block_unitary(dim: int, pairs: Sequence[Tuple[int, int]], blocks: Sequence[np.ndarray]):
    """Identity except for the 2x2 ``blocks`` acting on each index pair."""
    u = np.eye(dim, dtype=np.complex128)
    for (i, j), b in zip(pairs, blocks):
        u[np.ix_([i, j], [i, j])] = b
    return u


def conservation_residual(u: Operator, rep: NumberRep) -> float:
    """||U N U^* - N|| computed as ||[U, N]|| with N diagonal."""
    return norm(Operator(-u.entries * rep.differences(), u.dims))


def theta_block(theta: float) -> np.ndarray:
    """Columns are the images of the pair (|0, n>, |1, n-1>) under the phase coupling."""
    ph = np.exp(1j * theta)
    return np.exp(-0.5j * theta) / np.sqrt(2.0) * np.array([[1.0, 1.0], [ph, -ph]])


def coherent_amplitudes(mean: float, cutoff: int, phase: float = 0.0) -> np.ndarray:
    """Truncated |sqrt(mean) e^{i phase}>, renormalised on 0..cutoff."""
    n = np.arange(cutoff + 1)
    amp = np.sqrt(poisson.pmf(n, mean)) * np.exp(1j * n * phase)
    return amp / np.linalg.norm(amp)


def required_cutoff(mean: float, tail_mass: Optional[float] = None) -> int:
    """Smallest cutoff >= mean + 10 sqrt(mean) whose Poisson tail is below ``tail_mass``."""
    tail_mass = settings.TAIL_MASS if tail_mass is None else tail_mass
    c = int(math.ceil(mean + 10.0 * math.sqrt(mean)))
    while poisson.sf(c, mean) >= tail_mass:
        c += 1
    return max(c, 1)


def check_cutoff(mean: float, cutoff: Optional[int], tail_mass: Optional[float] = None) -> int:
    needed = required_cutoff(mean, tail_mass)
    if cutoff is None:
        return needed
    if cutoff < needed:
        raise TruncationError(
            f"cutoff {cutoff} leaves Poisson tail {poisson.sf(cutoff, mean):.3g} for mean {mean}",
            needed,
        )
    return int(cutoff)


class QubitLattice:
    """Qubit (x) number lattice with index s * L + position(n), coupling |0,n> <-> |1,n-1>."""

    def __init__(self, labels: Sequence[int]):
        self.labels = tuple(int(n) for n in labels)
        self.size = len(self.labels)
        self.rep_s = number_rep((0, 1))
        self.rep_r = number_rep(self.labels)
        self.total = composite_rep(self.rep_s, self.rep_r)
        self._pos = {n: i for i, n in enumerate(self.labels)}

    @property
    def dims(self) -> Tuple[int, int]:
        return (2, self.size)

    @property
    def dim(self) -> int:
        return 2 * self.size

    def index(self, s: int, n: int) -> int:
        return s * self.size + self._pos[n]

    def pairs(self) -> List[Tuple[int, int]]:
        return [
            (self.index(0, n), self.index(1, n - 1)) for n in self.labels if n - 1 in self._pos
        ]

    def coupling(self, block: np.ndarray) -> Operator:
        pairs = self.pairs()
        return Operator(block_unitary(self.dim, pairs, [block] * len(pairs)), self.dims)

    def basis(self, s: int, n: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.complex128)
        v[self.index(s, n)] = 1.0
        return v

    def system_zero(self) -> Operator:
        return kron(Operator.of(np.diag([1.0, 0.0])), Operator.identity((self.size,)))


def _p0(lattice: QubitLattice, rho: Operator) -> float:
    return expectation(rho, lattice.system_zero()).real


def _interference(lattice: QubitLattice, theta: float, psi0: np.ndarray) -> Dict[str, Any]:
    """U2 U1 on psi0 with untwirled, finally-twirled and stage-twirled pipelines."""
    u1 = lattice.coupling(theta_block(theta))
    u2 = lattice.coupling(HADAMARD_BLOCK)
    conservation = max(conservation_residual(u, lattice.total) for u in (u1, u2))
    psi1 = u1.entries @ psi0
    psif = u2.entries @ psi1
    final = Operator.projector(psif, lattice.dims)
    twirled = twirl_op(final, lattice.total)
    staged = twirl_op(Operator.projector(psi0, lattice.dims), lattice.total)
    for u in (u1, u2):
        staged = twirl_op(u @ staged @ u.adjoint(), lattice.total)
    p0 = _p0(lattice, final)
    return {
        "u1": u1,
        "u2": u2,
        "psi1": psi1,
        "psif": psif,
        "final": final,
        "twirled": twirled,
        "conservation": conservation,
        "p0": p0,
        "p0_twirled": _p0(lattice, twirled),
        "p0_staged": _p0(lattice, staged),
    }


# --- qubit / lattice interference models ---


def model1_run(theta: float) -> ModelRun:
    """Two qubits, input |0>|1>: p0 = cos^2(theta/2) whether or not states are twirled."""
    lattice = QubitLattice((0, 1))
    out = _interference(lattice, theta, lattice.basis(0, 1))
    expected = np.cos(theta / 2.0) ** 2
    logger.info(f"Model 1 run: theta={theta:.6g}, p0={out['p0']:.12g}")
    return ModelRun(
        name="model1",
        probabilities={
            "p0": out["p0"],
            "p0_twirled": out["p0_twirled"],
            "p0_staged": out["p0_staged"],
        },
        residuals={
            "p0_formula": abs(out["p0"] - expected),
            "twirl_agreement": max(
                abs(out["p0"] - out["p0_twirled"]), abs(out["p0"] - out["p0_staged"])
            ),
        },
        conservation=out["conservation"],
        states={"final": out["final"], "u1": out["u1"], "u2": out["u2"]},
    )


def angle_state(j: int, theta_prime: float) -> np.ndarray:
    """|theta'_j>: uniform superposition over n in [-j, j] localised at theta'."""
    return localised_state(range(-j, j + 1), theta_prime)


def model2_run(j: int, theta: float, theta_prime: float) -> ModelRun:
    """
    Qubit against a number lattice truncated to [-j-1, j+1], reference input |theta'_j>.

    After U1 the state is e^{-i theta/2}/sqrt2 (|0> + e^{i(theta+theta')}|1>)|theta'_j>
    plus an error term of squared norm 1/(2j+1).
    """
    if j < 1:
        raise InputError(f"model 2 needs j >= 1, got {j}")
    lattice = QubitLattice(range(-j - 1, j + 2))
    coeffs = angle_state(j, theta_prime)
    reference = np.zeros(lattice.size, dtype=np.complex128)
    reference[1:-1] = coeffs
    psi0 = np.concatenate([reference, np.zeros(lattice.size)])
    out = _interference(lattice, theta, psi0)

    qubit = np.array([1.0, np.exp(1j * (theta + theta_prime))]) * np.exp(-0.5j * theta) / np.sqrt(2)
    error = out["psi1"] - np.kron(qubit, reference)
    error_norm_sq = float(np.vdot(error, error).real)

    # Psi_f is the post-U1 state
    post_u1 = Operator.projector(out["psi1"], lattice.dims)
    twirled_u1 = twirl_op(post_u1, lattice.total)
    reduced = partial_trace(twirled_u1, [0])
    half = Operator.identity((2,)) * 0.5

    # twirled post-U1 state as a mixture of its number-sector components
    mixture = Operator.zeros(lattice.dims)
    sectors = 0
    for idx in lattice.total.sectors().values():
        component = np.zeros(lattice.dim, dtype=np.complex128)
        component[idx] = out["psi1"][idx]
        if np.vdot(component, component).real > settings.ATOL:
            sectors += 1
        mixture = mixture + Operator.projector(component, lattice.dims)

    moments = angle_moments(coeffs, range(-j, j + 1), theta_prime)
    basis_drift = basis_input_theta_drift(lattice, theta)
    logger.info(f"Model 2 run: j={j}, error norm^2={error_norm_sq:.15g}")
    return ModelRun(
        name="model2",
        probabilities={
            "p0": out["p0"],
            "p0_twirled": out["p0_twirled"],
            "p0_after_u1": _p0(lattice, post_u1),
        },
        residuals={
            "error_norm_law": abs(error_norm_sq - 1.0 / (2 * j + 1)),
            "reduced_state": norm(reduced - half),
            "sector_decomposition": norm(twirled_u1 - mixture),
            "twirl_agreement": abs(out["p0"] - out["p0_twirled"]),
            "basis_theta_drift": basis_drift,
        },
        norms={
            "error_norm_sq": error_norm_sq,
            "sectors": float(sectors),
            "angle_mean": moments.mean,
            "angle_variance": moments.variance,
        },
        conservation=out["conservation"],
        states={
            "post_u1": post_u1,
            "twirled_post_u1": twirled_u1,
            "final": out["final"],
            "twirled_final": out["twirled"],
        },
    )


def basis_input_theta_drift(lattice: QubitLattice, theta: float, samples: int = 8) -> float:
    """Largest change over theta of the reduced system state after U1 for paired inputs |0,n>."""

    def reduced(t: float, psi: np.ndarray) -> Operator:
        moved = lattice.coupling(theta_block(t)).entries @ psi
        return partial_trace(Operator.projector(moved, lattice.dims), [0])

    drift = 0.0
    for n in [n for n in lattice.labels if n - 1 in lattice.labels]:
        psi = lattice.basis(0, n)
        ref = reduced(0.0, psi)
        for t in np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False) + theta:
            drift = max(drift, norm(reduced(t, psi) - ref))
    return drift


def model2_relative_phase_scan(
    j: int, thetas: Sequence[float], theta_prime: float = 0.0, bins: int = 8
) -> np.ndarray:
    """
    Expectations of the relative-phase bin effects in the twirled final state,
    one row per theta. Every effect is invariant, so the rows equal the untwirled ones.
    """
    lattice = QubitLattice(range(-j - 1, j + 2))
    c_ref = PhaseMatrix.canonical(lattice.size, lattice.labels)
    rel = relative_phase_pom(lattice.rep_s, PhaseMatrix.canonical(2), c_ref, bins)
    rows = []
    for theta in thetas:
        run = model2_run(j, theta, theta_prime)
        rows.append(rel.probabilities(run.states["twirled_final"]))
    return np.array(rows)


def model3_run(cutoff: int, theta: float, n: int = 3) -> ModelRun:
    """Number spectrum bounded below at 0: |0,0> is a fixed point, inputs |0,n> with n >= 1."""
    if cutoff < 2:
        raise InputError(f"model 3 needs cutoff >= 2, got {cutoff}")
    if not 1 <= n <= cutoff:
        raise InputError(f"input level n must lie in [1, {cutoff}], got {n}")
    lattice = QubitLattice(range(cutoff + 1))
    out = _interference(lattice, theta, lattice.basis(0, n))
    ground = lattice.basis(0, 0)
    fixed = max(
        float(np.linalg.norm(u.entries @ ground - ground)) for u in (out["u1"], out["u2"])
    )
    expected = np.cos(theta / 2.0) ** 2
    return ModelRun(
        name="model3",
        probabilities={"p0": out["p0"], "p0_twirled": out["p0_twirled"]},
        residuals={
            "p0_formula": abs(out["p0"] - expected),
            "ground_fixed": fixed,
            "twirl_agreement": abs(out["p0"] - out["p0_twirled"]),
        },
        conservation=out["conservation"],
        states={"final": out["final"], "u1": out["u1"], "u2": out["u2"]},
    )


# --- qubit relativisation and localisation tail ---

DEFAULT_QUBIT = np.array([np.cos(np.pi / 8.0), np.exp(1j * np.pi / 3.0) * np.sin(np.pi / 8.0)])
FULL_RELATIVISATION_LIMIT = 512


def qubit_demo(n: int, epsilon: float = 0.5, psi: Optional[np.ndarray] = None) -> ModelRun:
    """
    Pauli expectations of the relativised qubit against the canonical phase reference
    truncated at n, in psi (x) phi_n; plus the localisation tail around 0.
    """
    if n < 1:
        raise InputError(f"qubit demo needs n >= 1, got {n}")
    psi = DEFAULT_QUBIT if psi is None else np.asarray(psi, dtype=np.complex128)
    rho = State.from_vector(psi)
    rep = number_rep((0, 1))
    d = n + 1
    phi = localised_state(range(d))
    factor = n / (n + 1.0)
    if d <= FULL_RELATIVISATION_LIMIT:
        c = PhaseMatrix.canonical(d)
        joint = Operator.projector(np.kron(psi, phi), (2, d))
    else:
        mu = localised_characteristic(d)
        logger.debug(f"Qubit demo: closed-form characteristic function for {d} levels")

    values: Dict[str, float] = {}
    bare: Dict[str, float] = {}
    residuals: Dict[str, float] = {}
    for name in ("X", "Y", "Z"):
        sigma = PAULI[name]
        if d <= FULL_RELATIVISATION_LIMIT:
            rel = expectation(joint, relativize(sigma, rep, c))
        else:
            rel = expectation(rho, phase_average(sigma, rep, mu))
        bare[name] = expectation(rho, sigma).real
        values[name] = rel.real
        expected = bare[name] if name == "Z" else factor * bare[name]
        residuals[f"sigma_{name.lower()}"] = abs(rel - expected)

    probabilities = {"sigma1": values["X"], "sigma2": values["Y"], "sigma3": values["Z"]}
    if abs(bare["X"]) > settings.ATOL:
        probabilities["sigma1_factor"] = values["X"] / bare["X"]
        residuals["sigma1_factor"] = abs(probabilities["sigma1_factor"] - factor)

    delta = (n + 1.0) ** ((-1.0 + epsilon) / 2.0)
    tail = 1.0 - interval_probability(phi, -delta / 2.0, delta / 2.0)
    bound = 8.0 * (n + 1.0) ** (-epsilon) / (1.0 - delta**2 / 48.0)
    residuals["tail_bound"] = max(tail - bound, 0.0)
    probabilities["tail"] = tail
    return ModelRun(
        name="qubit",
        probabilities=probabilities,
        residuals=residuals,
        norms={"tail_bound": bound, "bin_width": delta},
    )


# --- nucleon / cavity charge model ---

PROTON, NEUTRON = 0, 1
NUCLEON_REP = number_rep((1, 0))


def cavity_coupling(cutoff: int, g: float, T: float) -> Operator:
    """exp(i x sigma_1) on every pair (|P,n>, |N,n+1>), x = T g sqrt(n+1)."""
    size = cutoff + 1
    pairs, blocks = [], []
    for n in range(cutoff):
        x = T * g * np.sqrt(n + 1.0)
        pairs.append((PROTON * size + n, NEUTRON * size + n + 1))
        blocks.append(np.cos(x) * np.eye(2) + 1j * np.sin(x) * PAULI["X"].entries)
    return Operator(block_unitary(2 * size, pairs, blocks), (2, size))


def _apply_stage(u: Operator, psi: np.ndarray, cavity: int) -> np.ndarray:
    """Apply a nucleon-cavity unitary to a nucleon (x) cavity1 (x) cavity2 tensor."""
    if cavity == 2:
        psi = psi.transpose(0, 2, 1)
    shape = psi.shape
    out = (u.entries @ psi.reshape(shape[0] * shape[1], shape[2])).reshape(shape)
    return out.transpose(0, 2, 1) if cavity == 2 else out


def _as_final_proton(
    g: float, T: float, cav1: np.ndarray, cav2: np.ndarray
) -> Tuple[float, np.ndarray]:
    c1, c2 = cav1.size - 1, cav2.size - 1
    psi = np.zeros((2, c1 + 1, c2 + 1), dtype=np.complex128)
    psi[PROTON] = np.outer(cav1, cav2)
    psi = _apply_stage(cavity_coupling(c1, g, T), psi, 1)
    psi = _apply_stage(cavity_coupling(c2, g, T), psi, 2)
    return float(np.sum(np.abs(psi[PROTON]) ** 2)), psi


def as_product_infidelity(
    q1: float, pulse_area: float, theta: float = 0.0, T: float = 1.0, tail_mass=None
) -> float:
    """1 - |<(cos x|P> + i e^{-i theta} sin x|N>)|beta> | post-cavity state>|^2, area x fixed."""
    cutoff = required_cutoff(q1, tail_mass)
    g = pulse_area / (T * np.sqrt(q1))
    beta = coherent_amplitudes(q1, cutoff, theta)
    psi = np.concatenate([beta, np.zeros(cutoff + 1)])
    out = cavity_coupling(cutoff, g, T).entries @ psi
    nucleon = np.array([np.cos(pulse_area), 1j * np.exp(-1j * theta) * np.sin(pulse_area)])
    approx = np.kron(nucleon, beta)
    return float(1.0 - abs(np.vdot(approx, out)) ** 2)


def as_run(cfg: ModelConfig) -> ModelRun:
    """Nucleon through two cavities holding coherent states of phases theta and theta'."""
    c1 = check_cutoff(cfg.q1, cfg.cutoff, cfg.tail_mass)
    c2 = check_cutoff(cfg.q2, cfg.cutoff, cfg.tail_mass)
    stage = cavity_coupling(max(c1, cfg.n + 1), cfg.g, cfg.T)
    number_in = np.zeros(stage.dim, dtype=np.complex128)
    number_in[PROTON * (stage.dims[1]) + cfg.n] = 1.0
    after = stage.entries @ number_in
    p_number = float(np.sum(np.abs(after[: stage.dims[1]]) ** 2))
    expected = np.cos(cfg.T * cfg.g * np.sqrt(cfg.n + 1.0)) ** 2

    cav1 = coherent_amplitudes(cfg.q1, c1, cfg.theta)
    cav2 = coherent_amplitudes(cfg.q2, c2, cfg.theta_prime)
    p_final, _ = _as_final_proton(cfg.g, cfg.T, cav1, cav2)
    variation = as_phase_variation(cfg, c1, c2)

    total = composite_rep(NUCLEON_REP, number_rep(range(c1 + 1)))
    conservation = conservation_residual(cavity_coupling(c1, cfg.g, cfg.T), total)
    area = cfg.g * cfg.T * np.sqrt(cfg.q1) if cfg.q1 > 0 else 0.0
    infidelity = 0.0
    if cfg.q1 > 0:
        infidelity = as_product_infidelity(cfg.q1, area, cfg.theta, cfg.T, cfg.tail_mass)
    logger.info(f"AS run: q1={cfg.q1}, q2={cfg.q2}, final proton probability {p_final:.6g}")
    return ModelRun(
        name="as",
        probabilities={
            "proton_number_input": p_number,
            "proton_final": p_final,
            "theta_variation": variation,
        },
        residuals={"number_input_formula": abs(p_number - expected)},
        norms={"product_infidelity": infidelity, "pulse_area": area},
        tails={
            "cavity1_cutoff": float(c1),
            "cavity1_tail": float(poisson.sf(c1, cfg.q1)),
            "cavity2_cutoff": float(c2),
            "cavity2_tail": float(poisson.sf(c2, cfg.q2)),
        },
        conservation=conservation,
    )


def as_phase_variation(
    cfg: ModelConfig,
    c1: Optional[int] = None,
    c2: Optional[int] = None,
    samples: int = 16,
    number_reference: bool = False,
) -> float:
    """
    max - min of the final proton probability as cavity 1's phase sweeps the circle.
    With ``number_reference`` cavity 2 holds the number state |round(q2)> instead.
    """
    c1 = check_cutoff(cfg.q1, c1, cfg.tail_mass)
    c2 = check_cutoff(cfg.q2, c2, cfg.tail_mass)
    if number_reference:
        cav2 = np.zeros(c2 + 1, dtype=np.complex128)
        cav2[int(round(cfg.q2))] = 1.0
    else:
        cav2 = coherent_amplitudes(cfg.q2, c2, cfg.theta_prime)
    probs = [
        _as_final_proton(cfg.g, cfg.T, coherent_amplitudes(cfg.q1, c1, t), cav2)[0]
        for t in 2.0 * np.pi * np.arange(samples) / samples
    ]
    return float(max(probs) - min(probs))


class NoGoReport(BaseModel):
    distance: float
    best_j: int
    bound: float
    conservation: float
    passed: bool


def as_nogo_check(
    i: int, u: Operator, cutoff: int, gamma_abs: float = 1.0 / np.sqrt(2.0)
) -> NoGoReport:
    """
    min over j and over alpha|P> + gamma|N> with |gamma| fixed of ||U(|P>|i>) - psi (x) |j>||^2.
    The phases of alpha and gamma are optimised in closed form.
    """
    total = composite_rep(NUCLEON_REP, number_rep(range(cutoff + 1)))
    if u.dims != total.dims:
        raise InputError(f"unitary dims {u.dims} do not match nucleon (x) cavity {total.dims}")
    conservation = conservation_residual(u, total)
    if conservation > settings.INVARIANCE_TOL * u.dim:
        raise InputError(f"unitary does not conserve total charge (residual {conservation:.3g})")
    size = cutoff + 1
    start = np.zeros(u.dim, dtype=np.complex128)
    start[PROTON * size + i] = 1.0
    psi = (u.entries @ start).reshape(2, size)
    alpha_abs = np.sqrt(max(1.0 - gamma_abs**2, 0.0))
    overlaps = alpha_abs * np.abs(psi[PROTON]) + gamma_abs * np.abs(psi[NEUTRON])
    best = int(np.argmax(overlaps))
    distance = float(2.0 - 2.0 * overlaps[best])
    bound = 2.0 - np.sqrt(2.0) if np.isclose(gamma_abs, 1.0 / np.sqrt(2.0)) else 0.0
    return NoGoReport(
        distance=distance,
        best_j=best,
        bound=bound,
        conservation=conservation,
        passed=bool(distance >= bound - 1e-10),
    )


# --- atom / molecule condensate model ---

ATOM, MOLECULE = 0, 1
CONDENSATE_REP = number_rep((1, 2))


def dowling_coupling(cutoff: int, m: float) -> Operator:
    """Rotation on (|A,n>, |M,n-1>) by x = (pi/4) sqrt(n/m)."""
    size = cutoff + 1
    pairs, blocks = [], []
    for n in range(1, size):
        x = 0.25 * np.pi * np.sqrt(n / m)
        pairs.append((ATOM * size + n, MOLECULE * size + n - 1))
        blocks.append(np.array([[np.cos(x), -1j * np.sin(x)], [-1j * np.sin(x), np.cos(x)]]))
    return Operator(block_unitary(2 * size, pairs, blocks), (2, size))


def free_phase(cutoff: int, phi: float) -> Operator:
    diag = np.concatenate([np.ones(cutoff + 1), np.full(cutoff + 1, np.exp(1j * phi))])
    return Operator(np.diag(diag), (2, cutoff + 1))


def dowling_run(
    m: float, phi: float, cutoff: Optional[int] = None, theta: float = 0.0, tail_mass=None
) -> ModelRun:
    """
    Atoms in |beta>, |beta|^2 = m, through rotation / free phase / rotation.
    Asymptotically the output is (sin(phi/2)|A> + e^{i theta} cos(phi/2)|M>)|beta>.
    """
    if m <= 0:
        raise InputError(f"condensate mean number must be positive, got {m}")
    cutoff = check_cutoff(m, cutoff, tail_mass)
    size = cutoff + 1
    beta = coherent_amplitudes(m, cutoff, theta)
    u1 = dowling_coupling(cutoff, m)
    u2 = free_phase(cutoff, phi)
    psi0 = np.concatenate([beta, np.zeros(size)])
    psi1 = u1.entries @ psi0
    psi2 = u2.entries @ psi1
    psi3 = u1.entries @ psi2

    total = composite_rep(CONDENSATE_REP, number_rep(range(size)))
    conservation = max(conservation_residual(u, total) for u in (u1, u2))

    p_atom = float(np.sum(np.abs(psi3[:size]) ** 2))
    p_molecule = float(np.sum(np.abs(psi3[size:]) ** 2))
    ideal = np.kron([np.sin(phi / 2.0), np.exp(1j * theta) * np.cos(phi / 2.0)], beta)
    error_norm = float(np.sqrt(max(2.0 - 2.0 * abs(np.vdot(ideal, psi3)), 0.0)))
    budget = 2.0 * error_norm

    n = np.arange(size)
    w = np.abs(beta) ** 2
    x = 0.25 * np.pi * np.sqrt(n / m)
    formula = float(np.sum(w * (np.sin(phi / 2) ** 2 + np.cos(phi / 2) ** 2 * np.cos(2 * x) ** 2)))
    attenuation = float(np.linalg.norm(psi1[:size] - beta / np.sqrt(2.0)))
    logger.info(f"Condensate run: m={m}, phi={phi:.6g}, p_atom={p_atom:.6g}")
    return ModelRun(
        name="dowling",
        probabilities={
            "atom": p_atom,
            "molecule": p_molecule,
            "atom_asymptotic": float(np.sin(phi / 2.0) ** 2),
            "molecule_asymptotic": float(np.cos(phi / 2.0) ** 2),
        },
        residuals={
            "atom_formula": abs(p_atom - formula),
            "asymptotic_budget": max(abs(p_atom - np.sin(phi / 2.0) ** 2) - budget, 0.0),
        },
        norms={
            "beta_a1_distance": attenuation,
            "error_norm": error_norm,
            "budget": budget,
            "beta_m1_norm": float(np.linalg.norm(psi1[size:])),
        },
        tails={"cutoff": float(cutoff), "tail": float(poisson.sf(cutoff, m))},
        conservation=conservation,
        states={
            "beta_a1": psi1[:size],
            "beta_m1": psi1[size:],
            "beta_a3": psi3[:size],
            "beta_m3": psi3[size:],
        },
    )


# --- Chebyshev bound on the condensate attenuation ---


def _cos_profile(x: float) -> float:
    return float(np.cos(np.sqrt(x) * np.pi / 4.0))


def _bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of an increasing function on [lo, hi]."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def delta_k(k: int) -> float:
    """
    Largest delta with |n/m - 1| < delta => |cos(sqrt(n/m) pi/4) - cos(pi/4)| < 1/k, the
    smaller of the two one-sided solutions (the lower one is infinite if never reached).
    """
    if k < 2:
        raise InputError(f"k must be an integer >= 2, got {k}")
    grid = np.linspace(0.0, 16.0, 4097)
    profile = np.cos(np.sqrt(grid) * np.pi / 4.0)
    if np.any(np.diff(profile) > 0.0):
        raise InvariantViolation("cos(sqrt(x) pi/4) is not monotone on [0, 16]")
    target = 1.0 / k
    ref = _cos_profile(1.0)
    upper = _bisect(lambda d: ref - _cos_profile(1.0 + d) - target, 0.0, 15.0)
    if _cos_profile(0.0) - ref < target:
        lower = np.inf
    else:
        lower = _bisect(lambda d: _cos_profile(1.0 - d) - ref - target, 0.0, 1.0)
    return float(min(upper, lower))


class AppendixReport(BaseModel):
    m: float
    k: int
    delta_k: float
    threshold: float
    a_m: float
    chebyshev_tail: float
    max_f: float
    truncated_mass: float
    tail_ok: bool
    bound_applies: bool
    bound_ok: bool
    passed: bool


def attenuation_terms(
    m: float, support: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(n, w_m(n), f_m(n)) on 0..m + 12 sqrt(m)."""
    top = int(math.ceil(m + 12.0 * math.sqrt(m))) if support is None else support
    n = np.arange(top + 1)
    w = poisson.pmf(n, m)
    f = (np.cos(np.sqrt(n / m) * np.pi / 4.0) - 1.0 / np.sqrt(2.0)) ** 2
    return n, w, f


def appendix_bound_check(m: float, k: int) -> AppendixReport:
    """Chebyshev tail <= 3/k^2, and a_m < 4/k^2 whenever m > k^2 / delta_k^2."""
    if m <= 0:
        raise InputError(f"m must be positive, got {m}")
    dk = delta_k(k)
    threshold = k**2 / dk**2
    n, w, f = attenuation_terms(m)
    truncated = float(poisson.sf(n[-1], m))
    a_m = float(np.sum(w * f))
    outside = np.abs(n - m) > k * np.sqrt(m)
    tail = float(np.sum(w[outside] * f[outside])) + 3.0 * truncated
    applies = m > threshold
    tail_ok = tail <= 3.0 / k**2
    bound_ok = (a_m + 3.0 * truncated < 4.0 / k**2) if applies else True
    return AppendixReport(
        m=m,
        k=k,
        delta_k=dk,
        threshold=threshold,
        a_m=a_m,
        chebyshev_tail=tail,
        max_f=float(f.max()),
        truncated_mass=truncated,
        tail_ok=tail_ok,
        bound_applies=bool(applies),
        bound_ok=bound_ok,
        passed=bool(tail_ok and bound_ok and f.max() <= 3.0),
    )


# --- compose / evolve / separate ---


class PipelineReport(BaseModel):
    model: str
    invariance: float
    reduced_state: List[List[float]]


def www_pipeline(
    rho_s: Operator, rho_r: Operator, u: Operator, repS: NumberRep, repR: NumberRep
) -> Tuple[Operator, float]:
    """
    Compose invariant states, evolve, twirl, trace out the reference. Returns the reduced
    system state and its invariance residual.
    """
    composed = kron(twirl_op(as_operator(rho_s), repS), twirl_op(as_operator(rho_r), repR))
    total = composite_rep(repS, repR)
    evolved = twirl_op(u @ composed @ u.adjoint(), total)
    reduced = partial_trace(evolved, [0])
    return reduced, norm(twirl_op(reduced, repS) - reduced)


def _diag(p: Sequence[float]) -> Operator:
    return Operator.of(np.diag(np.asarray(p, dtype=float)))


def www_all_models(j: int = 4, theta: float = 0.7, cutoff: int = 8) -> Dict[str, PipelineReport]:
    """Run the pipeline through every model coupling, system starting in its lowest level."""
    ground = _diag([1, 0])
    lattice1 = QubitLattice((0, 1))
    lattice2 = QubitLattice(range(-j - 1, j + 2))
    lattice3 = QubitLattice(range(cutoff + 1))
    window = np.zeros(lattice2.size)
    window[1:-1] = np.abs(angle_state(j, 0.3)) ** 2
    flat = np.full(cutoff + 1, 1.0 / (cutoff + 1))

    q = 4.0
    c = required_cutoff(q)
    cavity = number_rep(range(c + 1))
    poisson_weights = _diag(np.abs(coherent_amplitudes(q, c)) ** 2)

    cases = {
        "model1-u1": (lattice1, lattice1.coupling(theta_block(theta)), _diag([0, 1])),
        "model1-u2": (lattice1, lattice1.coupling(HADAMARD_BLOCK), _diag([0, 1])),
        "model2-u1": (lattice2, lattice2.coupling(theta_block(theta)), _diag(window)),
        "model3-u1": (lattice3, lattice3.coupling(theta_block(theta)), _diag(flat)),
    }
    runs = {
        tag: (u, lat.rep_s, lat.rep_r, ground, rho_r) for tag, (lat, u, rho_r) in cases.items()
    }
    runs["as-cavity"] = (
        cavity_coupling(c, np.pi / 8.0, 1.0), NUCLEON_REP, cavity, ground, poisson_weights
    )
    runs["dowling-u1"] = (dowling_coupling(c, q), CONDENSATE_REP, cavity, ground, poisson_weights)

    out = {}
    for tag, (u, rep_s, rep_r, rho_s, rho_r) in runs.items():
        reduced, residual = www_pipeline(rho_s, rho_r, u, rep_s, rep_r)
        out[tag] = PipelineReport(
            model=tag, invariance=residual, reduced_state=reduced.entries.real.tolist()
        )
        logger.debug(f"Compose/evolve/separate {tag}: invariance residual {residual:.3g}")
    return out
