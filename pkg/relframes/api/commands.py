"""
Command table. Each handler turns a validated RunConfig into a CommandResult; the
router stamps it into a Report.
"""

import time
from typing import Any, Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import binom

from relframes import __version__
from relframes.api.schemas import Report, RunConfig
from relframes.core.config import settings
from relframes.core.errors import InputError
from relframes.core.logging import get_logger
from relframes.services import bounds, coherence, measure, models
from relframes.services.opcore import Operator, kron
from relframes.services.pom import OutcomeSpace, Pom, build_phase_pom, norm1_defect, pom_validate
from relframes.services.sampling import (
    random_conserving_unitary,
    random_hermitian,
    random_pure_state,
    random_state,
    trial_rng,
)
from relframes.services.symmetry import composite_rep, number_rep

logger = get_logger(__name__)

Handler = Callable[[RunConfig], "CommandResult"]


def plain(value: Any) -> Any:
    """Numpy scalars and arrays inside results become builtin values."""
    if isinstance(value, dict):
        return {k: plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


class CommandResult(BaseModel):
    results: Dict[str, Any] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    tails: Dict[str, float] = Field(default_factory=dict)

    def check(self, name: str, residual: float, tolerance: float) -> None:
        self.residuals[name] = float(residual)
        self.tolerances[name] = float(tolerance)


class CommandRouter:
    def __init__(self):
        self.handlers: Dict[str, Handler] = {}

    def command(self, name: str):
        def register(fn: Handler) -> Handler:
            self.handlers[name] = fn
            return fn

        return register

    def dispatch(self, cfg: RunConfig, provenance: Optional[Dict[str, str]] = None) -> Report:
        handler = self.handlers[cfg.command]
        start = time.perf_counter()
        out = handler(cfg)
        elapsed = time.perf_counter() - start
        passed = all(abs(r) <= out.tolerances[k] for k, r in out.residuals.items())
        logger.info(f"Command {cfg.command} finished in {elapsed:.3f}s (pass={passed})")
        return Report(
            command=cfg.command,
            version=__version__,
            seed=cfg.seed,
            parameters=cfg.model_dump(exclude={"format", "output"}),
            provenance=provenance or {},
            results=plain(out.results),
            residuals=out.residuals,
            tolerances=out.tolerances,
            tails=plain(out.tails),
            passed=passed,
            wall_clock=elapsed,
        )


router = CommandRouter()

EXACT = 1e-12
CONSERVED = 1e-10


def run_command(cfg: RunConfig, provenance: Optional[Dict[str, str]] = None) -> Report:
    return router.dispatch(cfg, provenance)


def _model_config(cfg: RunConfig, name: str) -> models.ModelConfig:
    return models.ModelConfig(
        name=name,
        theta=cfg.theta,
        theta_prime=cfg.theta_prime,
        j=cfg.j,
        n=cfg.n if cfg.n is not None else 0,
        cutoff=cfg.cutoff,
        q1=cfg.q1,
        q2=cfg.q2,
        m=cfg.m,
        g=cfg.g,
        T=cfg.T,
        phi=cfg.phi,
        epsilon=cfg.epsilon,
    )


def _from_run(run: models.ModelRun, tolerances: Dict[str, float]) -> CommandResult:
    out = CommandResult(results={**run.probabilities, **run.norms}, tails=dict(run.tails))
    for name, residual in run.residuals.items():
        out.check(name, residual, tolerances.get(name, EXACT))
    out.check("conservation", run.conservation, CONSERVED)
    return out


# --- models ---


@router.command("model1")
def model1(cfg: RunConfig) -> CommandResult:
    return _from_run(models.model1_run(cfg.theta), {})


@router.command("model2")
def model2(cfg: RunConfig) -> CommandResult:
    run = models.model2_run(cfg.j, cfg.theta, cfg.theta_prime)
    return _from_run(run, {"error_norm_law": 1e-13})


@router.command("model3")
def model3(cfg: RunConfig) -> CommandResult:
    cutoff = cfg.cutoff or 8
    n = cfg.n if cfg.n is not None else 3
    return _from_run(models.model3_run(cutoff, cfg.theta, n), {})


@router.command("qubit")
def qubit(cfg: RunConfig) -> CommandResult:
    n = cfg.n if cfg.n is not None else 9
    return _from_run(models.qubit_demo(n, cfg.epsilon), {"tail_bound": 0.0})


@router.command("as")
def as_model(cfg: RunConfig) -> CommandResult:
    run = models.as_run(_model_config(cfg, "as"))
    return _from_run(run, {"number_input_formula": CONSERVED})


@router.command("as-nogo")
def as_nogo(cfg: RunConfig) -> CommandResult:
    """No-go distance for ``trials`` random charge-conserving couplings."""
    cutoff = cfg.cutoff or 6
    i = cfg.n if cfg.n is not None else 2
    if i >= cutoff:
        raise InputError(f"input level {i} must lie below the cutoff {cutoff}")
    total = composite_rep(models.NUCLEON_REP, number_rep(range(cutoff + 1)))
    distances = []
    for t in range(cfg.trials):
        u = random_conserving_unitary(total, trial_rng(cfg.seed, t))
        distances.append(models.as_nogo_check(i, u, cutoff).distance)
    bound = 2.0 - np.sqrt(2.0)
    out = CommandResult(results={"min_distance": min(distances), "bound": bound})
    out.check("nogo_bound", max(bound - min(distances), 0.0), CONSERVED)
    return out


@router.command("dowling")
def dowling(cfg: RunConfig) -> CommandResult:
    run = models.dowling_run(cfg.m, cfg.phi, cfg.cutoff, cfg.theta)
    return _from_run(run, {"atom_formula": CONSERVED})


@router.command("appendix")
def appendix(cfg: RunConfig) -> CommandResult:
    report = models.appendix_bound_check(cfg.m, cfg.k)
    out = CommandResult(
        results=report.model_dump(exclude={"tail_ok", "bound_ok", "passed"}),
        tails={"truncated_mass": report.truncated_mass},
    )
    out.check("chebyshev_tail", max(report.chebyshev_tail - 3.0 / cfg.k**2, 0.0), 0.0)
    excess = max(report.a_m - 4.0 / cfg.k**2, 0.0) if report.bound_applies else 0.0
    out.check("attenuation_bound", excess, 0.0)
    out.check("f_bound", max(report.max_f - 3.0, 0.0), 0.0)
    return out


# --- bounds and coherence ---


@router.command("bounds")
def bounds_sweep(cfg: RunConfig) -> CommandResult:
    report = bounds.run_sweep(cfg.which, cfg.trials, cfg.seed)
    out = CommandResult(results=report.model_dump(exclude={"passed"}))
    out.check("violation", max(-report.min_residual, 0.0), settings.ATOL)
    return out


@router.command("coherence")
def coherence_sweep(cfg: RunConfig) -> CommandResult:
    """Closed form against its witness, and M <= min(C_S, C_R) on random products."""
    witness_gap = excess = 0.0
    rep_s = number_rep((0, 1))
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        d_ref = 2 + t % 2
        rep_r = number_rep(range(d_ref))
        theta = random_state(2 * d_ref, rng, (2, d_ref))
        value = coherence.mutual_coherence(theta, rep_s, rep_r)
        _, attained = coherence.mutual_coherence_witness(theta, rep_s, rep_r)
        witness_gap = max(witness_gap, abs(value - attained))

        rho_s = random_pure_state(2, rng).rho
        rho_r = random_pure_state(d_ref, rng).rho
        product = coherence.mutual_coherence(kron(rho_s, rho_r), rep_s, rep_r)
        cap = min(
            coherence.absolute_coherence(rho_s, rep_s),
            coherence.absolute_coherence(rho_r, rep_r),
        )
        excess = max(excess, product - cap)
    out = CommandResult(results={"trials": cfg.trials})
    out.check("witness_gap", witness_gap, 1e-8)
    out.check("product_bound", max(excess, 0.0), CONSERVED)
    return out


@router.command("pom-validate")
def pom_check(cfg: RunConfig) -> CommandResult:
    d = (cfg.n if cfg.n is not None else 3) + 1
    f = build_phase_pom(d, bins=cfg.bins)
    report = pom_validate(f, number_rep(range(d)))
    out = CommandResult(
        results={
            "dimension": d,
            "bins": len(f),
            "norm1_defect": norm1_defect(f),
            "norm1_defect_with_zero": norm1_defect(f, include_zero=True),
        }
    )
    out.check("positivity", report.positivity, report.tolerance)
    out.check("normalization", report.normalization, report.tolerance)
    out.check("covariance", report.covariance, report.tolerance)
    return out


# --- measurement ---


def _swap_scheme(d: int) -> measure.MeasurementScheme:
    """SWAP coupling, number-projection pointer, apparatus in |0>."""
    swap = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            swap[j * d + i, i * d + j] = 1.0
    projections = tuple(Operator.of(np.diag(np.eye(d)[k])) for k in range(d))
    pointer = Pom(OutcomeSpace.finite(range(d)), projections)
    return measure.MeasurementScheme(Operator.of(swap, (d, d)), pointer, np.eye(d)[0])


def _scheme_and_charges(cfg: RunConfig):
    if cfg.scheme:
        scheme, charges = measure.load_scheme(cfg.scheme)
    else:
        scheme, charges = _swap_scheme(3), {}
    l_s = charges.get("system", number_rep(range(scheme.system_dim)).number_operator())
    l_a = charges.get("apparatus", number_rep(range(scheme.apparatus_dim)).number_operator())
    return scheme, l_s, l_a


@router.command("way")
def way(cfg: RunConfig) -> CommandResult:
    scheme, l_s, l_a = _scheme_and_charges(cfg)
    report = measure.way_report(scheme, l_s, l_a)
    out = CommandResult(results=report.model_dump())
    out.check("contrapositive", 0.0 if report.consistent else report.commutation, 0.0)
    return out


def strong_way_summary(reports) -> CommandResult:
    """Worst residual over measured trials; any skipped trial fails the run."""
    measured = [r.residual for r in reports if not r.skipped]
    skipped = len(reports) - len(measured)
    worst = max(measured, default=0.0)
    if skipped:
        logger.warning(f"{skipped} of {len(reports)} trials had no invariance hypothesis")
    out = CommandResult(results={"trials": len(reports), "skipped": skipped, "max_residual": worst})
    out.check("invariance", worst, 1e-9)
    out.check("skipped", float(skipped), 0.0)
    return out


@router.command("strong-way")
def strong_way(cfg: RunConfig) -> CommandResult:
    """Random couplings exp(i L_S (x) K) unless a scheme file is given."""
    if cfg.scheme:
        scheme, l_s, _ = _scheme_and_charges(cfg)
        report = measure.strong_way_check(scheme, l_s)
        out = CommandResult(results=report.model_dump())
        if not report.skipped:
            out.check("invariance", report.residual, 1e-9)
        return out
    d_s, d_a = 2, 3
    l_s = number_rep(range(d_s)).number_operator()
    projections = tuple(Operator.of(np.diag(np.eye(d_a)[k])) for k in range(d_a))
    pointer = Pom(OutcomeSpace.finite(range(d_a)), projections)
    reports = []
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        k = random_hermitian(d_a, rng)
        u = measure.conserving_coupling(l_s, k)
        phi = random_pure_state(d_a, rng).rho
        scheme = measure.MeasurementScheme(u, pointer, phi)
        reports.append(measure.strong_way_check(scheme, l_s))
    return strong_way_summary(reports)


@router.command("smear")
def smear(cfg: RunConfig) -> CommandResult:
    """Binomial kernel of variance k against a reference with binomial |phi|^2 of variance j."""
    kernel = binom.pmf(np.arange(4 * cfg.k + 1), 4 * cfg.k, 0.5)
    phi = np.sqrt(binom.pmf(np.arange(4 * cfg.j + 1), 4 * cfg.j, 0.5))
    report = measure.smeared_restriction_check(kernel, phi / np.linalg.norm(phi), (-1, 0, 1))
    out = CommandResult(results=report.model_dump(exclude={"restricted", "passed"}))
    out.check("effect", report.effect_residual, EXACT)
    out.check("variance", report.variance_residual, EXACT)
    out.check("width", 0.0 if report.width_ok else 1.0, 0.0)
    return out
