import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import poisson

from relframes.core.errors import InputError, TruncationError
from relframes.services import models
from relframes.services.opcore import Operator, is_unitary
from relframes.services.pom import PhaseMatrix
from relframes.services.relmap import relative_phase_pom
from relframes.services.sampling import random_conserving_unitary, random_unitary, trial_rng
from relframes.services.symmetry import composite_rep, number_rep


# Building blocks


def test_coherent_amplitudes_are_normalised():
    """Test the truncated coherent state and its tail certificate"""
    cutoff = models.required_cutoff(9.0)
    amp = models.coherent_amplitudes(9.0, cutoff, 0.3)
    assert abs(np.linalg.norm(amp) - 1.0) < 1e-12
    assert poisson.sf(cutoff, 9.0) < 1e-8
    assert cutoff >= 9 + 30


def test_check_cutoff_raises_with_required_value():
    """Test that a short cutoff reports the cutoff it needs"""
    needed = models.required_cutoff(16.0)
    with pytest.raises(TruncationError) as exc:
        models.check_cutoff(16.0, 10)
    assert exc.value.required_cutoff == needed
    assert exc.value.exit_code == 2
    assert models.check_cutoff(16.0, None) == needed


def test_couplings_are_unitary_and_conserving():
    """Test every model coupling for unitarity and charge conservation"""
    lattice = models.QubitLattice(range(-3, 4))
    for block in (models.theta_block(0.4), models.HADAMARD_BLOCK):
        u = lattice.coupling(block)
        assert is_unitary(u)
        assert models.conservation_residual(u, lattice.total) < 1e-12
    cavity = models.cavity_coupling(12, 0.2, 1.0)
    total = composite_rep(models.NUCLEON_REP, number_rep(range(13)))
    assert is_unitary(cavity)
    assert models.conservation_residual(cavity, total) < 1e-12
    dowling = models.dowling_coupling(12, 5.0)
    total = composite_rep(models.CONDENSATE_REP, number_rep(range(13)))
    assert is_unitary(dowling)
    assert models.conservation_residual(dowling, total) < 1e-12


def test_model_config_forbids_unknown_fields():
    """Test that model configuration is strict"""
    with pytest.raises(ValidationError):
        models.ModelConfig(name="as", colour="blue")


# Qubit / lattice interference


@pytest.mark.parametrize("theta", [0.0, 0.7, np.pi / 2.0, 2.5, np.pi])
def test_model1_probability(theta):
    """Test p0 = cos^2(theta/2) with and without twirling"""
    run = models.model1_run(theta)
    assert abs(run.probabilities["p0"] - np.cos(theta / 2.0) ** 2) < 1e-12
    assert run.residuals["twirl_agreement"] < 1e-12
    assert run.conservation < 1e-12


@pytest.mark.parametrize("j", [1, 3, 4, 6, 16, 64])
def test_model2_error_norm_law(j):
    """Test the error norm 1/(2j+1) and the maximally mixed reduced state"""
    run = models.model2_run(j, 0.9, 0.4)
    assert run.residuals["error_norm_law"] < 1e-14
    assert abs(run.norms["error_norm_sq"] - 1.0 / (2 * j + 1)) < 1e-13
    assert run.residuals["reduced_state"] < 1e-12
    assert run.residuals["sector_decomposition"] < 1e-12
    assert run.residuals["basis_theta_drift"] < 1e-12
    assert run.norms["sectors"] == 2 * j + 1
    assert abs(run.probabilities["p0_after_u1"] - 0.5) < 1e-12


def test_model2_rejects_small_window():
    """Test that the angle-state window needs j >= 1"""
    with pytest.raises(InputError):
        models.model2_run(0, 0.0, 0.0)


def test_model2_relative_phase_is_blind_to_twirl():
    """Test that relative-phase statistics agree on twirled and untwirled final states"""
    j, thetas = 2, [0.0, 1.1, np.pi]
    rows = models.model2_relative_phase_scan(j, thetas, bins=8)
    lattice = models.QubitLattice(range(-j - 1, j + 2))
    c_ref = PhaseMatrix.canonical(lattice.size, lattice.labels)
    rel = relative_phase_pom(lattice.rep_s, PhaseMatrix.canonical(2), c_ref, 8)
    for theta, row in zip(thetas, rows):
        final = models.model2_run(j, theta, 0.0).states["final"]
        assert np.allclose(row, rel.probabilities(final), atol=1e-12)
        assert abs(row.sum() - 1.0) < 1e-12


def test_model2_relative_phase_depends_on_theta():
    """Test that relative-phase bins at j=4 move with theta"""
    thetas = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    rows = models.model2_relative_phase_scan(4, thetas, bins=8)
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert np.ptp(rows, axis=0).max() > 0.05


def test_model2_angle_variance_shrinks():
    """Test that the angle state sharpens around theta' as j grows"""
    variances = [models.model2_run(j, 0.9, 0.4).norms["angle_variance"] for j in (1, 4, 16, 64)]
    assert all(b < a for a, b in zip(variances, variances[1:]))
    assert variances[-1] < 0.05


@pytest.mark.parametrize(
    "lattice",
    [
        models.QubitLattice((0, 1)),
        models.QubitLattice(range(-5, 6)),
        models.QubitLattice(range(7)),
    ],
    ids=["model1", "model2", "model3"],
)
def test_number_reference_is_blind_to_theta(lattice):
    """Test that number-state references leave invariant system statistics theta-independent"""
    assert models.basis_input_theta_drift(lattice, 0.3, samples=16) < 1e-10
    for n in [n for n in lattice.labels if n - 1 in lattice.labels]:
        p0 = []
        for theta in np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False):
            moved = lattice.coupling(models.theta_block(theta)).entries @ lattice.basis(0, n)
            p0.append(np.vdot(moved, lattice.system_zero().entries @ moved).real)
        assert np.ptp(p0) < 1e-10


def test_model3_probability_and_ground_state():
    """Test Model 3 interference and the fixed vacuum"""
    run = models.model3_run(6, 1.3, n=2)
    assert run.residuals["p0_formula"] < 1e-12
    assert run.residuals["ground_fixed"] == 0.0
    with pytest.raises(InputError):
        models.model3_run(1, 0.0)
    with pytest.raises(InputError):
        models.model3_run(6, 0.0, n=0)


# Qubit relativisation


@pytest.mark.parametrize("n", [1, 9, 99, 600, 10000])
def test_qubit_demo_factors(n):
    """Test <sigma_1> scales by n/(n+1) and <sigma_3> is unchanged"""
    run = models.qubit_demo(n)
    assert abs(run.probabilities["sigma1_factor"] - n / (n + 1.0)) < 1e-12
    assert run.residuals["sigma1_factor"] < 1e-12
    assert abs(run.probabilities["sigma3"] - np.cos(np.pi / 4.0)) < 1e-12
    for name in ("sigma_x", "sigma_y", "sigma_z"):
        assert run.residuals[name] < 1e-10
    assert run.residuals["tail_bound"] == 0.0


@pytest.mark.parametrize("n", [10, 100, 1000, 10000])
def test_qubit_demo_tail(n):
    """Test the localisation tail against 8 (n+1)^-eps at eps = 1/2"""
    run = models.qubit_demo(n, epsilon=0.5)
    assert -1e-12 <= run.probabilities["tail"] <= run.norms["tail_bound"]
    assert run.residuals["tail_bound"] == 0.0
    assert abs(run.norms["bin_width"] - (n + 1.0) ** -0.25) < 1e-15


def test_qubit_demo_full_and_closed_form_agree():
    """Test the full relativisation against the closed-form characteristic function"""
    full = models.qubit_demo(models.FULL_RELATIVISATION_LIMIT - 1)
    closed = models.qubit_demo(models.FULL_RELATIVISATION_LIMIT)
    for run, n in ((full, 511), (closed, 512)):
        assert abs(run.probabilities["sigma1_factor"] - n / (n + 1.0)) < 1e-12


def test_qubit_demo_rejects_zero_truncation():
    """Test that the reference needs at least two levels"""
    with pytest.raises(InputError):
        models.qubit_demo(0)


# Nucleon / cavity model


def test_as_run_default():
    """Test number-state input formula, conservation and tail certificates"""
    run = models.as_run(models.ModelConfig(name="as", n=2))
    assert run.residuals["number_input_formula"] < 1e-10
    assert run.conservation < 1e-10
    assert 0.0 <= run.probabilities["proton_final"] <= 1.0
    assert run.tails["cavity1_tail"] < 1e-8
    assert run.probabilities["theta_variation"] > 0.5


def test_as_run_short_cutoff():
    """Test that a cutoff below the tail requirement is an input error"""
    with pytest.raises(TruncationError):
        models.as_run(models.ModelConfig(name="as", cutoff=10))


def test_as_number_reference_removes_phase_dependence():
    """Test that a number-state second cavity makes the outcome independent of theta"""
    cfg = models.ModelConfig(name="as", q1=9.0, q2=9.0)
    assert models.as_phase_variation(cfg, number_reference=True) < 1e-10
    assert models.as_phase_variation(cfg) > 0.1


def test_as_product_infidelity_shrinks_with_intensity():
    """Test that the product approximation improves at fixed pulse area"""
    weak = models.as_product_infidelity(4.0, np.pi / 4.0)
    strong = models.as_product_infidelity(100.0, np.pi / 4.0)
    assert -1e-12 <= strong < weak


def test_as_nogo_bound_for_conserving_unitaries():
    """Test the 2 - sqrt2 distance bound for random charge-conserving couplings"""
    cutoff = 5
    total = composite_rep(models.NUCLEON_REP, number_rep(range(cutoff + 1)))
    for t in range(5):
        u = random_conserving_unitary(total, trial_rng(13, t))
        report = models.as_nogo_check(2, u, cutoff)
        assert report.passed
        assert report.distance >= 2.0 - np.sqrt(2.0) - 1e-10


def test_as_nogo_rejects_non_conserving_unitary():
    """Test that the no-go check only accepts conserving couplings"""
    u = random_unitary(12, trial_rng(1), (2, 6))
    with pytest.raises(InputError):
        models.as_nogo_check(2, u, 5)
    with pytest.raises(InputError):
        models.as_nogo_check(2, Operator.identity((2, 4)), 5)


# Atom / molecule model


def test_dowling_formula_and_budget():
    """Test the closed-form atom probability and the asymptotic error budget"""
    run = models.dowling_run(25.0, 1.2)
    assert run.residuals["atom_formula"] < 1e-10
    assert run.residuals["asymptotic_budget"] == 0.0
    assert run.conservation < 1e-12
    total = run.probabilities["atom"] + run.probabilities["molecule"]
    assert abs(total - 1.0) < 1e-10


def test_dowling_approaches_product_state():
    """Test that the error norm shrinks as the condensate grows"""
    small = models.dowling_run(25.0, 1.2).norms["error_norm"]
    large = models.dowling_run(400.0, 1.2).norms["error_norm"]
    assert large < small


def test_dowling_attenuation_shrinks():
    """Test that beta_A1 approaches beta/sqrt2 as the condensate grows"""
    distances = [models.dowling_run(m, 1.2).norms["beta_a1_distance"] for m in (25.0, 100.0, 400.0)]
    assert all(b < a for a, b in zip(distances, distances[1:]))


def test_dowling_rejects_empty_condensate():
    """Test that the condensate needs a positive mean number"""
    with pytest.raises(InputError):
        models.dowling_run(0.0, 1.0)


# Chebyshev bound


def test_delta_k_values():
    """Test delta_2 and the ordering of delta_k"""
    assert abs(models.delta_k(2) - 2.008) < 1e-2
    assert 0.0 < models.delta_k(10) < models.delta_k(2)
    with pytest.raises(InputError):
        models.delta_k(1)


def test_appendix_bound():
    """Test the Chebyshev tail and attenuation bounds"""
    report = models.appendix_bound_check(100.0, 2)
    assert report.bound_applies
    assert report.tail_ok
    assert report.bound_ok
    assert report.max_f <= 3.0
    assert report.passed


@pytest.mark.parametrize("k", range(2, 11))
def test_appendix_bound_over_k(k):
    """Test both appendix bounds just above the threshold m > k^2 / delta_k^2"""
    threshold = k**2 / models.delta_k(k) ** 2
    report = models.appendix_bound_check(1.2 * threshold + 1.0, k)
    assert report.bound_applies
    assert report.tail_ok
    assert report.bound_ok
    assert report.passed


# Compose / evolve / separate


def test_pipeline_keeps_reduced_states_invariant():
    """Test that the reduced system state stays invariant for every model coupling"""
    reports = models.www_all_models(j=2, theta=0.7, cutoff=4)
    assert set(reports) == {
        "model1-u1",
        "model1-u2",
        "model2-u1",
        "model3-u1",
        "as-cavity",
        "dowling-u1",
    }
    for report in reports.values():
        assert report.invariance < 1e-10
        assert abs(np.trace(np.array(report.reduced_state)) - 1.0) < 1e-10
