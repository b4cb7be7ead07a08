import numpy as np
import pytest

from relframes.core.errors import DimensionMismatch, InputError
from relframes.services.opcore import PAULI, Operator, kron
from relframes.services.pom import PhaseMatrix, build_phase_pom, localised_state, pom_validate
from relframes.services.relmap import (
    CyclicRep,
    characteristic_function,
    choi_min_eigenvalue,
    cyclic_difference_check,
    fourier_components,
    high_localisation_defects,
    homomorphism_residual,
    identity_reference_state,
    leakage,
    localised_characteristic,
    phase_average,
    pom_fourier,
    relative_phase_pom,
    relativisation_symmetry_residual,
    relativize,
    relativize_cyclic,
    relativize_pom,
    restrict,
    restrict_after_relativize,
    restriction_covariance_residual,
    shift_operator,
)
from relframes.services.sampling import (
    random_hermitian,
    random_phase_matrix,
    random_state,
    trial_rng,
)
from relframes.services.symmetry import number_rep, twirl_op

NODES = 64


def density_nodes(c: PhaseMatrix):
    """Trapezoid nodes and the phase-POM density c_kl exp(i(n_k - n_l)theta) at each."""
    labels = c.labels
    thetas = 2.0 * np.pi * np.arange(NODES) / NODES
    for theta in thetas:
        yield theta, c.c * np.exp(1j * (labels[:, None] - labels[None, :]) * theta)


@pytest.fixture
def rng():
    return trial_rng(101)


def test_fourier_components_sum_to_operator(rng):
    """Test that the eigenvalue-difference blocks add back to the operator"""
    rep = number_rep((0, 1, 3))
    a = random_hermitian(3, rng)
    blocks = fourier_components(a, rep)
    assert blocks.total().allclose(a)
    assert set(blocks.blocks) == {-3, -2, -1, 0, 1, 2, 3}


def test_pom_fourier_against_quadrature(rng):
    """Test Fhat(q) against exact quadrature of the POM density"""
    c = PhaseMatrix(random_phase_matrix(4, rng))
    fhat = pom_fourier(c)
    for q, block in fhat.items():
        oracle = sum(np.exp(1j * q * t) * f for t, f in density_nodes(c)) / NODES
        assert np.max(np.abs(block.entries - oracle)) < 1e-8


def test_relativize_against_quadrature(rng):
    """Test rel(A) = int U_S A U_S^* (x) F(dtheta) by exact quadrature"""
    rep = number_rep((0, 1, 2))
    c = PhaseMatrix(random_phase_matrix(4, rng))
    a = random_hermitian(3, rng)
    oracle = np.zeros((12, 12), dtype=np.complex128)
    for theta, f in density_nodes(c):
        u = rep.unitary(theta)
        oracle += np.kron((u @ a @ u.adjoint()).entries, f)
    oracle /= NODES
    assert np.max(np.abs(relativize(a, rep, c).entries - oracle)) < 1e-8


def test_relativize_identity_and_symmetry(rng):
    """Test rel(1) = 1 and invariance of relativised operators"""
    rep = number_rep((0, 1))
    c = PhaseMatrix.canonical(5)
    assert relativize(Operator.identity((2,)), rep, c).allclose(Operator.identity((2, 5)))
    a = random_hermitian(2, rng)
    assert relativisation_symmetry_residual(a, rep, c) < 1e-10


def test_relativisation_is_completely_positive(rng):
    """Test that the Choi operator of the relativisation map is positive"""
    rep = number_rep((0, 1, 2))
    c = PhaseMatrix(random_phase_matrix(3, rng))
    assert choi_min_eigenvalue(rep, c) > -1e-10


def test_restrict_of_product(rng):
    """Test that restricting a product operator scales the system part"""
    a = random_hermitian(2, rng)
    b = random_hermitian(3, rng)
    omega = random_state(3, rng)
    expected = a * np.trace(omega.entries @ b.entries)
    assert restrict(kron(a, b), omega).allclose(expected)
    with pytest.raises(InputError):
        restrict(a, omega)


def test_restrict_after_relativize_matches_two_steps(rng):
    """Test the characteristic-function shortcut against relativise-then-restrict"""
    rep = number_rep((0, 1, 2))
    c = PhaseMatrix(random_phase_matrix(4, rng))
    a = random_hermitian(3, rng)
    omega = random_state(4, rng)
    direct = restrict(relativize(a, rep, c), omega)
    assert restrict_after_relativize(a, omega, rep, c).allclose(direct)


def test_characteristic_function_of_localised_state():
    """Test mu(1) = n/(n+1) for the localised state on n + 1 levels"""
    c = PhaseMatrix.canonical(6)
    mu = characteristic_function(localised_state(c.spectrum), c)
    assert abs(mu[0] - 1.0) < 1e-12
    assert abs(mu[1] - 5.0 / 6.0) < 1e-12
    assert abs(mu[-1] - 5.0 / 6.0) < 1e-12


def test_localised_characteristic_closed_form():
    """Test (d - |q|)/d against the characteristic function of the localised state"""
    c = PhaseMatrix.canonical(7)
    general = characteristic_function(localised_state(c.spectrum), c)
    closed = localised_characteristic(7)
    assert set(closed) == set(range(-6, 7))
    for q, value in closed.items():
        assert abs(general.get(q, 0.0) - value) < 1e-12
    with pytest.raises(InputError):
        localised_characteristic(0)


def test_phase_average_matches_restriction(rng):
    """Test the closed-form phase average against restrict after relativize"""
    rep = number_rep((0, 1, 2))
    a = random_hermitian(3, rng)
    c = PhaseMatrix.canonical(9)
    direct = restrict_after_relativize(a, localised_state(c.spectrum), rep, c)
    assert phase_average(a, rep, localised_characteristic(9)).allclose(direct)
    assert phase_average(a, rep, {}).allclose(Operator.zeros((3,)))


def test_high_localisation_defects_decay():
    """Test D(A, restrict(rel(A))) = 1/(2(n+1)) for the equal-weight qubit effect"""
    a = Operator.of(0.5 * np.ones((2, 2)))
    defects = high_localisation_defects(a, number_rep((0, 1)), (1, 4, 16))
    for n, value in defects.items():
        assert abs(value - 0.5 / (n + 1)) < 1e-12


def test_restriction_covariance(rng):
    """Test covariance of restriction for invariant references and its failure otherwise"""
    rep_s = number_rep((0, 1))
    rep_r = number_rep((0, 1, 2))
    r = random_hermitian(6, rng, (2, 3))
    invariant = twirl_op(random_state(3, rng).rho, rep_r)
    assert restriction_covariance_residual(r, invariant, rep_s, rep_r) < 1e-10

    plus = np.array([1.0, 1.0]) / np.sqrt(2.0)
    xx = kron(PAULI["X"], PAULI["X"])
    qubit = number_rep((0, 1))
    assert restriction_covariance_residual(xx, plus, qubit, qubit) > 1.0


def test_leakage_when_reference_is_too_small():
    """Test that frequencies the reference cannot carry are reported"""
    rep = number_rep(range(4))
    a = Operator.of(np.ones((4, 4)) / 4.0)
    assert leakage(a, rep, PhaseMatrix.canonical(2)) > 0.1
    assert leakage(a, rep, PhaseMatrix.canonical(4)) == 0.0


def test_relativize_dimension_mismatch():
    """Test that the system operator must match the system representation"""
    with pytest.raises(DimensionMismatch):
        relativize(Operator.identity((3,)), number_rep((0, 1)), PhaseMatrix.canonical(2))


def test_cyclic_relativisation():
    """Test sharp position relativises to the difference coordinate and is a homomorphism"""
    assert cyclic_difference_check(5) < 1e-12
    rng = trial_rng(4)
    rep = CyclicRep(4, shift_operator(4), sector_dim=2)
    a = random_hermitian(4, rng)
    b = random_hermitian(4, rng)
    assert homomorphism_residual(a, b, rep) < 1e-10
    omega = identity_reference_state(rep, rng)
    assert restrict(relativize_cyclic(a, rep), omega).allclose(a)


def test_cyclic_generator_must_have_group_order():
    """Test that V^G = 1 is enforced"""
    with pytest.raises(InputError):
        CyclicRep(2, Operator.of(np.diag([1.0, 1j])))


def test_relative_phase_pom_is_valid():
    """Test the relativised phase observable is a normalised positive POM"""
    rep = number_rep((0, 1))
    f = relative_phase_pom(rep, PhaseMatrix.canonical(2), PhaseMatrix.canonical(4), bins=8)
    report = pom_validate(f)
    assert report.passed
    assert f.dims == (2, 4)


def test_relativize_pom_maps_each_effect():
    """Test that relativising a POM keeps its outcomes and yields a POM on S (x) R"""
    rep = number_rep((0, 1))
    c = PhaseMatrix.canonical(3)
    e = build_phase_pom(2, bins=4)
    out = relativize_pom(e, rep, c)
    assert out.space.labels == e.space.labels
    assert out.dims == (2, 3)
    assert pom_validate(out).passed
    for before, after in zip(e.effects, out.effects):
        assert after.allclose(relativize(before, rep, c))
