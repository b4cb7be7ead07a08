import numpy as np
import pytest

from relframes.core.errors import DimensionMismatch, InputError
from relframes.services.opcore import Operator, State, norm
from relframes.services.pom import (
    OutcomeSpace,
    PhaseMatrix,
    Pom,
    build_phase_pom,
    interval_probability,
    localisation_margin,
    localised_state,
    merge_bins,
    norm1_defect,
    phase_distribution,
    pom_to_json,
    pom_validate,
    smeared_position_pom,
)
from relframes.services.sampling import random_phase_matrix, random_state, random_vector, trial_rng
from relframes.services.symmetry import number_rep


@pytest.fixture
def rng():
    return trial_rng(31)


def test_canonical_phase_pom_is_valid():
    """Test positivity, normalisation and covariance of the canonical phase observable"""
    f = build_phase_pom(4, bins=16)
    report = pom_validate(f, number_rep(range(4)))
    assert report.passed
    assert report.covariance is not None
    assert len(f) == 16


def test_general_phase_pom_is_valid(rng):
    """Test that any valid phase matrix gives a covariant POM"""
    c = PhaseMatrix(random_phase_matrix(3, rng))
    report = pom_validate(build_phase_pom(3, c, bins=12), number_rep(range(3)))
    assert report.passed


def test_invalid_phase_matrix():
    """Test that a non-positive kernel is rejected, or flagged when built unchecked"""
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(InputError):
        PhaseMatrix(bad)
    with pytest.raises(InputError):
        PhaseMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))
    report = pom_validate(build_phase_pom(2, bad, bins=8, strict=False))
    assert not report.passed
    assert report.positivity > 0.05


def test_canonical_kernel_skips_eigenvalue_check():
    """Test that the canonical kernel is built unchecked while explicit kernels are checked"""
    c = PhaseMatrix.canonical(5, range(-2, 3))
    assert not c.check_positive
    assert c.spectrum == (-2, -1, 0, 1, 2)
    assert PhaseMatrix(np.ones((3, 3))).check_positive
    with pytest.raises(InputError):
        PhaseMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), check_positive=True)


def test_phase_matrix_shape_mismatch():
    """Test that the kernel must match the Hilbert space dimension"""
    with pytest.raises(DimensionMismatch):
        build_phase_pom(3, PhaseMatrix.canonical(2), bins=4)


def test_norm1_defect_range():
    """Test that the norm-1 defect lies in [0, 1]"""
    defect = norm1_defect(build_phase_pom(3, bins=8))
    assert 0.0 <= defect <= 1.0


def test_localisation_margin_is_non_negative(rng):
    """Test tr(rho F(X)) <= d|X|/2pi for random states and bin sets"""
    f = build_phase_pom(3, bins=8)
    for _ in range(5):
        rho = random_state(3, rng)
        bins = rng.choice(8, size=3, replace=False)
        assert localisation_margin(rho, f, bins) >= -1e-12


def test_phase_distribution_matches_effects(rng):
    """Test the effect-free distribution against the built effects"""
    psi = random_vector(5, rng)
    f = build_phase_pom(5, bins=16)
    expected = f.probabilities(State.from_vector(psi))
    assert np.allclose(phase_distribution(psi, bins=16), expected, atol=1e-12)
    assert abs(phase_distribution(psi, bins=16).sum() - 1.0) < 1e-12


def test_phase_distribution_with_kernel(rng):
    """Test the kernel path of the distribution against the built effects"""
    c = PhaseMatrix(random_phase_matrix(4, rng))
    rho = random_state(4, rng)
    expected = build_phase_pom(4, c, bins=10).probabilities(rho)
    assert np.allclose(phase_distribution(rho, c, bins=10), expected, atol=1e-12)


def test_localised_state_probability():
    """Test the whole circle carries unit probability and the state peaks at its angle"""
    phi = localised_state(range(16), 1.0)
    assert abs(interval_probability(phi, 1.0 - np.pi, 1.0 + np.pi) - 1.0) < 1e-12
    near = interval_probability(phi, 0.8, 1.2)
    far = interval_probability(phi, 3.8, 4.2)
    assert near > far
    with pytest.raises(InputError):
        interval_probability(phi, 1.0, 0.0)


def test_pom_effect_count_must_match_outcomes():
    """Test that a POM needs one effect per outcome"""
    with pytest.raises(InputError):
        Pom(OutcomeSpace.finite((0, 1)), (Operator.of(np.eye(2)),))
    with pytest.raises(InputError):
        OutcomeSpace.finite((0, 0))


def test_merge_bins():
    """Test coarse-graining keeps normalisation and rejects non-partitions"""
    f = build_phase_pom(3, bins=4)
    merged = merge_bins(f, [(0, 1), (2, 3)])
    assert len(merged) == 2
    assert pom_validate(merged).passed
    with pytest.raises(InputError):
        merge_bins(f, [(0, 1), (2,)])


def test_smeared_position_pom():
    """Test the unsharp position observable on a cyclic lattice"""
    kernel = np.array([0.5, 0.25, 0.0, 0.25])
    f = smeared_position_pom(4, kernel)
    assert pom_validate(f).passed
    assert not f.is_sharp()
    assert norm(f.effect(0) - Operator.of(np.diag(kernel))) < 1e-12
    with pytest.raises(InputError):
        smeared_position_pom(4, np.array([0.5, 0.5, 0.5, 0.0]))


def test_pom_to_json_shape():
    """Test the report form of a POM"""
    data = pom_to_json(build_phase_pom(2, bins=3))
    assert data["space"]["kind"] == "circle"
    assert data["dims"] == [2]
    assert len(data["effects"]) == 3
    assert len(data["effects"][0]["real"]) == 2
