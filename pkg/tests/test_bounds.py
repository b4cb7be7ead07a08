import numpy as np
import pytest

from relframes.core.errors import InputError
from relframes.services.bounds import (
    OWB_EFFECT,
    metrics,
    number_spread,
    prop1_check,
    prop2_owb_check,
    run_sweep,
    tradeoff_check,
)
from relframes.services.opcore import Operator
from relframes.services.pom import OutcomeSpace, PhaseMatrix, localised_state
from relframes.services.relmap import high_localisation_defects, relativize
from relframes.services.sampling import random_effect, random_state, trial_rng
from relframes.services.symmetry import number_rep


@pytest.fixture
def rng():
    return trial_rng(2718)


def test_metrics():
    """Test the distance and the sharpness defect"""
    p = Operator.of(np.diag([1.0, 0.0]))
    assert metrics(p, p) == (0.0, 0.0)
    d, v = metrics(OWB_EFFECT, Operator.of(0.25 * np.eye(2)))
    assert abs(v) < 1e-12
    assert abs(d - 0.75) < 1e-12
    with pytest.raises(InputError):
        metrics(Operator.of([[0.0, 1.0], [0.0, 0.0]]), p)


def test_number_spread():
    """Test the number spread of a two-level superposition and a number state"""
    psi = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
    assert abs(number_spread(psi, (0, 1, 2)) - 1.0) < 1e-12
    assert number_spread(np.array([0.0, 1.0, 0.0]), (0, 1, 2)) == 0.0


def test_prop1_holds_for_random_effects(rng):
    """Test the approximation bound for random effects and localised references"""
    c = PhaseMatrix.canonical(12)
    omega = localised_state(c.spectrum)
    for _ in range(3):
        a = random_effect(3, rng)
        for eps in (0.05, 0.25):
            report = prop1_check(a, omega, c, eps)
            assert report.passed
            assert report.lhs >= 0.0


def test_owb_bounds_hold(rng):
    """Test both bad-localisation lower bounds"""
    c = PhaseMatrix.canonical(8)
    for omega in (localised_state(c.spectrum), random_state(8, rng).rho):
        width, spread = prop2_owb_check(omega, c)
        assert width.passed
        assert spread.passed


def test_owb_small_spread_branch():
    """Test the strict 1/32 bound for a number-state reference"""
    c = PhaseMatrix.canonical(4)
    _, spread = prop2_owb_check(np.eye(4)[2], c)
    assert spread.detail["spread"] == 0.0
    assert abs(spread.rhs - 0.5) < 1e-12
    assert spread.passed


def test_owb_width_report_names_binning_slack():
    """Test that the width bound records the two-bin allowance it subtracts"""
    c = PhaseMatrix.canonical(8)
    width, _ = prop2_owb_check(localised_state(c.spectrum), c, bins=32)
    assert abs(width.detail["binning_slack"] - 2.0 * OutcomeSpace.circle(32).bin_width) < 1e-15


@pytest.mark.slow
def test_high_localisation_grid(rng):
    """Test that defects fall along n = 16..512 and stay under the localisation bound"""
    rep = number_rep((0, 1, 2))
    grid = (16, 64, 256, 512)
    for _ in range(20):
        a = random_effect(3, rng)
        defects = high_localisation_defects(a, rep, grid)
        values = [defects[n] for n in grid]
        assert all(hi < lo for lo, hi in zip(values, values[1:]))
        c = PhaseMatrix.canonical(grid[-1] + 1)
        report = prop1_check(a, localised_state(c.spectrum), c, 0.1, rep)
        assert abs(report.lhs - values[-1]) < 1e-12
        assert report.passed


def test_tradeoff_bound(rng):
    """Test the trade-off inequality for a relativised effect"""
    rep_s = number_rep((0, 1))
    rep_r = number_rep(range(5))
    a = random_effect(2, rng)
    e = relativize(a, rep_s, PhaseMatrix.canonical(5))
    omega = random_state(5, rng).rho
    assert tradeoff_check(a, e, omega, rep_s, rep_r).passed


def test_tradeoff_needs_invariant_effect(rng):
    """Test that a non-invariant bipartite effect is rejected"""
    rep = number_rep((0, 1))
    e = Operator.of(0.5 * np.ones((4, 4)) / 2.0, (2, 2))
    with pytest.raises(InputError):
        tradeoff_check(OWB_EFFECT, e, np.array([1.0, 0.0]), rep, rep)


@pytest.mark.parametrize("which", ["prop1", "owb", "tradeoff"])
def test_sweeps_pass_and_are_reproducible(which):
    """Test that seeded sweeps pass and repeat exactly"""
    first = run_sweep(which, 3, 42)
    second = run_sweep(which, 3, 42)
    assert first.passed
    assert first.failures == []
    assert first.model_dump() == second.model_dump()
    assert first.prng == "philox4x64-10"


def test_sweep_rejects_unknown_family():
    """Test that an unknown sweep family is an input error"""
    with pytest.raises(InputError):
        run_sweep("nope", 1, 0)


@pytest.mark.slow
@pytest.mark.parametrize("which", ["prop1", "owb", "tradeoff"])
def test_sweeps_at_full_scale(which):
    """Test every bound family over 1000 seeded trials"""
    report = run_sweep(which, 1000, 7)
    assert report.trials == 1000
    assert report.failures == []
    assert report.passed
