import logging
import math

import numpy as np
import pytest
import scipy.constants as const

from rfcrystal.equilibrium import (EquilibriumOptions, IonCrystal, Phase, PhaseTolerances, PseudoHarmonicTrap,
                                   classify_phase, find_equilibrium, locate_planarity_transition,
                                   nearest_neighbor_distances, potential_gradient, potential_hessian,
                                   total_potential, trap_for_ratio)
from rfcrystal.errors import ConvergenceError, NotConvergedError, SingularityError
from rfcrystal.trap_model import YB171

from conftest import MEASURED_OMEGA, MHZ

K = const.e**2 / (4 * math.pi * const.epsilon_0)
OMEGA_R = 0.446 * MHZ


def naive_energy(trap, x):
    m = trap.species.mass
    e = 0.0
    for i in range(len(x)):
        for a in range(3):
            e += 0.5 * m * trap.omega[a] ** 2 * x[i, a] ** 2
        for j in range(i + 1, len(x)):
            e += K / math.dist(x[i], x[j])
    return e


def random_positions(rng, n, scale=5e-6):
    return rng.normal(size=(n, 3)) * scale


@pytest.fixture
def trap():
    return PseudoHarmonicTrap(MEASURED_OMEGA, YB171)


# --- potential -----------------------------------------------------------------------

def test_trap_rejects_nonpositive_frequency():
    with pytest.raises(ValueError):
        PseudoHarmonicTrap((1.0, 0.0, 1.0), YB171)


def test_single_ion_at_origin_has_zero_energy_and_force(trap):
    assert total_potential(trap, np.zeros((1, 3))) == 0.0
    assert not potential_gradient(trap, np.zeros((1, 3))).any()


def test_two_ions_coulomb_term(trap):
    d = 7e-6
    x = np.array([[-d / 2, 0, 0], [d / 2, 0, 0]])
    trap_energy = 0.5 * YB171.mass * trap.omega[0] ** 2 * 2 * (d / 2) ** 2
    assert total_potential(trap, x) - trap_energy == pytest.approx(K / d, rel=1e-12)


def test_energy_matches_double_loop(trap, rng):
    for _ in range(5):
        x = random_positions(rng, 3)
        assert total_potential(trap, x) == pytest.approx(naive_energy(trap, x), rel=1e-12)


def test_energy_is_permutation_invariant(trap, rng):
    x = random_positions(rng, 6)
    assert total_potential(trap, x[rng.permutation(6)]) == pytest.approx(total_potential(trap, x), rel=1e-14)


def test_coincident_ions_raise(trap):
    with pytest.raises(SingularityError):
        total_potential(trap, np.zeros((2, 3)))
    with pytest.raises(SingularityError):
        potential_gradient(trap, np.ones((3, 3)))


def test_gradient_zero_at_two_ion_analytic_equilibrium(trap):
    # weak axis x: m w^2 d/2 = K / d^2
    d = (2 * K / (YB171.mass * trap.omega[0] ** 2)) ** (1 / 3)
    x = np.array([[-d / 2, 0, 0], [d / 2, 0, 0]])
    scale = YB171.mass * trap.omega[0] ** 2 * d
    assert np.abs(potential_gradient(trap, x)).max() <= 1e-10 * scale


def fd_gradient(trap, x, h=1e-9):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        for a in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i, a] += h
            xm[i, a] -= h
            g[i, a] = (total_potential(trap, xp) - total_potential(trap, xm)) / (2 * h)
    return g


def test_gradient_matches_finite_differences_five_ions(trap, rng):
    x = random_positions(rng, 5)
    g = potential_gradient(trap, x)
    assert np.abs(g - fd_gradient(trap, x, h=1e-9)).max() <= 1e-6 * np.abs(g).max()


def test_gradient_matches_finite_differences_50_configurations(trap):
    # random draws put some pairs ~0.3 um apart; a 0.1 nm step keeps the
    # difference quotient's own truncation error below the tolerance there
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(50):
        n = 2 + k % 7
        x = random_positions(rng, n)
        g = potential_gradient(trap, x)
        fd = fd_gradient(trap, x, h=1e-10)
        worst = max(worst, np.abs(g - fd).max() / np.abs(g).max())
    assert worst <= 1e-6


def test_hessian_matches_gradient_differences(trap, rng):
    x = random_positions(rng, 4)
    h = potential_hessian(trap, x)
    step = 1e-10
    fd = np.zeros_like(h)
    for k in range(12):
        dx = np.zeros(12)
        dx[k] = step
        fd[:, k] = (potential_gradient(trap, x + dx.reshape(4, 3)) -
                    potential_gradient(trap, x - dx.reshape(4, 3))).ravel() / (2 * step)
    assert np.abs(h - fd).max() <= 1e-6 * np.abs(h).max()
    np.testing.assert_allclose(h, h.T, atol=1e-12 * np.abs(h).max())


# --- equilibrium search -----------------------------------------------------------------

def test_single_ion_sits_at_origin(trap):
    c = find_equilibrium(trap, 1)
    assert c.converged and np.abs(c.positions).max() < 1e-15
    assert c.phase == Phase.LINEAR


def test_two_ion_spacing_matches_analytic_balance(trap):
    c = find_equilibrium(trap, 2, seed=3)
    # oracle: (Q^2 / (2 pi eps0 m w_x^2))^(1/3) in mpmath, w_x = 2 pi 0.416 MHz
    assert np.linalg.norm(c.positions[0] - c.positions[1]) == pytest.approx(6.19660926102508e-06, rel=1e-9)
    assert abs(c.positions[0, 0] - c.positions[1, 0]) == pytest.approx(6.19660926102508e-06, rel=1e-9)


def test_zero_ions_rejected(trap):
    with pytest.raises(ValueError):
        find_equilibrium(trap, 0)


def test_17_ion_crystal_matches_independent_minimizer(crystal17):
    # oracle: scipy BFGS over in-plane coordinates from 60 random starts
    assert crystal17.energy == pytest.approx(4.52177941586e-21, rel=1e-9)
    nn = nearest_neighbor_distances(crystal17.positions)
    assert np.median(nn) == pytest.approx(5.657924038e-6, rel=1e-6)
    assert nn.min() == pytest.approx(5.615590857e-6, rel=1e-6)
    assert nn.max() == pytest.approx(6.616814485e-6, rel=1e-6)


def test_17_ion_crystal_is_planar_with_central_ion(crystal17):
    x = crystal17.positions
    assert crystal17.phase == Phase.RADIAL_2D
    assert np.ptp(x[:, 2]) < 1e-9
    r = np.sort(np.linalg.norm(x[:, :2], axis=1))
    assert r[0] < 1e-9 and r[1] > 4e-6
    assert np.median(nearest_neighbor_distances(x)) == pytest.approx(5e-6, rel=0.15)


def test_17_ion_lattice_is_triangular(crystal17):
    # the central ion has six nearest neighbours at the lattice spacing
    x = crystal17.positions[:, :2]
    centre = np.argmin(np.linalg.norm(x, axis=1))
    d = np.sort(np.linalg.norm(x - x[centre], axis=1))[1:]
    assert np.all(d[:6] < 1.1 * d[0]) and d[6] > 1.5 * d[0]


def test_equilibrium_energy_below_initial_configuration(trap, rng):
    x0 = random_positions(rng, 6)
    c = find_equilibrium(trap, 6, initial=x0, options=EquilibriumOptions(n_restarts=1))
    assert c.energy <= total_potential(trap, x0)
    assert c.gradient_norm <= 1e-18


def test_equilibrium_is_deterministic(trap):
    a = find_equilibrium(trap, 7, seed=11)
    b = find_equilibrium(trap, 7, seed=11)
    assert np.array_equal(a.positions, b.positions)
    assert a.energy == b.energy


def test_equilibrium_set_is_permutation_invariant(trap, rng):
    c = find_equilibrium(trap, 5, seed=2)
    shuffled = c.positions[rng.permutation(5)]
    d = find_equilibrium(trap, 5, initial=shuffled, options=EquilibriumOptions(n_restarts=1))
    key = lambda p: p[np.lexsort(np.round(p.T, 12))]  # noqa: E731
    np.testing.assert_allclose(key(d.positions), key(c.positions), atol=1e-12)


def test_spacing_scales_as_two_thirds_power(trap):
    s = 1.7
    a = find_equilibrium(trap, 3, seed=1)
    b = find_equilibrium(trap.scaled(s), 3, seed=1)
    da = np.sort(nearest_neighbor_distances(a.positions))
    db = np.sort(nearest_neighbor_distances(b.positions))
    np.testing.assert_allclose(db, da * s ** (-2 / 3), rtol=1e-6)


def test_nonconvergence_carries_best_configuration():
    trap = trap_for_ratio(2.6, OMEGA_R, YB171)
    opts = EquilibriumOptions(max_steps=10, newton_steps=0, n_restarts=2)
    with pytest.raises(ConvergenceError) as err:
        find_equilibrium(trap, 17, options=opts)
    assert err.value.best is not None and not err.value.best.converged
    assert err.value.gradient_norm > 0


def test_degenerate_radial_frequencies_are_logged(caplog):
    trap = PseudoHarmonicTrap((OMEGA_R, OMEGA_R, 3 * OMEGA_R), YB171)
    with caplog.at_level(logging.INFO, logger="rfcrystal.equilibrium"):
        c = find_equilibrium(trap, 4, options=EquilibriumOptions(n_restarts=2))
    assert "orientation is arbitrary" in caplog.text
    assert c.phase == Phase.RADIAL_2D


# --- phase classification --------------------------------------------------------------

def test_classify_refuses_unconverged():
    c = IonCrystal(np.eye(3), 0.0, 1.0, False, None, 0)
    with pytest.raises(NotConvergedError):
        classify_phase(c)


def _phase(n, ratio, anisotropy=1.0):
    return find_equilibrium(trap_for_ratio(ratio, OMEGA_R, YB171, anisotropy), n, seed=0).phase


def test_chain_below_zigzag_onset_is_linear():
    # oracle: transverse Coulomb matrix of the 5-ion chain softens at 0.40040
    assert _phase(5, 0.35) == Phase.LINEAR
    assert _phase(10, 0.1) == Phase.LINEAR


def test_five_ions_at_half_ratio_form_zigzag():
    assert _phase(5, 0.5) == Phase.ZIGZAG
    assert _phase(5, 0.5, anisotropy=0.446 / 0.416) == Phase.ZIGZAG


def test_intermediate_ratio_is_three_dimensional():
    assert _phase(5, 1.0, anisotropy=0.446 / 0.416) == Phase.THREE_D


def test_17_ions_with_measured_frequencies_planar(crystal17):
    assert classify_phase(crystal17) == Phase.RADIAL_2D


def test_17_ions_planar_above_soft_mode_instability():
    # oracle: out-of-plane soft mode of the planar crystal vanishes at 2.1258 for the
    # measured 0.416 / 0.446 MHz radial pair, so 2.3 is already planar
    anis = 0.446 / 0.416
    assert _phase(17, 2.3, anis) == Phase.RADIAL_2D
    assert _phase(17, 2.0, anis) != Phase.RADIAL_2D


def test_classification_tolerance_controls_flatness(crystal17):
    assert classify_phase(crystal17, PhaseTolerances(extent=1e-40)) != Phase.RADIAL_2D


@pytest.mark.parametrize("n, oracle", [(5, 1.3281310335721561), (10, 1.92153443167555), (17, 2.195526305997693)])
def test_planarity_transition_matches_soft_mode_oracle(n, oracle):
    res = locate_planarity_transition(n, OMEGA_R, YB171, 0.8, 2.6, rel_tol=1e-3)
    assert res.ratio == pytest.approx(oracle, rel=2e-3)
    assert res.bracket[0] < res.ratio < res.bracket[1]


def test_transition_bracket_validation():
    with pytest.raises(ValueError):
        locate_planarity_transition(5, OMEGA_R, YB171, 2.0, 3.0)


def test_orientation_follows_weak_axis(trap):
    c = find_equilibrium(trap, 2)
    assert abs(c.orientation) < 1e-9
