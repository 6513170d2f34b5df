"""Brute-force reference for the driven crystal: the exact rf-periodic orbit of the full equations.

The ions move in ``0.5 * Lambda_a(t) r_a**2`` plus Coulomb repulsion, with no
pseudopotential or linearisation. A uniform static force per ion holds the
reference positions in place when they are not a pseudopotential equilibrium
(off-center single ion). The periodic orbit is located by Newton shooting on the
one-period map, starting from the reference positions at rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.constants as const
from scipy.integrate import solve_ivp

from .equilibrium import PseudoHarmonicTrap, potential_gradient
from .errors import ConvergenceError

COULOMB_K = 1.0 / (4.0 * np.pi * const.epsilon_0)


@dataclass(frozen=True)
class PeriodicOrbit:
    times: np.ndarray  # seconds, one drive period
    positions: np.ndarray  # len(times) x N x 3, meters
    newton_iterations: int
    closure: float  # |y(T) - y(0)| in natural units

    def amplitude(self) -> np.ndarray:
        """Per-ion, per-axis half peak-to-peak excursion over the period."""
        return 0.5 * np.ptp(self.positions, axis=0)


def _rhs_factory(rf, static, mass, bias, l, omega_t):
    # natural units: length l, time 1/omega_t, energy m omega_t^2 l^2
    k_static = static / (mass * omega_t**2)
    k_rf = rf / (mass * omega_t**2)
    coul = COULOMB_K * const.e**2 / (mass * omega_t**2 * l**3)
    f_bias = bias / (mass * omega_t**2 * l)

    def rhs(t, y, charge_sq=1.0):
        n3 = len(y) // 2
        x = y[:n3].reshape(-1, 3)
        lam = k_static + k_rf * np.cos(t)
        acc = -lam * x + f_bias
        d = x[:, None, :] - x[None, :, :]
        r = np.sqrt((d**2).sum(-1))
        np.fill_diagonal(r, np.inf)
        acc = acc + coul * charge_sq * (d / r[..., None] ** 3).sum(1)
        return np.concatenate([y[n3:], acc.ravel()])

    return rhs


def periodic_orbit(trap: PseudoHarmonicTrap, rf, static, omega_t: float, reference,
                   samples: int = 256, rtol: float = 1e-11, tol: float = 1e-12,
                   max_iter: int = 20) -> PeriodicOrbit:
    """Exact drive-periodic orbit near ``reference`` (N x 3 meters).

    ``rf`` and ``static`` are the per-axis energy curvatures of
    ``Lambda_a(t) = static_a + rf_a cos(omega_t t)`` in J/m^2.
    """
    ref = np.asarray(reference, dtype=float).reshape(-1, 3)
    sp = trap.species
    l = trap.length_scale
    # static force that makes ``reference`` a stationary point of the secular energy
    bias = potential_gradient(trap, ref).reshape(-1, 3)
    charge_ratio = (sp.charge / const.e) ** 2
    rhs0 = _rhs_factory(np.asarray(rf), np.asarray(static), sp.mass, bias, l, omega_t)

    def rhs(t, y):
        return rhs0(t, y, charge_ratio)

    period = 2.0 * np.pi
    y = np.concatenate([ref.ravel() / l, np.zeros(ref.size)])
    dim = len(y)

    def flow(y0):
        sol = solve_ivp(rhs, (0.0, period), y0, method="DOP853", rtol=rtol, atol=rtol * 1e-3)
        return sol.y[:, -1]

    closure = np.inf
    for it in range(1, max_iter + 1):
        end = flow(y)
        resid = end - y
        closure = float(np.abs(resid).max())
        if closure < tol:
            break
        h = 1e-7
        jac = np.empty((dim, dim))
        for j in range(dim):
            dy = np.zeros(dim)
            dy[j] = h
            jac[:, j] = (flow(y + dy) - flow(y - dy)) / (2 * h)
        y = y - np.linalg.solve(jac - np.eye(dim), resid)
    else:
        raise ConvergenceError(f"periodic orbit shooting did not close: {closure:.3g}")

    t_nat = np.linspace(0.0, period, samples, endpoint=False)
    sol = solve_ivp(rhs, (0.0, period), y, method="DOP853", rtol=rtol, atol=rtol * 1e-3, t_eval=t_nat)
    pos = sol.y[: dim // 2].T.reshape(samples, -1, 3) * l
    return PeriodicOrbit(t_nat / omega_t, pos, it, closure)
