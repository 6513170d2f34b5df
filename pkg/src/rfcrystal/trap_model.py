"""Single-ion description of a linear rf trap.

Curvature bookkeeping, Mathieu parameters, secular frequencies (pseudopotential
and exact monodromy), the radial-2D aspect-ratio threshold and the leading-order
micromotion amplitudes.

All quantities are SI. Curvatures ``eta`` are potential curvatures per volt, so
the electrostatic potential is ``U0 * sum(eta_dc * r**2) + V0 cos(Omega t) *
sum(eta_rf * r**2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.constants as const

from .errors import DeconfiningCurvatureError, LaplaceError, UnstableMathieuError

AXES = ("x", "y", "z")

#: relative tolerance on sum(eta) compared to max |eta|
LAPLACE_TOL = 1e-9
#: half-trace margin beyond which monodromy eigenvalues count as off the unit circle
UNIT_CIRCLE_TOL = 1e-8
#: default bound on q**2 for the pseudopotential validity flag
PSEUDO_Q2_MAX = 0.1


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: float = const.e
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"ion mass must be positive, got {self.mass}")
        if not self.charge > 0:
            raise ValueError(f"ion charge must be positive, got {self.charge}")


YB171 = IonSpecies(mass=170.936323 * const.atomic_mass, charge=const.e, name="171Yb+")


def _triple(values) -> tuple[float, float, float]:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"expected three components, got {len(out)}")
    return out


def _check_laplace(name: str, eta: tuple[float, float, float], tol: float) -> None:
    scale = max(abs(e) for e in eta)
    if scale == 0.0:
        return
    if abs(sum(eta)) > tol * scale:
        raise LaplaceError(
            f"{name} curvatures sum to {sum(eta):.6g} 1/m^2 (relative {abs(sum(eta)) / scale:.3g} > {tol:g})",
            field=name,
        )


@dataclass(frozen=True)
class TrapConfiguration:
    """Voltages, drive, sizes and quadratic field curvatures of a linear trap."""

    species: IonSpecies
    rf_amplitude: float
    dc_voltage: float
    drive_frequency: float  # angular, rad/s
    radial_size: float
    axial_size: float
    eta_rf: tuple[float, float, float]
    eta_dc: tuple[float, float, float]
    laplace_tol: float = LAPLACE_TOL

    def __post_init__(self):
        object.__setattr__(self, "eta_rf", _triple(self.eta_rf))
        object.__setattr__(self, "eta_dc", _triple(self.eta_dc))
        if not self.drive_frequency > 0:
            raise ValueError("drive frequency must be positive")
        if not (self.radial_size > 0 and self.axial_size > 0):
            raise ValueError("trap sizes d0 and z0 must be positive")
        _check_laplace("eta_rf", self.eta_rf, self.laplace_tol)
        _check_laplace("eta_dc", self.eta_dc, self.laplace_tol)

    @classmethod
    def ideal(cls, species, rf_amplitude, dc_voltage, drive_frequency, radial_size, axial_size,
              kappa=1.0, chi=1.0, gamma=1.0, laplace_tol=LAPLACE_TOL):
        """Hyperbolic-electrode preset matching the analytic quadrupole potential.

        ``eta_rf = (1, -1, 0) / (2 d0**2)`` and
        ``eta_dc = (-chi/2, -gamma/2, 1) * kappa / z0**2``.
        """
        eta_rf = (0.5 / radial_size**2, -0.5 / radial_size**2, 0.0)
        eta_dc = tuple(c * kappa / axial_size**2 for c in (-chi / 2, -gamma / 2, 1.0))
        return cls(species, rf_amplitude, dc_voltage, drive_frequency, radial_size, axial_size,
                   eta_rf, eta_dc, laplace_tol)

    @classmethod
    def fitted(cls, species, rf_amplitude, dc_voltage, drive_frequency, radial_size, axial_size,
               target_omega, laplace_tol=LAPLACE_TOL):
        """Curvatures chosen so the pseudopotential frequencies equal ``target_omega``.

        The rf field is taken purely radial (``eta_rf_z = 0``, ``eta_rf_x = -eta_rf_y > 0``);
        its strength follows from the Laplace sum rule ``sum(omega**2) = Omega**2 q_r**2 / 4``.
        """
        wx, wy, wz = (float(w) for w in target_omega)
        m, Q = species.mass, species.charge
        if dc_voltage == 0 or rf_amplitude == 0:
            raise ValueError("fitting curvatures needs non-zero U0 and V0")
        if min(wx, wy, wz) <= 0:
            raise ValueError("target frequencies must be positive")
        omega_sq = wx**2 + wy**2 + wz**2
        q_r = 2.0 * math.sqrt(omega_sq) / drive_frequency
        eta_r = q_r * m * drive_frequency**2 / (4.0 * Q * rf_amplitude)
        rf_part = drive_frequency**2 * q_r**2 / 8.0
        eta_dc = (
            m * (wx**2 - rf_part) / (2.0 * Q * dc_voltage),
            m * (wy**2 - rf_part) / (2.0 * Q * dc_voltage),
            m * wz**2 / (2.0 * Q * dc_voltage),
        )
        # enforce the sum rule exactly; the fit is Laplace-closed up to rounding
        eta_dc = (eta_dc[0], eta_dc[1], -(eta_dc[0] + eta_dc[1]))
        return cls(species, rf_amplitude, dc_voltage, drive_frequency, radial_size, axial_size,
                   (eta_r, -eta_r, 0.0), eta_dc, laplace_tol)

    def with_voltages(self, rf_amplitude=None, dc_voltage=None) -> "TrapConfiguration":
        return TrapConfiguration(
            self.species,
            self.rf_amplitude if rf_amplitude is None else rf_amplitude,
            self.dc_voltage if dc_voltage is None else dc_voltage,
            self.drive_frequency, self.radial_size, self.axial_size,
            self.eta_rf, self.eta_dc, self.laplace_tol,
        )


@dataclass(frozen=True)
class GeometricFactors:
    kappa: float
    chi: float
    gamma: float


def geometry_factors(config: TrapConfiguration) -> GeometricFactors:
    """Extract kappa, chi, gamma from the dc curvatures."""
    ex, ey, ez = config.eta_dc
    if not ez > 0:
        raise DeconfiningCurvatureError(f"axially deconfining dc curvature: eta_dc_z = {ez:.6g} 1/m^2")
    z0sq = config.axial_size**2
    kappa = z0sq * ez
    chi = -2.0 * z0sq * ex / kappa
    gamma = -2.0 * z0sq * ey / kappa
    return GeometricFactors(kappa, chi, gamma)


def ideal_q(config: TrapConfiguration) -> float:
    """Closed-form radial q of an ideal quadrupole, 2 Q V0 / (m d0^2 Omega^2)."""
    sp = config.species
    return 2.0 * sp.charge * config.rf_amplitude / (sp.mass * config.radial_size**2 * config.drive_frequency**2)


class SecularFrequencies(NamedTuple):
    omega: np.ndarray  # rad/s; nan where a + q^2/2 < 0
    stable: np.ndarray  # bool per axis; marginal (omega == 0) counts as unstable


def secular_frequencies_pseudo(model: "SecularModel", drive_frequency: float | None = None) -> SecularFrequencies:
    """omega_i = (Omega/2) sqrt(a_i + q_i^2/2), with unstable axes flagged."""
    omega_t = model.omega_t if drive_frequency is None else drive_frequency
    beta_sq = model.a + model.q**2 / 2.0
    with np.errstate(invalid="ignore"):
        omega = np.where(beta_sq >= 0.0, 0.5 * omega_t * np.sqrt(np.maximum(beta_sq, 0.0)), np.nan)
    stable = beta_sq > 0.0
    return SecularFrequencies(omega, stable)


@dataclass(frozen=True)
class SecularModel:
    """Per-axis Mathieu parameters and the derived pseudopotential motion."""

    a: np.ndarray
    q: np.ndarray
    omega_t: float
    pseudo_q2_max: float = PSEUDO_Q2_MAX

    @cached_property
    def _freqs(self) -> SecularFrequencies:
        return secular_frequencies_pseudo(self)

    @property
    def omega(self) -> np.ndarray:
        return self._freqs.omega

    @property
    def stable(self) -> np.ndarray:
        return self._freqs.stable

    @property
    def beta(self) -> np.ndarray:
        return 2.0 * self.omega / self.omega_t

    @property
    def pseudo_valid(self) -> np.ndarray:
        """Per-axis flag for a < q^2 << 1; a purely static axis (q = 0, a > 0) is exact."""
        q2 = self.q**2
        static = (self.q == 0.0) & (self.a > 0.0)
        return static | ((self.a < q2) & (q2 <= self.pseudo_q2_max))

    @property
    def omega_r(self) -> float:
        """Radial frequency used in the aspect-ratio criterion: the stiffer radial axis."""
        return float(max(self.omega[0], self.omega[1]))

    def numeric_beta(self, tol: float = 1e-9) -> list[float | None]:
        """Exact characteristic exponents per axis; None where the motion is unstable."""
        out = []
        for a, q in zip(self.a, self.q):
            try:
                out.append(characteristic_exponent_numeric(float(a), float(q), tol))
            except UnstableMathieuError:
                out.append(None)
        return out


def mathieu_parameters(config: TrapConfiguration, pseudo_q2_max: float = PSEUDO_Q2_MAX) -> SecularModel:
    """a_i = 8 Q U0 eta_dc_i / (m Omega^2), q_i = -4 Q V0 eta_rf_i / (m Omega^2)."""
    sp = config.species
    scale = sp.charge / (sp.mass * config.drive_frequency**2)
    a = 8.0 * scale * config.dc_voltage * np.asarray(config.eta_dc)
    q = -4.0 * scale * config.rf_amplitude * np.asarray(config.eta_rf)
    a.setflags(write=False)
    q.setflags(write=False)
    return SecularModel(a, q, config.drive_frequency, pseudo_q2_max)


def _monodromy(a: float, q: float, steps: int) -> tuple[float, float, float, float]:
    """Fundamental matrix of u'' + (a - 2q cos 2x) u = 0 over x in [0, pi], classic RK4."""
    h = math.pi / steps
    h2 = 0.5 * h
    u1, v1, u2, v2 = 1.0, 0.0, 0.0, 1.0
    two_q = 2.0 * q
    for k in range(steps):
        x = k * h
        w0 = a - two_q * math.cos(2.0 * x)
        wm = a - two_q * math.cos(2.0 * (x + h2))
        w1 = a - two_q * math.cos(2.0 * (x + h))
        # both columns share the same coefficient samples
        k1u1, k1v1 = v1, -w0 * u1
        k1u2, k1v2 = v2, -w0 * u2
        k2u1, k2v1 = v1 + h2 * k1v1, -wm * (u1 + h2 * k1u1)
        k2u2, k2v2 = v2 + h2 * k1v2, -wm * (u2 + h2 * k1u2)
        k3u1, k3v1 = v1 + h2 * k2v1, -wm * (u1 + h2 * k2u1)
        k3u2, k3v2 = v2 + h2 * k2v2, -wm * (u2 + h2 * k2u2)
        k4u1, k4v1 = v1 + h * k3v1, -w1 * (u1 + h * k3u1)
        k4u2, k4v2 = v2 + h * k3v2, -w1 * (u2 + h * k3u2)
        u1 += h / 6.0 * (k1u1 + 2.0 * k2u1 + 2.0 * k3u1 + k4u1)
        v1 += h / 6.0 * (k1v1 + 2.0 * k2v1 + 2.0 * k3v1 + k4v1)
        u2 += h / 6.0 * (k1u2 + 2.0 * k2u2 + 2.0 * k3u2 + k4u2)
        v2 += h / 6.0 * (k1v2 + 2.0 * k2v2 + 2.0 * k3v2 + k4v2)
    return u1, u2, v1, v2


def _beta_from_monodromy(a: float, q: float, steps: int) -> float:
    m11, m12, m21, m22 = _monodromy(a, q, steps)
    half_trace = 0.5 * (m11 + m22)
    if abs(half_trace) > 1.0 + UNIT_CIRCLE_TOL:
        growth = abs(half_trace) + math.sqrt(half_trace**2 - 1.0)
        raise UnstableMathieuError(a, q, growth)
    # the potential is even, so m11 == m22 and sin^2(pi beta) = -m12 m21; this keeps
    # precision for small beta where arccos(half_trace) would not
    sin_sq = max(-m12 * m21, 0.0)
    return math.atan2(math.sqrt(sin_sq), half_trace) / math.pi


def characteristic_exponent_numeric(a: float, q: float, tol: float = 1e-9,
                                    steps: int = 4096, max_steps: int = 1 << 18) -> float:
    """Characteristic exponent beta of the Mathieu equation from its monodromy matrix.

    The step count doubles from ``steps`` until halving the step changes beta by
    less than ``tol``. Raises :class:`UnstableMathieuError` when the monodromy
    eigenvalues leave the unit circle.
    """
    beta = _beta_from_monodromy(a, q, steps)
    while True:
        steps *= 2
        refined = _beta_from_monodromy(a, q, steps)
        if abs(refined - beta) < tol or steps >= max_steps:
            return refined
        beta = refined


def aspect_ratio_threshold(n_ions: int) -> float:
    """Minimum omega_z / omega_r for a radial-2D crystal of ``n_ions``: (2.264 N)^(1/4)."""
    if n_ions < 1:
        raise ValueError(f"ion count must be >= 1, got {n_ions}")
    return (2.264 * n_ions) ** 0.25


@dataclass(frozen=True)
class MicromotionFirstOrder:
    r1: np.ndarray  # N x 3, amplitude of the cos(Omega t) term
    r2: np.ndarray  # N x 3, amplitude of the cos(2 Omega t) term

    @property
    def amplitude(self) -> np.ndarray:
        """Per-ion magnitude of the first-order term."""
        return np.linalg.norm(self.r1, axis=1)


def first_order_micromotion(crystal, model: SecularModel) -> MicromotionFirstOrder:
    """Leading-order micromotion, r1 = q r0 / 2 and r2 = q^2 r0 / 32 componentwise."""
    positions = np.atleast_2d(np.asarray(getattr(crystal, "positions", crystal), dtype=float))
    q = np.asarray(model.q)
    return MicromotionFirstOrder(positions * q / 2.0, positions * q**2 / 32.0)


def frequency_sensitivity(model: SecularModel) -> np.ndarray:
    """d omega_i / d ln V0 at fixed U0 and Omega, from the pseudopotential formula.

    q scales with V0 while a does not, so d(beta^2)/d ln V0 = q^2.
    """
    beta = model.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(beta > 0, model.omega_t * model.q**2 / (4.0 * beta), np.nan)
