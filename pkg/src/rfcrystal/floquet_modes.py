"""Normal modes and exact periodic micromotion of a driven ion crystal.

The motion about the pseudopotential equilibrium ``R0`` is expanded in the normal
modes ``S`` of the secular Hessian (``r = Gamma @ S``). In the drive phase
``xi = Omega t / 2`` the linearised equations read

    S'' + (A - 2 Q cos 2xi) S = G + 2 F cos 2xi

and the pi-periodic solution ``S = B0 + 2 sum_n B_2n cos(2 n xi)`` is obtained by a
matrix continued fraction for the tail ``B_{2n+2} = T_{2n} Q B_{2n}`` plus a 2x2
block solve for ``(B0, B2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import IonCrystal, PseudoHarmonicTrap, potential_hessian
from .errors import NotConvergedError, ResonanceError, UnstableConfigurationError
from .trap_model import TrapConfiguration

log = logging.getLogger(__name__)

#: condition number of the (B0, B2) block above which results are flagged untrusted
CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class TimeDependentTrapCoefficients:
    """Lambda_a(t) = static + rf cos(Omega t), energy curvature per axis (J/m^2).

    The trap energy of one ion is ``0.5 * sum_a Lambda_a(t) r_a**2``.
    """

    rf: np.ndarray  # A_alpha
    static: np.ndarray  # B_alpha
    omega_t: float

    def pseudo_omega(self, mass: float) -> np.ndarray:
        """Pseudopotential frequencies implied by the coefficients: B/m + A^2 / (2 m^2 Omega^2)."""
        w2 = self.static / mass + self.rf**2 / (2.0 * mass**2 * self.omega_t**2)
        with np.errstate(invalid="ignore"):
            return np.sqrt(w2)


def trap_coefficients(config: TrapConfiguration) -> TimeDependentTrapCoefficients:
    q = config.species.charge
    rf = 2.0 * q * config.rf_amplitude * np.asarray(config.eta_rf)
    static = 2.0 * q * config.dc_voltage * np.asarray(config.eta_dc)
    return TimeDependentTrapCoefficients(rf, static, config.drive_frequency)


@dataclass(frozen=True)
class ModeDecomposition:
    frequencies: np.ndarray  # 3N, rad/s, ascending
    mode_matrix: np.ndarray  # 3N x 3N; rows (ion, axis), columns modes
    equilibrium: IonCrystal

    @property
    def n_ions(self) -> int:
        return self.equilibrium.n_ions

    def participation(self) -> np.ndarray:
        """Fraction of each mode's weight along x, y, z; shape 3N x 3."""
        g = self.mode_matrix.reshape(self.n_ions, 3, -1)
        return np.einsum("iak,iak->ka", g, g)

    def com_frequencies(self) -> np.ndarray:
        """Frequencies of the modes with the largest overlap on uniform x, y, z translation."""
        n = self.n_ions
        out = np.empty(3)
        for a in range(3):
            v = np.zeros(3 * n)
            v[a::3] = 1.0 / np.sqrt(n)
            out[a] = self.frequencies[np.argmax(np.abs(v @ self.mode_matrix))]
        return out


def hessian_normal_modes(crystal: IonCrystal, trap: PseudoHarmonicTrap,
                         negative_tol: float = 1e-9) -> ModeDecomposition:
    """Mass-scaled eigen-decomposition of the secular Hessian at the equilibrium."""
    if not crystal.converged:
        raise NotConvergedError("normal modes need a converged crystal")
    h = potential_hessian(trap, crystal.positions)
    h = 0.5 * (h + h.T)
    evals, evecs = np.linalg.eigh(h / trap.species.mass)
    floor = negative_tol * abs(evals).max()
    if evals[0] < -floor:
        raise UnstableConfigurationError(0, float(evals[0]))
    freqs = np.sqrt(np.clip(evals, 0.0, None))
    # fix the sign of each eigenvector for reproducible output
    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * signs
    return ModeDecomposition(freqs, evecs, crystal)


@dataclass(frozen=True)
class MathieuSystem:
    A: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    F: np.ndarray
    P: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    omega_t: float = 0.0
    #: the (2,2) block entry of the (B0, B2) system is taken as C2 = A - 4
    block_identification: str = "R2 := C2 = A - 4"

    @property
    def size(self) -> int:
        return len(self.G)


def assemble_mathieu_system(decomp: ModeDecomposition, coeffs: TimeDependentTrapCoefficients,
                            trap: PseudoHarmonicTrap) -> MathieuSystem:
    """Linearised driven equations in mode space, scaled by 4 / (m Omega^2)."""
    n = decomp.n_ions
    gamma = decomp.mode_matrix
    if gamma.shape != (3 * n, 3 * n):
        raise ValueError(f"mode matrix shape {gamma.shape} does not match {n} ions")
    m = trap.species.mass
    omega_sec = np.asarray(trap.omega)
    r0 = np.asarray(decomp.equilibrium.positions, dtype=float).ravel()
    # V_trap - V_pseudo = R^T (W1 + W2 cos) R with the energy-per-coordinate weights
    w1 = np.tile(0.5 * (coeffs.static - m * omega_sec**2), n)
    w2 = np.tile(0.5 * coeffs.rf, n)
    gw1 = gamma.T * w1
    gw2 = gamma.T * w2
    P = 2.0 * gw1 @ r0
    L = 2.0 * gw2 @ r0
    J = gw1 @ gamma
    J = J + J.T
    Y = gw2 @ gamma
    Y = Y + Y.T
    stiffness = np.diag(m * decomp.frequencies**2)
    scale = 4.0 / (coeffs.omega_t**2 * m)
    A = (stiffness + J) * scale
    Q = -0.5 * Y * scale
    G = -P * scale
    F = -0.5 * L * scale
    return MathieuSystem(A, Q, G, F, P, L, J, Y, coeffs.omega_t)


@dataclass(frozen=True)
class ContinuedFraction:
    tails: list  # [T2, T4, ..., T_2depth]
    depth: int
    change: float  # relative change of T2 on the last depth increment
    converged: bool

    @property
    def t2(self) -> np.ndarray:
        return self.tails[0]


def _inverse(c: np.ndarray, n: int, cond_limit: float = 1e12) -> np.ndarray:
    if np.linalg.cond(c) > cond_limit:
        raise ResonanceError(f"resonant drive harmonic: C_{2 * n} = A - {4 * n * n} is singular", harmonic=n)
    return np.linalg.inv(c)


def _tails(system: MathieuSystem, depth: int) -> list:
    """T_2 ... T_2depth from the bottom up, with the recursion cut after C_{2(depth+1)}."""
    A, Q = system.A, system.Q
    eye = np.eye(system.size)
    t = _inverse(A - 4.0 * (depth + 1) ** 2 * eye, depth + 1)
    out = [t]
    for k in range(depth, 1, -1):
        t = _inverse(A - 4.0 * k**2 * eye - Q @ t @ Q, k)
        out.append(t)
    return out[::-1]


def continued_fraction_tail(system: MathieuSystem, depth: int = 10, tolerance: float = 1e-12) -> ContinuedFraction:
    """T2 = [C4 - Q [C6 - Q [...]^-1 Q]^-1 Q]^-1, deepened until it stops changing.

    Depth d keeps C4 ... C_{2(d+1)}; depth 1 is ``C4^-1``. The search stops at the
    first depth whose increment changes T2 by less than ``tolerance`` (relative,
    max-norm) or at ``depth``.
    """
    tails = _tails(system, 1)
    change = np.inf
    for d in range(2, depth + 1):
        deeper = _tails(system, d)
        norm = np.abs(deeper[0]).max()
        change = np.abs(deeper[0] - tails[0]).max() / norm if norm > 0 else 0.0
        tails = deeper
        if change < tolerance:
            return ContinuedFraction(tails, d, change, True)
    return ContinuedFraction(tails, depth, change, change < tolerance)


@dataclass(frozen=True)
class MicromotionSolution:
    coefficients: list  # [B0, B2, ..., B_2nmax], each 3N
    truncation_depth: int
    residual: float
    condition: float
    trusted: bool
    omega_t: float

    @property
    def n_max(self) -> int:
        return len(self.coefficients) - 1


def _residuals(system: MathieuSystem, b: list) -> float:
    A, Q, G, F = system.A, system.Q, system.G, system.F
    nmax = len(b) - 1
    get = lambda k: b[k] if k <= nmax else np.zeros_like(b[0])  # noqa: E731
    scale = max(np.abs(G).max(), np.abs(F).max(), np.abs(b[1]).max() * np.abs(A - 4).max(), 1e-300)
    res = [A @ b[0] - 2.0 * Q @ get(1) - G,
           (A - 4.0 * np.eye(len(G))) @ get(1) - Q @ (b[0] + get(2)) - F]
    for n in range(2, nmax):
        res.append((A - 4.0 * n * n * np.eye(len(G))) @ b[n] - Q @ (b[n - 1] + get(n + 1)))
    return float(max(np.abs(r).max() for r in res) / scale)


def solve_micromotion(system: MathieuSystem, tail: ContinuedFraction) -> MicromotionSolution:
    """Block solve for (B0, B2), then B_{2n+2} = T_2n Q B_2n down the tail."""
    A, Q = system.A, system.Q
    size = system.size
    eye = np.eye(size)
    t2 = tail.t2
    block = np.block([[A, -2.0 * Q], [-Q, (A - 4.0 * eye) - Q @ t2 @ Q]])
    cond = float(np.linalg.cond(block))
    if not np.isfinite(cond) or cond > 1e14:
        raise ResonanceError(f"parametric resonance vicinity: block condition number {cond:.3g}")
    rhs = np.concatenate([system.G, system.F])
    sol = np.linalg.solve(block, rhs)
    b = [sol[:size], sol[size:]]
    for t in tail.tails:
        b.append(t @ Q @ b[-1])
    residual = _residuals(system, b)
    trusted = cond <= CONDITION_LIMIT
    if not trusted:
        log.warning("micromotion block condition %.3g exceeds %.0e: result untrusted", cond, CONDITION_LIMIT)
    return MicromotionSolution(b, tail.depth, residual, cond, trusted, system.omega_t)


def mode_series(solution: MicromotionSolution, xi: np.ndarray) -> np.ndarray:
    """S(xi) = B0 + 2 sum_n B_2n cos(2 n xi); shape len(xi) x 3N."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    coeffs = np.asarray(solution.coefficients)
    n = np.arange(len(coeffs))
    weights = np.where(n == 0, 1.0, 2.0) * np.cos(2.0 * np.outer(xi, n))
    return weights @ coeffs


def ion_trajectories(solution: MicromotionSolution, decomp: ModeDecomposition,
                     crystal: IonCrystal | None = None, times=0.0) -> np.ndarray:
    """Positions R0 + Gamma S(t), shape len(times) x N x 3 meters."""
    crystal = decomp.equilibrium if crystal is None else crystal
    xi = 0.5 * solution.omega_t * np.atleast_1d(np.asarray(times, dtype=float))
    r = mode_series(solution, xi) @ decomp.mode_matrix.T
    return np.asarray(crystal.positions)[None] + r.reshape(len(xi), crystal.n_ions, 3)


@dataclass(frozen=True)
class MicromotionAmplitudes:
    radial: np.ndarray  # N, meters: half the largest in-plane excursion
    axial: np.ndarray  # N, meters: half the peak-to-peak z excursion

    @property
    def max_radial(self) -> float:
        return float(self.radial.max()) if len(self.radial) else 0.0


def micromotion_amplitudes(solution: MicromotionSolution, decomp: ModeDecomposition,
                           crystal: IonCrystal | None = None, samples: int = 256) -> MicromotionAmplitudes:
    crystal = decomp.equilibrium if crystal is None else crystal
    xi = np.linspace(0.0, np.pi, samples, endpoint=False)
    r = (mode_series(solution, xi) @ decomp.mode_matrix.T).reshape(samples, crystal.n_ions, 3)
    xy = r[:, :, :2]
    chord = np.linalg.norm(xy[:, None, :, :] - xy[None, :, :, :], axis=-1).max(axis=(0, 1))
    axial = np.ptp(r[:, :, 2], axis=0)
    return MicromotionAmplitudes(0.5 * chord, 0.5 * axial)
