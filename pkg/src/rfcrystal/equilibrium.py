"""Minimum-energy ion crystals in the harmonic pseudopotential.

Equilibria are found by damped molecular dynamics (velocity Verlet with a viscous
drag), finished with a few Newton steps on the analytic Hessian, and restarted
from several seeded random clouds to pick the lowest-energy structure.

Internally everything runs in natural units: length ``l = (k Q^2 / (m w0^2))^(1/3)``,
time ``1/w0`` and energy ``m w0^2 l^2`` with ``w0`` the weakest trap frequency.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.constants as const

from .errors import ConvergenceError, NotConvergedError, SingularityError
from .trap_model import IonSpecies, SecularModel

log = logging.getLogger(__name__)

COULOMB_K = 1.0 / (4.0 * math.pi * const.epsilon_0)


class Phase(str, enum.Enum):
    LINEAR = "Linear"
    ZIGZAG = "Zigzag"
    THREE_D = "ThreeD"
    RADIAL_2D = "Radial2D"


@dataclass(frozen=True)
class PseudoHarmonicTrap:
    omega: tuple[float, float, float]
    species: IonSpecies

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))
        if len(self.omega) != 3 or not all(w > 0 for w in self.omega):
            raise ValueError(f"all trap frequencies must be positive, got {self.omega}")

    @classmethod
    def from_model(cls, model: SecularModel, species: IonSpecies) -> "PseudoHarmonicTrap":
        if not np.all(model.stable):
            bad = [ax for ax, ok in zip("xyz", model.stable) if not ok]
            raise ValueError(f"pseudopotential is not confining along {', '.join(bad)}")
        return cls(tuple(model.omega), species)

    @property
    def length_scale(self) -> float:
        """Two-ion Coulomb length for the weakest axis, in meters."""
        w0 = min(self.omega)
        sp = self.species
        return (COULOMB_K * sp.charge**2 / (sp.mass * w0**2)) ** (1.0 / 3.0)

    @property
    def omega_r(self) -> float:
        return max(self.omega[0], self.omega[1])

    def scaled(self, factor: float) -> "PseudoHarmonicTrap":
        return PseudoHarmonicTrap(tuple(factor * w for w in self.omega), self.species)


@dataclass(frozen=True)
class IonCrystal:
    positions: np.ndarray  # N x 3, meters
    energy: float
    gradient_norm: float  # largest per-ion force, newtons
    converged: bool
    phase: Phase | None
    seed: int
    length_scale: float = float("nan")
    steps: int = 0

    @property
    def n_ions(self) -> int:
        return len(self.positions)

    @property
    def orientation(self) -> float:
        """Angle (rad) of the crystal's long in-plane axis from x; 0 for a single ion."""
        xy = self.positions[:, :2] - self.positions[:, :2].mean(axis=0)
        if len(xy) < 2:
            return 0.0
        evals, evecs = np.linalg.eigh(xy.T @ xy)
        vx, vy = evecs[:, -1]
        angle = math.atan2(vy, vx)
        # an axis, not a direction
        return (angle + math.pi / 2) % math.pi - math.pi / 2


@dataclass(frozen=True)
class EquilibriumOptions:
    n_restarts: int = 8
    max_steps: int = 400_000
    #: per-ion force tolerance relative to m w0^2 l
    force_tol: float = 1e-10
    #: absolute cap on the per-ion force, newtons
    force_tol_abs: float = 1e-18
    energy_tol: float = 1e-12
    energy_window: int = 100
    #: drag coefficient in units of w0; None means critical damping of the slowest axis (2 w0)
    damping: float | None = None
    #: integration step in units of 1/f_max; default 1/50 of the fastest secular period
    step_fraction: float = 1.0 / 50.0
    #: hand over to Newton steps once the relative force is below this
    polish_threshold: float = 1e-2
    newton_steps: int = 50
    min_separation: float = 0.3  # seeding, in units of l


# --- potential in natural units -------------------------------------------------

def _pair_geometry(x: np.ndarray):
    d = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, np.inf)
    return d, r2


def _energy_nat(x: np.ndarray, w2: np.ndarray) -> float:
    _, r2 = _pair_geometry(x)
    iu = np.triu_indices(len(x), 1)
    return 0.5 * float(np.sum(w2 * x * x)) + float(np.sum(1.0 / np.sqrt(r2[iu])))


def _gradient_nat(x: np.ndarray, w2: np.ndarray) -> np.ndarray:
    d, r2 = _pair_geometry(x)
    inv_r3 = r2 ** -1.5
    return w2 * x - np.einsum("ij,ijk->ik", inv_r3, d)


def _hessian_nat(x: np.ndarray, w2: np.ndarray) -> np.ndarray:
    n = len(x)
    d, r2 = _pair_geometry(x)
    inv_r3 = r2 ** -1.5
    inv_r5 = r2 ** -2.5
    # off-diagonal ion blocks: d^2/dx_i dx_j of 1/r_ij
    blocks = inv_r3[:, :, None, None] * np.eye(3) - 3.0 * inv_r5[:, :, None, None] * d[:, :, :, None] * d[:, :, None, :]
    diag = -blocks.sum(axis=1)
    idx = np.arange(n)
    blocks[idx, idx] = diag + np.diag(w2)
    return blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def _check_distinct(x: np.ndarray) -> None:
    if len(x) < 2:
        return
    _, r2 = _pair_geometry(x)
    if np.min(r2) == 0.0:
        i, j = np.unravel_index(np.argmin(r2), r2.shape)
        raise SingularityError(f"ions {i} and {j} coincide")


class _Units:
    def __init__(self, trap: PseudoHarmonicTrap):
        self.w0 = min(trap.omega)
        self.length = trap.length_scale
        self.mass = trap.species.mass
        self.energy = self.mass * self.w0**2 * self.length**2
        self.force = self.energy / self.length
        self.w2 = (np.asarray(trap.omega) / self.w0) ** 2


def _as_positions(positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 3)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"positions must be N x 3, got shape {x.shape}")
    return x


def total_potential(trap: PseudoHarmonicTrap, positions) -> float:
    """Trap plus pairwise Coulomb energy of the ions, joules."""
    x = _as_positions(positions)
    _check_distinct(x)
    u = _Units(trap)
    return _energy_nat(x / u.length, u.w2) * u.energy


def potential_gradient(trap: PseudoHarmonicTrap, positions) -> np.ndarray:
    """Gradient of :func:`total_potential`, N x 3 newtons."""
    x = _as_positions(positions)
    _check_distinct(x)
    u = _Units(trap)
    return _gradient_nat(x / u.length, u.w2) * u.force


def potential_hessian(trap: PseudoHarmonicTrap, positions) -> np.ndarray:
    """3N x 3N Hessian in J/m^2, rows and columns ordered (x1, y1, z1, x2, ...)."""
    x = _as_positions(positions)
    _check_distinct(x)
    u = _Units(trap)
    return _hessian_nat(x / u.length, u.w2) * (u.energy / u.length**2)


# --- equilibrium search -----------------------------------------------------------

def _seed_cloud(rng: np.random.Generator, n: int, w: np.ndarray, min_sep: float) -> np.ndarray:
    """Uniform random points in an ellipsoid sized like the expected crystal."""
    semi = n ** (1.0 / 3.0) / w
    for _ in range(1000):
        pts = []
        while len(pts) < n:
            p = rng.uniform(-1.0, 1.0, size=3)
            if p @ p <= 1.0:
                pts.append(p * semi)
        x = np.array(pts)
        if n < 2:
            return x
        _, r2 = _pair_geometry(x)
        if np.sqrt(r2.min()) >= min_sep:
            return x
    return x


@dataclass
class _Run:
    x: np.ndarray
    energy: float
    force: float
    converged: bool
    steps: int
    seed: int = 0


def _relax(x: np.ndarray, u: _Units, opts: EquilibriumOptions, tol: float) -> _Run:
    w2 = u.w2
    w_max = math.sqrt(w2.max())
    dt = opts.step_fraction * 2.0 * math.pi / w_max
    gamma = 2.0 if opts.damping is None else opts.damping
    decay = math.exp(-gamma * dt)
    v = np.zeros_like(x)
    g = _gradient_nat(x, w2)
    history: list[float] = []
    max_disp = 0.1
    steps = 0
    for steps in range(1, opts.max_steps + 1):
        # drift-kick with exact viscous decay of the velocity
        v = (v - 0.5 * dt * g) * math.sqrt(decay)
        dx = dt * v
        big = np.linalg.norm(dx, axis=1).max()
        if big > max_disp:
            dx *= max_disp / big
            v *= max_disp / big
        x = x + dx
        g = _gradient_nat(x, w2)
        v = (v - 0.5 * dt * g) * math.sqrt(decay)
        if steps % opts.energy_window == 0:
            e = _energy_nat(x, w2)
            history.append(e)
            f = float(np.linalg.norm(g, axis=1).max())
            if f <= opts.polish_threshold:
                break
            if len(history) >= 2:
                de = abs(history[-1] - history[-2]) / max(abs(e), 1e-300)
                if f <= tol and de < opts.energy_tol:
                    break
    e = _energy_nat(x, w2)
    f = float(np.linalg.norm(g, axis=1).max())
    return _Run(x, e, f, f <= tol, steps)


def _newton_polish(run: _Run, u: _Units, opts: EquilibriumOptions, tol: float) -> _Run:
    x, e = run.x, run.energy
    w2 = u.w2
    for _ in range(opts.newton_steps):
        g = _gradient_nat(x, w2)
        f = float(np.linalg.norm(g, axis=1).max())
        if f <= tol:
            return _Run(x, e, f, True, run.steps)
        h = _hessian_nat(x, w2)
        evals, evecs = np.linalg.eigh(h)
        # |eigenvalues| makes every step a descent direction, also near saddles;
        # the floor tames zero modes (free rotation in degenerate traps)
        curv = np.maximum(np.abs(evals), 1e-8 * np.abs(evals).max())
        step = -(evecs @ ((evecs.T @ g.ravel()) / curv)).reshape(x.shape)
        # backtracking keeps every accepted step downhill
        for _ in range(30):
            x_new = x + step
            _, r2 = _pair_geometry(x_new)
            if np.isfinite(r2).any() and r2.min() > 0:
                e_new = _energy_nat(x_new, w2)
                if e_new <= e + 1e-13 * abs(e):
                    break
            step *= 0.5
        else:
            break
        x, e = x_new, e_new
    g = _gradient_nat(x, w2)
    f = float(np.linalg.norm(g, axis=1).max())
    return _Run(x, e, f, f <= tol, run.steps)


def _saddle_direction(x: np.ndarray, w2: np.ndarray) -> np.ndarray | None:
    evals, evecs = np.linalg.eigh(_hessian_nat(x, w2))
    if evals[0] < -1e-8 * abs(evals[-1]):
        return evecs[:, 0].reshape(x.shape)
    return None


def _relax_to_tolerance(x0: np.ndarray, u: _Units, opts: EquilibriumOptions, tol: float) -> _Run:
    x, steps = x0, 0
    budget = opts.max_steps
    for _ in range(10):
        relaxed = _relax(x, u, replace(opts, max_steps=budget), tol)
        steps += relaxed.steps
        budget = opts.max_steps - steps
        result = relaxed if relaxed.converged else _newton_polish(relaxed, u, opts, tol)
        result.steps = steps
        if result.converged:
            kick = _saddle_direction(result.x, u.w2)
            if kick is None:
                return result
            # converged onto a saddle: push off along the unstable mode and relax again
            result = _Run(result.x + 0.05 * kick, result.energy, np.inf, False, steps)
        if budget <= 0:
            return result
        x = result.x
    return result


def find_equilibrium(trap: PseudoHarmonicTrap, n_ions: int, seed: int = 0,
                     options: EquilibriumOptions | None = None, initial=None) -> IonCrystal:
    """Lowest-energy crystal of ``n_ions`` found over ``options.n_restarts`` seeded starts.

    ``initial`` (N x 3 meters) replaces the first random start. Raises
    :class:`ConvergenceError` carrying the best crystal when no start converges.
    """
    if n_ions < 1:
        raise ValueError("need at least one ion")
    opts = options or EquilibriumOptions()
    u = _Units(trap)
    if trap.omega[0] == trap.omega[1]:
        log.info("degenerate radial frequencies: the crystal's azimuthal orientation is arbitrary")
    tol = min(opts.force_tol, opts.force_tol_abs / u.force)

    runs: list[_Run] = []
    seeds = np.random.SeedSequence(seed).spawn(max(opts.n_restarts, 1))
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        if k == 0 and initial is not None:
            x0 = _as_positions(initial) / u.length
        else:
            x0 = _seed_cloud(rng, n_ions, np.sqrt(u.w2), opts.min_separation)
        if n_ions == 1:
            run = _Run(np.zeros((1, 3)), 0.0, 0.0, True, 0)
        else:
            run = _relax_to_tolerance(x0, u, opts, tol)
        run.seed = k
        log.debug("restart %d: energy %.15g, force %.3g, %d steps", k, run.energy, run.force, run.steps)
        runs.append(run)
        if n_ions == 1:
            break

    converged = [r for r in runs if r.converged]
    pool = converged or runs
    best_energy = min(r.energy for r in pool)
    # ties (to rounding) go to the lowest restart index
    best = min((r for r in pool if r.energy <= best_energy + 1e-12 * abs(best_energy)), key=lambda r: r.seed)
    crystal = IonCrystal(
        positions=best.x * u.length,
        energy=best.energy * u.energy,
        gradient_norm=best.force * u.force,
        converged=best.converged,
        phase=None,
        seed=seed,
        length_scale=u.length,
        steps=best.steps,
    )
    if not best.converged:
        raise ConvergenceError(
            f"no restart converged: best per-ion force {crystal.gradient_norm:.3g} N "
            f"(tolerance {tol * u.force:.3g} N)",
            best=crystal, gradient_norm=crystal.gradient_norm)
    return replace(crystal, phase=classify_phase(crystal))


# --- phase classification -----------------------------------------------------------

@dataclass(frozen=True)
class PhaseTolerances:
    #: extents (meters) below this count as flat
    extent: float = 1e-9
    #: |z component| of the plane normal below this means the plane contains z
    normal_z: float = 1e-3


def _principal_extents(x: np.ndarray):
    c = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(c, full_matrices=True)
    proj = c @ vt.T
    extents = proj.max(axis=0) - proj.min(axis=0)
    return extents, vt


def classify_phase(crystal: IonCrystal, tolerances: PhaseTolerances | None = None) -> Phase:
    """Label the structure: Linear, Zigzag, Radial2D or ThreeD."""
    if not crystal.converged:
        raise NotConvergedError("refusing to classify an unconverged crystal")
    tol = tolerances or PhaseTolerances()
    x = np.asarray(crystal.positions)
    if len(x) < 2:
        return Phase.LINEAR
    extents, axes = _principal_extents(x)
    if len(x) < 3 or extents[1] < tol.extent:
        return Phase.LINEAR
    z_extent = np.ptp(x[:, 2])
    if z_extent < tol.extent:
        return Phase.RADIAL_2D
    if extents[2] < tol.extent and abs(axes[2][2]) < tol.normal_z:
        return Phase.ZIGZAG
    return Phase.THREE_D


# --- transition search ---------------------------------------------------------------

@dataclass(frozen=True)
class TransitionResult:
    n_ions: int
    ratio: float  # omega_z / omega_r at the planarity transition
    bracket: tuple[float, float]
    evaluations: int


def trap_for_ratio(ratio: float, omega_r: float, species: IonSpecies,
                   radial_anisotropy: float = 1.0) -> PseudoHarmonicTrap:
    """Trap with omega_z = ratio * omega_r; omega_x = omega_r / anisotropy, omega_y = omega_r.

    ``omega_r`` is the stiffer radial axis, so anisotropy >= 1.
    """
    return PseudoHarmonicTrap((omega_r / radial_anisotropy, omega_r, ratio * omega_r), species)


def is_planar(trap: PseudoHarmonicTrap, n_ions: int, seed: int = 0,
              options: EquilibriumOptions | None = None,
              tolerances: PhaseTolerances | None = None) -> bool:
    crystal = find_equilibrium(trap, n_ions, seed, options)
    return classify_phase(crystal, tolerances) == Phase.RADIAL_2D


def locate_planarity_transition(n_ions: int, omega_r: float, species: IonSpecies,
                                lo: float, hi: float, rel_tol: float = 1e-3,
                                radial_anisotropy: float = 1.0, seed: int = 0,
                                options: EquilibriumOptions | None = None) -> TransitionResult:
    """Bisect omega_z / omega_r for the onset of the radial-2D phase.

    ``lo`` must give a non-planar ground state and ``hi`` a planar one.
    """
    evals = 0

    def planar(r):
        nonlocal evals
        evals += 1
        return is_planar(trap_for_ratio(r, omega_r, species, radial_anisotropy), n_ions, seed, options)

    if planar(lo):
        raise ValueError(f"lower bracket {lo} is already planar")
    if not planar(hi):
        raise ValueError(f"upper bracket {hi} is not planar")
    while (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if planar(mid):
            hi = mid
        else:
            lo = mid
    return TransitionResult(n_ions, 0.5 * (lo + hi), (lo, hi), evals)


def nearest_neighbor_distances(positions) -> np.ndarray:
    x = _as_positions(positions)
    _, r2 = _pair_geometry(x)
    return np.sqrt(r2.min(axis=1))
