"""Rf delivery electronics: divider, dc-blade pickup, resonator Q and amplitude stability."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import curve_fit

from .errors import NoResonanceError, TruncatedSweepError
from .trap_model import SecularModel, frequency_sensitivity

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PickupNetwork:
    """Trap capacitor in series with the shunt (filter || feedthrough) of one dc blade."""

    c_trap: float
    c_filter: float
    r_filter: float
    c_feed: float
    l_feed: float
    r_feed: float
    omega_t: float

    def __post_init__(self):
        for name in ("c_trap", "c_filter", "r_filter", "c_feed", "l_feed", "r_feed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.omega_t > 0:
            raise ZeroDivisionError("drive frequency must be positive: capacitor impedances are singular at dc")

    def without_filter(self) -> "PickupNetwork":
        return replace(self, c_filter=0.0, r_filter=0.0)

    def z_capacitor(self, c: float) -> complex:
        # an absent capacitor (C = 0) is an open circuit
        return complex(0.0, -math.inf) if c == 0 else 1.0 / (1j * self.omega_t * c)

    @property
    def z1(self) -> complex:
        return self.z_capacitor(self.c_trap)

    def branches(self) -> dict[str, list[complex]]:
        return {
            "filter": [self.z_capacitor(self.c_filter), complex(self.r_filter)],
            "feed": [self.z_capacitor(self.c_feed), complex(self.r_feed), 1j * self.omega_t * self.l_feed],
        }


def _parallel(values) -> float | complex:
    if any(v == 0 for v in values):
        return 0.0
    inv = sum(0.0 if (np.isinf(abs(v))) else 1.0 / v for v in values)
    return math.inf if inv == 0 else 1.0 / inv


def shunt_impedance(net: PickupNetwork, method: str = "magnitude") -> complex | float:
    """Z2, the parallel combination of the filter and feedthrough branches.

    ``magnitude`` adds the element magnitudes within each branch (the arithmetic that
    yields the 6.4 ohm estimate for the shipped network); ``phasor`` is the full
    complex combination, in which the feed inductor partly cancels the capacitors.
    """
    branches = net.branches()
    if method == "magnitude":
        return _parallel([sum(abs(z) for z in b) for b in branches.values()])
    if method == "phasor":
        return _parallel([sum(b) for b in branches.values()])
    raise ValueError(f"unknown method {method!r}; expected 'magnitude' or 'phasor'")


def pickup_fraction(net: PickupNetwork, method: str = "magnitude") -> float:
    """|Z2| / (|Z1| + |Z2|): fraction of the rf amplitude appearing on a dc blade."""
    z1 = abs(net.z1)
    z2 = abs(shunt_impedance(net, method))
    if math.isinf(z1):
        return 0.0
    if math.isinf(z2):
        return 1.0
    return z2 / (z1 + z2)


#: shipped network; C_feed and L_feed reproduce the quoted 1.8 ohm and 52 ohm at the drive frequency
REFERENCE_NETWORK = PickupNetwork(
    c_trap=10e-12,
    c_filter=800e-12,
    r_filter=0.0,
    c_feed=3.2e-9,
    l_feed=300e-9,
    r_feed=0.0,
    omega_t=2.0 * math.pi * 27.51e6,
)


def divider_ratio(c3: float, c4: float) -> float:
    """Capacitive divider pick-off C3 / (C3 + C4); C4 = 0 means no division."""
    if not c3 > 0:
        raise ValueError(f"C3 must be positive, got {c3}")
    if c4 < 0:
        raise ValueError(f"C4 must be non-negative, got {c4}")
    return c3 / (c3 + c4)


@dataclass(frozen=True)
class SweepTrace:
    frequency: np.ndarray  # Hz
    amplitude: np.ndarray  # V

    def __post_init__(self):
        f = np.asarray(self.frequency, dtype=float)
        a = np.asarray(self.amplitude, dtype=float)
        if f.shape != a.shape or f.ndim != 1 or len(f) < 5:
            raise ValueError("a sweep needs matching 1-D frequency and amplitude arrays of at least 5 samples")
        if np.any(np.diff(f) <= 0):
            raise ValueError("sweep frequencies must be strictly increasing")
        if np.any(a < 0):
            raise ValueError("rectified amplitudes must be non-negative")
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "amplitude", a)


@dataclass(frozen=True)
class ResonanceFit:
    f0: float
    q: float
    peak: float
    offset: float
    residual_rms: float


def lorentzian(f, f0, q, peak, offset):
    return peak / (1.0 + 4.0 * q**2 * ((f - f0) / f0) ** 2) + offset


def q_factor(trace: SweepTrace, snr_min: float = 5.0) -> ResonanceFit:
    """Fit a Lorentzian to the sweep; Q = f0 / FWHM."""
    f, a = trace.frequency, trace.amplitude
    base = float(np.median(a))
    # robust noise floor from successive differences
    noise = float(np.median(np.abs(np.diff(a)))) / 0.954 + 1e-300
    i = int(np.argmax(a))
    height = a[i] - base
    if height <= snr_min * noise:
        raise NoResonanceError(f"no resonance: peak {height:.3g} V above baseline within noise {noise:.3g} V")
    if i == 0 or i == len(a) - 1:
        raise TruncatedSweepError(f"truncated sweep: maximum at the {'lower' if i == 0 else 'upper'} edge")
    half = a >= base + 0.5 * height
    lo, hi = i, i
    while lo > 0 and half[lo - 1]:
        lo -= 1
    while hi < len(a) - 1 and half[hi + 1]:
        hi += 1
    if lo == 0 or hi == len(a) - 1:
        raise TruncatedSweepError("truncated sweep: resonance half-maximum extends past the trace")
    fwhm = max(f[hi] - f[lo], f[1] - f[0])
    p0 = (f[i], f[i] / fwhm, height, base)
    params, _ = curve_fit(lorentzian, f, a, p0=p0, maxfev=20000)
    f0, q, peak, offset = (float(v) for v in params)
    q = abs(q)
    if not f[0] < f0 < f[-1]:
        raise TruncatedSweepError(f"truncated sweep: fitted centre {f0:.6g} Hz outside the trace")
    resid = float(np.sqrt(np.mean((lorentzian(f, f0, q, peak, offset) - a) ** 2)))
    return ResonanceFit(f0, q, peak, offset, resid)


def synthetic_sweep(f0: float = 27.51e6, q: float = 100.0, peak: float = 1.0, noise: float = 0.0,
                    span: float = 8.0, samples: int = 401, seed: int = 0) -> SweepTrace:
    """Lorentzian sweep over ``f0 * (1 +- span / (2 q))`` with additive Gaussian noise (fraction of peak)."""
    rng = np.random.default_rng(seed)
    f = f0 * (1.0 + np.linspace(-0.5, 0.5, samples) * span / q)
    a = lorentzian(f, f0, q, peak, 0.0) + noise * peak * rng.standard_normal(samples)
    return SweepTrace(f, np.clip(a, 0.0, None))


@dataclass(frozen=True)
class AmplitudeLog:
    timestamps: np.ndarray  # s
    values: np.ndarray  # V

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or len(t) < 2:
            raise ValueError("an amplitude log needs matching 1-D arrays of at least 2 samples")
        dt = np.diff(t)
        if np.any(dt <= 0) or np.abs(dt - dt.mean()).max() > 1e-6 * dt.mean():
            raise ValueError("log timestamps must be uniformly spaced within 1 ppm")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)

    @property
    def period(self) -> float:
        return float((self.timestamps[-1] - self.timestamps[0]) / (len(self.timestamps) - 1))

    @property
    def span(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(frozen=True)
class AllanResult:
    taus: np.ndarray
    deviation: np.ndarray  # NaN where data are insufficient
    insufficient: np.ndarray  # bool per tau

    def slope(self) -> float:
        """Least-squares log-log slope over the valid, non-zero points."""
        ok = ~self.insufficient & (self.deviation > 0)
        if ok.sum() < 2:
            raise ValueError("need at least two valid tau values for a slope")
        return float(np.polyfit(np.log(self.taus[ok]), np.log(self.deviation[ok]), 1)[0])


def allan_deviation(log_: AmplitudeLog, taus) -> AllanResult:
    """Overlapping Allan deviation of the fractional amplitude y = V / mean(V)."""
    y = log_.values / log_.values.mean()
    dt = log_.period
    phase = np.concatenate([[0.0], np.cumsum(y)]) * dt
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    dev = np.full(len(taus), np.nan)
    bad = np.zeros(len(taus), dtype=bool)
    n = len(y)
    for k, tau in enumerate(taus):
        m = tau / dt
        if m < 1 or abs(m - round(m)) > 1e-6 * m:
            raise ValueError(f"tau {tau:g} s is not a positive integer multiple of the sample period {dt:g} s")
        m = int(round(m))
        if tau > 0.5 * (n * dt) or n + 1 - 2 * m < 1:
            bad[k] = True
            continue
        d = phase[2 * m:] - 2.0 * phase[m:-m] + phase[: -2 * m]
        dev[k] = math.sqrt(0.5 * np.mean(d**2)) / tau
    return AllanResult(taus, dev, bad)


def synthetic_amplitude_log(samples: int = 100_000, period: float = 1.0, mean: float = 1.0,
                            white: float = 1e-4, drift: float = 0.0, seed: int = 0) -> AmplitudeLog:
    """White fractional noise of rms ``white`` per sample plus linear drift (fraction per second)."""
    rng = np.random.default_rng(seed)
    t = np.arange(samples) * period
    v = mean * (1.0 + white * rng.standard_normal(samples) + drift * (t - t.mean()))
    return AmplitudeLog(t, v)


def rescale_white(sigma: float, tau_from: float, tau_to: float) -> float:
    """White-noise Allan law: sigma(tau_to) = sigma(tau_from) sqrt(tau_from / tau_to)."""
    if tau_from <= 0 or tau_to <= 0:
        raise ValueError("averaging times must be positive")
    return sigma * math.sqrt(tau_from / tau_to)


def frequency_jitter(relative_amplitude_stability: float, model: SecularModel) -> np.ndarray:
    """Rms secular-frequency fluctuation per axis in Hz from dV0/V0.

    Uses d omega / d ln V0 from the pseudopotential; for q-dominated confinement
    this is close to omega itself, so delta f ~ f * dV/V.
    """
    if relative_amplitude_stability < 0:
        raise ValueError("relative stability must be non-negative")
    sens = np.abs(frequency_sensitivity(model))
    return sens * relative_amplitude_stability / (2.0 * math.pi)
