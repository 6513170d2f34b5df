"""Exception hierarchy shared by the physics modules and the CLI."""

from __future__ import annotations


class RFCrystalError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RFCrystalError, ValueError):
    """Invalid user input (configuration file, CSV, flag)."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        self.message = message
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)

    def to_dict(self) -> dict:
        return {"error": "validation", "field": self.field, "line": self.line, "message": self.message}


class LaplaceError(ConfigError):
    """Curvature set violates Laplace's equation beyond the declared tolerance."""


class DeconfiningCurvatureError(RFCrystalError, ValueError):
    """The dc curvature along the trap axis does not confine."""


class UnstableMathieuError(RFCrystalError):
    """Monodromy eigenvalues left the unit circle."""

    def __init__(self, a: float, q: float, growth_factor: float):
        self.a = a
        self.q = q
        self.growth_factor = growth_factor
        super().__init__(f"unstable (a, q) = ({a:.6g}, {q:.6g}): growth factor {growth_factor:.6g} per period")


class SingularityError(RFCrystalError, ValueError):
    """Two ions occupy the same point."""


class ConvergenceError(RFCrystalError):
    """Equilibrium search did not converge; carries the best configuration found."""

    def __init__(self, message: str, best=None, gradient_norm: float | None = None):
        self.best = best
        self.gradient_norm = gradient_norm
        super().__init__(message)


class NotConvergedError(RFCrystalError):
    """An operation that needs a converged crystal was given an unconverged one."""


class UnstableConfigurationError(RFCrystalError):
    """Hessian at the supplied configuration has a negative eigenvalue."""

    def __init__(self, mode: int, eigenvalue: float):
        self.mode = mode
        self.eigenvalue = eigenvalue
        super().__init__(f"unstable configuration: mode {mode} has negative curvature {eigenvalue:.6g}")


class ResonanceError(RFCrystalError):
    """A drive harmonic is resonant with the linearised motion."""

    def __init__(self, message: str, harmonic: int | None = None):
        self.harmonic = harmonic
        super().__init__(message)


class NoResonanceError(RFCrystalError, ValueError):
    pass


class TruncatedSweepError(RFCrystalError, ValueError):
    pass
