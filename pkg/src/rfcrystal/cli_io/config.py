"""Run configuration: INI sections with mandatory unit suffixes.

Every dimensional value carries its unit (``rf_amplitude = 150 V``). Frequency
keys that describe angular quantities accept ``Hz``-family units as cycles per
second and store ``2 pi f``; ``rad/s`` is taken literally. Serialization writes SI
base units with ``repr`` floats, so parse -> serialize -> parse is exact.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import scipy.constants as const

from ..errors import ConfigError
from ..trap_model import IonSpecies, TrapConfiguration, YB171

_TWO_PI = 2.0 * math.pi
_AMU = const.atomic_mass
_E = const.e

UNITS: dict[str, dict[str, float]] = {
    "voltage": {"V": 1.0, "mV": 1e-3, "kV": 1e3},
    "angular": {"rad/s": 1.0, "Hz": _TWO_PI, "kHz": _TWO_PI * 1e3, "MHz": _TWO_PI * 1e6, "GHz": _TWO_PI * 1e9},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "curvature": {"1/m2": 1.0, "1/mm2": 1e6, "1/um2": 1e12},
    "capacitance": {"F": 1.0, "uF": 1e-6, "µF": 1e-6, "nF": 1e-9, "pF": 1e-12},
    "inductance": {"H": 1.0, "mH": 1e-3, "uH": 1e-6, "µH": 1e-6, "nH": 1e-9},
    "resistance": {"ohm": 1.0, "mohm": 1e-3, "kohm": 1e3},
    "mass": {"kg": 1.0, "u": _AMU},
    "charge": {"C": 1.0, "e": _E},
    "time": {"s": 1.0, "ms": 1e-3, "min": 60.0, "h": 3600.0},
}
#: unit written by the serializer for each dimension
CANONICAL = {
    "voltage": "V", "angular": "rad/s", "frequency": "Hz", "length": "m", "curvature": "1/m2",
    "capacitance": "F", "inductance": "H", "resistance": "ohm", "mass": "kg", "charge": "C", "time": "s",
}


@dataclass(frozen=True)
class Field:
    kind: str  # a UNITS dimension, or number | int | str | bool | list:<kind>
    default: object = None
    choices: tuple = ()


SCHEMA: dict[str, dict[str, Field]] = {
    "species": {
        "name": Field("str", "Yb171"),
        "mass": Field("mass", YB171.mass),
        "charge": Field("charge", YB171.charge),
    },
    "trap": {
        "rf_amplitude": Field("voltage"),
        "dc_voltage": Field("voltage"),
        "drive_frequency": Field("angular"),
        "radial_size": Field("length"),
        "axial_size": Field("length"),
        "curvatures": Field("str", "ideal", ("ideal", "fitted", "explicit")),
        "kappa": Field("number", 1.0),
        "chi": Field("number", 1.0),
        "gamma": Field("number", 1.0),
        "target_omega_x": Field("angular"),
        "target_omega_y": Field("angular"),
        "target_omega_z": Field("angular"),
        "eta_rf_x": Field("curvature"),
        "eta_rf_y": Field("curvature"),
        "eta_rf_z": Field("curvature"),
        "eta_dc_x": Field("curvature"),
        "eta_dc_y": Field("curvature"),
        "eta_dc_z": Field("curvature"),
        "laplace_tol": Field("number", 1e-9),
    },
    "simulation": {
        "n_ions": Field("int", 1),
        "seed": Field("int", 0),
        "restarts": Field("int", 8),
        "force_tol": Field("number", 1e-10),
        "cf_depth": Field("int", 10),
        "cf_tolerance": Field("number", 1e-12),
        "validate": Field("bool", False),
    },
    "output": {
        "directory": Field("str", "rfcrystal-out"),
        "format": Field("str", "csv", ("csv", "json")),
        "svg": Field("bool", False),
        "arrows": Field("bool", True),
        "arrow_scale": Field("number", 5.0),
    },
    "scan": {
        "n_list": Field("list:int", ()),
        "ratio_min": Field("number", 0.5),
        "ratio_max": Field("number", 3.0),
        "ratio_steps": Field("int", 26),
        "omega_r": Field("angular"),
        "radial_anisotropy": Field("number", 1.0),
    },
    "network": {
        "c_trap": Field("capacitance"),
        "c_filter": Field("capacitance"),
        "r_filter": Field("resistance", 0.0),
        "c_feed": Field("capacitance"),
        "l_feed": Field("inductance"),
        "r_feed": Field("resistance", 0.0),
        "drive_frequency": Field("angular"),
        "method": Field("str", "magnitude", ("magnitude", "phasor")),
        "c3": Field("capacitance"),
        "c4": Field("capacitance"),
    },
    "rf": {
        "sweep": Field("str"),
        "log": Field("str"),
        "taus": Field("list:time", ()),
        "stability": Field("number"),
        "stability_tau": Field("time"),
        "target_tau": Field("time"),
    },
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def _parse_number(text: str, section: str, key: str, line: int | None) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", f"{section}.{key}", line) from None


def _parse_value(fld: Field, text: str, section: str, key: str, line: int | None):
    name = f"{section}.{key}"
    kind = fld.kind
    if kind.startswith("list:"):
        inner = Field(kind[5:])
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_parse_value(inner, t, section, key, line) for t in items)
    if kind == "str":
        value = text.strip()
        if fld.choices and value not in fld.choices:
            raise ConfigError(f"must be one of {', '.join(fld.choices)}, got {value!r}", name, line)
        return value
    if kind == "bool":
        low = text.strip().lower()
        if low in ("yes", "true", "on", "1"):
            return True
        if low in ("no", "false", "off", "0"):
            return False
        raise ConfigError(f"expected yes/no, got {text!r}", name, line)
    if kind == "int":
        try:
            return int(text.strip())
        except ValueError:
            raise ConfigError(f"expected an integer, got {text!r}", name, line) from None
    if kind == "number":
        return _parse_number(text, section, key, line)
    match = _NUMBER.match(text)
    if not match:
        raise ConfigError(f"expected '<number> <unit>', got {text!r}", name, line)
    number, unit = match.groups()
    if not unit:
        raise ConfigError(f"a unit is required ({', '.join(UNITS[kind])})", name, line)
    if unit not in UNITS[kind]:
        raise ConfigError(f"unit {unit!r} is not a {kind} unit ({', '.join(UNITS[kind])})", name, line)
    return float(number) * UNITS[kind][unit]


def _format_value(fld: Field, value) -> str:
    kind = fld.kind
    if kind.startswith("list:"):
        inner = Field(kind[5:])
        return ", ".join(_format_value(inner, v) for v in value)
    if kind == "str":
        return str(value)
    if kind == "bool":
        return "yes" if value else "no"
    if kind == "int":
        return str(int(value))
    if kind == "number":
        return repr(float(value))
    return f"{float(value)!r} {CANONICAL[kind]}"


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, "")] = i
        elif section is not None and ("=" in s):
            lines.setdefault((section, s.split("=", 1)[0].strip().lower()), i)
    return lines


@dataclass
class RunConfig:
    """Parsed values in SI units, keyed by section then key; absent keys fall back to defaults."""

    values: dict[str, dict[str, object]] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict, compare=False, repr=False)
    source: str = field(default="<memory>", compare=False)

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def get(self, section: str, key: str):
        if self.has(section, key):
            return self.values[section][key]
        return SCHEMA[section][key].default

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigError("required field is missing", f"{section}.{key}", self.lines.get((section, "")))
        return value

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError("unknown key", f"{section}.{key}")
        self.values.setdefault(section, {})[key] = value

    # --- builders -----------------------------------------------------------------

    def species(self) -> IonSpecies:
        return IonSpecies(self.get("species", "mass"), self.get("species", "charge"), self.get("species", "name"))

    def trap_configuration(self) -> TrapConfiguration:
        req = lambda k: self.require("trap", k)  # noqa: E731
        args = (self.species(), req("rf_amplitude"), req("dc_voltage"), req("drive_frequency"),
                req("radial_size"), req("axial_size"))
        preset = self.get("trap", "curvatures")
        tol = self.get("trap", "laplace_tol")
        line = self.lines.get(("trap", "curvatures"))
        try:
            if preset == "ideal":
                return TrapConfiguration.ideal(*args, kappa=self.get("trap", "kappa"), chi=self.get("trap", "chi"),
                                               gamma=self.get("trap", "gamma"), laplace_tol=tol)
            if preset == "fitted":
                target = tuple(req(f"target_omega_{a}") for a in "xyz")
                return TrapConfiguration.fitted(*args, target, laplace_tol=tol)
            eta_rf = tuple(req(f"eta_rf_{a}") for a in "xyz")
            eta_dc = tuple(req(f"eta_dc_{a}") for a in "xyz")
            return TrapConfiguration(*args, eta_rf, eta_dc, tol)
        except ConfigError as err:
            if err.line is None and err.field in ("eta_rf", "eta_dc"):
                raise ConfigError(err.message, f"trap.{err.field}", line) from None
            raise
        except ValueError as err:
            raise ConfigError(str(err), "trap", line) from None

    def serialize(self) -> str:
        out = []
        for section, fields in SCHEMA.items():
            present = [k for k in fields if self.has(section, k)]
            if not present and section not in self.values:
                continue
            out.append(f"[{section}]")
            out.extend(f"{k} = {_format_value(fields[k], self.values[section][k])}" for k in present)
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def parse_config(text: str, source: str = "<memory>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       strict=True, empty_lines_in_values=False)
    lines = _key_lines(text)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as err:
        raise ConfigError("duplicate key", f"{err.section}.{err.option}", err.lineno) from None
    except configparser.DuplicateSectionError as err:
        raise ConfigError("duplicate section", err.section, err.lineno) from None
    except configparser.MissingSectionHeaderError as err:
        raise ConfigError("key outside any [section]", None, err.lineno) from None
    except configparser.ParsingError as err:
        lineno = err.errors[0][0] if err.errors else None
        raise ConfigError(f"malformed line {err.errors[0][1] if err.errors else ''}".strip(), None, lineno) from None
    cfg = RunConfig(lines=lines, source=source)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", section, lines.get((section, "")))
        cfg.values.setdefault(section, {})
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", f"{section}.{key}", line)
            cfg.values[section][key] = _parse_value(SCHEMA[section][key], raw, section, key, line)
    return cfg


FIXTURES = ("paper-17ion", "paper-29ion", "paper-rf-network")


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("rfcrystal") / "fixtures" / name))


def load_config(path_or_fixture: str) -> RunConfig:
    """Read a config file, or a shipped fixture by name (``paper-17ion``)."""
    if path_or_fixture in FIXTURES:
        path = fixture_path(f"{path_or_fixture}.cfg")
    else:
        path = Path(path_or_fixture)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", "--config") from None
    return parse_config(text, str(path))
