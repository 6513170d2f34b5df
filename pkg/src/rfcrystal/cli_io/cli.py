"""Command-line front end: ``rfcrystal <command> --config PATH|FIXTURE [--out DIR] ...``.

Exit status is 0 on success, 1 when the physics does not converge and 2 for
invalid input. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .. import __version__
from ..direct_integration import periodic_orbit
from ..equilibrium import (EquilibriumOptions, Phase, PseudoHarmonicTrap, classify_phase, find_equilibrium,
                           nearest_neighbor_distances, trap_for_ratio)
from ..errors import (ConfigError, ConvergenceError, NotConvergedError, ResonanceError, RFCrystalError,
                      UnstableConfigurationError)
from ..floquet_modes import (assemble_mathieu_system, continued_fraction_tail, hessian_normal_modes,
                             ion_trajectories, micromotion_amplitudes, solve_micromotion,
                             trap_coefficients)
from ..rf_chain import (AmplitudeLog, PickupNetwork, SweepTrace, allan_deviation, divider_ratio, frequency_jitter,
                        pickup_fraction, q_factor, rescale_white, shunt_impedance)
from ..trap_model import aspect_ratio_threshold, geometry_factors, ideal_q, mathieu_parameters
from .config import RunConfig, fixture_path, load_config
from .output import POSITION_COLUMNS, ResultWriter, crystal_svg, dumps_json, phase_diagram_svg, read_table

log = logging.getLogger("rfcrystal")

EXIT_OK, EXIT_NONCONVERGED, EXIT_INVALID = 0, 1, 2
TWO_PI = 2.0 * np.pi


class UsageError(ConfigError):
    pass


def _writer(cfg: RunConfig, args) -> ResultWriter:
    out = args.out or cfg.get("output", "directory")
    fmt = args.format or cfg.get("output", "format")
    return ResultWriter(out, fmt, cfg.digest(), timestamp=not args.no_timestamp)


def _svg_wanted(cfg: RunConfig, args) -> bool:
    return bool(args.svg or cfg.get("output", "svg"))


def _options(cfg: RunConfig) -> EquilibriumOptions:
    return EquilibriumOptions(n_restarts=cfg.get("simulation", "restarts"),
                              force_tol=cfg.get("simulation", "force_tol"))


def _seed(cfg: RunConfig, args) -> int:
    return args.seed if args.seed is not None else cfg.get("simulation", "seed")


def _pseudo_trap(cfg: RunConfig):
    config = cfg.trap_configuration()
    model = mathieu_parameters(config)
    try:
        trap = PseudoHarmonicTrap.from_model(model, config.species)
    except ValueError as err:
        raise ConfigError(str(err), "trap") from None
    return config, model, trap


# --- commands -------------------------------------------------------------------------

def cmd_frequencies(cfg: RunConfig, args) -> int:
    config = cfg.trap_configuration()
    model = mathieu_parameters(config)
    numeric = model.numeric_beta()
    geo = geometry_factors(config)
    n = cfg.get("simulation", "n_ions")
    rows = []
    # "+ 0.0" folds negative zeros so a zero-voltage table reads as plain zeros
    for i, axis in enumerate("xyz"):
        beta_num = numeric[i]
        omega = model.omega[i]
        rows.append((axis, float(model.a[i]) + 0.0, float(model.q[i]) + 0.0, float(model.beta[i]) + 0.0,
                     None if beta_num is None else float(beta_num) + 0.0,
                     None if np.isnan(omega) else float(omega / TWO_PI) + 0.0,
                     bool(model.stable[i]), bool(model.pseudo_valid[i])))
    columns = ("axis", "a", "q", "beta_pseudo", "beta_numeric", "frequency_hz", "stable", "pseudo_valid")
    w = _writer(cfg, args)
    w.table("frequencies", columns, rows)
    omega_r = model.omega_r
    ratio = float(model.omega[2] / omega_r) if omega_r > 0 else None
    report = {
        "axes": [dict(zip(columns, r)) for r in rows],
        "q_r": float(max(abs(model.q[0]), abs(model.q[1]))),
        "ideal_q": ideal_q(config) + 0.0,
        "kappa": geo.kappa, "chi": geo.chi, "gamma": geo.gamma,
        "n_ions": n,
        "aspect_ratio": ratio,
        "planar_threshold": aspect_ratio_threshold(n),
    }
    w.report("frequencies", report)
    w.provenance("frequencies")
    print(dumps_json(report), end="")
    return EXIT_OK


def _floquet(config, trap, crystal, cfg):
    coeffs = trap_coefficients(config)
    decomp = hessian_normal_modes(crystal, trap)
    system = assemble_mathieu_system(decomp, coeffs, trap)
    tail = continued_fraction_tail(system, cfg.get("simulation", "cf_depth"), cfg.get("simulation", "cf_tolerance"))
    solution = solve_micromotion(system, tail)
    return coeffs, decomp, system, tail, solution


def _write_positions(w: ResultWriter, positions, amps):
    rows = [(i, *map(float, p), float(a)) for i, (p, a) in enumerate(zip(positions, amps))]
    w.table("positions", POSITION_COLUMNS, rows)


def _crystal_summary(crystal, model, n):
    nn = nearest_neighbor_distances(crystal.positions) if n > 1 else np.array([])
    omega_r = model.omega_r
    return {
        "n_ions": n,
        "phase": crystal.phase.value if crystal.phase is not None else "NotConverged",
        "converged": crystal.converged,
        "energy_j": crystal.energy,
        "gradient_norm_n": crystal.gradient_norm,
        "seed": crystal.seed,
        "z_extent_m": float(np.ptp(crystal.positions[:, 2])),
        "nearest_neighbor_median_m": float(np.median(nn)) if len(nn) else None,
        "aspect_ratio": float(model.omega[2] / omega_r),
        "planar_threshold": aspect_ratio_threshold(n),
        "threshold_satisfied": bool(model.omega[2] / omega_r >= aspect_ratio_threshold(n)),
    }


def cmd_equilibrium(cfg: RunConfig, args) -> int:
    config, model, trap = _pseudo_trap(cfg)
    n = cfg.require("simulation", "n_ions")
    w = _writer(cfg, args)
    status = EXIT_OK
    try:
        crystal = find_equilibrium(trap, n, _seed(cfg, args), _options(cfg))
    except ConvergenceError as err:
        crystal = err.best
        status = EXIT_NONCONVERGED
        log.error("%s", err)
        if crystal is None:
            w.provenance("equilibrium")
            raise
    arrows = None
    amps = np.full(n, np.nan)
    if crystal.converged:
        try:
            *_, decomp, _, _, solution = _floquet(config, trap, crystal, cfg)
            amps = micromotion_amplitudes(solution, decomp).radial
            arrows = (2.0 * decomp.mode_matrix @ solution.coefficients[1]).reshape(n, 3)
        except (ResonanceError, UnstableConfigurationError) as err:
            log.warning("micromotion unavailable: %s", err)
    _write_positions(w, crystal.positions, amps)
    summary = _crystal_summary(crystal, model, n)
    w.report("equilibrium", summary)
    if _svg_wanted(cfg, args):
        title = f"N={n} {summary['phase']}"
        w.text("crystal.svg", crystal_svg(crystal.positions, arrows if cfg.get("output", "arrows") else None,
                                          title=title, arrow_scale=cfg.get("output", "arrow_scale"),
                                          timestamp=not args.no_timestamp))
    w.provenance("equilibrium")
    print(dumps_json(summary), end="")
    if status != EXIT_OK:
        _fail("non-convergence", RFCrystalError("equilibrium did not converge; best configuration written"),
              {"gradient_norm": crystal.gradient_norm})
    return status


def cmd_modes(cfg: RunConfig, args) -> int:
    config, model, trap = _pseudo_trap(cfg)
    n = cfg.require("simulation", "n_ions")
    crystal = find_equilibrium(trap, n, _seed(cfg, args), _options(cfg))
    coeffs, decomp, system, tail, solution = _floquet(config, trap, crystal, cfg)
    amps = micromotion_amplitudes(solution, decomp)
    w = _writer(cfg, args)
    part = decomp.participation()
    w.table("modes", ("mode_index", "frequency_hz", "participation_x", "participation_y", "participation_z"),
            [(i, float(f / TWO_PI), *map(float, p)) for i, (f, p) in enumerate(zip(decomp.frequencies, part))])
    w.table("micromotion", ("ion_index", "radial_amp_m", "axial_amp_m"),
            [(i, float(r), float(z)) for i, (r, z) in enumerate(zip(amps.radial, amps.axial))])
    _write_positions(w, crystal.positions, amps.radial)
    r_max = float(np.linalg.norm(crystal.positions[:, :2], axis=1).max())
    q_r = float(max(abs(model.q[0]), abs(model.q[1])))
    report = {
        "n_ions": n,
        "phase": crystal.phase.value,
        "continued_fraction_depth": tail.depth,
        "continued_fraction_change": tail.change,
        "continued_fraction_converged": tail.converged,
        "block_condition": solution.condition,
        "trusted": solution.trusted,
        "residual": solution.residual,
        "block_identification": system.block_identification,
        "max_radial_micromotion_m": amps.max_radial,
        "max_axial_micromotion_m": float(amps.axial.max()),
        "first_order_estimate_m": q_r * r_max / 2.0,
        "com_frequencies_hz": (decomp.com_frequencies() / TWO_PI).tolist(),
    }
    if args.validate or cfg.get("simulation", "validate"):
        orbit = periodic_orbit(trap, coeffs.rf, coeffs.static, config.drive_frequency, crystal.positions)
        floquet = ion_trajectories(solution, decomp, crystal, orbit.times)
        ac_f = floquet - floquet.mean(0)
        ac_d = orbit.positions - orbit.positions.mean(0)
        scale = float(np.abs(ac_f).max()) or 1.0
        report["direct_integration"] = {
            "micromotion_relative_error": float(np.abs(ac_f - ac_d).max() / scale),
            "mean_offset_m": float(np.abs(floquet.mean(0) - orbit.positions.mean(0)).max()),
            "newton_iterations": orbit.newton_iterations,
        }
    w.report("modes", report)
    if _svg_wanted(cfg, args):
        arrows = (2.0 * decomp.mode_matrix @ solution.coefficients[1]).reshape(n, 3)
        w.text("micromotion.svg", crystal_svg(crystal.positions, arrows, title=f"N={n} micromotion",
                                              arrow_scale=cfg.get("output", "arrow_scale"),
                                              timestamp=not args.no_timestamp))
    w.provenance("modes")
    print(dumps_json(report), end="")
    return EXIT_OK


def cmd_phase_scan(cfg: RunConfig, args) -> int:
    n_list = tuple(args.n) if args.n is not None else cfg.get("scan", "n_list")
    if not n_list:
        raise UsageError("phase-scan needs at least one ion count", "scan.n_list")
    steps = cfg.get("scan", "ratio_steps")
    if steps < 2:
        raise ConfigError("need at least two ratios", "scan.ratio_steps")
    ratios = [float(r) for r in np.round(np.linspace(cfg.get("scan", "ratio_min"), cfg.get("scan", "ratio_max"),
                                                     steps), 12)]
    species = cfg.species()
    omega_r = cfg.get("scan", "omega_r")
    if omega_r is None:
        omega_r = mathieu_parameters(cfg.trap_configuration()).omega_r
    anis = cfg.get("scan", "radial_anisotropy")
    seed = _seed(cfg, args)
    opts = _options(cfg)
    cells, rows = {}, []
    failures = 0
    for n in n_list:
        for r in ratios:
            trap = trap_for_ratio(r, omega_r, species, anis)
            try:
                crystal = find_equilibrium(trap, n, seed, opts)
                label = classify_phase(crystal).value
            except (ConvergenceError, NotConvergedError) as err:
                log.warning("N=%d ratio %.4g: %s", n, r, err)
                label = "NotConverged"
                failures += 1
            cells[(n, r)] = label
            rows.append((n, r, label))
    threshold = {n: aspect_ratio_threshold(n) for n in n_list}
    onset = {}
    for n in n_list:
        labels = [cells[(n, r)] for r in ratios]
        planar_from = None
        for k in range(len(ratios)):
            if all(lab == Phase.RADIAL_2D.value for lab in labels[k:]):
                planar_from = ratios[k]
                break
        onset[n] = planar_from
    w = _writer(cfg, args)
    w.table("phase_scan", ("n_ions", "ratio", "phase"), rows)
    summary = {"n_list": list(n_list), "ratios": ratios, "omega_r_hz": omega_r / TWO_PI,
               "radial_anisotropy": anis, "planar_onset": {str(n): onset[n] for n in n_list},
               "planar_threshold": {str(n): threshold[n] for n in n_list}, "not_converged": failures}
    w.report("phase_scan", summary)
    if _svg_wanted(cfg, args):
        w.text("phase_scan.svg", phase_diagram_svg(cells, list(n_list), ratios, threshold,
                                                   timestamp=not args.no_timestamp))
    w.provenance("phase-scan")
    print(dumps_json(summary), end="")
    return EXIT_OK


def _network(cfg: RunConfig) -> PickupNetwork:
    req = lambda k: cfg.require("network", k)  # noqa: E731
    try:
        return PickupNetwork(req("c_trap"), req("c_filter"), cfg.get("network", "r_filter"), req("c_feed"),
                             req("l_feed"), cfg.get("network", "r_feed"), req("drive_frequency"))
    except (ValueError, ZeroDivisionError) as err:
        raise ConfigError(str(err), "network") from None


def _data_path(cfg: RunConfig, args, key: str) -> str:
    path = args.input or cfg.require("rf", key)
    if path.startswith("fixture:"):
        return str(fixture_path(path.split(":", 1)[1]))
    return path


def cmd_rf(cfg: RunConfig, args) -> int:
    sub = args.rf_command
    w = _writer(cfg, args)
    if sub == "pickup":
        net = _network(cfg)
        method = cfg.get("network", "method")
        frac = pickup_fraction(net, method)
        bare = pickup_fraction(net.without_filter(), method)
        report = {"method": method, "z1_ohm": abs(net.z1), "z2_ohm": abs(shunt_impedance(net, method)),
                  "pickup_fraction": frac, "pickup_fraction_without_filter": bare,
                  "filter_suppression": bare / frac if frac > 0 else None}
    elif sub == "divider":
        try:
            ratio = divider_ratio(cfg.require("network", "c3"), cfg.require("network", "c4"))
        except ValueError as err:
            raise ConfigError(str(err), "network.c3") from None
        report = {"divider_ratio": ratio}
    elif sub == "qfit":
        path = _data_path(cfg, args, "sweep")
        rows = read_table(path, ("frequency_hz", "amplitude_v"))
        try:
            trace = SweepTrace([r["frequency_hz"] for r in rows], [r["amplitude_v"] for r in rows])
        except ValueError as err:
            raise ConfigError(str(err), path) from None
        fit = q_factor(trace)
        report = {"f0_hz": fit.f0, "q": fit.q, "peak_v": fit.peak, "offset_v": fit.offset,
                  "residual_rms_v": fit.residual_rms}
    elif sub == "allan":
        path = _data_path(cfg, args, "log")
        rows = read_table(path, ("time_s", "amplitude_v"))
        try:
            log_ = AmplitudeLog([r["time_s"] for r in rows], [r["amplitude_v"] for r in rows])
        except ValueError as err:
            raise ConfigError(str(err), path) from None
        taus = cfg.get("rf", "taus") or tuple(log_.period * 2.0**k for k in range(int(np.log2(len(rows) / 2)) + 1))
        try:
            result = allan_deviation(log_, taus)
        except ValueError as err:
            raise ConfigError(str(err), "rf.taus") from None
        w.table("allan", ("tau_s", "allan_deviation", "insufficient_data"),
                [(float(t), None if b else float(d), bool(b))
                 for t, d, b in zip(result.taus, result.deviation, result.insufficient)])
        report = {"slope": result.slope(), "taus_s": result.taus.tolist(),
                  "allan_deviation": [None if b else float(d) for d, b in zip(result.deviation, result.insufficient)]}
    elif sub == "jitter":
        model = mathieu_parameters(cfg.trap_configuration())
        stability = cfg.require("rf", "stability")
        tau_from, tau_to = cfg.get("rf", "stability_tau"), cfg.get("rf", "target_tau")
        used = stability
        if tau_from is not None and tau_to is not None:
            used = rescale_white(stability, tau_from, tau_to)
        jit = frequency_jitter(used, model)
        report = {"relative_stability": stability, "relative_stability_used": used,
                  "stability_tau_s": tau_from, "target_tau_s": tau_to,
                  "jitter_hz": {a: float(j) for a, j in zip("xy", jit[:2])},
                  "linear_estimate_hz": {a: float(f / TWO_PI * used) for a, f in zip("xy", model.omega[:2])}}
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown rf command {sub}")
    w.report(f"rf_{sub}", report)
    w.provenance(f"rf {sub}")
    print(dumps_json(report), end="")
    return EXIT_OK


COMMANDS = {"frequencies": cmd_frequencies, "equilibrium": cmd_equilibrium, "modes": cmd_modes,
            "phase-scan": cmd_phase_scan, "rf": cmd_rf}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, "arguments")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="config path or fixture name (paper-17ion, ...)")
    common.add_argument("--out", help="output directory (default from [output] directory)")
    common.add_argument("--seed", type=int, help="override [simulation] seed")
    common.add_argument("--format", choices=("csv", "json"), help="table format")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("--no-timestamp", action="store_true", help="omit wall-clock metadata")
    parser = _Parser(prog="rfcrystal", description="Planar ion crystals in a linear rf trap.")
    parser.add_argument("--version", action="version", version=f"rfcrystal {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs.add_parser("frequencies", parents=[common], help="Mathieu parameters and secular frequencies")
    subs.add_parser("equilibrium", parents=[common], help="crystal positions and phase")
    modes = subs.add_parser("modes", parents=[common], help="normal modes and exact micromotion")
    modes.add_argument("--validate", action="store_true", help="compare with direct time integration")
    scan = subs.add_parser("phase-scan", parents=[common], help="phase diagram over omega_z / omega_r")
    scan.add_argument("--n", type=int, nargs="*", help="ion counts (overrides [scan] n_list)")
    rf = subs.add_parser("rf", help="rf electronics analyses")
    rf_subs = rf.add_subparsers(dest="rf_command", required=True, parser_class=_Parser)
    for name in ("pickup", "divider", "qfit", "allan", "jitter"):
        p = rf_subs.add_parser(name, parents=[common])
        p.add_argument("--input", help="CSV input (overrides [rf] sweep / log)")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("RFCRYSTAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(kind: str, err: Exception, extra: dict | None = None) -> None:
    payload = {"error": kind, "message": str(err)}
    if isinstance(err, ConfigError):
        payload.update(err.to_dict())
        payload["error"] = kind
    payload.update(extra or {})
    sys.stderr.write(dumps_json(payload))


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        _fail("validation", err)
        return EXIT_INVALID
    except (ConvergenceError, NotConvergedError) as err:
        _fail("non-convergence", err, {"gradient_norm": getattr(err, "gradient_norm", None)})
        return EXIT_NONCONVERGED
    except (ResonanceError, UnstableConfigurationError) as err:
        _fail("non-convergence", err)
        return EXIT_NONCONVERGED
    except RFCrystalError as err:
        _fail("validation", err)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
