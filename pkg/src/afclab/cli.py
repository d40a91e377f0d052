"""Command-line front end.

Every subcommand prints a one-line JSON summary on stdout. Commands that
produce data write CSV/JSON artifacts into ``--out`` and list them in the
summary; run metadata (timestamp, argv) goes to ``meta.json`` only, so the
artifacts themselves are identical across reruns. Failures print a JSON error
report on stderr and exit with 2 (bad config), 3 (invalid input to a model)
or 4 (a fit did not converge).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import analysis, echo, optimizer, polarization, pumping, tomography
from .errors import AFCError, ConfigError, ConvergenceError
from .medium import Grid, IonParameters, SpectralProfile, build_inhomogeneous_profile

EXIT_CONFIG, EXIT_DOMAIN, EXIT_CONVERGENCE = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, location="argv")


# config plumbing

def load_config(path, kind: str) -> dict:
    """Read a TOML experiment config and check that it is meant for ``kind``."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} does not exist", location=str(p))
    try:
        cfg = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}", location=f"{p}: {exc}") from None
    declared = cfg.get("kind", kind)
    if declared != kind:
        raise ConfigError(f"config is for {declared!r}, not {kind!r}", location="kind")
    return cfg


def _block(cfg: dict, name: str) -> dict:
    value = cfg.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table", location=name)
    return value


def _pick(flag, cfg: dict, key: str, default=None, required=False):
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required value {key!r}", location=key)
    return default


def _seed(args, cfg):
    seed = _pick(args.seed, cfg, "seed")
    if seed is None:
        raise ConfigError("this command is randomized and needs an explicit --seed", location="seed")
    return int(seed)


def _construct(fn, block: dict, location: str):
    try:
        return fn(**block) if isinstance(block, dict) else fn(block)
    except TypeError as exc:
        raise ConfigError(f"bad [{location}] block: {exc}", location=location) from None


class Artifacts:
    def __init__(self, out):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write(self, name: str, text: str):
        path = self.dir / name
        path.write_text(text)
        self.files.append(str(path))

    def json(self, name: str, obj):
        self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def meta(self, argv):
        meta = {
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "argv": list(argv),
        }
        (self.dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _grid(block: dict, default: Grid) -> Grid:
    if not block:
        return default
    try:
        if "span" in block:
            return Grid.centered(float(block["span"]), float(block["step"]), float(block.get("center", 0.0)))
        return Grid(float(block["start"]), float(block["step"]), int(block["count"]))
    except KeyError as exc:
        raise ConfigError(f"[grid] is missing {exc.args[0]!r}", location=f"grid.{exc.args[0]}") from None


# subcommands

def cmd_efficiency(args, cfg, out):
    d = float(_pick(args.d, cfg, "d", required=True))
    f = float(_pick(args.F, cfg, "F", required=True))
    d0 = float(_pick(args.d0, cfg, "d0", 0.0))
    return {"efficiency": echo.afc_efficiency_analytic(d, f, d0), "d": d, "F": f, "d0": d0}


def cmd_storage_time(args, cfg, out):
    delta = float(_pick(args.delta, cfg, "delta", required=True))
    return {"storage_time_s": echo.storage_time(delta), "delta_hz": delta}


def cmd_physics(args, cfg, out):
    g = float(_pick(args.g, cfg, "g", required=True))
    B = float(_pick(args.B, cfg, "B", required=True))
    summary = {"g": g, "B_T": B, "zeeman_splitting_hz": analysis.zeeman_splitting(g, B)}
    T = _pick(args.T, cfg, "T")
    if T is not None:
        summary["T_K"] = float(T)
        summary["phonon_density"] = analysis.phonon_density(B, float(T), g)
    return summary


def cmd_pump_sim(args, cfg, out):
    ions = _construct(IonParameters, _block(cfg, "ions"), "ions")
    grid = _grid(_block(cfg, "grid"), Grid.centered(span=40e6, step=20e3))
    profile = build_inhomogeneous_profile(ions, grid, check_coverage=False)
    if "sequence" in cfg:
        seq = pumping.PumpSequence.from_dict(_block(cfg, "sequence"))
    else:
        comb = dict(_block(cfg, "comb"))
        if args.mode is not None:
            comb["mode"] = args.mode
        seq = _construct(pumping.comb_sequence, comb, "comb")
    medium = pumping.run_sequence(profile, ions, seq)
    probe = _block(cfg, "probe")
    center = float(probe.get("center", seq.pulses[0].center if seq.pulses else 0.0))
    width = float(probe.get("bandwidth", seq.pulses[0].bandwidth if seq.pulses else grid.step))
    summary = {
        "hole_depth": pumping.hole_depth(medium, center, width),
        "pump_energy": seq.pump_energy,
        "mode": seq.mode,
    }
    if out is not None:
        out.write("od_initial.csv", profile.to_csv())
        out.write("od_final.csv", medium.od.to_csv())
        out.json("sequence.json", seq.to_dict())
    return summary


def cmd_echo_sim(args, cfg, out):
    windows = cfg.get("windows")
    if windows:
        return _echo_storage(cfg, windows, out)
    wblock = dict(_block(cfg, "window"))
    for key, flag in (("delta", args.delta), ("finesse", args.F), ("depth", args.d), ("background", args.d0)):
        if flag is not None:
            wblock[key] = flag
    wblock.setdefault("center", 0.0)
    if "delta" in wblock:
        wblock.setdefault("bandwidth", 20 * float(wblock["delta"]))
    window = _construct(echo.AFCWindow, wblock, "window")
    sim = _block(cfg, "sim")
    passes = int(_pick(args.passes, sim, "passes", 1))
    run = echo.simulate_echo(
        window,
        passes=passes,
        pulse_fwhm=sim.get("pulse_fwhm"),
        alternate_depth=sim.get("alternate_depth"),
        base_od=sim.get("base_od"),
    )
    summary = dict(run.metrics.to_dict())
    summary["analytic_efficiency"] = echo.afc_efficiency_analytic(window.depth, window.finesse, window.background)
    summary["storage_time_s"] = window.storage_time
    if out is not None:
        out.write("input.csv", run.input.to_csv())
        out.write("output.csv", run.output.to_csv())
        out.write("od.csv", run.profile.to_csv())
        out.json("metrics.json", run.metrics.to_dict())
    return summary


def _echo_storage(cfg, windows, out):
    ws = [_construct(echo.AFCWindow, w, "windows") for w in windows]
    inputs = cfg.get("inputs")
    if not inputs:
        raise ConfigError("multi-window storage needs [[inputs]] with time_bin and center", location="inputs")
    sim = _block(cfg, "sim")
    if "pulse_fwhm" not in sim:
        raise ConfigError("multi-window storage needs sim.pulse_fwhm", location="sim.pulse_fwhm")
    trace, output, profile, schedule = echo.simulate_storage(
        ws, inputs, pulse_fwhm=float(sim["pulse_fwhm"]), passes=int(sim.get("passes", 1)), base=sim.get("base_od")
    )
    summary = {"order": schedule.order, "echoes": list(schedule.echoes)}
    if out is not None:
        out.write("input.csv", trace.to_csv())
        out.write("output.csv", output.to_csv())
        out.json("schedule.json", summary)
    return summary


def cmd_scan(args, cfg, out):
    seed = _seed(args, cfg)
    n_trials = int(_pick(args.trials, cfg, "n_trials", required=True))
    ranges = optimizer.ParamRanges.from_dict(_block(cfg, "ranges"))
    sim = _block(cfg, "sim")
    try:
        config = optimizer.ScanConfig.from_dict(sim)
    except TypeError as exc:
        raise ConfigError(f"bad [sim] block: {exc}", location="sim") from None
    records = optimizer.run_scan(ranges, n_trials, seed, config, workers=int(args.workers or 1))
    ok = [r for r in records if r.ok]
    best = optimizer.best_record(records)
    summary = {
        "n_trials": n_trials,
        "n_failed": len(records) - len(ok),
        "best_efficiency": best.efficiency,
        "best_trial": best.index,
        "median_efficiency": float(np.median([r.efficiency for r in ok])),
    }
    if out is not None:
        out.write("scan.csv", optimizer.records_to_csv(records))
        if len(ok) >= 3:
            out.write("correlation.json", optimizer.correlation_matrix(records).to_json() + "\n")
        out.json("best.json", {"params": best.params, "efficiency": best.efficiency, "comb": best.comb})
    return summary


def cmd_tomo(args, cfg, out):
    table_path = _pick(args.table, cfg, "table")
    if table_path is not None:
        p = Path(table_path)
        if not p.is_file():
            raise ConfigError(f"table file {str(p)!r} does not exist", location="table")
        table = tomography.table_from_csv(p.read_text())
        target = tomography.identity_chi()
    else:
        sigma = float(_pick(args.noise, cfg, "noise_sigma", 0.0))
        seed = _seed(args, cfg) if sigma > 0 else int(_pick(args.seed, cfg, "seed", 0))
        process = _pick(args.process, cfg, "process", "identity")
        labels = {"identity": 0, "X": 1, "Y": 2, "Z": 3}
        if process not in labels:
            raise ConfigError(f"unknown process {process!r}", location="process")
        target = tomography.pauli_chi(labels[process])
        table = tomography.simulate_tomography(target, sigma, seed)
    chi = tomography.reconstruct_chi(table)
    fid = tomography.process_fidelity(target, chi)
    summary = {"process_fidelity": fid, "residual": chi.residual}
    if out is not None:
        out.write("table.csv", tomography.table_to_csv(table))
        out.write("chi.json", tomography.chi_to_json(chi, {"process": fid}) + "\n")
    return summary


def cmd_polar(args, cfg, out):
    config = _pick(args.config_name, cfg, "configuration", polarization.TILTED_HWP_SANDWICH)
    if config not in polarization.CONFIGS:
        raise ConfigError(f"unknown configuration {config!r}", location="configuration")
    n_samples = _pick(args.samples, cfg, "n_samples")
    if n_samples is not None:
        seed = _seed(args, cfg)
        worst = polarization.config_worst_case(config, int(n_samples), seed)
        summary = {"configuration": config, "n_samples": int(n_samples), "worst_residual": worst}
        if out is not None:
            out.json("worst_case.json", summary)
        return summary
    phi = float(_pick(args.phi, cfg, "phi", required=True))
    gamma = float(_pick(args.gamma, cfg, "gamma", required=True))
    sol = polarization.solve_compensation(polarization.arb(phi, gamma), config)
    summary = dict(sol.to_dict(), configuration=config)
    if out is not None:
        out.json("solution.json", summary)
    return summary


def _read_columns(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"data file {str(p)!r} does not exist", location="data")
    try:
        data = np.loadtxt(p, delimiter=",", comments="#", ndmin=2)
    except ValueError:
        data = np.loadtxt(p, delimiter=",", comments="#", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ConfigError("data must have exactly two columns", location="data")
    return data[:, 0], data[:, 1]


def cmd_fit(args, cfg, out):
    data = _pick(args.data, cfg, "data", required=True)
    model = _pick(args.model, cfg, "model", "exp1")
    x, y = _read_columns(data)
    if model in ("exp1", "exp2"):
        result = analysis.fit_exponential(x, y, 1 if model == "exp1" else 2)
    elif model == "lorentzian":
        steps = np.diff(x)
        if steps.size == 0 or np.ptp(steps) > 1e-6 * abs(steps.mean()):
            raise ConfigError("Lorentzian fits need a uniform detuning grid", location="data")
        spec = SpectralProfile(float(x[0]), float(steps.mean()), y, "transmission")
        result = analysis.fit_lorentzian_holes(spec, int(_pick(args.side_pairs, cfg, "side_pairs", 0)))
    else:
        raise ConfigError(f"unknown model {model!r}", location="model")
    if not result.converged:
        raise ConvergenceError(f"{model} fit did not converge", best=result)
    summary = result.to_dict()
    if out is not None:
        out.write("fit.json", result.to_json() + "\n")
    return summary


COMMANDS = {
    "efficiency": cmd_efficiency,
    "storage-time": cmd_storage_time,
    "physics": cmd_physics,
    "pump-sim": cmd_pump_sim,
    "echo-sim": cmd_echo_sim,
    "scan": cmd_scan,
    "tomo": cmd_tomo,
    "polar": cmd_polar,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afclab", description="Atomic frequency comb memory simulations and fits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, out=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML experiment config")
        if out:
            p.add_argument("--out", help="directory for artifacts")
        return p

    p = add("efficiency", "closed-form echo efficiency", out=False)
    p.add_argument("--d", type=float)
    p.add_argument("--F", type=float)
    p.add_argument("--d0", type=float)

    p = add("storage-time", "storage time for a tooth spacing", out=False)
    p.add_argument("--delta", type=float, help="tooth spacing in Hz")

    p = add("physics", "Zeeman splitting and phonon density", out=False)
    p.add_argument("--g", type=float)
    p.add_argument("--B", type=float, help="field in T")
    p.add_argument("--T", type=float, help="temperature in K")

    p = add("pump-sim", "burn a comb into the inhomogeneous line")
    p.add_argument("--mode", choices=pumping.MODES)

    p = add("echo-sim", "propagate a pulse through a comb")
    p.add_argument("--delta", type=float)
    p.add_argument("--F", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--d0", type=float)
    p.add_argument("--passes", type=int)

    p = add("scan", "random search over pump parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)

    p = add("tomo", "process tomography reconstruction")
    p.add_argument("--seed", type=int)
    p.add_argument("--table", help="CSV table of probabilities (rows: input, columns: analyzer)")
    p.add_argument("--noise", type=float, help="noise sigma for simulated tables")
    p.add_argument("--process", choices=("identity", "X", "Y", "Z"))

    p = add("polar", "waveplate compensation angles")
    p.add_argument("--seed", type=int)
    p.add_argument("--configuration", dest="config_name", choices=polarization.CONFIGS)
    p.add_argument("--phi", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--samples", type=int, help="report the worst case over random retarders")

    p = add("fit", "fit decay curves or hole spectra")
    p.add_argument("--data", help="two-column CSV")
    p.add_argument("--model", choices=("exp1", "exp2", "lorentzian"))
    p.add_argument("--side-pairs", type=int)
    return parser


def _error(code: int, exc: Exception, location=None) -> int:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if location is not None:
        report["location"] = location
    best = getattr(exc, "best", None)
    if best is not None and hasattr(best, "to_dict"):
        report["best"] = best.to_dict()
    print(json.dumps(report), file=sys.stderr)
    return code


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        kind = args.command
        cfg = load_config(args.config, kind)
        out = Artifacts(args.out) if getattr(args, "out", None) else None
        summary = COMMANDS[kind](args, cfg, out)
        if out is not None:
            summary["artifacts"] = out.files
            out.meta(argv)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, exc, exc.location)
    except ConvergenceError as exc:
        return _error(EXIT_CONVERGENCE, exc)
    except (AFCError, ValueError) as exc:
        return _error(EXIT_DOMAIN, exc)
    print(json.dumps(_clean(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
