"""Random search over pumping-sequence parameters.

Each trial draws the five pump parameters uniformly, burns a comb into a
slice of the inhomogeneous line, reads off the comb's tooth OD, floor and
finesse, and scores it with the closed-form echo efficiency.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .echo import AFCWindow, afc_efficiency_analytic
from .errors import AFCError, ConfigError, DomainError
from .medium import Grid, IonParameters, SpectralProfile, build_inhomogeneous_profile
from .pumping import comb_sequence, run_sequence

PARAM_NAMES = ("rate_peak", "pulse_duration", "pulse_bandwidth", "n_loop", "in_loop_delay")


@dataclass(frozen=True)
class ParamRanges:
    rate_peak: tuple = (100.0, 3000.0)
    pulse_duration: tuple = (0.2e-3, 5e-3)
    pulse_bandwidth: tuple = (0.3e6, 1.2e6)
    n_loop: tuple = (10, 100)
    in_loop_delay: tuple = (1e-3, 30e-3)

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DomainError(f"{name} range needs min < max, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        lo, hi = self.n_loop
        if int(lo) != lo or int(hi) != hi or lo < 0:
            raise DomainError("n_loop bounds must be non-negative integers")
        if self.in_loop_delay[0] <= 0:
            raise DomainError("in_loop_delay range must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRanges":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown parameter range {sorted(unknown)[0]!r}", location=f"ranges.{sorted(unknown)[0]}")
        return cls(**{k: tuple(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in PARAM_NAMES}


def trial_seed(base_seed: int, index: int) -> int:
    """Seed of trial ``index``; it depends only on the base seed and the index."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def sample_params(ranges: ParamRanges, rng_seed) -> dict:
    rng = np.random.default_rng(rng_seed)
    out = {}
    for name in PARAM_NAMES:
        lo, hi = getattr(ranges, name)
        if name == "n_loop":
            out[name] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            # clip guards against rounding to hi when the range is tiny
            out[name] = float(min(max(rng.uniform(lo, hi), lo), hi))
    return out


@dataclass(frozen=True)
class ScanConfig:
    """What a trial simulates: the target comb window and the ions."""

    window: AFCWindow = field(default_factory=lambda: AFCWindow(0.0, 10e6, 2e6))
    ions: IonParameters = field(default_factory=IonParameters)
    step: float = 20e3
    margin: float = 1e6
    out_loop_delay: float = 100e-3
    mode: str = "interleaved"

    @classmethod
    def from_dict(cls, d: dict) -> "ScanConfig":
        kw = {k: d[k] for k in ("step", "margin", "out_loop_delay", "mode") if k in d}
        if "window" in d:
            kw["window"] = AFCWindow.from_dict(d["window"])
        if "ions" in d:
            kw["ions"] = IonParameters(**d["ions"])
        return cls(**kw)


@dataclass
class ScanRecord:
    params: dict
    efficiency: float
    seed: int
    index: int = 0
    comb: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def extract_comb_parameters(od: SpectralProfile, window: AFCWindow) -> dict:
    """Tooth OD above the floor, finesse and floor OD of a burned comb.

    For each tooth cell ``[c - delta/2, c + delta/2]`` the top is the maximum
    and the floor the minimum OD. The tooth width is the length of the cell
    above half prominence.
    """
    if od.kind != "od":
        raise DomainError("comb extraction needs an OD profile")
    tops, floors, widths = [], [], []
    for c in window.tooth_centers:
        sel = od.mask(c - window.delta / 2, c + window.delta / 2)
        if sel.sum() < 3:
            raise DomainError("tooth cell is not resolved by the grid")
        v = od.values[sel]
        top, floor = float(v.max()), float(v.min())
        tops.append(top)
        floors.append(floor)
        if top - floor <= 1e-12 * max(top, 1.0):
            widths.append(window.delta)
        else:
            widths.append(float(np.count_nonzero(v >= floor + (top - floor) / 2)) * od.detuning_step)
    top, floor, width = float(np.mean(tops)), float(np.mean(floors)), float(np.mean(widths))
    return {
        "d": top - floor,
        "d0": floor,
        "finesse": max(window.delta / width, 1.0),
        "tooth_width": width,
    }


def _local_profile(config: ScanConfig) -> SpectralProfile:
    w = config.window
    span = w.bandwidth + 2 * config.margin
    count = int(round(span / config.step)) + 1
    grid = Grid(w.center - (count - 1) / 2 * config.step, config.step, count)
    return build_inhomogeneous_profile(config.ions, grid, check_coverage=False)


def evaluate(params: dict, config: ScanConfig, profile: SpectralProfile | None = None) -> tuple:
    """Efficiency and comb summary for one parameter vector."""
    profile = _local_profile(config) if profile is None else profile
    w = config.window
    seq = comb_sequence(
        w.center,
        w.bandwidth,
        w.delta,
        params["pulse_bandwidth"],
        params["pulse_duration"],
        params["rate_peak"],
        int(params["n_loop"]),
        params["in_loop_delay"],
        config.out_loop_delay,
        config.mode,
    )
    medium = run_sequence(profile, config.ions, seq)
    comb = extract_comb_parameters(medium.od, w)
    eta = afc_efficiency_analytic(comb["d"], comb["finesse"], comb["d0"])
    return eta, comb


def _run_trial(args):
    index, seed, ranges, config = args
    params = sample_params(ranges, seed)
    try:
        eta, comb = evaluate(params, config)
        return ScanRecord(params, eta, seed, index, comb)
    except AFCError as exc:
        return ScanRecord(params, math.nan, seed, index, {}, f"{type(exc).__name__}: {exc}")


def run_scan(
    ranges: ParamRanges, n_trials: int, base_seed: int, sim_config: ScanConfig | None = None, workers: int = 1
) -> list:
    """Run ``n_trials`` independent trials; records come back in trial order.

    Trials whose simulation fails keep their parameters, get ``efficiency``
    NaN and carry the error message.
    """
    if n_trials < 1:
        raise DomainError("n_trials must be >= 1")
    config = ScanConfig() if sim_config is None else sim_config
    jobs = [(i, trial_seed(base_seed, i), ranges, config) for i in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial, jobs, chunksize=max(1, n_trials // (4 * workers))))
    else:
        records = [_run_trial(j) for j in jobs]
    return sorted(records, key=lambda r: r.index)


def best_record(records) -> ScanRecord:
    ok = [r for r in records if r.ok]
    if not ok:
        raise DomainError("no successful trials")
    return max(ok, key=lambda r: (r.efficiency, -r.index))


@dataclass
class CorrelationReport:
    names: list
    matrix: np.ndarray
    zero_variance: list
    n_records: int

    def to_dict(self):
        return {
            "names": list(self.names),
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "zero_variance": list(self.zero_variance),
            "n_records": self.n_records,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def correlation_matrix(records, names=None) -> CorrelationReport:
    """Pearson correlation over the parameters and the efficiency.

    Errored records are left out. A column without variance gets zero
    correlation against everything else and is listed in ``zero_variance``.
    """
    ok = [r for r in records if r.ok]
    if len(ok) < 3:
        raise DomainError("correlation needs at least 3 successful records")
    names = list(names or list(ok[0].params) + ["efficiency"])
    data = np.array([[r.efficiency if n == "efficiency" else r.params[n] for n in names] for r in ok], dtype=float)
    centered = data - data.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    flat = norms <= 1e-12 * np.maximum(np.abs(data).max(axis=0), 1e-300)
    unit = np.where(flat, 0.0, centered / np.where(flat, 1.0, norms))
    m = np.clip(unit.T @ unit, -1.0, 1.0)
    m = (m + m.T) / 2
    np.fill_diagonal(m, 1.0)
    return CorrelationReport(names, m, [n for n, f in zip(names, flat) if f], len(ok))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(records[0].params)
    w.writerow(["trial"] + names + ["efficiency", "seed", "error"])
    for r in records:
        w.writerow([r.index] + [repr(r.params[n]) for n in names] + [repr(float(r.efficiency)), r.seed, r.error or ""])
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        params = {n: (int(row[n]) if n == "n_loop" else float(row[n])) for n in PARAM_NAMES if n in row}
        out.append(ScanRecord(params, float(row["efficiency"]), int(row["seed"]), int(row["trial"]), {}, row["error"] or None))
    return out
