"""Spectral tailoring by frequency-swept optical pumping.

Each spectral bin holds three population reservoirs: the initial ground
level ``g``, the excited level ``e`` and a lumped shelf ``s`` standing in for
the other hyperfine levels. Under a pump rate ``R`` the populations obey::

    dg/dt = -R (g - e) + (1 - beta) e / T1 + s / T_shelf
    de/dt =  R (g - e) - e / T1
    ds/dt =  beta e / T1 - s / T_shelf

The rate is piecewise constant (pulse on, pulse off), so every interval is
integrated exactly with a 3x3 matrix exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, CoverageError, InvalidGridError, KindMismatchError, StepSizeError, UndefinedDepthError
from .medium import Grid, IonParameters, SpectralProfile

MODES = ("interleaved", "continuous")


@dataclass(frozen=True)
class PumpPulse:
    """A chirped pump pulse, represented by its square spectral footprint."""

    center: float
    bandwidth: float
    duration: float
    rate_peak: float

    def __post_init__(self):
        for name in ("bandwidth", "duration", "rate_peak"):
            if not getattr(self, name) > 0:
                raise ValueError(f"pulse {name} must be positive")

    @property
    def band(self):
        return self.center - self.bandwidth / 2, self.center + self.bandwidth / 2


@dataclass(frozen=True)
class PumpSequence:
    pulses: tuple
    n_loop: int
    in_loop_delay: float = 10e-3
    out_loop_delay: float = 100e-3
    mode: str = "interleaved"

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.n_loop) != self.n_loop or self.n_loop < 0:
            raise ValueError("n_loop must be a non-negative integer")
        if self.out_loop_delay < 0 or self.in_loop_delay < 0:
            raise ValueError("delays must be non-negative")
        if self.mode == "interleaved" and not self.in_loop_delay > 0:
            raise ValueError("interleaved pumping needs a positive in-loop delay")
        if self.mode == "continuous" and self.in_loop_delay != 0:
            raise ValueError("continuous pumping has no in-loop delay")

    @property
    def pump_energy(self) -> float:
        """Integrated rate x time x bandwidth over the whole sequence."""
        return self.n_loop * sum(p.rate_peak * p.duration * p.bandwidth for p in self.pulses)

    def as_continuous(self) -> "PumpSequence":
        """Same pulses and loop count with the dark intervals removed."""
        return PumpSequence(self.pulses, self.n_loop, 0.0, self.out_loop_delay, "continuous")

    @classmethod
    def from_dict(cls, d: dict) -> "PumpSequence":
        try:
            pulses = [
                PumpPulse(float(p["center"]), float(p["bandwidth"]), float(p["duration"]), float(p["rate_peak"]))
                for p in d["pulses"]
            ]
            return cls(
                pulses,
                int(d["n_loop"]),
                float(d.get("in_loop_delay_s", 0.0)),
                float(d.get("out_loop_delay_s", 0.0)),
                d.get("mode", "interleaved"),
            )
        except KeyError as exc:
            raise ConfigError(f"pump sequence is missing key {exc.args[0]!r}", location=exc.args[0]) from exc

    def to_dict(self) -> dict:
        return {
            "pulses": [
                {"center": p.center, "bandwidth": p.bandwidth, "duration": p.duration, "rate_peak": p.rate_peak}
                for p in self.pulses
            ],
            "n_loop": self.n_loop,
            "in_loop_delay_s": self.in_loop_delay,
            "out_loop_delay_s": self.out_loop_delay,
            "mode": self.mode,
        }


def comb_sequence(
    center: float,
    bandwidth: float,
    delta: float,
    hole_width: float,
    duration: float,
    rate_peak: float,
    n_loop: int,
    in_loop_delay: float = 10e-3,
    out_loop_delay: float = 100e-3,
    mode: str = "interleaved",
) -> PumpSequence:
    """Pump sequence that burns the troughs of a comb window.

    Teeth sit at ``center + (k - (n-1)/2) * delta`` for ``n = floor(bandwidth/delta)``,
    so the holes go half a period off, including one at each window edge.
    """
    n = int(math.floor(bandwidth / delta + 1e-9))
    pulses = [
        PumpPulse(center + (j - n / 2) * delta, hole_width, duration, rate_peak) for j in range(n + 1)
    ]
    if mode == "continuous":
        in_loop_delay = 0.0
    return PumpSequence(pulses, n_loop, in_loop_delay, out_loop_delay, mode)


@dataclass(frozen=True, eq=False)
class TailoredMedium:
    """Per-bin reservoirs after pumping, plus the absorber they came from."""

    ground: np.ndarray
    excited: np.ndarray
    shelf: np.ndarray
    initial_od: SpectralProfile
    od: SpectralProfile = field(init=False)

    def __post_init__(self):
        for name in ("ground", "excited", "shelf"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != self.initial_od.values.shape:
                raise InvalidGridError(f"{name} does not match the profile grid")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        od = self.initial_od.values * np.maximum(self.ground - self.excited, 0.0)
        object.__setattr__(self, "od", self.initial_od.with_values(od, "od"))

    @classmethod
    def fresh(cls, profile: SpectralProfile) -> "TailoredMedium":
        if profile.kind != "od":
            raise KindMismatchError("pumping starts from an OD profile")
        n = len(profile)
        return cls(np.ones(n), np.zeros(n), np.zeros(n), profile)

    @property
    def populations(self) -> np.ndarray:
        """(3, n_bins) array of ground, excited, shelf."""
        return np.vstack([self.ground, self.excited, self.shelf])

    def _replace(self, pops: np.ndarray) -> "TailoredMedium":
        return TailoredMedium(pops[0], pops[1], pops[2], self.initial_od)


def pump_rate_spectrum(pulse: PumpPulse, grid) -> SpectralProfile:
    if isinstance(grid, SpectralProfile):
        grid = grid.grid
    elif not isinstance(grid, Grid):
        grid = Grid(*grid)
    lo, hi = pulse.band
    if not grid.covers(lo, hi):
        raise CoverageError(f"pulse band [{lo:g}, {hi:g}] Hz lies outside the grid")
    x = grid.detuning
    tol = 1e-9 * grid.step
    rate = np.where((x >= lo - tol) & (x <= hi + tol), pulse.rate_peak, 0.0)
    return SpectralProfile(grid.start, grid.step, rate, "rate")


def _generator(rate: float, ions: IonParameters) -> np.ndarray:
    k1 = 1.0 / ions.excited_lifetime
    ks = 0.0 if math.isinf(ions.shelf_lifetime) else 1.0 / ions.shelf_lifetime
    b = ions.branching_ratio
    return np.array(
        [
            [-rate, rate + (1 - b) * k1, ks],
            [rate, -rate - k1, 0.0],
            [0.0, b * k1, -ks],
        ]
    )


def _propagator(rate: float, ions: IonParameters, dt: float) -> np.ndarray:
    return expm(_generator(rate, ions) * dt)


def evolve_populations(state: TailoredMedium, rate: SpectralProfile, ions: IonParameters, dt: float) -> TailoredMedium:
    """Advance every bin by ``dt`` under a constant pump-rate spectrum."""
    if rate.kind != "rate":
        raise KindMismatchError("evolve_populations needs a rate profile")
    if not state.initial_od.same_grid(rate):
        raise InvalidGridError("rate spectrum and medium use different grids")
    if not (dt > 0 and math.isfinite(dt)):
        raise StepSizeError(f"time step must be positive and finite, got {dt}")
    pops = state.populations
    out = np.empty_like(pops)
    levels, inverse = np.unique(rate.values, return_inverse=True)
    for i, r in enumerate(levels):
        sel = inverse == i
        out[:, sel] = _propagator(r, ions, dt) @ pops[:, sel]
    return state._replace(out)


def run_sequence(
    profile: SpectralProfile, ions: IonParameters, seq: PumpSequence, initial: TailoredMedium | None = None
) -> TailoredMedium:
    """Apply ``seq`` to a fresh (or given) medium and return the final reservoirs.

    Bins that see the same rate in every pulse share one loop propagator, so
    the cost is independent of the number of bins and ``n_loop`` enters only
    through a matrix power.
    """
    state = TailoredMedium.fresh(profile) if initial is None else initial
    if seq.n_loop == 0 or not seq.pulses:
        if seq.out_loop_delay > 0:
            return state._replace(_propagator(0.0, ions, seq.out_loop_delay) @ state.populations)
        return state

    rates = np.column_stack([pump_rate_spectrum(p, profile).values for p in seq.pulses])
    classes, inverse = np.unique(rates, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)

    delay_in = _propagator(0.0, ions, seq.in_loop_delay) if seq.in_loop_delay > 0 else np.eye(3)
    delay_out = _propagator(0.0, ions, seq.out_loop_delay) if seq.out_loop_delay > 0 else np.eye(3)
    cache = {}

    def step(r, duration):
        key = (r, duration)
        if key not in cache:
            cache[key] = _propagator(r, ions, duration)
        return cache[key]

    pops = state.populations
    out = np.empty_like(pops)
    for c, row in enumerate(classes):
        loop = np.eye(3)
        for r, pulse in zip(row, seq.pulses):
            loop = step(float(r), pulse.duration) @ loop
        loop = delay_in @ loop
        total = delay_out @ np.linalg.matrix_power(loop, int(seq.n_loop))
        sel = inverse == c
        out[:, sel] = total @ pops[:, sel]
    return state._replace(out)


def relax(medium: TailoredMedium, ions: IonParameters, t: float) -> TailoredMedium:
    """Free evolution (no pump) for a time ``t``."""
    if t == 0:
        return medium
    if not (t > 0 and math.isfinite(t)):
        raise StepSizeError(f"relaxation time must be positive and finite, got {t}")
    return medium._replace(_propagator(0.0, ions, t) @ medium.populations)


def hole_depth(medium: TailoredMedium, center: float, bandwidth: float) -> float:
    """Fractional OD reduction inside ``[center - bandwidth/2, center + bandwidth/2]``."""
    lo, hi = center - bandwidth / 2, center + bandwidth / 2
    if not medium.initial_od.grid.covers(lo, hi):
        raise CoverageError("hole window lies outside the grid")
    sel = medium.initial_od.mask(lo, hi)
    if not sel.any():
        raise CoverageError("hole window contains no grid samples")
    initial = medium.initial_od.values[sel].mean()
    if initial <= 0:
        raise UndefinedDepthError("initial OD in the window is zero")
    depth = 1.0 - medium.od.values[sel].mean() / initial
    return float(min(max(depth, 0.0), 1.0))


def spontaneous_noise(medium: TailoredMedium, t_wait: float, ions: IonParameters, normalize: bool = True) -> float:
    """Relative spontaneous-emission noise rate after waiting ``t_wait``.

    The excited population is weighted by the initial OD of its bin so the
    result is proportional to the number of emitting ions. With
    ``normalize`` the value is relative to ``t_wait = 0``.
    """
    if t_wait < 0:
        raise ValueError("t_wait must be non-negative")
    excited = float(np.sum(medium.excited * medium.initial_od.values))
    if excited <= 0:
        return 0.0
    decay = math.exp(-t_wait / ions.excited_lifetime)
    return decay if normalize else excited * decay
