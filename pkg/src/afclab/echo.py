"""AFC storage: closed-form efficiency and time-domain propagation.

The time-domain path builds a causal transfer function from an OD profile
(amplitude ``exp(-passes*OD/2)``, phase from the Kramers-Kronig pair of the
same absorption) and filters complex field envelopes through it with FFTs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AliasingError,
    CoverageError,
    DomainError,
    GatingError,
    InvalidGridError,
    KindMismatchError,
    MatchingError,
    ResolutionError,
    SaturationError,
)
from .medium import Grid, SpectralProfile

ETALON_LEAKAGE = 0.009


@dataclass(frozen=True)
class AFCWindow:
    center: float
    bandwidth: float
    delta: float
    finesse: float = 3.0
    depth: float = 3.3
    background: float = 1.3

    def __post_init__(self):
        for name in ("center", "bandwidth", "delta", "finesse", "depth", "background"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.delta > 0:
            raise DomainError("tooth spacing must be positive")
        if self.bandwidth < self.delta:
            raise DomainError("window bandwidth must be at least one tooth spacing")
        if self.finesse < 1:
            raise DomainError("finesse must be >= 1")
        if self.depth < 0 or self.background < 0:
            raise DomainError("depth and background must be non-negative")

    @property
    def storage_time(self) -> float:
        return 1.0 / self.delta

    @property
    def tooth_width(self) -> float:
        return self.delta / self.finesse

    @property
    def n_teeth(self) -> int:
        return int(math.floor(self.bandwidth / self.delta + 1e-9))

    @property
    def tooth_centers(self) -> np.ndarray:
        n = self.n_teeth
        return self.center + (np.arange(n) - (n - 1) / 2) * self.delta

    def contains(self, f: float) -> bool:
        half = self.bandwidth / 2
        return self.center - half <= f <= self.center + half

    @classmethod
    def from_dict(cls, d: dict) -> "AFCWindow":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class TimeTrace:
    t_start: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=complex)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not self.dt > 0:
            raise InvalidGridError("time step must be positive")
        if s.ndim != 1 or s.size < 2:
            raise InvalidGridError("a trace needs at least 2 samples")

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.samples.size)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.dt)

    def __len__(self):
        return self.samples.size

    def __add__(self, other: "TimeTrace") -> "TimeTrace":
        if other.samples.size != self.samples.size or other.dt != self.dt or other.t_start != self.t_start:
            raise InvalidGridError("traces are sampled differently")
        return TimeTrace(self.t_start, self.dt, self.samples + other.samples)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# t_start={self.t_start!r} dt={self.dt!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "re", "im"])
        for t, z in zip(self.times, self.samples):
            w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimeTrace":
        meta = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                for item in line[1:].split():
                    k, _, v = item.partition("=")
                    meta[k] = float(v)
            elif line.strip() and not line.startswith("t_s"):
                rows.append(line)
        data = np.array([[float(x) for x in r] for r in csv.reader(rows)])
        t0 = meta.get("t_start", data[0, 0])
        dt = meta.get("dt", data[1, 0] - data[0, 0])
        return cls(t0, dt, data[:, 1] + 1j * data[:, 2])

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_start": self.t_start,
                "dt": self.dt,
                "re": self.samples.real.tolist(),
                "im": self.samples.imag.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "TimeTrace":
        d = json.loads(text)
        return cls(d["t_start"], d["dt"], np.array(d["re"]) + 1j * np.array(d["im"]))


def gaussian_pulse(t_start: float, dt: float, n: int, t0: float, fwhm: float, detuning: float = 0.0, amplitude=1.0):
    """Gaussian envelope with intensity FWHM ``fwhm`` centered at ``t0``, offset by ``detuning`` Hz."""
    t = t_start + dt * np.arange(n)
    env = amplitude * np.exp(-2.0 * math.log(2.0) * ((t - t0) / fwhm) ** 2)
    return TimeTrace(t_start, dt, env * np.exp(2j * np.pi * detuning * (t - t0)))


def with_etalon_leakage(trace: TimeTrace, shift: float, fraction: float = ETALON_LEAKAGE) -> TimeTrace:
    """Add a weak copy of ``trace`` moved by ``shift`` Hz (the unfiltered carrier).

    The copy has amplitude ``sqrt(fraction)`` relative to the input.
    """
    copy = np.sqrt(fraction) * trace.samples * np.exp(2j * np.pi * shift * trace.times)
    return TimeTrace(trace.t_start, trace.dt, trace.samples + copy)


# closed form

def afc_efficiency_analytic(d: float, finesse: float, d0: float = 0.0) -> float:
    """Forward-echo efficiency of a square-tooth comb.

    ``(d/F)^2 exp(-d/F) sinc^2(pi/F) exp(-d0)`` with the unnormalized
    ``sinc(x) = sin(x)/x``.
    """
    if finesse < 1:
        raise DomainError(f"finesse must be >= 1, got {finesse}")
    if d < 0 or d0 < 0:
        raise DomainError("optical depths must be non-negative")
    x = math.pi / finesse
    sinc = math.sin(x) / x
    r = d / finesse
    return r * r * math.exp(-r) * sinc * sinc * math.exp(-d0)


def storage_time(delta: float) -> float:
    if not delta > 0:
        raise DomainError("tooth spacing must be positive")
    return 1.0 / delta


# spectral profiles

def _grid_of(grid) -> Grid:
    if isinstance(grid, SpectralProfile):
        return grid.grid
    if isinstance(grid, Grid):
        return grid
    return Grid(*grid)


def comb_profile(
    window: AFCWindow,
    grid,
    *,
    alternate_depth: float | None = None,
    base: SpectralProfile | None = None,
    margin: float = 0.0,
) -> SpectralProfile:
    """Square-tooth comb OD profile.

    Teeth rise ``window.depth`` above the ``window.background`` floor. The
    floor covers the tailored region (the window plus ``margin`` on each
    side); beyond it the profile takes ``base`` values when a base absorber is
    given, the floor otherwise. ``alternate_depth`` sets the height of every
    other tooth, which adds a component at twice the spacing.
    """
    g = _grid_of(base if base is not None else grid)
    lo, hi = window.center - window.bandwidth / 2, window.center + window.bandwidth / 2
    if not g.covers(lo, hi):
        raise CoverageError("comb window lies outside the grid")
    if window.tooth_width < 2 * g.step:
        raise ResolutionError(
            f"tooth width {window.tooth_width:g} Hz is under two grid steps ({g.step:g} Hz)"
        )
    x = g.detuning
    tol = 1e-9 * g.step
    if base is not None:
        if base.kind != "od":
            raise KindMismatchError("base must be an OD profile")
        od = base.values.copy()
    else:
        od = np.full(x.size, float(window.background))
    tailored = (x >= lo - margin - tol) & (x <= hi + margin + tol)
    od[tailored] = window.background
    half = window.tooth_width / 2
    for k, c in enumerate(window.tooth_centers):
        h = window.depth if (alternate_depth is None or k % 2 == 0) else alternate_depth
        tooth = (x >= c - half - tol) & (x <= c + half + tol)
        od[tooth] = window.background + h
    return SpectralProfile(g.start, g.step, od, "od")


def multi_comb_profile(windows, grid, base: SpectralProfile | None = None) -> SpectralProfile:
    """Several comb windows burned into one absorber."""
    g = _grid_of(base if base is not None else grid)
    if base is None:
        floor = min(w.background for w in windows)
        base = SpectralProfile(g.start, g.step, np.full(g.count, float(floor)), "od")
    od = base.values.copy()
    for w in windows:
        comb = comb_profile(w, g, base=base)
        sel = base.mask(w.center - w.bandwidth / 2, w.center + w.bandwidth / 2)
        od[sel] = comb.values[sel]
    return base.with_values(od)


# transfer function

APODIZE_FRACTION = 0.05
PAD_FACTOR = 4


def _causal_log(a: np.ndarray) -> np.ndarray:
    """Complex log-response ``-(a + i b)`` whose inverse transform vanishes for t < 0."""
    m = a.size
    k = np.fft.ifft(-a)
    h = np.zeros(m)
    h[0] = 1.0
    h[1 : (m + 1) // 2] = 2.0
    if m % 2 == 0:
        h[m // 2] = 1.0
    return np.fft.fft(k * h)


def _apodize(a: np.ndarray, fraction: float = APODIZE_FRACTION) -> np.ndarray:
    n = a.size
    edge = max(int(round(fraction * n)), 1)
    w = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    w[:edge] = ramp
    w[n - edge :] = ramp[::-1]
    return a * w


@dataclass(frozen=True, eq=False)
class Response:
    """Complex field transfer function on a detuning grid (immutable propagation plan)."""

    detuning_start: float
    detuning_step: float
    values: np.ndarray
    log_padded: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def detuning(self) -> np.ndarray:
        return self.detuning_start + self.detuning_step * np.arange(self.values.size)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)

    @property
    def unwrapped_phase(self) -> np.ndarray:
        return np.unwrap(np.angle(self.values))

    def group_delay(self) -> np.ndarray:
        """``-(1/2pi) d(arg H)/df`` in seconds at each grid point."""
        return -np.gradient(self.unwrapped_phase, self.detuning_step) / (2 * np.pi)

    def impulse_response(self):
        """Impulse response of the padded, apodized response as (times, h), times ascending."""
        if self.log_padded is None:
            raise ValueError("response has no padded log spectrum")
        H = np.exp(self.log_padded)
        m = H.size
        h = np.fft.ifft(H) * np.exp(2j * np.pi * self.detuning_start * np.arange(m) / (m * self.detuning_step))
        t = np.fft.fftfreq(m, d=self.detuning_step)
        order = np.argsort(t)
        return t[order], h[order]

    def at(self, freqs: np.ndarray) -> np.ndarray:
        """Response at arbitrary detunings; outside the grid the edge value is held."""
        x = self.detuning
        return np.interp(freqs, x, self.values.real) + 1j * np.interp(freqs, x, self.values.imag)


def transfer_function(profile: SpectralProfile, passes: int = 1) -> Response:
    """Causal field response of ``passes`` traversals through ``profile``.

    The phase is the discrete Hilbert transform of ``passes*OD/2`` computed
    on a grid zero-padded four-fold, with the outer 5% of the absorption
    tapered to zero first so the periodic FFT does not wrap edge steps.
    """
    if profile.kind != "od":
        raise KindMismatchError("transfer_function needs an OD profile")
    if int(passes) != passes or passes < 1:
        raise DomainError("passes must be a positive integer")
    a = passes * profile.values / 2.0
    n = a.size
    padded = np.zeros(PAD_FACTOR * n)
    padded[:n] = _apodize(a)
    log_padded = _causal_log(padded)
    phase_term = log_padded.imag[:n]
    values = np.exp(-a + 1j * phase_term)
    return Response(profile.detuning_start, profile.detuning_step, values, log_padded)


# propagation

def _response_on(trace: TimeTrace, response: Response):
    n = trace.samples.size
    freqs = np.fft.fftfreq(n, d=trace.dt)
    step = response.detuning_step
    df = 1.0 / (n * trace.dt)
    idx = np.rint((freqs - response.detuning_start) / step).astype(np.int64)
    inside = (idx >= 0) & (idx < response.values.size)
    if math.isclose(df, step, rel_tol=1e-9) and np.allclose(
        response.detuning_start + idx[inside] * step, freqs[inside], rtol=0, atol=1e-6 * step
    ):
        H = np.empty(n, dtype=complex)
        H[inside] = response.values[idx[inside]]
        H[~inside] = response.values[np.clip(idx[~inside], 0, response.values.size - 1)]
    else:
        H = response.at(freqs)
        inside = (freqs >= response.detuning[0]) & (freqs <= response.detuning[-1])
    return freqs, H, inside


def propagate(trace: TimeTrace, response: Response, alias_tol: float = 1e-8) -> TimeTrace:
    """Filter ``trace`` through ``response``: ``ifft(fft(trace) * H)``."""
    X = np.fft.fft(trace.samples)
    _, H, inside = _response_on(trace, response)
    power = np.abs(X) ** 2
    total = power.sum()
    if total > 0 and power[~inside].sum() > alias_tol * total:
        raise AliasingError("input spectrum extends beyond the response grid")
    return TimeTrace(trace.t_start, trace.dt, np.fft.ifft(X * H))


# scheduling

@dataclass(frozen=True)
class Schedule:
    echoes: list
    order: str

    def __iter__(self):
        return iter(self.echoes)

    def __len__(self):
        return len(self.echoes)

    def __getitem__(self, i):
        return self.echoes[i]


def _classify(times_in, times_out) -> str:
    if len(times_out) < 2:
        return "single"
    if len(set(np.round(times_out, 15))) < len(times_out):
        return "coincident"
    if len(set(np.round(times_in, 15))) < len(times_in):
        return "frequency-dependent"
    order_in = np.argsort(times_in, kind="stable")
    order_out = np.argsort(times_out, kind="stable")
    if np.array_equal(order_in, order_out):
        return "FIFO"
    if np.array_equal(order_in, order_out[::-1]):
        return "FILO"
    return "mixed"


def schedule_multiwindow(inputs, windows) -> Schedule:
    """Expected echo time for each input pulse, matched to a comb window by frequency.

    ``inputs`` are mappings with ``time_bin`` (s) and ``center`` (Hz).
    """
    echoes = []
    for i, item in enumerate(inputs):
        matches = [j for j, w in enumerate(windows) if w.contains(item["center"])]
        if len(matches) != 1:
            raise MatchingError(f"input {i} at {item['center']:g} Hz matches {len(matches)} windows")
        j = matches[0]
        echoes.append(
            {"expected_echo_time": item["time_bin"] + windows[j].storage_time, "window_index": j}
        )
    order = _classify([x["time_bin"] for x in inputs], [e["expected_echo_time"] for e in echoes])
    return Schedule(echoes, order)


# metrics

@dataclass(frozen=True)
class EchoMetrics:
    efficiency: float
    echo_peak_time: float
    leakage_group_delay: float

    def to_dict(self):
        return {
            "efficiency": self.efficiency,
            "echo_peak_time_s": self.echo_peak_time,
            "leakage_group_delay_s": self.leakage_group_delay,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _peak_time(t: np.ndarray, intensity: np.ndarray) -> float:
    """Peak position refined by a parabola through the log-intensity (exact for Gaussians)."""
    i = int(np.argmax(intensity))
    if 0 < i < intensity.size - 1 and np.all(intensity[i - 1 : i + 2] > 0):
        y0, y1, y2 = np.log(intensity[i - 1 : i + 2])
        denom = y0 - 2 * y1 + y2
        if denom < 0:
            shift = 0.5 * (y0 - y2) / denom
            return float(t[i] + shift * (t[1] - t[0]))
    return float(t[i])


def _gate(trace: TimeTrace, lo: float, hi: float) -> np.ndarray:
    t = trace.times
    if lo < t[0] - 0.5 * trace.dt or hi > t[-1] + 0.5 * trace.dt:
        raise GatingError(f"gate [{lo:g}, {hi:g}] s extends beyond the trace")
    sel = (t >= lo) & (t <= hi)
    if not sel.any():
        raise GatingError("gate contains no samples")
    return sel


def echo_metrics(output: TimeTrace, input: TimeTrace, expected_echo: float, gate_width: float) -> EchoMetrics:
    """Efficiency, echo peak time and leakage delay of a propagated pulse.

    ``expected_echo`` is an absolute time on the trace axis; the echo gate is
    ``expected_echo +- gate_width/2``. The leakage gate spans the same width
    around the input peak, extended up to the echo gate.
    """
    if not gate_width > 0:
        raise GatingError("gate width must be positive")
    e_in = input.energy
    if e_in <= 0:
        raise GatingError("input trace carries no energy")
    t = output.times
    echo_sel = _gate(output, expected_echo - gate_width / 2, expected_echo + gate_width / 2)
    I_out = output.intensity
    efficiency = float(np.sum(I_out[echo_sel]) * output.dt / e_in)
    echo_peak = _peak_time(t[echo_sel], I_out[echo_sel])

    t_in = _peak_time(input.times, input.intensity)
    leak_hi = min(t_in + gate_width / 2, expected_echo - gate_width / 2)
    leak_hi = max(leak_hi, t_in + output.dt)
    leak_sel = _gate(output, t_in - gate_width / 2, leak_hi)
    leak_peak = _peak_time(t[leak_sel], I_out[leak_sel])
    return EchoMetrics(efficiency, echo_peak, leak_peak - t_in)


def mean_photons_from_click(p_click: float) -> float:
    """Poisson mean photon number behind a click probability."""
    if p_click >= 1:
        raise SaturationError("click probability of 1 means the detector is saturated")
    if p_click < 0:
        raise DomainError("click probability must be non-negative")
    return -math.log1p(-p_click)


# end-to-end helpers

@dataclass(frozen=True, eq=False)
class EchoRun:
    input: TimeTrace
    output: TimeTrace
    profile: SpectralProfile
    response: Response
    metrics: EchoMetrics


def matched_grid(delta: float, span: float, samples_per_period: int = 120):
    """FFT-consistent detuning grid and time axis for combs of spacing ``delta``.

    Returns ``(grid, dt, n)``: the grid equals the sorted FFT frequencies of an
    ``n``-sample trace with step ``dt``, so ``propagate`` needs no
    interpolation. The trace lasts ``samples_per_period`` storage times.
    """
    df = delta / samples_per_period
    per_tau = int(math.ceil(span / delta))
    n = samples_per_period * per_tau
    dt = 1.0 / (n * df)
    freqs = np.sort(np.fft.fftfreq(n, d=dt))
    return Grid(float(freqs[0]), df, n), dt, n


def simulate_echo(
    window: AFCWindow,
    *,
    passes: int = 1,
    pulse_fwhm: float | None = None,
    gate_fraction: float = 0.5,
    samples_per_period: int = 120,
    span_factor: float = 4.0,
    alternate_depth: float | None = None,
    base_od: float | None = None,
) -> EchoRun:
    """Store one Gaussian pulse in a single comb window and measure the echo.

    The pulse sits at t = 0 on the window center, lasts a tenth of the
    storage time unless ``pulse_fwhm`` is given, and the echo gate is
    ``gate_fraction`` storage times wide. Teeth are placed half a bin off the
    sample lattice so each spans exactly ``delta/(F*df)`` samples. With
    ``base_od`` the comb is burned into a flat absorber of that OD, giving the
    transparency window that slows the leakage.
    """
    tau = window.storage_time
    grid, dt, n = matched_grid(window.delta, span_factor * window.bandwidth, samples_per_period)
    snapped = (math.floor(window.center / grid.step) + 0.5) * grid.step
    w = AFCWindow(snapped, window.bandwidth, window.delta, window.finesse, window.depth, window.background)
    base = None
    if base_od is not None:
        base = SpectralProfile(grid.start, grid.step, np.full(grid.count, base_od), "od")
    profile = comb_profile(w, grid, alternate_depth=alternate_depth, base=base)
    response = transfer_function(profile, passes)
    fwhm = 0.1 * tau if pulse_fwhm is None else pulse_fwhm
    t_start = -(n // 8) * dt
    pulse = gaussian_pulse(t_start, dt, n, 0.0, fwhm, detuning=snapped)
    out = propagate(pulse, response)
    metrics = echo_metrics(out, pulse, tau, gate_fraction * tau)
    return EchoRun(pulse, out, profile, response, metrics)


def echo_efficiency_numeric(d: float, finesse: float, d0: float, delta: float = 2e6, n_teeth: int = 20) -> float:
    """Time-domain echo efficiency for a comb with the given tooth OD, finesse and floor."""
    w = AFCWindow(0.0, n_teeth * delta, delta, finesse, d, d0)
    return simulate_echo(w).metrics.efficiency


def simulate_storage(
    windows,
    inputs,
    *,
    pulse_fwhm: float,
    passes: int = 1,
    base: float | None = None,
    step: float | None = None,
    duration: float | None = None,
    etalon_leakage: bool = False,
    carrier: float = 0.0,
):
    """Multi-window storage of several Gaussian input pulses.

    ``inputs`` are mappings with ``time_bin`` and ``center``. Returns the
    input trace, the output trace, the combined OD profile and the schedule.
    """
    schedule = schedule_multiwindow(inputs, windows)
    lo = min(w.center - w.bandwidth / 2 for w in windows)
    hi = max(w.center + w.bandwidth / 2 for w in windows)
    min_tooth = min(w.tooth_width for w in windows)
    step = step or min_tooth / 20
    latest = max(e["expected_echo_time"] for e in schedule)
    duration = duration or 8 * latest
    span = max(4 * (hi - lo), 4 * max(abs(lo), abs(hi)))
    n = int(2 ** math.ceil(math.log2(max(span, 1.0) / step)))
    n = max(n, int(2 ** math.ceil(math.log2(duration * span))))
    dt = 1.0 / span
    df = 1.0 / (n * dt)
    freqs = np.sort(np.fft.fftfreq(n, d=dt))
    grid = Grid(float(freqs[0]), df, n)
    base_profile = None
    if base is not None:
        base_profile = SpectralProfile(grid.start, grid.step, np.full(n, base), "od")
    profile = multi_comb_profile(windows, grid, base=base_profile)
    response = transfer_function(profile, passes)
    t_start = -(n // 8) * dt
    trace = None
    for item in inputs:
        p = gaussian_pulse(t_start, dt, n, item["time_bin"], pulse_fwhm, detuning=item["center"])
        if etalon_leakage:
            p = with_etalon_leakage(p, carrier - item["center"])
        trace = p if trace is None else trace + p
    out = propagate(trace, response)
    return trace, out, profile, schedule
