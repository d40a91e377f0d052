"""Spectral model of the inhomogeneously broadened absorber.

Profiles are real samples on a uniform detuning grid. The ``kind`` tag says
what the samples mean: optical depth (``"od"``), intensity transmission
(``"transmission"``) or a pump rate in s^-1 (``"rate"``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError, KindMismatchError

KINDS = ("od", "transmission", "rate")

# Default detuning grid: +-500 MHz around line center with 10 kHz steps.
DEFAULT_SPAN = 1.0e9
DEFAULT_STEP = 1.0e4


@dataclass(frozen=True)
class Grid:
    """Uniform detuning grid ``start + step * arange(count)`` in Hz."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidGridError(f"grid step must be positive, got {self.step}")
        if int(self.count) != self.count or self.count < 2:
            raise InvalidGridError(f"grid needs at least 2 samples, got {self.count}")

    @classmethod
    def centered(cls, span: float = DEFAULT_SPAN, step: float = DEFAULT_STEP, center: float = 0.0):
        if not step > 0 or not span > 0:
            raise InvalidGridError("span and step must be positive")
        half = int(round(span / (2 * step)))
        return cls(center - half * step, step, 2 * half + 1)

    @property
    def detuning(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.count - 1)

    def covers(self, lo: float, hi: float) -> bool:
        tol = 1e-9 * self.step
        return lo >= self.start - tol and hi <= self.stop + tol


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    detuning_start: float
    detuning_step: float
    values: np.ndarray
    kind: str = "od"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.kind not in KINDS:
            raise KindMismatchError(f"unknown profile kind {self.kind!r}")
        if not self.detuning_step > 0:
            raise InvalidGridError(f"detuning step must be positive, got {self.detuning_step}")
        if values.ndim != 1 or values.size < 2:
            raise InvalidGridError("profile needs at least 2 samples")
        if self.kind in ("od", "rate") and np.any(values < 0):
            raise ValueError(f"{self.kind} values must be non-negative")
        if self.kind == "transmission" and (np.any(values < 0) or np.any(values > 1)):
            raise ValueError("transmission values must lie in [0, 1]")

    @property
    def grid(self) -> Grid:
        return Grid(self.detuning_start, self.detuning_step, self.values.size)

    @property
    def detuning(self) -> np.ndarray:
        return self.grid.detuning

    def __len__(self):
        return self.values.size

    def same_grid(self, other: "SpectralProfile") -> bool:
        return (
            self.values.size == other.values.size
            and self.detuning_start == other.detuning_start
            and self.detuning_step == other.detuning_step
        )

    def at(self, detuning: float) -> float:
        """Linearly interpolated value at ``detuning``."""
        return float(np.interp(detuning, self.detuning, self.values))

    def mask(self, lo: float, hi: float) -> np.ndarray:
        """Boolean mask of samples in the closed interval [lo, hi]."""
        x = self.detuning
        tol = 1e-9 * self.detuning_step
        return (x >= lo - tol) & (x <= hi + tol)

    def with_values(self, values, kind: str | None = None) -> "SpectralProfile":
        return SpectralProfile(self.detuning_start, self.detuning_step, values, kind or self.kind)

    # serialization

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# kind={self.kind} start={self.detuning_start!r} step={self.detuning_step!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["detuning_Hz", "value"])
        for x, v in zip(self.detuning, self.values):
            writer.writerow([repr(float(x)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, kind: str | None = None) -> "SpectralProfile":
        meta = {}
        rows = []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    key, _, val = item.partition("=")
                    meta[key] = val
                continue
            rows.append(line)
        reader = csv.reader(rows)
        data = [r for r in reader if r and r[0] != "detuning_Hz"]
        x = np.array([float(r[0]) for r in data])
        v = np.array([float(r[1]) for r in data])
        if x.size < 2:
            raise InvalidGridError("CSV profile needs at least 2 rows")
        start = float(meta["start"]) if "start" in meta else float(x[0])
        step = float(meta["step"]) if "step" in meta else float(x[1] - x[0])
        if not np.allclose(np.diff(x), step, rtol=1e-6, atol=0):
            raise InvalidGridError("CSV detuning column is not uniformly spaced")
        return cls(start, step, v, kind or meta.get("kind", "od"))

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "detuning_start": self.detuning_start,
                "detuning_step": self.detuning_step,
                "values": self.values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SpectralProfile":
        d = json.loads(text)
        return cls(d["detuning_start"], d["detuning_step"], d["values"], d.get("kind", "od"))


@dataclass(frozen=True)
class IonParameters:
    """Lumped parameters of the Er ensemble.

    Defaults follow the experiment: 10 ms excited lifetime, a branching ratio
    of 0.08 into the shelf, a 3 s hole lifetime, peak OD 3.3 and a 390 MHz
    inhomogeneous line.
    """

    excited_lifetime: float = 10e-3
    branching_ratio: float = 0.08
    shelf_lifetime: float = 3.0
    peak_od: float = 3.3
    inhomogeneous_fwhm: float = 390e6

    def __post_init__(self):
        for name in ("excited_lifetime", "shelf_lifetime", "peak_od", "inhomogeneous_fwhm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.branching_ratio < 1:
            raise ValueError("branching_ratio must lie in (0, 1)")


def _as_grid(grid) -> Grid:
    if isinstance(grid, Grid):
        return grid
    if isinstance(grid, dict):
        return Grid(float(grid["start"]), float(grid["step"]), int(grid["count"]))
    start, step, count = grid
    return Grid(float(start), float(step), int(count))


def build_inhomogeneous_profile(
    params: IonParameters, grid=None, center: float = 0.0, check_coverage: bool = True
) -> SpectralProfile:
    """Gaussian absorption line with peak ``params.peak_od`` and FWHM ``params.inhomogeneous_fwhm``.

    ``check_coverage=False`` allows a narrow grid that samples only a slice of
    the line, which is how the parameter scan keeps its arrays small.
    """
    grid = Grid.centered(center=center) if grid is None else _as_grid(grid)
    if check_coverage and grid.stop - grid.start < params.inhomogeneous_fwhm:
        raise InvalidGridError("grid must span at least one inhomogeneous FWHM")
    x = grid.detuning - center
    od = params.peak_od * np.exp(-4.0 * math.log(2.0) * (x / params.inhomogeneous_fwhm) ** 2)
    return SpectralProfile(grid.start, grid.step, od, "od")


def transmission(profile: SpectralProfile) -> SpectralProfile:
    if profile.kind != "od":
        raise KindMismatchError(f"transmission needs an OD profile, got {profile.kind!r}")
    return profile.with_values(np.exp(-profile.values), "transmission")
